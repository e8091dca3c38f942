//! Declarative pipeline runner: one JSON config drives preprocess, field
//! sampling, adaptation and extraction with the same keys as the CLI flags.

use crate::commands::{self, AdaptArgs, FieldArgs, PreprocessArgs};
use crate::PipelineArgs;
use pssmesh::{Error, Result};
use serde_json::{Map, Value};
use std::path::PathBuf;

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

struct Section<'a> {
    name: &'a str,
    map: &'a Map<String, Value>,
}

impl<'a> Section<'a> {
    fn warn_unknown(&self, known: &[&str]) {
        for key in self.map.keys() {
            if !known.contains(&key.as_str()) {
                eprintln!("warning: unknown key '{key}' in section '{}'", self.name);
            }
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| bad(format!("key '{key}' in '{}' must be a number", self.name))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|u| Some(u as usize))
                .ok_or_else(|| bad(format!("key '{key}' in '{}' must be an integer", self.name))),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| bad(format!("key '{key}' in '{}' must be a boolean", self.name))),
        }
    }

    fn vec_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| bad(format!("key '{key}' must hold numbers")))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(_) => Err(bad(format!("key '{key}' in '{}' must be an array", self.name))),
        }
    }
}

pub fn run(args: &PipelineArgs, json: bool) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&args.config, e.to_string()))?;
    let Value::Object(root) = root else {
        return Err(Error::parse(&args.config, "config must be a JSON object"));
    };
    let section = Section {
        name: "(root)",
        map: &root,
    };
    section.warn_unknown(&[
        "input",
        "outdir",
        "dim",
        "threads",
        "preprocess",
        "field",
        "adapt",
    ]);

    let input: PathBuf = root
        .get("input")
        .and_then(|v| v.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| bad("missing required key 'input'"))?;
    let outdir: PathBuf = root
        .get("outdir")
        .and_then(|v| v.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| bad("missing required key 'outdir'"))?;
    let dim = section.usize("dim")?;
    std::fs::create_dir_all(&outdir)?;

    let obj_section = |key: &'static str| -> Result<Option<Map<String, Value>>> {
        match root.get(key) {
            None => Ok(None),
            Some(Value::Object(m)) => Ok(Some(m.clone())),
            Some(_) => Err(bad(format!("section '{key}' must be an object"))),
        }
    };

    // Stage 1: preprocess (optional). Its output feeds the later stages.
    let mut current_input = input.clone();
    if let Some(map) = obj_section("preprocess")? {
        let section = Section {
            name: "preprocess",
            map: &map,
        };
        section.warn_unknown(&[
            "outlier-k",
            "outlier-dist",
            "grazing-deg",
            "leaf",
            "normals-k",
            "scan-origin",
        ]);
        let output = outdir.join("preprocessed.ply");
        let args = PreprocessArgs {
            input: current_input.clone(),
            output: output.clone(),
            outlier_k: section.usize("outlier-k")?.unwrap_or(3),
            outlier_dist: section.f64("outlier-dist")?.unwrap_or(0.30),
            grazing_deg: section.f64("grazing-deg")?.unwrap_or(2.0),
            leaf: section.f64("leaf")?.unwrap_or(0.02),
            normals_k: section.usize("normals-k")?.unwrap_or(100),
            scan_origin: section.vec_f64("scan-origin")?,
            dim,
        };
        commands::run_preprocess(&args, json)?;
        current_input = output;
    }

    // Stage 2: field sampling (optional).
    if let Some(map) = obj_section("field")? {
        let section = Section {
            name: "field",
            map: &map,
        };
        section.warn_unknown(&[
            "h0",
            "epsilon",
            "gamma",
            "knn",
            "res",
            "domain",
            "plain-imls",
        ]);
        let args = FieldArgs {
            input: current_input.clone(),
            output: outdir.join("field.vtk"),
            h0: section
                .f64("h0")?
                .ok_or_else(|| bad("missing required key 'h0' in section 'field'"))?,
            epsilon: section
                .f64("epsilon")?
                .ok_or_else(|| bad("missing required key 'epsilon' in section 'field'"))?,
            gamma: section.f64("gamma")?.unwrap_or(7.0),
            knn: section.usize("knn")?.unwrap_or(80),
            domain: section.vec_f64("domain")?,
            res: section.usize("res")?.unwrap_or(200),
            plain_imls: section.bool("plain-imls")?.unwrap_or(false),
            dim,
        };
        commands::run_field(&args, json)?;
    }

    // Stage 3: adaptation and extraction (optional).
    if let Some(map) = obj_section("adapt")? {
        let section = Section {
            name: "adapt",
            map: &map,
        };
        section.warn_unknown(&[
            "h0", "epsilon", "gamma", "knn", "nodes", "iters", "domain", "init-h", "snapshots",
        ]);
        let args = AdaptArgs {
            input: current_input.clone(),
            outdir: outdir.clone(),
            h0: section
                .f64("h0")?
                .ok_or_else(|| bad("missing required key 'h0' in section 'adapt'"))?,
            epsilon: section
                .f64("epsilon")?
                .ok_or_else(|| bad("missing required key 'epsilon' in section 'adapt'"))?,
            gamma: section.f64("gamma")?.unwrap_or(7.0),
            knn: section.usize("knn")?.unwrap_or(80),
            nodes: section
                .usize("nodes")?
                .ok_or_else(|| bad("missing required key 'nodes' in section 'adapt'"))?,
            iters: section.usize("iters")?.unwrap_or(10),
            domain: section.vec_f64("domain")?,
            init_h: section.f64("init-h")?,
            snapshots: section.bool("snapshots")?.unwrap_or(false),
            dim,
        };
        commands::run_adapt(&args, json)?;
    }
    Ok(())
}
