//! Mesh file I/O.
//!
//! Two formats: a native JSON document (lossless, used for test fixtures and
//! deterministic pipeline outputs) and legacy ascii VTK unstructured grids
//! (cell types 5/10) with nodal scalars and metric tensors for viewers.

use super::{NodalField, SimplicialMesh};
use crate::geom::AxisBox;
use crate::{Error, Result};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    VtkLegacyAscii,
    NativeJson,
}

/// A mesh with its attached nodal data, as stored on disk.
#[derive(Debug, Clone)]
pub struct MeshFileData<const D: usize> {
    pub mesh: SimplicialMesh<D>,
    pub fields: Vec<NodalField>,
    /// One symmetric tensor per node, row-major.
    pub tensors: Option<Vec<SMatrix<f64, D, D>>>,
}

impl<const D: usize> MeshFileData<D> {
    pub fn bare(mesh: SimplicialMesh<D>) -> Self {
        Self {
            mesh,
            fields: Vec::new(),
            tensors: None,
        }
    }
}

#[derive(Debug)]
pub enum LoadedMesh {
    Dim2(MeshFileData<2>),
    Dim3(MeshFileData<3>),
}

#[derive(Serialize, Deserialize)]
struct JsonDocument {
    dim: usize,
    domain_min: Vec<f64>,
    domain_max: Vec<f64>,
    nodes: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    fields: Vec<JsonField>,
    tensors: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct JsonField {
    name: String,
    values: Vec<f64>,
}

pub fn save_mesh<const D: usize>(
    data: &MeshFileData<D>,
    path: impl AsRef<Path>,
    format: MeshFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        MeshFormat::NativeJson => save_json(data, path),
        MeshFormat::VtkLegacyAscii => save_vtk(data, path),
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<LoadedMesh> {
    let path = path.as_ref();
    match format {
        MeshFormat::NativeJson => load_json(path),
        MeshFormat::VtkLegacyAscii => load_vtk(path),
    }
}

fn save_json<const D: usize>(data: &MeshFileData<D>, path: &Path) -> Result<()> {
    let mesh = &data.mesh;
    let doc = JsonDocument {
        dim: D,
        domain_min: mesh.domain().min.iter().copied().collect(),
        domain_max: mesh.domain().max.iter().copied().collect(),
        nodes: mesh
            .nodes()
            .iter()
            .map(|p| p.iter().copied().collect())
            .collect(),
        elements: (0..mesh.elem_count())
            .map(|e| mesh.element(e).to_vec())
            .collect(),
        fields: data
            .fields
            .iter()
            .map(|f| JsonField {
                name: f.name.clone(),
                values: f.values.clone(),
            })
            .collect(),
        tensors: data.tensors.as_ref().map(|ts| {
            ts.iter()
                .map(|t| t.transpose().iter().copied().collect())
                .collect()
        }),
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc)
        .map_err(|e| Error::parse(path, format!("json write failed: {e}")))?;
    w.flush()?;
    Ok(())
}

fn load_json(path: &Path) -> Result<LoadedMesh> {
    let text = std::fs::read_to_string(path)?;
    let doc: JsonDocument =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    match doc.dim {
        2 => Ok(LoadedMesh::Dim2(json_to_data::<2>(path, doc)?)),
        3 => Ok(LoadedMesh::Dim3(json_to_data::<3>(path, doc)?)),
        d => Err(Error::parse(path, format!("unsupported dim {d}"))),
    }
}

fn json_to_data<const D: usize>(path: &Path, doc: JsonDocument) -> Result<MeshFileData<D>> {
    let to_vec = |v: &[f64]| -> Result<SVector<f64, D>> {
        if v.len() != D {
            return Err(Error::parse(path, format!("{}-vector where {D} expected", v.len())));
        }
        Ok(SVector::from_iterator(v.iter().copied()))
    };
    let nodes = doc
        .nodes
        .iter()
        .map(|n| to_vec(n))
        .collect::<Result<Vec<_>>>()?;
    let mut elems = Vec::with_capacity(doc.elements.len() * (D + 1));
    for el in &doc.elements {
        if el.len() != D + 1 {
            return Err(Error::parse(
                path,
                format!("element with {} nodes where {} expected", el.len(), D + 1),
            ));
        }
        elems.extend_from_slice(el);
    }
    let domain = AxisBox::new(to_vec(&doc.domain_min)?, to_vec(&doc.domain_max)?);
    let mesh = SimplicialMesh::new(nodes, elems, domain)?;
    let fields = doc
        .fields
        .into_iter()
        .map(|f| NodalField::new(f.name, f.values))
        .collect();
    let tensors = match doc.tensors {
        None => None,
        Some(rows) => {
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                if row.len() != D * D {
                    return Err(Error::parse(path, "tensor with wrong component count"));
                }
                out.push(SMatrix::<f64, D, D>::from_iterator(row).transpose());
            }
            Some(out)
        }
    };
    Ok(MeshFileData {
        mesh,
        fields,
        tensors,
    })
}

fn save_vtk<const D: usize>(data: &MeshFileData<D>, path: &Path) -> Result<()> {
    let mesh = &data.mesh;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "adapted simplicial mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.node_count())?;
    for p in mesh.nodes() {
        let mut coords = [0.0f64; 3];
        for a in 0..D {
            coords[a] = p[a];
        }
        writeln!(w, "{} {} {}", coords[0], coords[1], coords[2])?;
    }
    writeln!(w, "CELLS {} {}", mesh.elem_count(), mesh.elem_count() * (D + 2))?;
    for e in 0..mesh.elem_count() {
        write!(w, "{}", D + 1)?;
        for &v in mesh.element(e) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.elem_count())?;
    let cell_type = if D == 2 { 5 } else { 10 };
    for _ in 0..mesh.elem_count() {
        writeln!(w, "{cell_type}")?;
    }
    if !data.fields.is_empty() || data.tensors.is_some() {
        writeln!(w, "POINT_DATA {}", mesh.node_count())?;
        for field in &data.fields {
            writeln!(w, "SCALARS {} double 1", sanitize(&field.name))?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in &field.values {
                writeln!(w, "{v}")?;
            }
        }
        if let Some(tensors) = &data.tensors {
            writeln!(w, "TENSORS metric double")?;
            for t in tensors {
                // Embed into 3x3; the out-of-plane component is 1 so 2D
                // ellipse glyphs stay well defined.
                let mut full = [[0.0f64; 3]; 3];
                full[2][2] = 1.0;
                for r in 0..D {
                    for c in 0..D {
                        full[r][c] = t[(r, c)];
                    }
                }
                for row in full {
                    writeln!(w, "{} {} {}", row[0], row[1], row[2])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Minimal legacy-VTK reader for the unstructured grids written above.
fn load_vtk(path: &Path) -> Result<LoadedMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .skip(2) // version comment + title
        .flat_map(|l| l.split_whitespace())
        .peekable();
    let bad = |msg: &str| Error::parse(path, msg.to_string());

    if tokens.next() != Some("ASCII") {
        return Err(bad("expected ASCII"));
    }
    if tokens.next() != Some("DATASET") || tokens.next() != Some("UNSTRUCTURED_GRID") {
        return Err(bad("expected DATASET UNSTRUCTURED_GRID"));
    }
    if tokens.next() != Some("POINTS") {
        return Err(bad("expected POINTS"));
    }
    let n: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad point count"))?;
    tokens.next(); // data type
    let mut points3 = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0f64; 3];
        for coord in &mut p {
            *coord = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad point coordinate"))?;
        }
        points3.push(p);
    }
    if tokens.next() != Some("CELLS") {
        return Err(bad("expected CELLS"));
    }
    let m: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad cell count"))?;
    tokens.next(); // total size
    let mut cells = Vec::with_capacity(m);
    for _ in 0..m {
        let len: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad cell length"))?;
        let mut cell = Vec::with_capacity(len);
        for _ in 0..len {
            cell.push(
                tokens
                    .next()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| bad("bad cell index"))?,
            );
        }
        cells.push(cell);
    }
    if tokens.next() != Some("CELL_TYPES") {
        return Err(bad("expected CELL_TYPES"));
    }
    tokens.next(); // count (same as m)
    let mut cell_type = 0usize;
    for _ in 0..m {
        cell_type = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad cell type"))?;
    }
    let dim = match cell_type {
        5 => 2,
        10 => 3,
        t => return Err(bad(&format!("unsupported cell type {t}"))),
    };

    // Optional POINT_DATA with scalars and one tensor block.
    let mut fields = Vec::new();
    let mut tensor_rows: Option<Vec<[f64; 9]>> = None;
    if tokens.peek() == Some(&"POINT_DATA") {
        tokens.next();
        tokens.next(); // count (same as n)
        loop {
            match tokens.peek().copied() {
                Some("SCALARS") => {
                    tokens.next();
                    let name = tokens.next().ok_or_else(|| bad("scalar name"))?.to_string();
                    tokens.next(); // type
                    if tokens.peek() == Some(&"1") {
                        tokens.next();
                    }
                    if tokens.next() != Some("LOOKUP_TABLE") {
                        return Err(bad("expected LOOKUP_TABLE"));
                    }
                    tokens.next(); // table name
                    let mut values = Vec::with_capacity(n);
                    for _ in 0..n {
                        values.push(
                            tokens
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| bad("bad scalar value"))?,
                        );
                    }
                    fields.push(NodalField::new(name, values));
                }
                Some("TENSORS") => {
                    tokens.next();
                    tokens.next(); // name
                    tokens.next(); // type
                    let mut rows = Vec::with_capacity(n);
                    for _ in 0..n {
                        let mut t = [0.0f64; 9];
                        for v in &mut t {
                            *v = tokens
                                .next()
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| bad("bad tensor value"))?;
                        }
                        rows.push(t);
                    }
                    tensor_rows = Some(rows);
                }
                Some(other) => return Err(bad(&format!("unsupported point data '{other}'"))),
                None => break,
            }
        }
    }

    fn assemble<const D: usize>(
        path: &Path,
        points3: Vec<[f64; 3]>,
        cells: Vec<Vec<usize>>,
        fields: Vec<NodalField>,
        tensor_rows: Option<Vec<[f64; 9]>>,
    ) -> Result<MeshFileData<D>> {
        let nodes: Vec<SVector<f64, D>> = points3
            .iter()
            .map(|p| SVector::from_iterator(p.iter().copied().take(D)))
            .collect();
        let mut elems = Vec::with_capacity(cells.len() * (D + 1));
        for cell in &cells {
            if cell.len() != D + 1 {
                return Err(Error::parse(path, "cell arity mismatch"));
            }
            elems.extend_from_slice(cell);
        }
        let domain = AxisBox::from_points(&nodes)
            .ok_or_else(|| Error::parse(path, "mesh with no points"))?;
        let mesh = SimplicialMesh::new(nodes, elems, domain)?;
        let tensors = tensor_rows.map(|rows| {
            rows.iter()
                .map(|r| {
                    SMatrix::<f64, D, D>::from_fn(|i, j| r[i * 3 + j])
                })
                .collect()
        });
        Ok(MeshFileData {
            mesh,
            fields,
            tensors,
        })
    }

    match dim {
        2 => Ok(LoadedMesh::Dim2(assemble::<2>(
            path,
            points3,
            cells,
            fields,
            tensor_rows,
        )?)),
        _ => Ok(LoadedMesh::Dim3(assemble::<3>(
            path,
            points3,
            cells,
            fields,
            tensor_rows,
        )?)),
    }
}
