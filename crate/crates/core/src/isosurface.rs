//! Zero level set extraction from nodal fields: closed polylines on 2D
//! triangle meshes, indexed triangle surfaces on 3D tetrahedral meshes.
//!
//! Crossing vertices are keyed by the mesh edge carrying them, so welding is
//! exact and the output is watertight wherever the level set stays inside
//! the mesh.

use crate::mesh::{NodalField, SimplicialMesh};
use crate::{Error, Result};
use nalgebra::{SVector, Vector2, Vector3};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// A chain of 2D points, closed when the last segment returns to the start.
#[derive(Debug, Clone)]
pub struct Polyline {
    pub points: Vec<Vector2<f64>>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let mut total = 0.0;
        for w in self.points.windows(2) {
            total += (w[1] - w[0]).norm();
        }
        if self.closed && self.points.len() > 2 {
            total += (self.points[0] - self.points[self.points.len() - 1]).norm();
        }
        total
    }

    /// Signed area by the shoelace formula; zero for open chains.
    pub fn signed_area(&self) -> f64 {
        if !self.closed || self.points.len() < 3 {
            return 0.0;
        }
        let mut twice = 0.0;
        for i in 0..self.points.len() {
            let a = self.points[i];
            let b = self.points[(i + 1) % self.points.len()];
            twice += a.x * b.y - b.x * a.y;
        }
        twice / 2.0
    }
}

/// Indexed triangle surface with welded vertices.
#[derive(Debug, Clone)]
pub struct TriangleSurface {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleSurface {
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = *t;
                let u = self.vertices[b] - self.vertices[a];
                let v = self.vertices[c] - self.vertices[a];
                u.cross(&v).norm() / 2.0
            })
            .sum()
    }

    /// Unique undirected edges of the surface.
    fn edge_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = if a < b { (a, b) } else { (b, a) };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F`; 2 for a topological sphere.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        let e = self.edge_counts().len() as i64;
        let f = self.triangles.len() as i64;
        v - e + f
    }

    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.vertices.len())?;
        writeln!(w, "property double x")?;
        writeln!(w, "property double y")?;
        writeln!(w, "property double z")?;
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
        writeln!(w, "end_header")?;
        for v in &self.vertices {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_vtk(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "zero level set")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET POLYDATA")?;
        writeln!(w, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(
            w,
            "POLYGONS {} {}",
            self.triangles.len(),
            self.triangles.len() * 4
        )?;
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nudge exact zeros to the positive side so every element sees a strict
/// sign. Returns `None` when the field is identically zero.
fn nudged_values(field: &NodalField) -> Option<Vec<f64>> {
    let scale = field.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    Some(
        field
            .values
            .iter()
            .map(|&v| if v == 0.0 { 1e-12 * scale } else { v })
            .collect(),
    )
}

fn crossing_point<const D: usize>(
    xa: &SVector<f64, D>,
    xb: &SVector<f64, D>,
    va: f64,
    vb: f64,
) -> SVector<f64, D> {
    let t = va / (va - vb);
    xa + (xb - xa) * t
}

/// Extract the zero level set of `field` over a 2D triangle mesh as stitched
/// polylines. Chains closing on themselves are flagged closed. No sign
/// change yields an empty result.
pub fn extract_contour_2d(mesh: &SimplicialMesh<2>, field: &NodalField) -> Result<Vec<Polyline>> {
    if field.values.len() != mesh.node_count() {
        return Err(Error::InvalidParameter(format!(
            "field '{}' has {} values for {} nodes",
            field.name,
            field.values.len(),
            mesh.node_count()
        )));
    }
    let Some(values) = nudged_values(field) else {
        return Ok(Vec::new());
    };

    // One crossing vertex per sign-changing edge.
    let mut crossing_id: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut crossings: Vec<Vector2<f64>> = Vec::new();
    let mut id_of = |i: u32, j: u32, crossings: &mut Vec<Vector2<f64>>,
                     mesh: &SimplicialMesh<2>, values: &[f64]| {
        let key = if i < j { (i, j) } else { (j, i) };
        *crossing_id.entry(key).or_insert_with(|| {
            let p = crossing_point(
                mesh.node(key.0 as usize),
                mesh.node(key.1 as usize),
                values[key.0 as usize],
                values[key.1 as usize],
            );
            crossings.push(p);
            crossings.len() - 1
        })
    };

    // Segments per triangle.
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for e in 0..mesh.elem_count() {
        let conn = mesh.element(e);
        let mut cut_edges = Vec::new();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let (i, j) = (conn[a] as u32, conn[b] as u32);
            if (values[i as usize] > 0.0) != (values[j as usize] > 0.0) {
                cut_edges.push((i, j));
            }
        }
        match cut_edges.len() {
            0 => {}
            2 => {
                let a = id_of(cut_edges[0].0, cut_edges[0].1, &mut crossings, mesh, &values);
                let b = id_of(cut_edges[1].0, cut_edges[1].1, &mut crossings, mesh, &values);
                segments.push((a, b));
            }
            n => {
                return Err(Error::Internal(format!(
                    "triangle {e} has {n} sign crossings"
                )))
            }
        }
    }

    // Stitch segments into chains; every crossing touches at most two
    // segments because a mesh edge bounds at most two triangles.
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); crossings.len()];
    for (s, &(a, b)) in segments.iter().enumerate() {
        adjacency[a].push(s);
        adjacency[b].push(s);
    }
    let mut seg_used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    let walk = |start: usize, seg_used: &mut Vec<bool>| -> Polyline {
        let mut chain = vec![start];
        let mut current = start;
        loop {
            let next_seg = adjacency[current]
                .iter()
                .copied()
                .find(|&s| !seg_used[s]);
            let Some(s) = next_seg else { break };
            seg_used[s] = true;
            let (a, b) = segments[s];
            current = if a == current { b } else { a };
            if current == start {
                return Polyline {
                    points: chain.iter().map(|&c| crossings[c]).collect(),
                    closed: true,
                };
            }
            chain.push(current);
        }
        Polyline {
            points: chain.iter().map(|&c| crossings[c]).collect(),
            closed: false,
        }
    };

    // Open chains first (degree-1 endpoints), then remaining loops.
    for (start, adj) in adjacency.iter().enumerate() {
        if adj.len() == 1 && !adj.iter().all(|&s| seg_used[s]) {
            polylines.push(walk(start, &mut seg_used));
        }
    }
    for (start, adj) in adjacency.iter().enumerate() {
        if adj.iter().any(|&s| !seg_used[s]) {
            polylines.push(walk(start, &mut seg_used));
        }
    }
    Ok(polylines)
}

/// Extract the zero level set over a tetrahedral mesh as an indexed triangle
/// surface with exact edge-keyed welding. Triangles are oriented with their
/// normal pointing towards the positive side of the field.
pub fn extract_surface_3d(
    mesh: &SimplicialMesh<3>,
    field: &NodalField,
) -> Result<TriangleSurface> {
    if field.values.len() != mesh.node_count() {
        return Err(Error::InvalidParameter(format!(
            "field '{}' has {} values for {} nodes",
            field.name,
            field.values.len(),
            mesh.node_count()
        )));
    }
    let Some(values) = nudged_values(field) else {
        return Ok(TriangleSurface {
            vertices: Vec::new(),
            triangles: Vec::new(),
        });
    };

    let mut vertex_id: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for e in 0..mesh.elem_count() {
        let conn = mesh.element(e);
        let mut neg: Vec<usize> = Vec::new();
        let mut pos: Vec<usize> = Vec::new();
        for &v in conn {
            if values[v] > 0.0 {
                pos.push(v);
            } else {
                neg.push(v);
            }
        }
        if neg.is_empty() || pos.is_empty() {
            continue;
        }

        let mut crossing = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = if a < b {
                (a as u32, b as u32)
            } else {
                (b as u32, a as u32)
            };
            *vertex_id.entry(key).or_insert_with(|| {
                let p = crossing_point(
                    mesh.node(key.0 as usize),
                    mesh.node(key.1 as usize),
                    values[key.0 as usize],
                    values[key.1 as usize],
                );
                vertices.push(p);
                vertices.len() - 1
            })
        };

        // Direction from the negative region towards the positive region,
        // used to orient the cut triangles.
        let centroid = |ids: &[usize]| -> Vector3<f64> {
            let mut c = Vector3::zeros();
            for &i in ids {
                c += mesh.node(i);
            }
            c / ids.len() as f64
        };
        let outward = centroid(&pos) - centroid(&neg);

        let mut emit = |mut tri: [usize; 3], vertices: &[Vector3<f64>]| {
            let n = (vertices[tri[1]] - vertices[tri[0]])
                .cross(&(vertices[tri[2]] - vertices[tri[0]]));
            if n.dot(&outward) < 0.0 {
                tri.swap(1, 2);
            }
            triangles.push(tri);
        };

        match neg.len() {
            1 => {
                let a = neg[0];
                let t = [
                    crossing(a, pos[0], &mut vertices),
                    crossing(a, pos[1], &mut vertices),
                    crossing(a, pos[2], &mut vertices),
                ];
                emit(t, &vertices);
            }
            3 => {
                let a = pos[0];
                let t = [
                    crossing(a, neg[0], &mut vertices),
                    crossing(a, neg[1], &mut vertices),
                    crossing(a, neg[2], &mut vertices),
                ];
                emit(t, &vertices);
            }
            2 => {
                // Quad cut: crossings on the four mixed edges.
                let (a, b) = (neg[0], neg[1]);
                let (c, d) = (pos[0], pos[1]);
                let ac = crossing(a, c, &mut vertices);
                let ad = crossing(a, d, &mut vertices);
                let bc = crossing(b, c, &mut vertices);
                let bd = crossing(b, d, &mut vertices);
                emit([ac, ad, bd], &vertices);
                emit([ac, bd, bc], &vertices);
            }
            _ => unreachable!(),
        }
    }

    Ok(TriangleSurface {
        vertices,
        triangles,
    })
}

/// Write polylines as CSV rows `polyline,x,y,closed`.
pub fn write_contours_csv(contours: &[Polyline], path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "polyline,x,y,closed")?;
    for (i, line) in contours.iter().enumerate() {
        for p in &line.points {
            writeln!(w, "{},{},{},{}", i, p.x, p.y, line.closed as u8)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write polylines as VTK polydata lines.
pub fn write_contours_vtk(contours: &[Polyline], path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "zero level contours")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    let total: usize = contours.iter().map(|c| c.points.len()).sum();
    writeln!(w, "POINTS {total} double")?;
    for line in contours {
        for p in &line.points {
            writeln!(w, "{} {} 0", p.x, p.y)?;
        }
    }
    let entries: usize = contours
        .iter()
        .map(|c| c.points.len() + if c.closed { 1 } else { 0 } + 1)
        .sum();
    writeln!(w, "LINES {} {}", contours.len(), entries)?;
    let mut offset = 0;
    for line in contours {
        let n = line.points.len() + if line.closed { 1 } else { 0 };
        write!(w, "{n}")?;
        for k in 0..line.points.len() {
            write!(w, " {}", offset + k)?;
        }
        if line.closed {
            write!(w, " {offset}")?;
        }
        writeln!(w)?;
        offset += line.points.len();
    }
    w.flush()?;
    Ok(())
}
