//! Simplicial mesh container: triangles in 2D, tetrahedra in 3D.
//!
//! A mesh owns its nodes and positively oriented elements plus derived
//! connectivity (unique edge list, per-node stars, boundary flags). It is
//! immutable after construction; the remesher builds new meshes rather than
//! mutating in place.

mod io;

pub use io::{load_mesh, save_mesh, LoadedMesh, MeshFileData, MeshFormat};

use crate::geom::AxisBox;
use crate::{Error, Result};
use nalgebra::{SMatrix, SVector};

/// Scalar values attached to mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub name: String,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Simplicial mesh of dimension `D` (elements have `D + 1` nodes).
#[derive(Debug, Clone)]
pub struct SimplicialMesh<const D: usize> {
    nodes: Vec<SVector<f64, D>>,
    /// Flattened connectivity, stride `D + 1`.
    elems: Vec<usize>,
    /// The computational domain; bounds boundary-node movement downstream.
    domain: AxisBox<D>,
    edges: Vec<(u32, u32)>,
    stars: Vec<Vec<u32>>,
    boundary: Vec<bool>,
}

impl<const D: usize> SimplicialMesh<D> {
    /// Number of nodes per element.
    pub const NODES_PER_ELEM: usize = D + 1;

    /// Build a mesh from nodes and flattened connectivity. Negative-volume
    /// elements are repaired by swapping their first two indices; remaining
    /// invalid elements are an error.
    pub fn new(
        nodes: Vec<SVector<f64, D>>,
        mut elems: Vec<usize>,
        domain: AxisBox<D>,
    ) -> Result<Self> {
        if !elems.len().is_multiple_of(D + 1) {
            return Err(Error::InvalidMesh(format!(
                "connectivity length {} is not a multiple of {}",
                elems.len(),
                D + 1
            )));
        }
        for &v in &elems {
            if v >= nodes.len() {
                return Err(Error::InvalidMesh(format!("node index {v} out of range")));
            }
        }
        // Orientation repair.
        for e in 0..elems.len() / (D + 1) {
            let conn = &mut elems[e * (D + 1)..(e + 1) * (D + 1)];
            if signed_volume::<D>(&nodes, conn) < 0.0 {
                conn.swap(0, 1);
            }
        }
        let (edges, stars, boundary) = derive_connectivity::<D>(&nodes, &elems)?;
        let mesh = Self {
            nodes,
            elems,
            domain,
            edges,
            stars,
            boundary,
        };
        mesh.audit()?;
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elem_count(&self) -> usize {
        self.elems.len() / (D + 1)
    }

    pub fn nodes(&self) -> &[SVector<f64, D>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &SVector<f64, D> {
        &self.nodes[i]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elems[e * (D + 1)..(e + 1) * (D + 1)]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.elems.chunks_exact(D + 1)
    }

    pub fn domain(&self) -> &AxisBox<D> {
        &self.domain
    }

    /// Unique undirected edges, `(i, j)` with `i < j`, lexicographic order.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Nodes connected to node `i`, ascending.
    pub fn star(&self, i: usize) -> &[u32] {
        &self.stars[i]
    }

    /// True when node `i` lies on the mesh boundary (a face incident to a
    /// single element).
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn signed_volume_of(&self, e: usize) -> f64 {
        signed_volume::<D>(&self.nodes, self.element(e))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.elem_count()).map(|e| self.signed_volume_of(e)).sum()
    }

    /// The edge vector from node `i` to node `j`; errors when `{i, j}` is
    /// not a mesh edge.
    pub fn edge_vector(&self, i: usize, j: usize) -> Result<SVector<f64, D>> {
        if i >= self.nodes.len() || j >= self.nodes.len() || !self.stars[i].contains(&(j as u32)) {
            return Err(Error::NotAnEdge(i, j));
        }
        Ok(self.nodes[j] - self.nodes[i])
    }

    /// Barycentric coordinates of `x` in element `e`.
    pub fn barycentric(&self, e: usize, x: &SVector<f64, D>) -> SVector<f64, D> {
        // Solve for the D non-base coordinates; the base one is 1 - sum.
        let conn = self.element(e);
        let base = self.nodes[conn[0]];
        let mut m = SMatrix::<f64, D, D>::zeros();
        for c in 0..D {
            m.set_column(c, &(self.nodes[conn[c + 1]] - base));
        }
        crate::linalg::try_inverse(&m)
            .map(|inv| inv * (x - base))
            .unwrap_or_else(|| SVector::<f64, D>::repeat(f64::NEG_INFINITY))
    }

    /// Locate the element containing `x` and return `(element, barycentric
    /// weights for all D+1 element nodes)`.
    pub fn locate(&self, x: &SVector<f64, D>) -> Result<(usize, Vec<f64>)> {
        const TOL: f64 = -1e-10;
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for e in 0..self.elem_count() {
            let lam = self.barycentric(e, x);
            let l0 = 1.0 - lam.sum();
            let min = lam.iter().copied().fold(l0, f64::min);
            if best.as_ref().is_none_or(|(_, _, m)| min > *m) {
                let mut weights = Vec::with_capacity(D + 1);
                weights.push(l0);
                weights.extend(lam.iter());
                best = Some((e, weights, min));
            }
            if min >= 0.0 {
                break;
            }
        }
        match best {
            Some((e, w, min)) if min >= TOL => Ok((e, w)),
            _ => Err(Error::OutsideMesh(x.iter().copied().collect())),
        }
    }

    /// Piecewise-linear interpolation of a nodal field at `x`.
    pub fn interpolate(&self, field: &NodalField, x: &SVector<f64, D>) -> Result<f64> {
        if field.values.len() != self.node_count() {
            return Err(Error::InvalidParameter(format!(
                "field '{}' has {} values for {} nodes",
                field.name,
                field.values.len(),
                self.node_count()
            )));
        }
        let (e, w) = self.locate(x)?;
        let conn = self.element(e);
        Ok(conn
            .iter()
            .zip(&w)
            .map(|(&v, &wv)| field.values[v] * wv)
            .sum())
    }

    /// Full invariant check: positive element volumes, star/edge agreement,
    /// no orphan nodes, manifold faces.
    pub fn audit(&self) -> Result<()> {
        if self.elem_count() == 0 {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let char_vol = self.total_volume().abs() / self.elem_count() as f64;
        for e in 0..self.elem_count() {
            let v = self.signed_volume_of(e);
            if !(v.is_finite() && v > 1e-14 * char_vol) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has signed volume {v} (floor {})",
                    1e-14 * char_vol
                )));
            }
            let conn = self.element(e);
            for a in 0..D + 1 {
                for b in a + 1..D + 1 {
                    if conn[a] == conn[b] {
                        return Err(Error::InvalidMesh(format!(
                            "element {e} repeats node {}",
                            conn[a]
                        )));
                    }
                }
            }
        }

        // Recompute connectivity independently and compare.
        let (edges, stars, _) = derive_connectivity::<D>(&self.nodes, &self.elems)?;
        if edges != self.edges {
            return Err(Error::InvalidMesh("edge list out of sync".into()));
        }
        if stars != self.stars {
            return Err(Error::InvalidMesh("node stars out of sync".into()));
        }
        for (i, star) in self.stars.iter().enumerate() {
            if star.is_empty() {
                return Err(Error::InvalidMesh(format!("orphan node {i}")));
            }
        }
        // Each (D-1)-face is shared by at most two elements.
        let mut faces = std::collections::HashMap::new();
        for e in 0..self.elem_count() {
            let conn = self.element(e);
            for skip in 0..D + 1 {
                let mut face: Vec<usize> = conn
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                face.sort_unstable();
                *faces.entry(face).or_insert(0usize) += 1;
            }
        }
        for (face, count) in &faces {
            if *count > 2 {
                return Err(Error::InvalidMesh(format!(
                    "face {face:?} shared by {count} elements"
                )));
            }
        }
        Ok(())
    }
}

/// Signed volume of the simplex `conn` (area in 2D, volume in 3D).
pub fn signed_volume<const D: usize>(nodes: &[SVector<f64, D>], conn: &[usize]) -> f64 {
    let base = nodes[conn[0]];
    let mut m = SMatrix::<f64, D, D>::zeros();
    for c in 0..D {
        m.set_column(c, &(nodes[conn[c + 1]] - base));
    }
    let factorial = match D {
        2 => 2.0,
        3 => 6.0,
        _ => (1..=D).product::<usize>() as f64,
    };
    crate::linalg::determinant(&m) / factorial
}

type Connectivity = (Vec<(u32, u32)>, Vec<Vec<u32>>, Vec<bool>);

fn derive_connectivity<const D: usize>(
    nodes: &[SVector<f64, D>],
    elems: &[usize],
) -> Result<Connectivity> {
    let mut edge_set = std::collections::BTreeSet::new();
    for conn in elems.chunks_exact(D + 1) {
        for a in 0..D + 1 {
            for b in a + 1..D + 1 {
                let (i, j) = if conn[a] < conn[b] {
                    (conn[a], conn[b])
                } else {
                    (conn[b], conn[a])
                };
                edge_set.insert((i as u32, j as u32));
            }
        }
    }
    let edges: Vec<(u32, u32)> = edge_set.into_iter().collect();
    let mut stars = vec![Vec::new(); nodes.len()];
    for &(i, j) in &edges {
        stars[i as usize].push(j);
        stars[j as usize].push(i);
    }
    for star in &mut stars {
        star.sort_unstable();
    }

    // Boundary nodes: nodes of faces incident to exactly one element.
    let mut faces = std::collections::HashMap::new();
    for conn in elems.chunks_exact(D + 1) {
        for skip in 0..D + 1 {
            let mut face: Vec<usize> = conn
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, &v)| v)
                .collect();
            face.sort_unstable();
            *faces.entry(face).or_insert(0usize) += 1;
        }
    }
    let mut boundary = vec![false; nodes.len()];
    for (face, count) in &faces {
        if *count == 1 {
            for &v in face {
                boundary[v] = true;
            }
        }
    }
    Ok((edges, stars, boundary))
}

/// Structured simplicial mesh of an axis-aligned box with edges no longer
/// than `target_h * sqrt(D)`. 2D quads alternate their diagonal direction;
/// 3D cubes use the six-tetrahedra corner subdivision.
pub fn generate_box_mesh<const D: usize>(
    domain: &AxisBox<D>,
    target_h: f64,
) -> Result<SimplicialMesh<D>> {
    if domain.is_degenerate() {
        return Err(Error::InvalidParameter("degenerate box".into()));
    }
    if target_h <= 0.0 || target_h > domain.extent().max() {
        return Err(Error::InvalidParameter(format!(
            "target_h {} must be in (0, {}]",
            target_h,
            domain.extent().max()
        )));
    }
    let mut cells = [0usize; D];
    for (a, cell) in cells.iter_mut().enumerate() {
        // The slack keeps exact integer ratios (h = extent/n) at n cells.
        *cell = ((domain.extent()[a] / target_h - 1e-9).ceil()).max(1.0) as usize;
    }

    // Nodes in x-fastest order.
    let mut dims = [0usize; D];
    for a in 0..D {
        dims[a] = cells[a] + 1;
    }
    let node_index = |idx: &[usize; D]| -> usize {
        let mut flat = 0;
        for a in (0..D).rev() {
            flat = flat * dims[a] + idx[a];
        }
        flat
    };
    let total_nodes: usize = dims.iter().product();
    let mut nodes = Vec::with_capacity(total_nodes);
    let mut idx = [0usize; D];
    for _ in 0..total_nodes {
        let mut p = domain.min;
        for a in 0..D {
            // Last index lands exactly on the box face.
            if idx[a] == cells[a] {
                p[a] = domain.max[a];
            } else {
                p[a] += domain.extent()[a] * idx[a] as f64 / cells[a] as f64;
            }
        }
        nodes.push(p);
        for a in 0..D {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }

    let mut elems = Vec::new();
    match D {
        2 => {
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    let n00 = node_index(&from_2d::<D>(i, j));
                    let n10 = node_index(&from_2d::<D>(i + 1, j));
                    let n01 = node_index(&from_2d::<D>(i, j + 1));
                    let n11 = node_index(&from_2d::<D>(i + 1, j + 1));
                    if (i + j) % 2 == 0 {
                        elems.extend_from_slice(&[n00, n10, n11, n00, n11, n01]);
                    } else {
                        elems.extend_from_slice(&[n00, n10, n01, n10, n11, n01]);
                    }
                }
            }
        }
        3 => {
            // Corner-to-corner subdivision: one tet per permutation of the
            // three axis steps, conforming across neighboring cubes.
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            for k in 0..cells[2] {
                for j in 0..cells[1] {
                    for i in 0..cells[0] {
                        let corner = [i, j, k];
                        for perm in PERMS {
                            let mut tet = [0usize; 4];
                            let mut cur = corner;
                            tet[0] = node_index(&clone_idx::<D>(&cur));
                            for (step, &axis) in perm.iter().enumerate() {
                                cur[axis] += 1;
                                tet[step + 1] = node_index(&clone_idx::<D>(&cur));
                            }
                            elems.extend_from_slice(&tet);
                        }
                    }
                }
            }
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unsupported dimension {D}"
            )))
        }
    }

    SimplicialMesh::new(nodes, elems, *domain)
}

fn from_2d<const D: usize>(i: usize, j: usize) -> [usize; D] {
    let mut out = [0usize; D];
    out[0] = i;
    out[1] = j;
    out
}

fn clone_idx<const D: usize>(idx: &[usize; 3]) -> [usize; D] {
    let mut out = [0usize; D];
    out[..D].copy_from_slice(&idx[..D]);
    out
}
