//! Point cloud file I/O: PLY (ascii and binary little-endian) and
//! whitespace-separated XYZ text.
//!
//! Supported PLY vertex properties are `x y z` and optional `nx ny nz` as
//! float or double; extra scalar properties are skipped. 2D clouds are
//! stored as 3D with z = 0 and flagged with a `comment dim 2` header line
//! (`# dim 2` for XYZ).

use super::OrientedPointCloud;
use crate::{Error, Result};
use nalgebra::{SVector, Vector2, Vector3};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// On-disk cloud encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    Xyz,
}

impl CloudFormat {
    /// Guess the format from the file extension, sniffing the PLY header for
    /// the ascii/binary distinction.
    pub fn detect(path: &Path) -> Result<CloudFormat> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "xyz" | "txt" | "xyzn" => Ok(CloudFormat::Xyz),
            "ply" => {
                let mut header = String::new();
                let f = File::open(path)?;
                let mut reader = BufReader::new(f);
                for _ in 0..5 {
                    let mut line = String::new();
                    if reader.read_line(&mut line)? == 0 {
                        break;
                    }
                    header.push_str(&line);
                }
                if header.contains("binary_little_endian") {
                    Ok(CloudFormat::PlyBinaryLe)
                } else {
                    Ok(CloudFormat::PlyAscii)
                }
            }
            other => Err(Error::parse(
                path,
                format!("unknown point cloud extension '{other}'"),
            )),
        }
    }
}

/// A cloud loaded from disk, with its dimensionality resolved at runtime.
#[derive(Debug, Clone)]
pub enum LoadedCloud {
    Dim2(OrientedPointCloud<2>),
    Dim3(OrientedPointCloud<3>),
}

impl LoadedCloud {
    pub fn dim(&self) -> usize {
        match self {
            LoadedCloud::Dim2(_) => 2,
            LoadedCloud::Dim3(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LoadedCloud::Dim2(c) => c.len(),
            LoadedCloud::Dim3(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Project onto the xy plane, dropping z coordinates and renormalizing
    /// any normals within the plane.
    pub fn into_2d(self) -> Result<OrientedPointCloud<2>> {
        match self {
            LoadedCloud::Dim2(c) => Ok(c),
            LoadedCloud::Dim3(c) => {
                let points = c.points.iter().map(|p| Vector2::new(p.x, p.y)).collect();
                let normals = match &c.normals {
                    None => None,
                    Some(ns) => {
                        let mut out = Vec::with_capacity(ns.len());
                        for (i, n) in ns.iter().enumerate() {
                            let v = Vector2::new(n.x, n.y);
                            let norm = v.norm();
                            if norm <= 1e-12 {
                                return Err(Error::InvalidParameter(format!(
                                    "normal {i} has no in-plane component"
                                )));
                            }
                            out.push(v / norm);
                        }
                        Some(out)
                    }
                };
                Ok(OrientedPointCloud {
                    points,
                    normals,
                    scan_origins: super::ScanOrigins::None,
                    normals_oriented: c.normals_oriented,
                })
            }
        }
    }

    pub fn into_3d(self) -> Result<OrientedPointCloud<3>> {
        match self {
            LoadedCloud::Dim3(c) => Ok(c),
            LoadedCloud::Dim2(_) => Err(Error::InvalidParameter(
                "cloud is 2D; requested a 3D cloud".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<PlyType> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::U8 => bytes[0] as f64,
            PlyType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

struct PlyHeader {
    binary: bool,
    vertex_count: usize,
    properties: Vec<(String, PlyType)>,
    dim2: bool,
}

fn parse_ply_header(path: &Path, reader: &mut impl BufRead) -> Result<PlyHeader> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::parse(path, "missing 'ply' magic line"));
    }

    let mut binary = false;
    let mut format_seen = false;
    let mut dim2 = false;
    let mut vertex_count: Option<usize> = None;
    let mut properties = Vec::new();
    let mut in_vertex_element = false;

    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::parse(path, "unexpected end of header"));
        }
        let trimmed = line.trim_end();
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match fields.first().copied() {
            Some("format") => {
                format_seen = true;
                match fields.get(1).copied() {
                    Some("ascii") => binary = false,
                    Some("binary_little_endian") => binary = true,
                    other => {
                        return Err(Error::parse(
                            path,
                            format!("unsupported ply format {other:?}"),
                        ))
                    }
                }
            }
            Some("comment") => {
                if fields.get(1) == Some(&"dim") && fields.get(2) == Some(&"2") {
                    dim2 = true;
                }
            }
            Some("element") => {
                let name = fields.get(1).copied().unwrap_or("");
                let count: usize = fields
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, "bad element count"))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::parse(path, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::parse(
                            path,
                            format!("element '{name}' precedes vertex data"),
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue; // properties of trailing elements are never read
                }
                if fields.get(1) == Some(&"list") {
                    return Err(Error::parse(
                        path,
                        "list properties on the vertex element are not supported",
                    ));
                }
                let ty = fields
                    .get(1)
                    .and_then(|t| PlyType::parse(t))
                    .ok_or_else(|| {
                        Error::parse(path, format!("unsupported property type in '{trimmed}'"))
                    })?;
                let name = fields
                    .get(2)
                    .ok_or_else(|| Error::parse(path, "property without a name"))?;
                properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::parse(path, format!("unknown header line '{other}'")));
            }
        }
    }
    if !format_seen {
        return Err(Error::parse(path, "header has no format line"));
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::parse(path, "no vertex element"))?;
    Ok(PlyHeader {
        binary,
        vertex_count,
        properties,
        dim2,
    })
}

fn load_ply(path: &Path) -> Result<LoadedCloud> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let header = parse_ply_header(path, &mut reader)?;

    let find = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let px = find("x").ok_or_else(|| Error::parse(path, "vertex has no x property"))?;
    let py = find("y").ok_or_else(|| Error::parse(path, "vertex has no y property"))?;
    let pz = find("z").ok_or_else(|| Error::parse(path, "vertex has no z property"))?;
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err(Error::parse(path, "incomplete normal properties")),
    };

    let mut points = Vec::with_capacity(header.vertex_count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(header.vertex_count));

    let mut row = vec![0.0f64; header.properties.len()];
    if header.binary {
        let record_size: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
        let mut buf = vec![0u8; record_size];
        for v in 0..header.vertex_count {
            reader.read_exact(&mut buf).map_err(|_| {
                Error::parse(path, format!("truncated binary data at vertex {v}"))
            })?;
            let mut offset = 0;
            for (slot, (_, ty)) in row.iter_mut().zip(&header.properties) {
                *slot = ty.read_le(&buf[offset..]);
                offset += ty.size();
            }
            push_vertex(path, &row, px, py, pz, normal_idx, &mut points, &mut normals)?;
        }
    } else {
        let mut line = String::new();
        for v in 0..header.vertex_count {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::parse(path, format!("missing vertex record {v}")));
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < header.properties.len() {
                return Err(Error::parse(
                    path,
                    format!(
                        "vertex record {v} has {} fields, expected {}",
                        fields.len(),
                        header.properties.len()
                    ),
                ));
            }
            for (slot, field) in row.iter_mut().zip(&fields) {
                *slot = field
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("bad number '{field}'")))?;
            }
            push_vertex(path, &row, px, py, pz, normal_idx, &mut points, &mut normals)?;
        }
    }

    let cloud3 = OrientedPointCloud {
        normals_oriented: normals.is_some(),
        points,
        normals,
        scan_origins: super::ScanOrigins::None,
    };
    if header.dim2 {
        Ok(LoadedCloud::Dim2(LoadedCloud::Dim3(cloud3).into_2d()?))
    } else {
        Ok(LoadedCloud::Dim3(cloud3))
    }
}

#[allow(clippy::too_many_arguments)]
fn push_vertex(
    path: &Path,
    row: &[f64],
    px: usize,
    py: usize,
    pz: usize,
    normal_idx: Option<(usize, usize, usize)>,
    points: &mut Vec<Vector3<f64>>,
    normals: &mut Option<Vec<Vector3<f64>>>,
) -> Result<()> {
    let p = Vector3::new(row[px], row[py], row[pz]);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(
            path,
            format!("non-finite coordinate in vertex {}", points.len()),
        ));
    }
    points.push(p);
    if let (Some((a, b, c)), Some(ns)) = (normal_idx, normals.as_mut()) {
        let mut n = Vector3::new(row[a], row[b], row[c]);
        let norm = n.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::parse(
                path,
                format!("degenerate normal in vertex {}", ns.len()),
            ));
        }
        // Repair float-precision normals; leave already-unit ones bit-exact.
        if (norm - 1.0).abs() > 1e-9 {
            n /= norm;
        }
        ns.push(n);
    }
    Ok(())
}

fn load_xyz(path: &Path) -> Result<LoadedCloud> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut dim2 = false;
    let mut points = Vec::new();
    let mut normals: Option<Vec<Vector3<f64>>> = None;
    let mut columns: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if comment.split_whitespace().collect::<Vec<_>>() == ["dim", "2"] {
                dim2 = true;
            }
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("bad number '{f}' on line {}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        let cols = *columns.get_or_insert(fields.len());
        if fields.len() != cols || !(cols == 3 || cols == 6) {
            return Err(Error::parse(
                path,
                format!(
                    "line {} has {} columns, expected {} (xyz or xyz+normal)",
                    lineno + 1,
                    fields.len(),
                    if cols == 3 || cols == 6 { cols } else { 3 }
                ),
            ));
        }
        let mut row = [0.0; 6];
        row[..cols].copy_from_slice(&fields);
        push_vertex(
            path,
            &row,
            0,
            1,
            2,
            if cols == 6 { Some((3, 4, 5)) } else { None },
            &mut points,
            if cols == 6 {
                normals.get_or_insert_with(Vec::new);
                &mut normals
            } else {
                &mut normals
            },
        )?;
    }

    let cloud3 = OrientedPointCloud {
        normals_oriented: normals.is_some(),
        points,
        normals,
        scan_origins: super::ScanOrigins::None,
    };
    if dim2 {
        Ok(LoadedCloud::Dim2(LoadedCloud::Dim3(cloud3).into_2d()?))
    } else {
        Ok(LoadedCloud::Dim3(cloud3))
    }
}

/// Load a cloud from `path` in the given format.
pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<LoadedCloud> {
    let path = path.as_ref();
    match format {
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => load_ply(path),
        CloudFormat::Xyz => load_xyz(path),
    }
}

/// Write a cloud to `path`. 2D clouds are embedded as 3D with z = 0 and a
/// `dim 2` marker so they round-trip through [`load_cloud`].
pub fn save_cloud<const D: usize>(
    cloud: &OrientedPointCloud<D>,
    path: impl AsRef<Path>,
    format: CloudFormat,
) -> Result<()> {
    assert!(D == 2 || D == 3, "only 2D and 3D clouds are supported");
    let path = path.as_ref();
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);

    let lift = |v: &SVector<f64, D>| -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for a in 0..D {
            out[a] = v[a];
        }
        out
    };

    match format {
        CloudFormat::Xyz => {
            if D == 2 {
                writeln!(w, "# dim 2")?;
            }
            for (i, p) in cloud.points.iter().enumerate() {
                let p = lift(p);
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(ns) = &cloud.normals {
                    let n = lift(&ns[i]);
                    write!(w, " {} {} {}", n.x, n.y, n.z)?;
                }
                writeln!(w)?;
            }
        }
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let binary = format == CloudFormat::PlyBinaryLe;
            writeln!(w, "ply")?;
            writeln!(
                w,
                "format {} 1.0",
                if binary { "binary_little_endian" } else { "ascii" }
            )?;
            if D == 2 {
                writeln!(w, "comment dim 2")?;
            }
            writeln!(w, "element vertex {}", cloud.len())?;
            writeln!(w, "property double x")?;
            writeln!(w, "property double y")?;
            writeln!(w, "property double z")?;
            if cloud.normals.is_some() {
                writeln!(w, "property double nx")?;
                writeln!(w, "property double ny")?;
                writeln!(w, "property double nz")?;
            }
            writeln!(w, "end_header")?;
            for (i, p) in cloud.points.iter().enumerate() {
                let p = lift(p);
                let n = cloud.normals.as_ref().map(|ns| lift(&ns[i]));
                if binary {
                    for v in [p.x, p.y, p.z] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    if let Some(n) = n {
                        for v in [n.x, n.y, n.z] {
                            w.write_all(&v.to_le_bytes())?;
                        }
                    }
                } else {
                    write!(w, "{} {} {}", p.x, p.y, p.z)?;
                    if let Some(n) = n {
                        write!(w, " {} {} {}", n.x, n.y, n.z)?;
                    }
                    writeln!(w)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::ScanOrigins;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud_3d(n: usize, seed: u64, with_normals: bool) -> OrientedPointCloud<3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let normals = with_normals.then(|| {
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                    .normalize()
                })
                .collect()
        });
        OrientedPointCloud {
            points,
            normals,
            scan_origins: ScanOrigins::None,
            normals_oriented: with_normals,
        }
    }

    #[test]
    fn ply_binary_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = random_cloud_3d(100, 1, true);
        save_cloud(&cloud, &path, CloudFormat::PlyBinaryLe).unwrap();
        let back = load_cloud(&path, CloudFormat::PlyBinaryLe)
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(cloud.points, back.points);
        assert_eq!(cloud.normals, back.normals);
    }

    #[test]
    fn ply_ascii_roundtrip_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = random_cloud_3d(100, 2, true);
        save_cloud(&cloud, &path, CloudFormat::PlyAscii).unwrap();
        let back = load_cloud(&path, CloudFormat::PlyAscii)
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn xyz_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = random_cloud_3d(50, 3, true);
        save_cloud(&cloud, &path, CloudFormat::Xyz).unwrap();
        let back = load_cloud(&path, CloudFormat::Xyz)
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(cloud.points, back.points);
        assert!(back.has_normals());
    }

    #[test]
    fn empty_xyz_file_gives_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        std::fs::write(&path, "").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Xyz).unwrap();
        assert_eq!(cloud.len(), 0);
        assert!(cloud.into_3d().unwrap().bounding_box().is_none());
    }

    #[test]
    fn dim2_marker_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for format in [CloudFormat::PlyAscii, CloudFormat::PlyBinaryLe, CloudFormat::Xyz] {
            let path = dir.path().join("c2.dat");
            let cloud = OrientedPointCloud::with_normals(
                vec![Vector2::new(1.0, 2.0), Vector2::new(-3.0, 0.5)],
                vec![Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)],
            );
            save_cloud(&cloud, &path, format).unwrap();
            let loaded = load_cloud(&path, format).unwrap();
            assert_eq!(loaded.dim(), 2);
            let back = match loaded {
                LoadedCloud::Dim2(c) => c,
                _ => unreachable!(),
            };
            assert_eq!(back.points, cloud.points);
            assert_eq!(back.normals, cloud.normals);
        }
    }

    #[test]
    fn ply_skips_extra_scalar_properties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             end_header\n\
             0 0 0 255 0 0\n1 2 3 0 255 0\n",
        )
        .unwrap();
        let cloud = load_cloud(&path, CloudFormat::PlyAscii)
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1], Vector3::new(1.0, 2.0, 3.0));
        assert!(!cloud.has_normals());
    }

    #[test]
    fn ply_reader_renormalizes_float_normals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\n\
             property float x\nproperty float y\nproperty float z\n\
             property float nx\nproperty float ny\nproperty float nz\n\
             end_header\n\
             0 0 0 0.70710677 0.70710677 0\n",
        )
        .unwrap();
        let cloud = load_cloud(&path, CloudFormat::PlyAscii)
            .unwrap()
            .into_3d()
            .unwrap();
        cloud.validate().unwrap();
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("a.ply");
        std::fs::write(&bad_magic, "not a ply\n").unwrap();
        assert!(matches!(
            load_cloud(&bad_magic, CloudFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));

        let truncated = dir.path().join("b.ply");
        std::fs::write(
            &truncated,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
        )
        .unwrap();
        assert!(matches!(
            load_cloud(&truncated, CloudFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));

        let non_finite = dir.path().join("c.xyz");
        std::fs::write(&non_finite, "0 0 nan\n").unwrap();
        assert!(matches!(
            load_cloud(&non_finite, CloudFormat::Xyz),
            Err(Error::Parse { .. })
        ));

        let ragged = dir.path().join("d.xyz");
        std::fs::write(&ragged, "0 0 0\n1 1\n").unwrap();
        assert!(matches!(
            load_cloud(&ragged, CloudFormat::Xyz),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn format_detection() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.xyz");
        std::fs::write(&a, "0 0 0\n").unwrap();
        assert_eq!(CloudFormat::detect(&a).unwrap(), CloudFormat::Xyz);

        let b = dir.path().join("b.ply");
        std::fs::write(&b, "ply\nformat binary_little_endian 1.0\n").unwrap();
        assert_eq!(CloudFormat::detect(&b).unwrap(), CloudFormat::PlyBinaryLe);

        let c = dir.path().join("c.ply");
        std::fs::write(&c, "ply\nformat ascii 1.0\n").unwrap();
        assert_eq!(CloudFormat::detect(&c).unwrap(), CloudFormat::PlyAscii);
    }
}
