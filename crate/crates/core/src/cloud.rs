//! Point clouds and their on-disk formats (ASCII PLY and CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::se3::Pose;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported cloud format: {0}")]
    Format(String),
    #[error("normals and points have different lengths ({normals} vs {points})")]
    Mismatch { points: usize, normals: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    /// Per-point occupancy variance.
    pub uncertainty: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            uncertainty: None,
        }
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: Some(normals),
            uncertainty: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Rigidly moves points and rotates normals.
    pub fn transformed(&self, g: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| g.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| g.transform_vector(n)).collect()),
            uncertainty: self.uncertainty.clone(),
        }
    }

    pub fn normals_are_unit(&self, tol: f64) -> bool {
        self.normals
            .as_ref()
            .is_none_or(|ns| ns.iter().all(|n| (n.norm() - 1.0).abs() <= tol))
    }

    fn check(&self) -> Result<(), CloudError> {
        if let Some(ns) = &self.normals {
            if ns.len() != self.points.len() {
                return Err(CloudError::Mismatch {
                    points: self.points.len(),
                    normals: ns.len(),
                });
            }
        }
        Ok(())
    }

    /// Reads `.ply` or `.csv` based on the file extension.
    pub fn load(path: &Path) -> Result<PointCloud, CloudError> {
        let text = fs::read_to_string(path).map_err(|source| CloudError::Io {
            path: path.display().to_string(),
            source,
        })?;
        match extension(path).as_str() {
            "ply" => parse_ply(&text),
            "csv" => parse_csv(&text),
            other => Err(CloudError::Format(other.to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CloudError> {
        self.check()?;
        let text = match extension(path).as_str() {
            "ply" => self.to_ply(),
            "csv" => self.to_csv(),
            other => return Err(CloudError::Format(other.to_string())),
        };
        fs::write(path, text).map_err(|source| CloudError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.normals.is_some() {
            out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        if self.uncertainty.is_some() {
            out.push_str("property double uncertainty\n");
        }
        out.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
            if let Some(ns) = &self.normals {
                let n = ns[i];
                let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
            }
            if let Some(u) = &self.uncertainty {
                let _ = write!(out, " {}", u[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z");
        if self.normals.is_some() {
            out.push_str(",nx,ny,nz");
        }
        if self.uncertainty.is_some() {
            out.push_str(",uncertainty");
        }
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{},{},{}", p.x, p.y, p.z);
            if let Some(ns) = &self.normals {
                let n = ns[i];
                let _ = write!(out, ",{},{},{}", n.x, n.y, n.z);
            }
            if let Some(u) = &self.uncertainty {
                let _ = write!(out, ",{}", u[i]);
            }
            out.push('\n');
        }
        out
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Builds a cloud from named columns; `x,y,z` are required.
fn from_columns(names: &[String], rows: Vec<(usize, Vec<f64>)>) -> Result<PointCloud, CloudError> {
    let col = |n: &str| names.iter().position(|c| c == n);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(CloudError::Parse {
                line: 1,
                msg: "missing x, y or z column".into(),
            })
        }
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let unc_col = col("uncertainty");
    let mut cloud = PointCloud::default();
    let mut normals = Vec::new();
    let mut unc = Vec::new();
    for (line, row) in rows {
        if row.len() != names.len() {
            return Err(CloudError::Parse {
                line,
                msg: format!("expected {} values, found {}", names.len(), row.len()),
            });
        }
        cloud.points.push(Vector3::new(row[x], row[y], row[z]));
        if let Some((a, b, c)) = normal_cols {
            normals.push(Vector3::new(row[a], row[b], row[c]));
        }
        if let Some(u) = unc_col {
            unc.push(row[u]);
        }
    }
    if normal_cols.is_some() {
        cloud.normals = Some(normals);
    }
    if unc_col.is_some() {
        cloud.uncertainty = Some(unc);
    }
    Ok(cloud)
}

fn parse_numbers(line: usize, fields: &mut dyn Iterator<Item = &str>) -> Result<Vec<f64>, CloudError> {
    fields
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| CloudError::Parse {
                line,
                msg: format!("bad number {f:?}: {e}"),
            })
        })
        .collect()
}

pub fn parse_csv(text: &str) -> Result<PointCloud, CloudError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(CloudError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_ascii_lowercase()).collect();
    let rows = lines
        .map(|(i, l)| parse_numbers(i + 1, &mut l.split(',')).map(|r| (i + 1, r)))
        .collect::<Result<Vec<_>, _>>()?;
    from_columns(&names, rows)
}

pub fn parse_ply(text: &str) -> Result<PointCloud, CloudError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            return Err(CloudError::Parse {
                line: 1,
                msg: "missing ply magic".into(),
            })
        }
    }
    let mut names = Vec::new();
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut header_done = false;
    for (i, line) in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(CloudError::Format(format!("ply {fmt}")));
            }
            ["element", "vertex", n] => {
                in_vertex = true;
                vertex_count = Some(n.parse::<usize>().map_err(|e| CloudError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?);
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(CloudError::Format("list property on vertex".into()));
            }
            ["property", _, name] if in_vertex => names.push(name.to_ascii_lowercase()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(CloudError::Parse {
            line: 0,
            msg: "missing end_header".into(),
        });
    }
    let count = vertex_count.ok_or(CloudError::Parse {
        line: 0,
        msg: "no vertex element".into(),
    })?;
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()).take(count) {
        rows.push((i + 1, parse_numbers(i + 1, &mut line.split_whitespace())?));
    }
    if rows.len() != count {
        return Err(CloudError::Parse {
            line: 0,
            msg: format!("expected {count} vertices, found {}", rows.len()),
        });
    }
    from_columns(&names, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_csv_with_and_without_normals() {
        let c = parse_csv("x,y,z\n0,0,1\n1,2,3\n").unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.normals.is_none());
        let c = parse_csv("x,y,z,nx,ny,nz\n0,0,1,0,0,1\n").unwrap();
        assert_eq!(c.normals.unwrap()[0], Vector3::z());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_csv("x,y,z\n0,0\n").is_err());
        assert!(parse_csv("x,y,z\n0,a,1\n").is_err());
        assert!(parse_csv("a,b,c\n0,0,1\n").is_err());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(parse_ply("not a ply").is_err());
    }

    #[test]
    fn ply_roundtrip_keeps_all_columns() {
        let mut c = PointCloud::with_normals(
            vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1e-9, 2.5, -7.0)],
            vec![Vector3::x(), Vector3::new(0.0, 0.6, 0.8)],
        );
        c.uncertainty = Some(vec![0.01, 0.5]);
        assert_eq!(parse_ply(&c.to_ply()).unwrap(), c);
        assert_eq!(parse_csv(&c.to_csv()).unwrap(), c);
    }

    #[test]
    fn ply_ignores_faces_and_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 1 1 0\n3 0 1 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Vector3::new(1.0, 1.0, 1.0));
    }
}
