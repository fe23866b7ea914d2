//! Analytic test shapes: surface samplers with exact normals and signed
//! distance functions.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::cloud::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Axis-aligned box.
    Cuboid {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
    },
}

impl Shape {
    pub fn sphere(radius: f64) -> Self {
        Shape::Sphere {
            center: Vector3::zeros(),
            radius,
        }
    }

    pub fn cuboid(half_extents: Vector3<f64>) -> Self {
        Shape::Cuboid {
            center: Vector3::zeros(),
            half_extents,
        }
    }

    pub fn sdf(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (x - center).norm() - radius,
            Shape::Cuboid {
                center,
                half_extents,
            } => {
                let q = (x - center).abs() - half_extents;
                let outside = q.sup(&Vector3::zeros()).norm();
                outside + q.max().min(0.0)
            }
        }
    }

    /// Outward unit normal of the closest surface feature.
    pub fn normal(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-7;
        let g = Vector3::new(
            self.sdf(&(x + Vector3::x() * h)) - self.sdf(&(x - Vector3::x() * h)),
            self.sdf(&(x + Vector3::y() * h)) - self.sdf(&(x - Vector3::y() * h)),
            self.sdf(&(x + Vector3::z() * h)) - self.sdf(&(x - Vector3::z() * h)),
        );
        g.normalize()
    }

    /// Deterministic, roughly uniform surface samples with exact normals.
    pub fn surface_cloud(&self, n: usize) -> PointCloud {
        match self {
            Shape::Sphere { center, radius } => {
                let dirs = fibonacci_sphere(n);
                let points = dirs.iter().map(|d| center + d * *radius).collect();
                PointCloud::with_normals(points, dirs)
            }
            Shape::Cuboid {
                center,
                half_extents,
            } => {
                // Pick a per-face grid resolution so the total is close to n.
                let h = half_extents;
                let area = 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
                let spacing = (area / n.max(1) as f64).sqrt();
                let mut points = Vec::new();
                let mut normals = Vec::new();
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let nu = ((2.0 * h[u] / spacing).round() as usize).max(1) + 1;
                    let nv = ((2.0 * h[v] / spacing).round() as usize).max(1) + 1;
                    for sign in [1.0, -1.0] {
                        for i in 0..nu {
                            for j in 0..nv {
                                let su = -h[u] + 2.0 * h[u] * i as f64 / (nu - 1) as f64;
                                let sv = -h[v] + 2.0 * h[v] * j as f64 / (nv - 1) as f64;
                                // Edge rows are owned by the lower axis; skip repeats.
                                let on_edge_u = i == 0 || i == nu - 1;
                                let on_edge_v = j == 0 || j == nv - 1;
                                if (on_edge_u && u < axis) || (on_edge_v && v < axis) {
                                    continue;
                                }
                                let mut p = Vector3::zeros();
                                p[axis] = sign * h[axis];
                                p[u] = su;
                                p[v] = sv;
                                let mut nrm = Vector3::zeros();
                                nrm[axis] = sign;
                                points.push(center + p);
                                normals.push(nrm);
                            }
                        }
                    }
                }
                // Normals at edges are ambiguous; use the analytic one.
                for (p, n) in points.iter().zip(normals.iter_mut()) {
                    let off = p - center;
                    let q = off.abs() - half_extents;
                    if q.iter().filter(|v| v.abs() < 1e-12).count() > 1 {
                        *n = self.normal(&(p + off.normalize() * 1e-4));
                    }
                }
                PointCloud::with_normals(points, normals)
            }
        }
    }
}

/// `n` unit vectors on a Fibonacci spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (1.0 + 5f64.sqrt());
    (0..n)
        .map(|i| {
            let k = i as f64 + 0.5;
            let phi = (1.0 - 2.0 * k / n as f64).acos();
            let theta = golden * k;
            Vector3::new(theta.cos() * phi.sin(), theta.sin() * phi.sin(), phi.cos())
        })
        .collect()
}

/// Keeps the points whose offset from the centroid has a nonnegative
/// component along `dir`, simulating a single-view partial scan.
pub fn visible_half(cloud: &PointCloud, center: &Vector3<f64>, dir: &Vector3<f64>) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - center).dot(dir) >= 0.0)
        .collect();
    PointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| keep.iter().map(|&i| ns[i]).collect()),
        uncertainty: None,
    }
}
