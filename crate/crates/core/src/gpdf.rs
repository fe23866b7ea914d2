//! Gaussian-process distance field over surface points.
//!
//! The occupancy `o(x) = k(x, X) (K + σ²I)⁻¹ 1` is regressed with the
//! Matérn-1/2 kernel `k(d) = exp(-d / l)`, whose inverse `r(o) = -l ln o`
//! turns occupancy back into a distance. Support points may live in any
//! dimension: 3 for object surfaces, the joint count for joint-space fields.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::se3::Pose;

/// Fixed after a grid search in the source experiments.
pub const DEFAULT_LENGTHSCALE: f64 = 0.3;
pub const DEFAULT_NOISE_VAR: f64 = 1e-4;
pub const DEFAULT_REFINE_ITERS: usize = 5;
/// Occupancies are clamped from below before the log.
pub const OCCUPANCY_FLOOR: f64 = 1e-12;

const JITTER_STEP: f64 = 1e-8;
const JITTER_ATTEMPTS: usize = 3;
const MIN_PIVOT: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpdfError {
    #[error("cannot fit a distance field to an empty point set")]
    Empty,
    #[error("support points must all have dimension {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("lengthscale must be positive and noise variance nonnegative")]
    BadHyperparameters,
    #[error("kernel matrix is not positive definite after jitter")]
    NotPositiveDefinite,
}

/// Result of projecting a query onto the zero level set.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    /// Sum of the distances evaluated along the projection path.
    pub distance: f64,
    /// Last well-defined normalized gradient.
    pub normal: DVector<f64>,
    /// Final iterate.
    pub point: DVector<f64>,
    /// Distance at the final iterate.
    pub residual: f64,
    /// Set when an iterate had a vanishing gradient.
    pub degenerate: bool,
}

impl Refined {
    pub fn normal3(&self) -> Vector3<f64> {
        Vector3::new(self.normal[0], self.normal[1], self.normal[2])
    }

    pub fn point3(&self) -> Vector3<f64> {
        Vector3::new(self.point[0], self.point[1], self.point[2])
    }
}

/// A fitted distance field. Immutable; all queries take `&self`.
#[derive(Clone, Debug)]
pub struct GpdfModel {
    dim: usize,
    support: Vec<f64>,
    alpha: DVector<f64>,
    lengthscale: f64,
    noise_var: f64,
    chol: Cholesky<f64, Dyn>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl GpdfModel {
    /// Fits a 3-D field to a surface cloud.
    pub fn fit(surface: &PointCloud, lengthscale: f64, noise_var: f64) -> Result<Self, GpdfError> {
        let rows: Vec<Vec<f64>> = surface
            .points
            .iter()
            .map(|p| vec![p.x, p.y, p.z])
            .collect();
        Self::fit_points(&rows, lengthscale, noise_var)
    }

    /// Fits a field to support points of arbitrary (shared) dimension.
    pub fn fit_points(points: &[Vec<f64>], lengthscale: f64, noise_var: f64) -> Result<Self, GpdfError> {
        if !(lengthscale > 0.0) || !(noise_var >= 0.0) {
            return Err(GpdfError::BadHyperparameters);
        }
        let first = points.first().ok_or(GpdfError::Empty)?;
        let dim = first.len();
        if dim == 0 {
            return Err(GpdfError::Empty);
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(GpdfError::Dimension {
                expected: dim,
                found: bad.len(),
            });
        }
        let n = points.len();
        let support: Vec<f64> = points.iter().flatten().copied().collect();
        let row = |i: usize| &support[i * dim..(i + 1) * dim];
        let gram = DMatrix::from_fn(n, n, |i, j| (-dist(row(i), row(j)) / lengthscale).exp());

        let mut noise = noise_var;
        let mut attempt = 0;
        let chol = loop {
            let mut a = gram.clone();
            for i in 0..n {
                a[(i, i)] += noise;
            }
            if let Some(c) = Cholesky::new(a) {
                let min_pivot = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
                if min_pivot > MIN_PIVOT {
                    break c;
                }
            }
            attempt += 1;
            if attempt > JITTER_ATTEMPTS {
                return Err(GpdfError::NotPositiveDefinite);
            }
            noise = noise_var + JITTER_STEP * attempt as f64;
        };

        let ones = DVector::from_element(n, 1.0);
        let mut alpha = chol.solve(&ones);
        // One step of iterative refinement on the linear solve.
        let mut resid = &ones - &gram * &alpha;
        resid -= &alpha * noise;
        alpha += chol.solve(&resid);

        Ok(Self {
            dim,
            support,
            alpha,
            lengthscale,
            noise_var: noise,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Effective noise variance, including any jitter added during the fit.
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn support_point(&self, i: usize) -> &[f64] {
        &self.support[i * self.dim..(i + 1) * self.dim]
    }

    pub fn support_points(&self) -> impl Iterator<Item = &[f64]> {
        self.support.chunks_exact(self.dim)
    }

    fn kernel(&self, d: f64) -> f64 {
        (-d / self.lengthscale).exp()
    }

    fn kernel_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.support_points().map(|s| self.kernel(dist(x, s))))
    }

    fn check_dim(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "query dimension does not match the field");
    }

    pub fn occupancy(&self, x: &[f64]) -> f64 {
        self.check_dim(x);
        self.support_points()
            .zip(self.alpha.iter())
            .map(|(s, a)| a * self.kernel(dist(x, s)))
            .sum()
    }

    fn revert(&self, occupancy: f64) -> f64 {
        -self.lengthscale * occupancy.max(OCCUPANCY_FLOOR).ln()
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.revert(self.occupancy(x))
    }

    /// Distance and its analytic gradient in a single pass.
    pub fn distance_and_gradient(&self, x: &[f64]) -> (f64, DVector<f64>) {
        self.check_dim(x);
        let mut occ = 0.0;
        // Accumulates -l * d(occupancy)/dx.
        let mut pull = DVector::zeros(self.dim);
        for (s, a) in self.support_points().zip(self.alpha.iter()) {
            let d = dist(x, s);
            let k = a * self.kernel(d);
            occ += k;
            if d > 1e-15 {
                for j in 0..self.dim {
                    pull[j] += k * (x[j] - s[j]) / d;
                }
            }
        }
        if occ <= OCCUPANCY_FLOOR {
            return (self.revert(occ), DVector::zeros(self.dim));
        }
        (self.revert(occ), pull / occ)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.distance_and_gradient(x).1
    }

    /// Posterior occupancy variance, `k(x,x) - k_x^T (K + σ²I)⁻¹ k_x`.
    pub fn variance(&self, x: &[f64]) -> f64 {
        self.check_dim(x);
        let k = self.kernel_vector(x);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a nonzero diagonal");
        1.0 - v.norm_squared()
    }

    /// Sphere-marching projection onto the surface.
    ///
    /// Evaluates the field at `x_0, ..., x_iters`, stepping
    /// `x ← x - d(x) ∇d/|∇d|` between evaluations, and returns the
    /// accumulated distance. `iters = 0` is the raw distance.
    pub fn refine_distance(&self, x: &[f64], iters: usize) -> Refined {
        let mut point = DVector::from_column_slice(x);
        let mut total = 0.0;
        let mut normal = DVector::zeros(self.dim);
        let mut degenerate = false;
        let mut residual = 0.0;
        for it in 0..=iters {
            let (d, g) = self.distance_and_gradient(point.as_slice());
            total += d;
            residual = d;
            let gn = g.norm();
            if !(gn > 1e-12) {
                degenerate = true;
                break;
            }
            normal = g / gn;
            if it < iters {
                point -= &normal * d;
            }
        }
        Refined {
            distance: total,
            normal,
            point,
            residual,
            degenerate,
        }
    }

    /// Repeats the projection step of [`refine_distance`](Self::refine_distance)
    /// until `|d| <= tol` or `max_iters` steps, which matters close to flat
    /// surfaces where `|∇d|` is well below one and each step undershoots.
    pub fn project(&self, x: &[f64], max_iters: usize, tol: f64) -> Refined {
        let mut point = DVector::from_column_slice(x);
        let mut total = 0.0;
        let mut normal = DVector::zeros(self.dim);
        let mut degenerate = false;
        let mut residual = 0.0;
        for it in 0..=max_iters {
            let (d, g) = self.distance_and_gradient(point.as_slice());
            total += d;
            residual = d;
            let gn = g.norm();
            if !(gn > 1e-12) {
                degenerate = true;
                break;
            }
            normal = g / gn;
            if d.abs() <= tol || it == max_iters {
                break;
            }
            point -= &normal * d;
        }
        Refined {
            distance: total,
            normal,
            point,
            residual,
            degenerate,
        }
    }

    pub fn distance3(&self, p: &Vector3<f64>) -> f64 {
        self.distance(p.as_slice())
    }

    pub fn gradient3(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let g = self.gradient(p.as_slice());
        Vector3::new(g[0], g[1], g[2])
    }

    pub fn refine3(&self, p: &Vector3<f64>, iters: usize) -> Refined {
        self.refine_distance(p.as_slice(), iters)
    }
}

/// Oriented box sampled by a regular grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRegion {
    /// Center and orientation of the box.
    pub frame: Pose,
    pub half_extents: Vector3<f64>,
}

impl GridRegion {
    pub fn axis_aligned(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        Self {
            frame: Pose::from_translation((lo + hi) * 0.5),
            half_extents: (hi - lo) * 0.5,
        }
    }

    /// Grid nodes in world coordinates, x-major order.
    pub fn nodes(&self, counts: [usize; 3]) -> Vec<Vector3<f64>> {
        let coord = |axis: usize, i: usize| {
            let n = counts[axis];
            let h = self.half_extents[axis];
            if n < 2 {
                0.0
            } else {
                -h + 2.0 * h * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(counts.iter().product());
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                for k in 0..counts[2] {
                    let local = Vector3::new(coord(0, i), coord(1, j), coord(2, k));
                    out.push(self.frame.transform_point(&local));
                }
            }
        }
        out
    }

    pub fn min_spacing(&self, counts: [usize; 3]) -> f64 {
        (0..3)
            .map(|a| 2.0 * self.half_extents[a] / (counts[a].max(2) - 1) as f64)
            .fold(f64::INFINITY, f64::min)
    }
}

pub const PROJECTION_ITERS: usize = 60;

/// Projects every grid node onto the surface and returns the projected
/// points with normals and occupancy variance.
///
/// Nodes whose projection did not reach the surface (final distance above
/// 1e-3 of the grid spacing after [`PROJECTION_ITERS`] steps), had a
/// vanishing gradient, or whose variance exceeds `var_threshold` are
/// dropped. Projections closer than 10% of the spacing to an earlier one
/// are merged into it.
pub fn complete_shape(
    model: &GpdfModel,
    region: &GridRegion,
    counts: [usize; 3],
    var_threshold: f64,
) -> PointCloud {
    assert_eq!(model.dim(), 3, "shape completion needs a 3-D field");
    assert!(counts.iter().all(|&c| c >= 2), "grid needs at least 2 nodes per axis");
    let spacing = region.min_spacing(counts);
    let tol = 1e-3 * spacing;
    let merge = 0.1 * spacing;
    let projected: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = region
        .nodes(counts)
        .par_iter()
        .map(|node| {
            let r = model.project(node.as_slice(), PROJECTION_ITERS, 0.1 * tol);
            if r.degenerate || r.residual.abs() > tol {
                return None;
            }
            Some((r.point3(), r.normal3()))
        })
        .collect();

    let mut points: Vec<Vector3<f64>> = Vec::new();
    let mut normals = Vec::new();
    for (p, n) in projected.into_iter().flatten() {
        if points.iter().any(|q| (q - p).norm() < merge) {
            continue;
        }
        points.push(p);
        normals.push(n);
    }
    let variances: Vec<f64> = points.par_iter().map(|p| model.variance(p.as_slice())).collect();
    let keep: Vec<usize> = (0..points.len()).filter(|&i| variances[i] <= var_threshold).collect();
    PointCloud {
        points: keep.iter().map(|&i| points[i]).collect(),
        normals: Some(keep.iter().map(|&i| normals[i]).collect()),
        uncertainty: Some(keep.iter().map(|&i| variances[i]).collect()),
    }
}

/// Region used for completion: a cube in `frame` enclosing the cloud,
/// inflated by `expand`, centered on the cloud's extent midpoint.
pub fn expanded_region(cloud: &PointCloud, frame: &Pose, expand: f64) -> GridRegion {
    let inv = frame.inverse();
    let local: Vec<Vector3<f64>> = cloud.points.iter().map(|p| inv.transform_point(p)).collect();
    let (lo, hi) = local.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let mid = (lo + hi) * 0.5;
    let half = (hi - lo).max() * 0.5 * expand;
    GridRegion {
        frame: frame.compose(&Pose::from_translation(mid)),
        half_extents: Vector3::repeat(half),
    }
}

/// One row of an SDF grid dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub point: Vector3<f64>,
    pub distance: f64,
    pub variance: f64,
}

pub fn sample_grid(model: &GpdfModel, region: &GridRegion, counts: [usize; 3]) -> Vec<SdfSample> {
    region
        .nodes(counts)
        .par_iter()
        .map(|p| SdfSample {
            point: *p,
            distance: model.refine3(p, DEFAULT_REFINE_ITERS).distance,
            variance: model.variance(p.as_slice()),
        })
        .collect()
}

pub fn sdf_grid_csv(samples: &[SdfSample]) -> String {
    let mut out = String::from("x,y,z,distance,variance\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.point.x, s.point.y, s.point.z, s.distance, s.variance
        ));
    }
    out
}
