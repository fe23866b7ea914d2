//! Gaussian mixtures on SE(3) with tangent-space covariances.
//!
//! A component at mean `μ` with covariance `Σ` has density
//! `((2π)⁶ |Σ|)^(-1/2) exp(-½ Lᵀ Σ⁻¹ L)` where `L = Log_μ(x)`.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{exp_at, log_at, right_jacobian_inv, Pose, Se3Error, Tangent};

pub const DEFAULT_REG: f64 = 1e-6;
pub const MEAN_TOL: f64 = 1e-9;
pub const MEAN_MAX_ITER: usize = 100;
const KMEANS_ROUNDS: usize = 10;
const RESP_FLOOR: f64 = 1e-10;
// Mean iterations per M-step; the mean is warm-started from the previous one.
const M_STEP_MEAN_ITER: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RmmError {
    #[error(transparent)]
    Se3(#[from] Se3Error),
    #[error("mean iteration did not converge in {iterations} steps")]
    NoConvergence { iterations: usize, last: Pose },
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("no candidate component count could be fitted")]
    AllFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiemannianGaussian {
    pub mean: Pose,
    pub cov: Matrix6<f64>,
    precision: Matrix6<f64>,
    log_norm: f64,
}

impl RiemannianGaussian {
    pub fn new(mean: Pose, cov: Matrix6<f64>) -> Result<Self, RmmError> {
        let cov = (cov + cov.transpose()) * 0.5;
        let chol = cov.cholesky().ok_or(RmmError::NotSpd)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            precision: chol.inverse(),
            log_norm: -0.5 * (6.0 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn precision(&self) -> &Matrix6<f64> {
        &self.precision
    }

    pub fn log_pdf(&self, x: &Pose) -> Result<f64, RmmError> {
        let l = log_at(&self.mean, x)?.0;
        Ok(self.log_norm - 0.5 * l.dot(&(self.precision * l)))
    }

    pub fn pdf(&self, x: &Pose) -> Result<f64, RmmError> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// `(log N(x), Jᵀ(-Σ⁻¹L))`: log density and the body-frame gradient of
    /// the log density at `x`.
    fn log_pdf_and_pull(&self, x: &Pose) -> Result<(f64, Vector6<f64>), RmmError> {
        let l = log_at(&self.mean, x)?.0;
        let pl = self.precision * l;
        let jac = right_jacobian_inv(&self.mean, x)?;
        Ok((self.log_norm - 0.5 * l.dot(&pl), -(jac.transpose() * pl)))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn normalized(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>, RmmError> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n || w.iter().any(|x| !(*x >= 0.0)) {
                return Err(RmmError::BadWeights);
            }
            let s: f64 = w.iter().sum();
            if !(s > 0.0) {
                return Err(RmmError::BadWeights);
            }
            Ok(w.iter().map(|x| x / s).collect())
        }
    }
}

/// Weighted Fréchet mean by the fixed point `μ ← Exp_μ(Σ wᵢ Log_μ(xᵢ))`,
/// started from the heaviest pose.
pub fn riemannian_mean(poses: &[Pose], weights: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<Pose, RmmError> {
    let w = normalized(weights, poses.len())?;
    let start = (0..poses.len())
        .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)))
        .ok_or(RmmError::TooFewPoses { needed: 1, got: 0 })?;
    mean_from(poses, &w, poses[start], tol, max_iter, false)
}

/// With `lenient`, poses whose logarithm at the iterate is undefined (a
/// relative rotation of π) are left out of that step instead of failing.
fn mean_from(poses: &[Pose], w: &[f64], init: Pose, tol: f64, max_iter: usize, lenient: bool) -> Result<Pose, RmmError> {
    let mut mu = init;
    for _ in 0..max_iter {
        let mut u = Vector6::zeros();
        let mut mass = 0.0;
        for (x, wi) in poses.iter().zip(w) {
            if *wi > 0.0 {
                match log_at(&mu, x) {
                    Ok(l) => {
                        u += l.0 * *wi;
                        mass += *wi;
                    }
                    Err(_) if lenient => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if mass > 0.0 {
            u /= mass;
        }
        if u.norm() < tol {
            return Ok(mu);
        }
        mu = exp_at(&mu, &Tangent(u));
    }
    Err(RmmError::NoConvergence {
        iterations: max_iter,
        last: mu,
    })
}

/// `Σ wᵢ Log_μ(xᵢ) Log_μ(xᵢ)ᵀ + reg·I` with weights normalized to one.
pub fn tangent_covariance(poses: &[Pose], weights: Option<&[f64]>, mu: &Pose, reg: f64) -> Result<Matrix6<f64>, RmmError> {
    let w = normalized(weights, poses.len())?;
    covariance_at(poses, &w, mu, reg, false)
}

fn covariance_at(poses: &[Pose], w: &[f64], mu: &Pose, reg: f64, lenient: bool) -> Result<Matrix6<f64>, RmmError> {
    let mut cov = Matrix6::zeros();
    let mut mass = 0.0;
    for (x, wi) in poses.iter().zip(w) {
        if *wi > 0.0 {
            match log_at(mu, x) {
                Ok(l) => {
                    cov += l.0 * l.0.transpose() * *wi;
                    mass += *wi;
                }
                Err(_) if lenient => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    if mass > 0.0 {
        cov /= mass;
    }
    let cov = (cov + cov.transpose()) * 0.5;
    Ok(cov + Matrix6::identity() * reg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct RiemannianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<RiemannianGaussian>,
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    pose: Pose,
    cov: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    components: Vec<ComponentRepr>,
}

impl From<RiemannianMixture> for MixtureRepr {
    fn from(m: RiemannianMixture) -> Self {
        MixtureRepr {
            weights: m.weights,
            components: m
                .components
                .into_iter()
                .map(|c| ComponentRepr {
                    pose: c.mean,
                    cov: c.cov.transpose().iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MixtureRepr> for RiemannianMixture {
    type Error = String;
    fn try_from(r: MixtureRepr) -> Result<Self, String> {
        let components = r
            .components
            .into_iter()
            .map(|c| {
                if c.cov.len() != 36 {
                    return Err(format!("covariance needs 36 values, got {}", c.cov.len()));
                }
                RiemannianGaussian::new(c.pose, Matrix6::from_row_slice(&c.cov)).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        RiemannianMixture::new(r.weights, components).map_err(|e| e.to_string())
    }
}

impl RiemannianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<RiemannianGaussian>) -> Result<Self, RmmError> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(RmmError::BadWeights);
        }
        let weights = normalized(Some(&weights), components.len())?;
        Ok(Self { weights, components })
    }

    pub fn single(g: RiemannianGaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![g],
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn log_terms(&self, x: &Pose) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| match c.log_pdf(x) {
                Ok(lp) if *w > 0.0 => w.ln() + lp,
                _ => f64::NEG_INFINITY,
            })
            .collect()
    }

    /// Log mixture density; components whose log is undefined at `x`
    /// contribute nothing.
    pub fn log_prob(&self, x: &Pose) -> f64 {
        log_sum_exp(&self.log_terms(x))
    }

    pub fn prob(&self, x: &Pose) -> f64 {
        self.log_prob(x).exp()
    }

    /// Body-frame gradient of the mixture density,
    /// `Σ πᵢ Nᵢ(x) Jᵢᵀ (-Σᵢ⁻¹ Lᵢ)` with `Jᵢ` the numerical right Jacobian of
    /// `Log_μᵢ` at `x`.
    pub fn grad(&self, x: &Pose) -> Result<Tangent, RmmError> {
        let mut g = Vector6::zeros();
        for (c, w) in self.components.iter().zip(&self.weights) {
            let (lp, pull) = c.log_pdf_and_pull(x)?;
            g += pull * (w * lp.exp());
        }
        Ok(Tangent(g))
    }

    /// Gradient of the log density, computed with responsibilities so it
    /// stays finite where the density itself underflows.
    pub fn log_grad(&self, x: &Pose) -> Tangent {
        let terms: Vec<Option<(f64, Vector6<f64>)>> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let (lp, pull) = c.log_pdf_and_pull(x).ok()?;
                (*w > 0.0).then(|| (w.ln() + lp, pull))
            })
            .collect();
        let logs: Vec<f64> = terms.iter().map(|t| t.map_or(f64::NEG_INFINITY, |t| t.0)).collect();
        let total = log_sum_exp(&logs);
        if total == f64::NEG_INFINITY {
            return Tangent::zeros();
        }
        let mut g = Vector6::zeros();
        for (lp, pull) in terms.into_iter().flatten() {
            g += pull * (lp - total).exp();
        }
        Tangent(g)
    }

    /// Left action: every mean becomes `g·μ`.
    pub fn transform(&self, g: &Pose) -> RiemannianMixture {
        RiemannianMixture {
            weights: self.weights.clone(),
            components: self
                .components
                .iter()
                .map(|c| RiemannianGaussian {
                    mean: g.compose(&c.mean),
                    ..c.clone()
                })
                .collect(),
        }
    }

    /// Keeps the listed components and renormalizes the weights.
    pub fn restricted(&self, keep: &[usize]) -> Option<RiemannianMixture> {
        let weights: Vec<f64> = keep.iter().map(|&i| self.weights[i]).collect();
        let components = keep.iter().map(|&i| self.components[i].clone()).collect();
        RiemannianMixture::new(weights, components).ok()
    }

    /// Local maxima reached by Gauss-Newton ascent of the log density from
    /// every component mean, with near-duplicates merged.
    pub fn modes(&self) -> Vec<Pose> {
        let mut out: Vec<Pose> = Vec::new();
        for c in &self.components {
            let x = self.ascend(c.mean, 100);
            let dup = out.iter().any(|m| {
                let (t, r) = m.distance_to(&x);
                t < 1e-6 && r < 1e-6
            });
            if !dup {
                out.push(x);
            }
        }
        out
    }

    fn ascend(&self, mut x: Pose, max_iter: usize) -> Pose {
        for _ in 0..max_iter {
            let logs = self.log_terms(&x);
            let total = log_sum_exp(&logs);
            if total == f64::NEG_INFINITY {
                break;
            }
            let mut h = Matrix6::zeros();
            let mut g = Vector6::zeros();
            for ((c, lp), _) in self.components.iter().zip(&logs).zip(&self.weights) {
                let r = (lp - total).exp();
                if r < 1e-300 {
                    continue;
                }
                let Ok(l) = log_at(&c.mean, &x) else { continue };
                let Ok(jac) = right_jacobian_inv(&c.mean, &x) else { continue };
                let pj = c.precision * jac;
                h += jac.transpose() * pj * r;
                g -= jac.transpose() * (c.precision * l.0) * r;
            }
            let Some(step) = h.cholesky().map(|ch| ch.solve(&g)) else { break };
            x = x.oplus(&Tangent(step));
            if step.norm() < 1e-12 {
                break;
            }
        }
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            reg: DEFAULT_REG,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: RiemannianMixture,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every accepted M-step.
    pub trace: Vec<f64>,
}

impl EmFit {
    /// `-2 log L + p ln N` with `p = 28k - 1`.
    pub fn bic(&self, n: usize) -> f64 {
        bic(self.log_likelihood, self.mixture.len(), n)
    }
}

pub fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    let p = (k * (1 + 6 + 21) - 1) as f64;
    -2.0 * log_likelihood + p * (n as f64).ln()
}

/// Per-pose log component terms and the total log-likelihood.
fn e_step(m: &RiemannianMixture, poses: &[Pose]) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let logs: Vec<Vec<f64>> = poses.par_iter().map(|x| m.log_terms(x)).collect();
    let totals: Vec<f64> = logs.iter().map(|l| log_sum_exp(l)).collect();
    let ll = totals.iter().sum();
    (logs, totals, ll)
}

struct Seeding {
    labels: Vec<usize>,
}

/// K-means++ seeding followed by a few Lloyd rounds, all in the tangent
/// space at `base`.
fn kmeans(tangents: &[Vector6<f64>], k: usize, rng: &mut ChaCha8Rng) -> Seeding {
    let n = tangents.len();
    let mut centers = vec![tangents[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = tangents.iter().map(|t| (t - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(tangents[next]);
        for (d, t) in d2.iter_mut().zip(tangents) {
            *d = d.min((t - tangents[next]).norm_squared());
        }
    }
    let assign = |centers: &[Vector6<f64>]| -> Vec<usize> {
        tangents
            .iter()
            .map(|t| {
                (0..centers.len())
                    .min_by(|&a, &b| (t - centers[a]).norm_squared().total_cmp(&(t - centers[b]).norm_squared()))
                    .unwrap()
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..KMEANS_ROUNDS {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vector6<f64>> = tangents.iter().zip(&labels).filter(|(_, l)| **l == j).map(|(t, _)| t).collect();
            if !members.is_empty() {
                *c = members.iter().copied().sum::<Vector6<f64>>() / members.len() as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Seeding { labels }
}

fn component_from(poses: &[Pose], w: &[f64], init: Pose, reg: f64) -> Result<RiemannianGaussian, RmmError> {
    let mean = match mean_from(poses, w, init, MEAN_TOL, M_STEP_MEAN_ITER, true) {
        Ok(m) => m,
        Err(RmmError::NoConvergence { last, .. }) => last,
        Err(e) => return Err(e),
    };
    let cov = covariance_at(poses, w, &mean, reg, true)?;
    RiemannianGaussian::new(mean, cov)
}

/// Expectation-maximization with K-means++ initialization. The
/// log-likelihood never decreases: an M-step that would lower it is
/// discarded and the fit stops.
pub fn fit_em(poses: &[Pose], k: usize, seed: u64, cfg: &EmConfig) -> Result<EmFit, RmmError> {
    let n = poses.len();
    if k == 0 || n < k {
        return Err(RmmError::TooFewPoses { needed: k.max(1), got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = vec![1.0 / n as f64; n];
    let global = match mean_from(poses, &uniform, poses[0], MEAN_TOL, MEAN_MAX_ITER, true) {
        Ok(m) => m,
        Err(RmmError::NoConvergence { last, .. }) => last,
        Err(e) => return Err(e),
    };
    let global_cov = covariance_at(poses, &uniform, &global, cfg.reg, true)?;
    // Poses opposite the global mean in rotation have no tangent there; they
    // join no seed cluster and are picked up by the first E-step.
    let logs0: Vec<Option<Vector6<f64>>> = poses.iter().map(|x| log_at(&global, x).ok().map(|t| t.0)).collect();
    let kept: Vec<usize> = (0..n).filter(|&i| logs0[i].is_some()).collect();
    if kept.len() < k {
        return Err(RmmError::TooFewPoses { needed: k, got: kept.len() });
    }
    let tangents: Vec<Vector6<f64>> = kept.iter().map(|&i| logs0[i].unwrap()).collect();
    let mut seeding = kmeans(&tangents, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    for (slot, &i) in kept.iter().enumerate() {
        labels[i] = seeding.labels[slot];
    }
    seeding.labels = labels;
    let mut components = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        let w: Vec<f64> = seeding.labels.iter().map(|l| if *l == j { 1.0 } else { 0.0 }).collect();
        let count: f64 = w.iter().sum();
        if count == 0.0 {
            let anchor = exp_at(&global, &Tangent(tangents[rng.random_range(0..tangents.len())]));
            components.push(RiemannianGaussian::new(anchor, global_cov)?);
            weights.push(1.0 / n as f64);
            continue;
        }
        let first = w.iter().position(|v| *v > 0.0).unwrap();
        let wn: Vec<f64> = w.iter().map(|v| v / count).collect();
        components.push(component_from(poses, &wn, poses[first], cfg.reg)?);
        weights.push(count / n as f64);
    }
    let mut mixture = RiemannianMixture::new(weights, components)?;
    if k == 1 {
        // The single-component optimum is the plain mean and covariance.
        mixture = RiemannianMixture::single(RiemannianGaussian::new(global, global_cov)?);
    }
    let (mut logs, mut totals, mut ll) = e_step(&mixture, poses);
    let mut trace = vec![ll];

    for _ in 0..cfg.max_iter {
        let mut comps = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for j in 0..k {
            let resp: Vec<f64> = logs
                .iter()
                .zip(&totals)
                .map(|(l, t)| if t.is_finite() { (l[j] - t).exp() } else { 0.0 })
                .collect();
            let mass: f64 = resp.iter().sum();
            if !(mass > 1e-10) {
                // Re-seed an emptied component at the worst-explained pose.
                let worst = (0..n).min_by(|&a, &b| totals[a].total_cmp(&totals[b])).unwrap();
                comps.push(RiemannianGaussian::new(poses[worst], global_cov)?);
                weights.push(1.0 / n as f64);
                continue;
            }
            // Negligible responsibilities are dropped from the M-step sums.
            let wn: Vec<f64> = resp
                .iter()
                .map(|r| if *r < RESP_FLOOR * mass { 0.0 } else { r / mass })
                .collect();
            comps.push(component_from(poses, &wn, mixture.components[j].mean, cfg.reg)?);
            weights.push(mass / n as f64);
        }
        let candidate = RiemannianMixture::new(weights, comps)?;
        let (nlogs, ntotals, nll) = e_step(&candidate, poses);
        if nll < ll - 1e-10 * ll.abs().max(1.0) {
            break;
        }
        let gain = nll - ll;
        mixture = candidate;
        logs = nlogs;
        totals = ntotals;
        ll = nll;
        trace.push(ll);
        if gain.abs() <= cfg.tol * ll.abs().max(1.0) {
            break;
        }
    }
    Ok(EmFit {
        mixture,
        log_likelihood: ll,
        trace,
    })
}

/// Fits every `k` in `ks` and returns the one with the lowest BIC.
pub fn select_k_bic(poses: &[Pose], ks: &[usize], seed: u64, cfg: &EmConfig) -> Result<(usize, EmFit), RmmError> {
    let mut best: Option<(usize, EmFit, f64)> = None;
    for &k in ks {
        let Ok(fit) = fit_em(poses, k, seed, cfg) else { continue };
        let score = fit.bic(poses.len());
        if best.as_ref().is_none_or(|b| score < b.2) {
            best = Some((k, fit, score));
        }
    }
    best.map(|(k, f, _)| (k, f)).ok_or(RmmError::AllFailed)
}
