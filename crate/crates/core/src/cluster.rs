//! Diagonal-covariance Gaussian mixtures fitted by expectation maximisation,
//! with the component count chosen by cross-validated held-out likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Point, DIM};

/// Lower bound applied to every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const KMEANS_ITERS: usize = 10;
const KMEANS_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Point,
    pub variance: Point,
}

impl GmmComponent {
    fn log_density(&self, x: &Point) -> f64 {
        let mut acc = 0.0;
        for d in 0..DIM {
            let v = self.variance[d];
            acc += (2.0 * std::f64::consts::PI * v).ln() + (x[d] - self.mean[d]).powi(2) / v;
        }
        -0.5 * acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    /// Training log-likelihood of the final parameters.
    pub log_likelihood: f64,
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Log-likelihood before each M-step, then of the final parameters.
    #[serde(default, skip_serializing)]
    pub ll_history: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Per-component `ln(weight) + ln N(x)`.
    fn joint_log(&self, x: &Point, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.weight.ln() + c.log_density(x);
        }
    }

    /// Mixture log density at `x`.
    pub fn log_density(&self, x: &Point) -> f64 {
        let mut buf = vec![0.0; self.k()];
        self.joint_log(x, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn log_likelihood_of(&self, points: &[Point]) -> f64 {
        points.iter().map(|p| self.log_density(p)).sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood gain of one iteration is below this.
    pub ll_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            ll_tol: 1e-6,
        }
    }
}

/// Seeded k-means followed by a moment match of each cluster. Runs
/// k-means++ seeding plus Lloyd iterations `KMEANS_RUNS` times and keeps the
/// run with the smallest within-cluster sum of squares (earliest on ties).
pub fn kmeans_init(points: &[Point], k: usize, seed: u64) -> Result<Vec<GmmComponent>> {
    check_k(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut best: Option<(f64, Vec<Point>, Vec<usize>)> = None;
    for _ in 0..KMEANS_RUNS {
        let (centers, assign) = kmeans_once(points, k, &mut rng);
        let sse: f64 = points.iter().zip(&assign).map(|(p, &a)| dist2(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, centers, assign));
        }
    }
    let (_, centers, assign) = best.expect("at least one k-means run");

    let global = moments(points.iter());
    let mut comps: Vec<GmmComponent> = (0..k)
        .map(|c| {
            let members: Vec<&Point> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                GmmComponent {
                    weight: 1.0 / n as f64,
                    mean: centers[c],
                    variance: global.1,
                }
            } else {
                let (mean, variance) = moments(members.into_iter());
                GmmComponent {
                    weight: 0.0,
                    mean,
                    variance,
                }
            }
        })
        .collect();
    for (c, comp) in comps.iter_mut().enumerate() {
        if comp.weight == 0.0 {
            comp.weight = assign.iter().filter(|&&a| a == c).count() as f64 / n as f64;
        }
    }
    normalize_weights(&mut comps);
    Ok(comps)
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// One k-means++ seeding followed by `KMEANS_ITERS` Lloyd iterations.
fn kmeans_once(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<usize>) {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = points[next];
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = argmin_by(centers.iter().map(|c| dist2(p, c)));
        }
        let mut sums = vec![[0.0; DIM]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for d in 0..DIM {
                sums[a][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = std::array::from_fn(|d| sums[c][d] / counts[c] as f64);
            }
        }
    }
    // Final assignment against the final centres.
    for (a, p) in assign.iter_mut().zip(points) {
        *a = argmin_by(centers.iter().map(|c| dist2(p, c)));
    }
    (centers, assign)
}

fn moments<'a>(points: impl Iterator<Item = &'a Point> + Clone) -> (Point, Point) {
    let n = points.clone().count() as f64;
    let mut mean = [0.0; DIM];
    for p in points.clone() {
        for d in 0..DIM {
            mean[d] += p[d] / n;
        }
    }
    let mut var = [0.0; DIM];
    for p in points {
        for d in 0..DIM {
            var[d] += (p[d] - mean[d]).powi(2) / n;
        }
    }
    (mean, var.map(|v| v.max(VARIANCE_FLOOR)))
}

fn normalize_weights(comps: &mut [GmmComponent]) {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps {
        c.weight /= total;
    }
}

fn argmin_by(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_k(points: &[Point], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    Ok(())
}

/// Fits a `k`-component mixture, initialised by seeded k-means.
pub fn em_fit(points: &[Point], k: usize, seed: u64, opts: &EmOptions) -> Result<GmmModel> {
    let init = kmeans_init(points, k, seed)?;
    em_fit_from(points, init, opts)
}

/// Runs EM from explicit initial components.
pub fn em_fit_from(points: &[Point], init: Vec<GmmComponent>, opts: &EmOptions) -> Result<GmmModel> {
    check_k(points, init.len())?;
    let n = points.len();
    let k = init.len();
    let mut model = GmmModel {
        components: init,
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
        ll_history: Vec::new(),
    };
    let mut resp = vec![0.0; n * k];
    loop {
        // E-step.
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            model.joint_log(p, row);
            let lse = log_sum_exp(row);
            ll += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        let prev = model.ll_history.last().copied();
        model.ll_history.push(ll);
        model.log_likelihood = ll;
        let converged = prev.is_some_and(|p| ll - p < opts.ll_tol);
        if converged || model.iterations >= opts.max_iter {
            break;
        }

        // M-step. A component with no responsibility mass keeps its shape
        // and gets zero weight.
        for (c, comp) in model.components.iter_mut().enumerate() {
            let mass: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            comp.weight = mass / n as f64;
            if mass <= 0.0 {
                continue;
            }
            let mut mean = [0.0; DIM];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + c];
                for d in 0..DIM {
                    mean[d] += r * p[d];
                }
            }
            mean = mean.map(|m| m / mass);
            let mut var = [0.0; DIM];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + c];
                for d in 0..DIM {
                    var[d] += r * (p[d] - mean[d]).powi(2);
                }
            }
            comp.mean = mean;
            comp.variance = var.map(|v| (v / mass).max(VARIANCE_FLOOR));
        }
        normalize_weights(&mut model.components);
        model.iterations += 1;
    }
    Ok(model)
}

/// Hard assignments and the responsibility matrix (one row per point).
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub clusters: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn top_responsibility(&self, i: usize) -> f64 {
        self.responsibilities[i][self.clusters[i]]
    }
}

/// Posterior component memberships; the hard id is the most responsible
/// component, ties to the lowest id.
pub fn em_assign(model: &GmmModel, points: &[Point]) -> Assignment {
    let k = model.k();
    let mut clusters = Vec::with_capacity(points.len());
    let mut responsibilities = Vec::with_capacity(points.len());
    let mut buf = vec![0.0; k];
    for p in points {
        model.joint_log(p, &mut buf);
        let lse = log_sum_exp(&buf);
        let row: Vec<f64> = buf.iter().map(|l| (l - lse).exp()).collect();
        let mut best = 0;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        clusters.push(best);
        responsibilities.push(row);
    }
    Assignment {
        clusters,
        responsibilities,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectKOptions {
    pub k_max: usize,
    pub folds: usize,
    pub seed: u64,
    /// Evaluate every k up to `k_max` and take the best, instead of stopping
    /// at the first k that fails to improve.
    pub scan_all: bool,
}

impl Default for SelectKOptions {
    fn default() -> Self {
        SelectKOptions {
            k_max: 15,
            folds: 10,
            seed: 7,
            scan_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub model: GmmModel,
    /// `(k, mean held-out log-likelihood per point)` for every k evaluated.
    pub cv_scores: Vec<(usize, f64)>,
}

fn derive_seed(seed: u64, k: usize, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ fold as u64);
    rng.gen()
}

/// Cross-validated held-out log-likelihood for `k` components: the mean
/// over folds of the per-point held-out log-likelihood.
pub fn cv_log_likelihood(
    points: &[Point],
    fold_of: &[usize],
    folds: usize,
    k: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<f64> {
    let scores = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<Point> = points.iter().zip(fold_of).filter(|(_, &g)| g != f).map(|(p, _)| *p).collect();
            let test: Vec<Point> = points.iter().zip(fold_of).filter(|(_, &g)| g == f).map(|(p, _)| *p).collect();
            let model = em_fit(&train, k, derive_seed(seed, k, f), opts)?;
            Ok(model.log_likelihood_of(&test) / test.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / folds as f64)
}

/// Chooses the component count by cross-validated likelihood, starting at
/// k = 1 and increasing while the score improves, then refits on all
/// points.
pub fn em_select_k(points: &[Point], sel: &SelectKOptions, opts: &EmOptions) -> Result<KSelection> {
    if sel.folds < 2 {
        return Err(Error::InvalidArgument("folds must be at least 2".into()));
    }
    if sel.k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if points.len() < sel.folds {
        return Err(Error::InvalidArgument(format!(
            "{} points cannot fill {} folds",
            points.len(),
            sel.folds
        )));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut fold_of = vec![0; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % sel.folds;
    }
    let smallest_train = points.len() - points.len().div_ceil(sel.folds);

    let mut cv_scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=sel.k_max.min(smallest_train) {
        let score = cv_log_likelihood(points, &fold_of, sel.folds, k, sel.seed, opts)?;
        cv_scores.push((k, score));
        match best {
            Some((_, b)) if score <= b => {
                if !sel.scan_all {
                    break;
                }
            }
            _ => best = Some((k, score)),
        }
    }
    let k = best.map_or(1, |b| b.0);
    let model = em_fit(points, k, sel.seed, opts)?;
    Ok(KSelection {
        k,
        model,
        cv_scores,
    })
}
