//! RBF-kernel support vector machines trained with SMO.
//!
//! The binary solver maximises the dual
//!
//! ```text
//! W(a) = sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= C,  sum_i y_i a_i = 0
//! ```
//!
//! using pairwise updates with second-order working-set selection. It stops
//! once the maximal KKT violation `m(a) - M(a)` falls below `tol`, which
//! with the bias taken inside `[M, m]` bounds every margin violation by
//! `tol`. Multiclass prediction is one-vs-one voting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_votes, Prediction};
use crate::error::{Error, Result};
use crate::trace::ActivityClass;
use crate::Point;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Box constraint.
    pub c: f64,
    /// RBF width in `exp(-gamma * |x - z|^2)`.
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            gamma: 0.5,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive, got {}", self.c)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

pub fn rbf_kernel(a: &Point, b: &Point, gamma: f64) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    (-gamma * d2).exp()
}

/// Dual objective `W(a)` for labels `y` in {-1, +1}.
pub fn dual_objective(points: &[Point], y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let linear: f64 = alpha.iter().sum();
    let mut quad = 0.0;
    for i in 0..points.len() {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..points.len() {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf_kernel(&points[i], &points[j], gamma);
        }
    }
    linear - 0.5 * quad
}

/// Full solver output: every multiplier, not just the support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final `m(a) - M(a)`.
    pub violation: f64,
}

/// Solves the binary dual. `y` holds +1.0 / -1.0.
pub fn smo_solve(points: &[Point], y: &[f64], params: &SvmParams) -> Result<SmoSolution> {
    params.validate()?;
    let n = points.len();
    if n != y.len() {
        return Err(Error::InvalidArgument(format!("{n} points but {} labels", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(format!("labels must be +1 or -1, got {bad}")));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::SingleClass);
    }

    let kernel: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| rbf_kernel(&points[i], &points[j], params.gamma))
        .collect();
    let k = |i: usize, j: usize| kernel[i * n + j];

    let c = params.c;
    let mut alpha = vec![0.0; n];
    // Gradient of the minimisation form: G = Q a - 1.
    let mut grad = vec![-1.0; n];

    // Can y_t a_t still increase / decrease?
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let violation = loop {
        let mut m = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= m {
                m = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut big_m = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        if i_sel != usize::MAX {
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                big_m = big_m.min(v);
                let b = m - v;
                if b > 0.0 {
                    let mut a = k(i_sel, i_sel) + k(t, t) - 2.0 * k(i_sel, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj <= best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        }
        let gap = m - big_m;
        if j_sel == usize::MAX || gap < params.tol {
            break gap.max(0.0);
        }
        if iterations >= params.max_iter {
            return Err(Error::NotConverged {
                iterations,
                violation: gap,
                tol: params.tol,
            });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(t, i) * di + y[j] * k(t, j) * dj);
        }
    };

    // Bias: mean over free multipliers, else the midpoint of the feasible
    // interval; in both cases -bias lies within [M, m].
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                hi = hi.min(yg);
            } else {
                lo = lo.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                hi = hi.min(yg);
            } else {
                lo = lo.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (hi + lo) / 2.0
    };

    Ok(SmoSolution {
        alpha,
        bias: -rho,
        iterations,
        violation,
    })
}

/// One trained binary machine; positive decision values mean `y = +1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Point>,
    /// Dual multipliers of the support vectors, each in `(0, C]`.
    pub alpha: Vec<f64>,
    /// Labels (+1 / -1) of the support vectors.
    pub y: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

impl BinarySvm {
    pub fn train(points: &[Point], y: &[f64], params: &SvmParams) -> Result<Self> {
        let sol = smo_solve(points, y, params)?;
        Ok(Self::from_solution(points, y, &sol, params.gamma))
    }

    pub fn from_solution(points: &[Point], y: &[f64], sol: &SmoSolution, gamma: f64) -> Self {
        let mut svm = BinarySvm {
            support_vectors: Vec::new(),
            alpha: Vec::new(),
            y: Vec::new(),
            bias: sol.bias,
            gamma,
        };
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                svm.support_vectors.push(points[i]);
                svm.alpha.push(a);
                svm.y.push(y[i]);
            }
        }
        svm
    }

    pub fn decision(&self, x: &Point) -> f64 {
        self.support_vectors
            .iter()
            .zip(self.alpha.iter().zip(&self.y))
            .map(|(sv, (a, y))| a * y * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Machine separating `positive` (+1) from `negative` (-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: ActivityClass,
    pub negative: ActivityClass,
    pub machine: BinarySvm,
}

/// One-vs-one multiclass SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub machines: Vec<PairMachine>,
    /// Class pairs with no machine because a class was absent from training.
    pub skipped_pairs: Vec<(ActivityClass, ActivityClass)>,
}

impl SvmModel {
    /// Trains one machine per pair of classes present in `labels`. Pairs
    /// are trained in parallel; the result does not depend on scheduling.
    pub fn fit(points: &[Point], labels: &[ActivityClass], params: SvmParams) -> Result<Self> {
        params.validate()?;
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let mut present = [false; ActivityClass::COUNT];
        for l in labels {
            present[l.index()] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(Error::SingleClass);
        }

        let mut pairs = Vec::new();
        let mut skipped_pairs = Vec::new();
        for a in 0..ActivityClass::COUNT {
            for b in a + 1..ActivityClass::COUNT {
                let pair = (ActivityClass::ALL[a], ActivityClass::ALL[b]);
                if present[a] && present[b] {
                    pairs.push(pair);
                } else {
                    skipped_pairs.push(pair);
                }
            }
        }

        let machines = pairs
            .par_iter()
            .map(|&(pos, neg)| {
                let (sub, y): (Vec<Point>, Vec<f64>) = points
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == pos || l == neg)
                    .map(|(p, &l)| (*p, if l == pos { 1.0 } else { -1.0 }))
                    .unzip();
                BinarySvm::train(&sub, &y, &params).map(|machine| PairMachine {
                    positive: pos,
                    negative: neg,
                    machine,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(SvmModel {
            params,
            machines,
            skipped_pairs,
        })
    }

    /// Pairwise voting. Scores are each class's share of all pairwise
    /// votes; vote ties go to the larger sum of signed decision values.
    pub fn predict(&self, x: &Point) -> Result<Prediction> {
        if self.machines.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut votes = [0usize; ActivityClass::COUNT];
        let mut decision_sum = [0.0f64; ActivityClass::COUNT];
        for pm in &self.machines {
            let d = pm.machine.decision(x);
            let (p, q) = (pm.positive.index(), pm.negative.index());
            if d > 0.0 {
                votes[p] += 1;
            } else {
                votes[q] += 1;
            }
            decision_sum[p] += d;
            decision_sum[q] -= d;
        }
        let total = self.machines.len() as f64;
        Ok(Prediction {
            class: argmax_votes(&votes, &decision_sum),
            scores: votes.map(|v| v as f64 / total),
        })
    }
}
