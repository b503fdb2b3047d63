//! Supervised classifiers over the standardized entropy plane.

mod knn;
mod standardize;
mod svm;

pub use knn::KnnModel;
pub use standardize::Standardizer;
pub use svm::{dual_objective, rbf_kernel, smo_solve, BinarySvm, PairMachine, SmoSolution, SvmModel, SvmParams};

use serde::{Deserialize, Serialize};

use crate::trace::ActivityClass;

/// A predicted class with one score per class, indexed by
/// [`ActivityClass::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: ActivityClass,
    pub scores: [f64; ActivityClass::COUNT],
}

impl Prediction {
    pub fn score(&self, class: ActivityClass) -> f64 {
        self.scores[class.index()]
    }
}

/// Picks the class with the most votes; ties go to the larger secondary key,
/// then to the earlier class in the fixed class order.
pub(crate) fn argmax_votes(
    votes: &[usize; ActivityClass::COUNT],
    secondary: &[f64; ActivityClass::COUNT],
) -> ActivityClass {
    let mut best = 0;
    for c in 1..ActivityClass::COUNT {
        let better = votes[c] > votes[best]
            || (votes[c] == votes[best] && secondary[c] > secondary[best]);
        if better {
            best = c;
        }
    }
    ActivityClass::ALL[best]
}
