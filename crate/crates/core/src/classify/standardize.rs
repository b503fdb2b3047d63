use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Point, DIM, FEATURE_NAMES};

/// Per-dimension z-score transform fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Point,
    /// Population standard deviation; strictly positive.
    pub std: Point,
}

impl Standardizer {
    pub fn fit(points: &[Point]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardizer needs at least 2 points, got {}",
                points.len()
            )));
        }
        let n = points.len() as f64;
        let mut mean = [0.0; DIM];
        let mut std = [0.0; DIM];
        for d in 0..DIM {
            mean[d] = points.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n;
            std[d] = var.sqrt();
            if !(std[d] > 1e-12 * mean[d].abs().max(1.0)) {
                return Err(Error::ZeroVariance {
                    dimension: d,
                    name: FEATURE_NAMES[d],
                });
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, p: &Point) -> Point {
        std::array::from_fn(|d| (p[d] - self.mean[d]) / self.std[d])
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|p| self.apply(p)).collect()
    }
}
