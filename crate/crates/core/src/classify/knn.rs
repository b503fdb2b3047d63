use serde::{Deserialize, Serialize};

use super::{argmax_votes, Prediction};
use crate::error::{Error, Result};
use crate::trace::ActivityClass;
use crate::Point;

/// Exact k-nearest-neighbour classifier with Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    points: Vec<Point>,
    labels: Vec<ActivityClass>,
}

impl KnnModel {
    pub const DEFAULT_K: usize = 3;

    pub fn fit(k: usize, points: Vec<Point>, labels: Vec<ActivityClass>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyModel);
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if k == 0 || k > points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must be in 1..={}",
                points.len()
            )));
        }
        Ok(KnnModel { k, points, labels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices and distances of the `k` nearest training points, nearest
    /// first. Equal distances are ordered by training index, so a tie at the
    /// k-th position keeps the earlier point.
    pub fn neighbors(&self, query: &Point) -> Vec<(usize, f64)> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p[0] - query[0]).powi(2) + (p[1] - query[1]).powi(2), i))
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, by_dist);
            d.truncate(k);
        }
        d.sort_by(by_dist);
        d.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    /// Majority vote among the k nearest neighbours. Scores are vote
    /// fractions; a vote tie goes to the larger summed inverse distance,
    /// then to the fixed class order.
    pub fn predict(&self, query: &Point) -> Result<Prediction> {
        if self.points.is_empty() || self.k == 0 {
            return Err(Error::EmptyModel);
        }
        let mut votes = [0usize; ActivityClass::COUNT];
        let mut closeness = [0.0f64; ActivityClass::COUNT];
        let neighbors = self.neighbors(query);
        for &(i, dist) in &neighbors {
            let c = self.labels[i].index();
            votes[c] += 1;
            closeness[c] += if dist > 0.0 { 1.0 / dist } else { f64::INFINITY };
        }
        let n = neighbors.len() as f64;
        Ok(Prediction {
            class: argmax_votes(&votes, &closeness),
            scores: votes.map(|v| v as f64 / n),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivityClass::*;

    #[test]
    fn exact_match_with_k1() {
        let m = KnnModel::fit(
            1,
            vec![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]],
            vec![Campaign, AutoTweet, NewsAndBlogs],
        )
        .unwrap();
        let p = m.predict(&[1.0, 1.0]).unwrap();
        assert_eq!(p.class, AutoTweet);
        assert_eq!(p.score(AutoTweet), 1.0);
    }

    #[test]
    fn majority_of_three() {
        let m = KnnModel::fit(
            3,
            vec![[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [9.0, 9.0]],
            vec![Campaign, Campaign, AdsAndPromotion, AdsAndPromotion],
        )
        .unwrap();
        let p = m.predict(&[0.05, 0.05]).unwrap();
        assert_eq!(p.class, Campaign);
        assert!((p.score(Campaign) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.score(AdsAndPromotion) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vote_tie_uses_inverse_distance_then_class_order() {
        let m = KnnModel::fit(2, vec![[1.0, 0.0], [-3.0, 0.0]], vec![ParasiticAds, NewsAndBlogs]).unwrap();
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap().class, ParasiticAds);

        let m = KnnModel::fit(2, vec![[1.0, 0.0], [-1.0, 0.0]], vec![ParasiticAds, Campaign]).unwrap();
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap().class, Campaign);
    }

    #[test]
    fn distance_tie_at_kth_keeps_earlier_index() {
        let m = KnnModel::fit(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]],
            vec![AutoTweet; 4],
        )
        .unwrap();
        let idx: Vec<usize> = m.neighbors(&[0.0, 0.0]).into_iter().map(|n| n.0).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(matches!(KnnModel::fit(3, vec![], vec![]), Err(Error::EmptyModel)));
        assert!(KnnModel::fit(0, vec![[0.0, 0.0]], vec![Campaign]).is_err());
        assert!(KnnModel::fit(2, vec![[0.0, 0.0]], vec![Campaign]).is_err());
        let empty: KnnModel = serde_json::from_str(r#"{"k":3,"points":[],"labels":[]}"#).unwrap();
        assert!(matches!(empty.predict(&[0.0, 0.0]), Err(Error::EmptyModel)));
    }
}
