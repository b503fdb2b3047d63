//! Time-interval and user entropy of a trace.
//!
//! Both features are Shannon entropies in bits of empirical distributions:
//! the gaps (whole seconds) between successive retweets, and the share of
//! retweets contributed by each user. Gaps are counted exactly, with no
//! binning, so a bot posting every 604 s has a single-support gap
//! distribution and zero interval entropy.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;
use crate::Point;

/// Empirical distribution of inter-retweet gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalDistribution {
    counts: BTreeMap<u64, usize>,
    total_intervals: usize,
}

impl IntervalDistribution {
    /// Number of gaps, `K - 1` for a trace of `K` events.
    pub fn total_intervals(&self) -> usize {
        self.total_intervals
    }

    pub fn support(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, gap: u64) -> usize {
        self.counts.get(&gap).copied().unwrap_or(0)
    }

    pub fn probability(&self, gap: u64) -> f64 {
        self.count(gap) as f64 / self.total_intervals as f64
    }

    /// `(gap seconds, probability)` for every observed gap, ascending by gap.
    pub fn probabilities(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let n = self.total_intervals as f64;
        self.counts.iter().map(move |(&g, &c)| (g, c as f64 / n))
    }

    pub fn entropy(&self) -> f64 {
        entropy_from_counts(self.counts.values().copied(), self.total_intervals)
    }
}

/// Empirical distribution of retweets over users.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDistribution {
    counts: BTreeMap<String, usize>,
    total_events: usize,
}

impl UserDistribution {
    pub fn total_events(&self) -> usize {
        self.total_events
    }

    pub fn support(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, user: &str) -> usize {
        self.counts.get(user).copied().unwrap_or(0)
    }

    pub fn probability(&self, user: &str) -> f64 {
        self.count(user) as f64 / self.total_events as f64
    }

    /// `(user, probability)` pairs sorted by user id.
    pub fn probabilities(&self) -> Vec<(&str, f64)> {
        let n = self.total_events as f64;
        self.counts
            .iter()
            .map(|(u, &c)| (u.as_str(), c as f64 / n))
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        entropy_from_counts(self.counts.values().copied(), self.total_events)
    }
}

/// Gap histogram of a trace. Needs at least two events.
pub fn interval_distribution(trace: &Trace) -> Result<IntervalDistribution> {
    if trace.len() < 2 {
        return Err(Error::TraceTooShort {
            events: trace.len(),
        });
    }
    let mut counts = BTreeMap::new();
    for w in trace.events.windows(2) {
        *counts.entry(w[1].timestamp - w[0].timestamp).or_insert(0) += 1;
    }
    Ok(IntervalDistribution {
        counts,
        total_intervals: trace.len() - 1,
    })
}

pub fn user_distribution(trace: &Trace) -> UserDistribution {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &trace.events {
        *counts.entry(e.user.clone()).or_insert(0) += 1;
    }
    UserDistribution {
        counts,
        total_events: trace.len(),
    }
}

pub fn time_interval_entropy(dist: &IntervalDistribution) -> f64 {
    dist.entropy()
}

pub fn user_entropy(dist: &UserDistribution) -> f64 {
    dist.entropy()
}

/// Entropy in bits of the distribution `count_i / total`.
///
/// Evaluated as `log2(n) - (1/n) * sum(c * log2(c))`, which is exact at
/// both extremes: all-singleton counts give `log2(n)` and a single count
/// gives 0. Zero counts contribute nothing. Counts are summed in sorted
/// order, so the result does not depend on the order they arrive in.
pub fn entropy_from_counts(counts: impl IntoIterator<Item = usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let mut support = 0usize;
    let mut weighted = 0.0;
    for c in counts {
        support += 1;
        if c > 1 {
            let c = c as f64;
            weighted += c * c.log2();
        }
    }
    if support <= 1 {
        return 0.0;
    }
    let n = total as f64;
    (n.log2() - weighted / n).max(0.0)
}

/// Entropy in bits of a probability vector; zero entries are skipped.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// The two classification features of one trace plus bookkeeping counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub url_id: String,
    pub h_time: f64,
    pub h_user: f64,
    pub n_events: usize,
    pub n_users: usize,
}

impl FeatureVector {
    pub fn point(&self) -> Point {
        [self.h_time, self.h_user]
    }
}

/// Computes both entropies. Single-event traces are rejected rather than
/// given an interval entropy of zero.
pub fn featurize(trace: &Trace) -> Result<FeatureVector> {
    let intervals = interval_distribution(trace)?;
    let users = user_distribution(trace);
    Ok(FeatureVector {
        url_id: trace.url_id.clone(),
        h_time: intervals.entropy(),
        h_user: users.entropy(),
        n_events: trace.len(),
        n_users: users.support(),
    })
}

/// Featurizes many traces in parallel, preserving input order.
pub fn featurize_all<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Result<Vec<FeatureVector>> {
    use rayon::prelude::*;
    let traces: Vec<&Trace> = traces.into_iter().collect();
    traces.par_iter().map(|t| featurize(t)).collect()
}

pub const FEATURE_CSV_HEADER: &str = "url,h_time,h_user,n_events,n_users";

/// Writes the feature CSV; entropies carry six decimals.
pub fn write_features_csv<W: Write>(mut w: W, features: &[FeatureVector]) -> std::io::Result<()> {
    writeln!(w, "{FEATURE_CSV_HEADER}")?;
    for f in features {
        writeln!(
            w,
            "{},{:.6},{:.6},{},{}",
            f.url_id, f.h_time, f.h_user, f.n_events, f.n_users
        )?;
    }
    Ok(())
}

pub fn parse_features_csv<R: BufRead>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, format!("read error: {e}")))?;
        let line = line.trim();
        if line.is_empty() || (lineno == 1 && line == FEATURE_CSV_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                lineno,
                format!("expected 5 fields ({FEATURE_CSV_HEADER}), found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(lineno, "empty url_id"));
        }
        let float = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("invalid {name} {s:?}")))
        };
        let count = |s: &str, name: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::parse(lineno, format!("invalid {name} {s:?}")))
        };
        out.push(FeatureVector {
            url_id: fields[0].to_string(),
            h_time: float(fields[1], "h_time")?,
            h_user: float(fields[2], "h_user")?,
            n_events: count(fields[3], "n_events")?,
            n_users: count(fields[4], "n_users")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Retweet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(pairs: &[(&str, u64)]) -> Trace {
        Trace::new(
            "t",
            pairs
                .iter()
                .map(|(u, t)| Retweet {
                    user: u.to_string(),
                    timestamp: *t,
                })
                .collect(),
        )
    }

    fn at_times(ts: &[u64]) -> Trace {
        let pairs: Vec<(String, u64)> = ts.iter().enumerate().map(|(i, &t)| (format!("u{i}"), t)).collect();
        let refs: Vec<(&str, u64)> = pairs.iter().map(|(u, t)| (u.as_str(), *t)).collect();
        trace(&refs)
    }

    /// Independent oracle: brute-force histogram with a linear scan and a
    /// direct `-sum p log2 p`.
    fn oracle_entropy<T: PartialEq + Clone>(values: &[T]) -> f64 {
        let mut seen: Vec<(T, usize)> = Vec::new();
        for v in values {
            match seen.iter_mut().find(|(k, _)| k == v) {
                Some((_, c)) => *c += 1,
                None => seen.push((v.clone(), 1)),
            }
        }
        let n = values.len() as f64;
        seen.iter()
            .map(|&(_, c)| {
                let p = c as f64 / n;
                -p * p.ln() / std::f64::consts::LN_2
            })
            .sum()
    }

    #[test]
    fn gap_histogram_for_small_trace() {
        let d = interval_distribution(&at_times(&[0, 1, 2, 4, 6])).unwrap();
        assert_eq!(d.total_intervals(), 4);
        assert_eq!(d.probabilities().collect::<Vec<_>>(), vec![(1, 0.5), (2, 0.5)]);
        assert_eq!(time_interval_entropy(&d), 1.0);
    }

    #[test]
    fn zero_second_gaps() {
        let d = interval_distribution(&at_times(&[0, 0, 0])).unwrap();
        assert_eq!(d.probabilities().collect::<Vec<_>>(), vec![(0, 1.0)]);
        assert_eq!(time_interval_entropy(&d), 0.0);
    }

    #[test]
    fn fixed_604_second_period_has_zero_entropy() {
        let ts: Vec<u64> = (0..50).map(|i| 1_000 + 604 * i).collect();
        let d = interval_distribution(&at_times(&ts)).unwrap();
        assert_eq!(d.support(), 1);
        assert_eq!(d.probability(604), 1.0);
        assert_eq!(time_interval_entropy(&d), 0.0);
    }

    #[test]
    fn short_trace_is_rejected() {
        let err = interval_distribution(&at_times(&[5])).unwrap_err();
        assert!(err.to_string().contains("trace too short for intervals"));
        assert!(featurize(&at_times(&[5])).is_err());
    }

    #[test]
    fn histogram_matches_oracle_on_random_timestamps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ts: Vec<u64> = (0..500).map(|_| rng.gen_range(0..20_000)).collect();
        ts.sort_unstable();
        let d = interval_distribution(&at_times(&ts)).unwrap();
        let gaps: Vec<u64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
        for &g in &gaps {
            let n = gaps.iter().filter(|&&x| x == g).count();
            assert_eq!(d.count(g), n);
        }
        assert_eq!(d.total_intervals(), 499);
        assert_eq!(d.probabilities().map(|(g, _)| d.count(g)).sum::<usize>(), 499);
        assert!((d.probabilities().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_eight_support_distribution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let counts: Vec<usize> = (0..8).map(|_| rng.gen_range(1..40)).collect();
            let total: usize = counts.iter().sum();
            let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            let direct: f64 = probs.iter().map(|p| -p * p.log2()).sum();
            assert!((entropy_from_counts(counts.iter().copied(), total) - direct).abs() < 1e-12);
            assert!((entropy_bits(&probs) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn user_distribution_cases() {
        let uniform = user_distribution(&trace(&[("a", 0), ("b", 1), ("c", 2), ("d", 3)]));
        for u in ["a", "b", "c", "d"] {
            assert_eq!(uniform.probability(u), 0.25);
        }
        assert_eq!(user_entropy(&uniform), 2.0);

        let skewed = user_distribution(&trace(&[("a", 0), ("a", 1), ("a", 2), ("b", 3)]));
        assert_eq!(skewed.probabilities(), vec![("a", 0.75), ("b", 0.25)]);
        let oracle = oracle_entropy(&["a", "a", "a", "b"]);
        assert!((user_entropy(&skewed) - oracle).abs() < 1e-12);
        assert!((user_entropy(&skewed) - 0.811_278_124_459_132_9).abs() < 1e-12);

        let single = user_distribution(&trace(&[("a", 0), ("a", 1)]));
        assert_eq!(user_entropy(&single), 0.0);
    }

    #[test]
    fn three_zealots_three_thousand_events() {
        let events: Vec<Retweet> = (0..3000)
            .map(|i| Retweet {
                user: format!("z{}", i % 3),
                timestamp: i as u64 * 7,
            })
            .collect();
        let d = user_distribution(&Trace::new("c", events));
        assert_eq!(d.support(), 3);
        assert_eq!(d.total_events(), 3000);
    }

    #[test]
    fn bot_and_news_extremes() {
        let bot: Vec<(&str, u64)> = (0..100).map(|i| ("bot", 60 * i)).collect();
        let fv = featurize(&trace(&bot)).unwrap();
        assert_eq!((fv.h_time, fv.h_user), (0.0, 0.0));

        // Triangular numbers: gaps 1, 2, 3, ... are all distinct.
        let k = 64u64;
        let ts: Vec<u64> = (0..k).map(|i| i * (i + 1) / 2).collect();
        let fv = featurize(&at_times(&ts)).unwrap();
        assert_eq!(fv.h_time, ((k - 1) as f64).log2());
        assert_eq!(fv.h_user, (k as f64).log2());
        assert_eq!((fv.n_events, fv.n_users), (64, 64));
    }

    #[test]
    fn features_csv_round_trip() {
        let fv = vec![FeatureVector {
            url_id: "x".into(),
            h_time: 1.234_567_89,
            h_user: 0.5,
            n_events: 10,
            n_users: 3,
        }];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &fv).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "url,h_time,h_user,n_events,n_users\nx,1.234568,0.500000,10,3\n"
        );
        let back = parse_features_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].h_time, 1.234568);
        assert_eq!(back[0].n_users, 3);
    }

    fn arb_trace() -> impl Strategy<Value = Vec<(u8, u64)>> {
        prop::collection::vec((0u8..20, 0u64..500), 2..120)
    }

    fn build(pairs: &[(u8, u64)], shift: u64) -> Trace {
        Trace::new(
            "p",
            pairs
                .iter()
                .map(|(u, t)| Retweet {
                    user: format!("u{u}"),
                    timestamp: t + shift,
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn bounds_and_attainment(pairs in arb_trace()) {
            let t = build(&pairs, 0);
            let fv = featurize(&t).unwrap();
            let k = t.len() as f64;
            prop_assert!(fv.h_time >= 0.0 && fv.h_time <= (k - 1.0).log2());
            prop_assert!(fv.h_user >= 0.0 && fv.h_user <= k.log2());

            let gaps: Vec<u64> = t.events.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
            let mut uniq = gaps.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(fv.h_time == (k - 1.0).log2(), uniq.len() == gaps.len());
            prop_assert_eq!(fv.h_user == k.log2(), fv.n_users == t.len());
        }

        #[test]
        fn time_translation_invariance(pairs in arb_trace(), shift in 0u64..1_000_000_000) {
            let a = featurize(&build(&pairs, 0)).unwrap();
            let b = featurize(&build(&pairs, shift)).unwrap();
            prop_assert_eq!(a.h_time, b.h_time);
            prop_assert_eq!(a.h_user, b.h_user);
        }

        #[test]
        fn user_entropy_ignores_timestamp_assignment(pairs in arb_trace(), seed in any::<u64>()) {
            let mut shuffled_times: Vec<u64> = pairs.iter().map(|p| p.1).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled_times.len()).rev() {
                shuffled_times.swap(i, rng.gen_range(0..=i));
            }
            let other: Vec<(u8, u64)> = pairs.iter().zip(&shuffled_times).map(|(p, &t)| (p.0, t)).collect();
            let a = featurize(&build(&pairs, 0)).unwrap();
            let b = featurize(&build(&other, 0)).unwrap();
            prop_assert_eq!(a.h_user, b.h_user);
        }

        #[test]
        fn merging_never_shrinks_user_support(a in arb_trace(), b in arb_trace()) {
            let ta = build(&a, 0);
            let merged: Vec<(u8, u64)> = a.iter().chain(&b).copied().collect();
            let tm = build(&merged, 0);
            prop_assert!(user_distribution(&tm).support() >= user_distribution(&ta).support());
        }

        #[test]
        fn distributions_normalize(pairs in arb_trace()) {
            let t = build(&pairs, 0);
            let d = interval_distribution(&t).unwrap();
            prop_assert!((d.probabilities().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.probabilities().all(|p| p.1 > 0.0));
            let u = user_distribution(&t);
            prop_assert!((u.probabilities().iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matches_brute_force_oracle(pairs in arb_trace()) {
            let t = build(&pairs, 0);
            let fv = featurize(&t).unwrap();
            let gaps: Vec<u64> = t.events.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
            let users: Vec<&str> = t.events.iter().map(|e| e.user.as_str()).collect();
            prop_assert!((fv.h_time - oracle_entropy(&gaps)).abs() < 1e-12);
            prop_assert!((fv.h_user - oracle_entropy(&users)).abs() < 1e-12);
        }
    }
}
