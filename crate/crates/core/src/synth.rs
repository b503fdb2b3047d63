//! Labelled synthetic traces with the qualitative dynamics of each
//! activity class.
//!
//! | class            | timing                                      | users                         |
//! |------------------|---------------------------------------------|-------------------------------|
//! | news & blogs     | decaying-rate arrivals                      | all distinct                  |
//! | auto-tweet       | fixed period, rare +/-1 s jitter            | one account or all distinct   |
//! | campaign         | log-uniform gaps in [1 s, 1 day]            | 2-5 zealots                   |
//! | ads & promotion  | zero-second bursts separated by long gaps   | 1-2 posters                   |
//! | parasitic ads    | mixture of zero gaps and human-like gaps    | all distinct                  |
//!
//! Parasitic ads deliberately overlap the news class; they are not meant to
//! be separable.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::{write_events_jsonl, write_labels_csv, ActivityClass, Retweet, Trace};

pub const MIN_EVENTS: usize = 100;
pub const MAX_EVENTS: usize = 1000;

const DAY: f64 = 86_400.0;
const EPOCH_2010: u64 = 1_262_304_000;

/// Class-specific generator knobs.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Arrival rate decays exponentially, halving over `span_seconds`.
    NewsAndBlogs { span_seconds: u64 },
    /// `jitter_fraction` of the gaps are shifted by one second.
    AutoTweet {
        period_seconds: u64,
        jitter_fraction: f64,
        collective: bool,
    },
    Campaign { zealots: usize },
    AdsAndPromotion { posters: usize, burst_size: usize },
    /// Each gap is zero with probability `burst_fraction`, otherwise
    /// exponential with mean `mean_gap_seconds` (human-like response).
    ParasiticAds { burst_fraction: f64, mean_gap_seconds: f64 },
}

impl Shape {
    pub fn class(&self) -> ActivityClass {
        match self {
            Shape::NewsAndBlogs { .. } => ActivityClass::NewsAndBlogs,
            Shape::AutoTweet { .. } => ActivityClass::AutoTweet,
            Shape::Campaign { .. } => ActivityClass::Campaign,
            Shape::AdsAndPromotion { .. } => ActivityClass::AdsAndPromotion,
            Shape::ParasiticAds { .. } => ActivityClass::ParasiticAds,
        }
    }

    /// Knobs used when nothing else is specified.
    pub fn default_for(class: ActivityClass) -> Self {
        match class {
            ActivityClass::NewsAndBlogs => Shape::NewsAndBlogs {
                span_seconds: 3 * DAY as u64,
            },
            ActivityClass::AutoTweet => Shape::AutoTweet {
                period_seconds: 604,
                jitter_fraction: 0.02,
                collective: false,
            },
            ActivityClass::Campaign => Shape::Campaign { zealots: 3 },
            ActivityClass::AdsAndPromotion => Shape::AdsAndPromotion {
                posters: 1,
                burst_size: 5,
            },
            ActivityClass::ParasiticAds => Shape::ParasiticAds {
                burst_fraction: 0.3,
                mean_gap_seconds: 600.0,
            },
        }
    }

    /// Draws knobs for one corpus trace.
    fn sample(class: ActivityClass, rng: &mut impl Rng) -> Self {
        match class {
            ActivityClass::NewsAndBlogs => Shape::NewsAndBlogs {
                span_seconds: rng.gen_range(2 * DAY as u64..=7 * DAY as u64),
            },
            ActivityClass::AutoTweet => Shape::AutoTweet {
                period_seconds: rng.gen_range(30..=3600),
                jitter_fraction: 0.02,
                collective: rng.gen_bool(0.5),
            },
            ActivityClass::Campaign => Shape::Campaign {
                zealots: rng.gen_range(2..=5),
            },
            ActivityClass::AdsAndPromotion => Shape::AdsAndPromotion {
                posters: rng.gen_range(1..=2),
                burst_size: rng.gen_range(2..=6),
            },
            ActivityClass::ParasiticAds => Shape::ParasiticAds {
                burst_fraction: rng.gen_range(0.0..0.6),
                mean_gap_seconds: rng.gen_range(2.0 * DAY..=7.0 * DAY) / rng.gen_range(MIN_EVENTS..=MAX_EVENTS) as f64,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub shape: Shape,
    pub n_events: usize,
    /// Number of distinct accounts available to draw retweeters from.
    pub user_pool: usize,
    pub seed: u64,
    /// Timestamp of the first event.
    pub start: u64,
    /// Account of the original post; defaults to a generated one.
    pub author: Option<String>,
}

impl GenSpec {
    pub fn new(class: ActivityClass, n_events: usize, seed: u64) -> Self {
        GenSpec {
            shape: Shape::default_for(class),
            n_events,
            user_pool: 1_000_000,
            seed,
            start: EPOCH_2010,
            author: None,
        }
    }

    pub fn with_shape(mut self, shape: Shape) -> Self {
        self.shape = shape;
        self
    }

    pub fn class(&self) -> ActivityClass {
        self.shape.class()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_events < MIN_EVENTS {
            return bad(format!("n_events = {} is below {MIN_EVENTS}", self.n_events));
        }
        if self.user_pool == 0 {
            return bad("user_pool must be at least 1".into());
        }
        match &self.shape {
            Shape::NewsAndBlogs { span_seconds } => {
                if *span_seconds == 0 {
                    return bad("span_seconds must be positive".into());
                }
                self.need_distinct()?;
            }
            Shape::AutoTweet {
                period_seconds,
                jitter_fraction,
                collective,
            } => {
                if *period_seconds < 1 {
                    return bad("bot period must be at least 1 second".into());
                }
                if !(0.0..=0.05).contains(jitter_fraction) {
                    return bad(format!("jitter_fraction = {jitter_fraction} outside [0, 0.05]"));
                }
                if *collective {
                    self.need_distinct()?;
                }
            }
            Shape::Campaign { zealots } => {
                if *zealots == 0 {
                    return bad("campaign needs at least one zealot".into());
                }
                if self.user_pool < *zealots {
                    return bad(format!("user_pool = {} is smaller than zealot count {zealots}", self.user_pool));
                }
            }
            Shape::AdsAndPromotion { posters, burst_size } => {
                if *posters == 0 || *burst_size == 0 {
                    return bad("ads need at least one poster and a positive burst size".into());
                }
                if self.user_pool < *posters {
                    return bad(format!("user_pool = {} is smaller than poster count {posters}", self.user_pool));
                }
            }
            Shape::ParasiticAds {
                burst_fraction,
                mean_gap_seconds,
            } => {
                if !(0.0..1.0).contains(burst_fraction) {
                    return bad(format!("burst_fraction = {burst_fraction} outside [0, 1)"));
                }
                if !(*mean_gap_seconds > 0.0) {
                    return bad("mean_gap_seconds must be positive".into());
                }
                self.need_distinct()?;
            }
        }
        Ok(())
    }

    fn need_distinct(&self) -> Result<()> {
        if self.user_pool < self.n_events {
            return Err(Error::InvalidArgument(format!(
                "user_pool = {} cannot give {} distinct users",
                self.user_pool, self.n_events
            )));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> u64 {
    let x = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    x.round() as u64
}

/// Users for a trace whose events all come from distinct accounts.
fn distinct_users(rng: &mut impl Rng, spec: &GenSpec, url: &str) -> Vec<String> {
    let mut users: Vec<String> = sample(rng, spec.user_pool, spec.n_events)
        .into_iter()
        .map(|j| format!("user{j}"))
        .collect();
    users[0] = author_name(spec, url);
    users
}

/// A small fixed group of accounts, the first being the author. The first
/// `group` events cycle through the group so every member appears.
fn group_users(rng: &mut impl Rng, spec: &GenSpec, url: &str, group: usize) -> Vec<String> {
    let mut members: Vec<String> = sample(rng, spec.user_pool, group)
        .into_iter()
        .map(|j| format!("user{j}"))
        .collect();
    members[0] = author_name(spec, url);
    (0..spec.n_events)
        .map(|i| {
            if i < group {
                members[i].clone()
            } else {
                members[rng.gen_range(0..group)].clone()
            }
        })
        .collect()
}

fn author_name(spec: &GenSpec, url: &str) -> String {
    spec.author.clone().unwrap_or_else(|| format!("{url}-author"))
}

/// Generates one labelled trace.
pub fn gen_trace(url_id: &str, spec: &GenSpec) -> Result<Trace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_events;

    let (offsets, users): (Vec<u64>, Vec<String>) = match &spec.shape {
        Shape::NewsAndBlogs { span_seconds } => {
            // Given n arrivals of a process with rate r0 * exp(-lambda t) on
            // [0, S], arrival times are i.i.d. with density proportional to
            // the rate: a truncated exponential.
            let s = *span_seconds as f64;
            let lambda = std::f64::consts::LN_2 / s;
            let mass = 1.0 - (-lambda * s).exp();
            let mut t: Vec<u64> = (1..n)
                .map(|_| (-(1.0 - rng.gen::<f64>() * mass).ln() / lambda).round() as u64)
                .collect();
            t.push(0);
            t.sort_unstable();
            (t, distinct_users(&mut rng, spec, url_id))
        }
        Shape::AutoTweet {
            period_seconds,
            jitter_fraction,
            collective,
        } => {
            let mut gaps = vec![*period_seconds as i64; n - 1];
            let jittered = (jitter_fraction * (n - 1) as f64).floor() as usize;
            for i in sample(&mut rng, n - 1, jittered) {
                let shift = if rng.gen_bool(0.5) { 1 } else { -1 };
                gaps[i] = (gaps[i] + shift).max(0);
            }
            let users = if *collective {
                distinct_users(&mut rng, spec, url_id)
            } else {
                vec![author_name(spec, url_id); n]
            };
            (cumulative(gaps.into_iter().map(|g| g as u64)), users)
        }
        Shape::Campaign { zealots } => {
            let gaps: Vec<u64> = (1..n).map(|_| log_uniform(&mut rng, 1.0, DAY)).collect();
            let users = group_users(&mut rng, spec, url_id, *zealots);
            (cumulative(gaps.into_iter()), users)
        }
        Shape::AdsAndPromotion { posters, burst_size } => {
            let gaps: Vec<u64> = (1..n)
                .map(|i| {
                    if i % burst_size == 0 {
                        log_uniform(&mut rng, 600.0, DAY)
                    } else {
                        0
                    }
                })
                .collect();
            let users = group_users(&mut rng, spec, url_id, *posters);
            (cumulative(gaps.into_iter()), users)
        }
        Shape::ParasiticAds {
            burst_fraction,
            mean_gap_seconds,
        } => {
            let gaps: Vec<u64> = (1..n)
                .map(|_| {
                    if rng.gen_bool(*burst_fraction) {
                        0
                    } else {
                        (-mean_gap_seconds * (1.0 - rng.gen::<f64>()).ln()).round() as u64
                    }
                })
                .collect();
            (cumulative(gaps.into_iter()), distinct_users(&mut rng, spec, url_id))
        }
    };

    let events = offsets
        .into_iter()
        .zip(users)
        .map(|(o, user)| Retweet {
            user,
            timestamp: spec.start + o,
        })
        .collect();
    Ok(Trace::new(url_id, events).with_label(spec.class()))
}

fn cumulative(gaps: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut t = 0;
    std::iter::once(0)
        .chain(gaps.map(|g| {
            t += g;
            t
        }))
        .collect()
}

/// A labelled corpus, traces in class order then index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub traces: Vec<Trace>,
}

impl Corpus {
    pub fn labels(&self) -> impl Iterator<Item = (&str, ActivityClass)> {
        self.traces
            .iter()
            .filter_map(|t| t.label.map(|l| (t.url_id.as_str(), l)))
    }

    pub fn write_events<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_events_jsonl(w, &self.traces)
    }

    pub fn write_labels<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_labels_csv(w, self.labels())
    }
}

/// Generates `per_class` traces of every class. Per-trace seeds derive from
/// `seed`, and consecutive traces share an author so that every author has
/// at least two popular URLs.
pub fn gen_corpus(per_class: usize, seed: u64) -> Result<Corpus> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    let total = per_class * ActivityClass::COUNT;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..total).map(|_| master.gen()).collect();

    let traces = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &trace_seed)| {
            let class = ActivityClass::ALL[i / per_class];
            let mut rng = ChaCha8Rng::seed_from_u64(trace_seed);
            let spec = GenSpec {
                shape: Shape::sample(class, &mut rng),
                n_events: rng.gen_range(MIN_EVENTS..=MAX_EVENTS),
                user_pool: 1_000_000,
                seed: rng.gen(),
                start: EPOCH_2010 + rng.gen_range(0..365 * DAY as u64),
                author: Some(format!("author{:04}", (i / 2).min(total / 2 - 1))),
            };
            gen_trace(&format!("url{i:05}"), &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{featurize, user_distribution};
    use crate::trace::{build_traces, filter_popular, parse_events, EventFormat, PopularityFilter};
    use std::collections::HashMap;

    #[test]
    fn fixed_period_bot_has_zero_interval_entropy() {
        let spec = GenSpec::new(ActivityClass::AutoTweet, 300, 1).with_shape(Shape::AutoTweet {
            period_seconds: 604,
            jitter_fraction: 0.0,
            collective: false,
        });
        let t = gen_trace("bot", &spec).unwrap();
        assert!(t.events.windows(2).all(|w| w[1].timestamp - w[0].timestamp == 604));
        assert_eq!(featurize(&t).unwrap().h_time, 0.0);
    }

    #[test]
    fn news_users_are_all_distinct() {
        let spec = GenSpec::new(ActivityClass::NewsAndBlogs, 437, 2);
        let t = gen_trace("news", &spec).unwrap();
        assert_eq!(t.len(), 437);
        assert_eq!(featurize(&t).unwrap().h_user, 437f64.log2());
    }

    #[test]
    fn three_zealot_campaign() {
        let spec = GenSpec::new(ActivityClass::Campaign, 3000, 3).with_shape(Shape::Campaign { zealots: 3 });
        let t = gen_trace("camp", &spec).unwrap();
        assert_eq!(user_distribution(&t).support(), 3);
    }

    #[test]
    fn contradictory_specs_are_rejected() {
        let mut spec = GenSpec::new(ActivityClass::Campaign, 200, 0).with_shape(Shape::Campaign { zealots: 4 });
        spec.user_pool = 3;
        assert!(gen_trace("x", &spec).is_err());
        spec.user_pool = 1_000_000;
        assert!(gen_trace("x", &spec).is_ok());

        assert!(gen_trace("x", &GenSpec::new(ActivityClass::NewsAndBlogs, 99, 0)).is_err());
        let mut news = GenSpec::new(ActivityClass::NewsAndBlogs, 200, 0);
        news.user_pool = 150;
        assert!(gen_trace("x", &news).is_err());
        let bot = GenSpec::new(ActivityClass::AutoTweet, 200, 0).with_shape(Shape::AutoTweet {
            period_seconds: 0,
            jitter_fraction: 0.0,
            collective: false,
        });
        assert!(gen_trace("x", &bot).is_err());
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let a = gen_corpus(20, 5).unwrap();
        assert_eq!(a.traces.len(), 100);
        for c in ActivityClass::ALL {
            assert_eq!(a.labels().filter(|l| l.1 == c).count(), 20);
        }
        let b = gen_corpus(20, 5).unwrap();
        let (mut ea, mut eb) = (Vec::new(), Vec::new());
        a.write_events(&mut ea).unwrap();
        b.write_events(&mut eb).unwrap();
        assert_eq!(ea, eb);
        assert_ne!(a, gen_corpus(20, 6).unwrap());
    }

    #[test]
    fn corpus_survives_popularity_filter() {
        let corpus = gen_corpus(7, 1).unwrap();
        let traces = build_traces({
            let mut buf = Vec::new();
            corpus.write_events(&mut buf).unwrap();
            parse_events(buf.as_slice(), EventFormat::Jsonl).unwrap()
        });
        let kept = filter_popular(&traces, PopularityFilter::default(), &HashMap::new());
        assert_eq!(kept.len(), 35);
    }

    #[test]
    fn class_geometry_holds() {
        let corpus = gen_corpus(30, 11).unwrap();
        for t in &corpus.traces {
            let fv = featurize(t).unwrap();
            let k = t.len() as f64;
            match t.label.unwrap() {
                ActivityClass::AutoTweet => assert!(fv.h_time < 0.2, "{fv:?}"),
                ActivityClass::NewsAndBlogs => assert!((fv.h_user - k.log2()).abs() < 0.1),
                ActivityClass::Campaign => assert!(fv.h_user <= 5f64.log2() + 1e-12),
                ActivityClass::AdsAndPromotion => assert!(fv.h_user <= 1.0 + 1e-12),
                ActivityClass::ParasiticAds => assert_eq!(fv.h_user, k.log2()),
            }
        }
    }
}
