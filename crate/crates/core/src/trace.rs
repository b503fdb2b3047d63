//! Raw retweet events, per-URL traces and the popularity filter.
//!
//! A "retweet" here is any later post carrying the same URL as an earlier
//! one; no follower relation or `RT` marker is required. Grouping events by
//! URL therefore yields one trace per piece of content.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Five-way activity label. News and blog traffic share one class.
///
/// The declaration order is the fixed class order used for tie-breaking
/// and for the column order of reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityClass {
    #[serde(rename = "news_blogs")]
    NewsAndBlogs,
    #[serde(rename = "ads_promotion")]
    AdsAndPromotion,
    #[serde(rename = "campaign")]
    Campaign,
    #[serde(rename = "auto_tweet")]
    AutoTweet,
    #[serde(rename = "parasitic_ads")]
    ParasiticAds,
}

impl ActivityClass {
    pub const COUNT: usize = 5;

    pub const ALL: [ActivityClass; Self::COUNT] = [
        ActivityClass::NewsAndBlogs,
        ActivityClass::AdsAndPromotion,
        ActivityClass::Campaign,
        ActivityClass::AutoTweet,
        ActivityClass::ParasiticAds,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Label as written in label files.
    pub fn as_str(self) -> &'static str {
        match self {
            ActivityClass::NewsAndBlogs => "news_blogs",
            ActivityClass::AdsAndPromotion => "ads_promotion",
            ActivityClass::Campaign => "campaign",
            ActivityClass::AutoTweet => "auto_tweet",
            ActivityClass::ParasiticAds => "parasitic_ads",
        }
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

/// One observation: `user` posted content carrying `url` at `timestamp`
/// (whole seconds since the Unix epoch, UTC).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub url: String,
    pub user: String,
    #[serde(rename = "ts")]
    pub timestamp: u64,
}

impl Event {
    pub fn new(url: impl Into<String>, user: impl Into<String>, timestamp: u64) -> Result<Self> {
        let (url, user) = (url.into(), user.into());
        if url.is_empty() {
            return Err(Error::InvalidArgument("empty url_id".into()));
        }
        if user.is_empty() {
            return Err(Error::InvalidArgument("empty user_id".into()));
        }
        Ok(Event {
            url,
            user,
            timestamp,
        })
    }
}

/// A single retweet inside a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retweet {
    pub user: String,
    pub timestamp: u64,
}

/// Time-ordered retweets of one URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub url_id: String,
    /// Sorted ascending by timestamp; ties keep input order.
    pub events: Vec<Retweet>,
    pub label: Option<ActivityClass>,
}

impl Trace {
    /// Builds a trace, sorting the events stably by timestamp.
    pub fn new(url_id: impl Into<String>, mut events: Vec<Retweet>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        Trace {
            url_id: url_id.into(),
            events,
            label: None,
        }
    }

    pub fn with_label(mut self, label: ActivityClass) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// User of the earliest event, used as the original poster when no
    /// explicit author is known.
    pub fn first_user(&self) -> Option<&str> {
        self.events.first().map(|e| e.user.as_str())
    }

    pub fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().map(|e| e.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EventFormat {
    Jsonl,
    Csv,
}

/// Reads events in file order. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
pub fn parse_events<R: BufRead>(reader: R, format: EventFormat) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, format!("read error: {e}")))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let event = match format {
            EventFormat::Jsonl => parse_json_line(line, lineno)?,
            EventFormat::Csv => {
                if lineno == 1 && line.trim() == "url,user,ts" {
                    continue;
                }
                parse_csv_line(line, lineno)?
            }
        };
        events.push(event);
    }
    Ok(events)
}

fn parse_json_line(line: &str, lineno: usize) -> Result<Event> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Error::parse(lineno, format!("malformed JSON ({e})")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(lineno, "expected a JSON object"))?;
    let field = |key: &str, name: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) if s.is_empty() => {
                Err(Error::parse(lineno, format!("empty {name}")))
            }
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::parse(lineno, format!("{key:?} must be a string"))),
            None => Err(Error::parse(lineno, format!("missing {key:?}"))),
        }
    };
    let url = field("url", "url_id")?;
    let user = field("user", "user_id")?;
    let timestamp = match obj.get("ts") {
        Some(Value::Number(n)) => {
            if let Some(t) = n.as_u64() {
                t
            } else if n.as_i64().is_some() {
                return Err(Error::parse(lineno, "negative timestamp"));
            } else {
                return Err(Error::parse(
                    lineno,
                    "non-integer timestamp (sub-second resolution is not supported)",
                ));
            }
        }
        Some(_) => return Err(Error::parse(lineno, "\"ts\" must be an integer")),
        None => return Err(Error::parse(lineno, "missing \"ts\"")),
    };
    Ok(Event {
        url,
        user,
        timestamp,
    })
}

fn parse_csv_line(line: &str, lineno: usize) -> Result<Event> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            lineno,
            format!("expected 3 fields (url,user,ts), found {}", fields.len()),
        ));
    }
    if fields[0].is_empty() {
        return Err(Error::parse(lineno, "empty url_id"));
    }
    if fields[1].is_empty() {
        return Err(Error::parse(lineno, "empty user_id"));
    }
    let timestamp = parse_timestamp(fields[2]).map_err(|r| Error::parse(lineno, r))?;
    Ok(Event {
        url: fields[0].to_string(),
        user: fields[1].to_string(),
        timestamp,
    })
}

fn parse_timestamp(s: &str) -> std::result::Result<u64, String> {
    if s.is_empty() {
        return Err("empty timestamp".into());
    }
    if s.starts_with('-') {
        return Err("negative timestamp".into());
    }
    if s.contains(['.', 'e', 'E']) {
        return Err("non-integer timestamp (sub-second resolution is not supported)".into());
    }
    s.parse::<u64>()
        .map_err(|e| format!("invalid timestamp {s:?} ({e})"))
}

/// Groups events by URL. Every event lands in exactly one trace; within a
/// trace events are sorted by timestamp, stable on ties.
pub fn build_traces(events: impl IntoIterator<Item = Event>) -> BTreeMap<String, Trace> {
    let mut grouped: BTreeMap<String, Vec<Retweet>> = BTreeMap::new();
    for Event {
        url,
        user,
        timestamp,
    } in events
    {
        grouped
            .entry(url)
            .or_default()
            .push(Retweet { user, timestamp });
    }
    grouped
        .into_iter()
        .map(|(url, events)| {
            let trace = Trace::new(url.clone(), events);
            (url, trace)
        })
        .collect()
}

/// Thresholds for [`filter_popular`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopularityFilter {
    /// Minimum trace length (all events, including the original post).
    pub min_retweets: usize,
    /// Minimum number of popular URLs the author must have posted.
    pub min_popular_urls_per_author: usize,
}

impl Default for PopularityFilter {
    fn default() -> Self {
        PopularityFilter {
            min_retweets: 100,
            min_popular_urls_per_author: 2,
        }
    }
}

/// Keeps popular traces whose author posted enough popular URLs.
///
/// Popularity is decided first; authors are then counted over the popular
/// set only. A URL missing from `author_of` is attributed to the user of
/// its earliest event.
pub fn filter_popular(
    traces: &BTreeMap<String, Trace>,
    filter: PopularityFilter,
    author_of: &HashMap<String, String>,
) -> BTreeMap<String, Trace> {
    let author = |t: &Trace| -> Option<String> {
        author_of
            .get(&t.url_id)
            .cloned()
            .or_else(|| t.first_user().map(str::to_owned))
    };

    let popular: Vec<&Trace> = traces
        .values()
        .filter(|t| t.len() >= filter.min_retweets)
        .collect();

    let mut per_author: HashMap<String, usize> = HashMap::new();
    for t in &popular {
        if let Some(a) = author(t) {
            *per_author.entry(a).or_default() += 1;
        }
    }

    popular
        .into_iter()
        .filter(|t| {
            author(t)
                .and_then(|a| per_author.get(&a).copied())
                .is_some_and(|n| n >= filter.min_popular_urls_per_author)
        })
        .map(|t| (t.url_id.clone(), t.clone()))
        .collect()
}

/// Reads a `url,label` CSV. A leading `url,label` header is optional.
pub fn parse_labels<R: BufRead>(reader: R) -> Result<BTreeMap<String, ActivityClass>> {
    let mut labels = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, format!("read error: {e}")))?;
        let line = line.trim();
        if line.is_empty() || (lineno == 1 && line == "url,label") {
            continue;
        }
        let (url, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(lineno, "expected url,label"))?;
        let (url, label) = (url.trim(), label.trim());
        if url.is_empty() {
            return Err(Error::parse(lineno, "empty url_id"));
        }
        let class: ActivityClass = label.parse().map_err(|e| Error::parse(lineno, e))?;
        if let Some(prev) = labels.insert(url.to_string(), class) {
            if prev != class {
                return Err(Error::parse(
                    lineno,
                    format!("conflicting labels for {url}: {prev} and {class}"),
                ));
            }
        }
    }
    Ok(labels)
}

/// Writes traces as JSONL events, trace by trace in iteration order.
pub fn write_events_jsonl<'a, W: Write>(
    mut w: W,
    traces: impl IntoIterator<Item = &'a Trace>,
) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'b> {
        url: &'b str,
        user: &'b str,
        ts: u64,
    }
    for t in traces {
        for e in &t.events {
            let line = Line {
                url: &t.url_id,
                user: &e.user,
                ts: e.timestamp,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_labels_csv<'a, W: Write>(
    mut w: W,
    labels: impl IntoIterator<Item = (&'a str, ActivityClass)>,
) -> std::io::Result<()> {
    writeln!(w, "url,label")?;
    for (url, class) in labels {
        writeln!(w, "{url},{class}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(url: &str, user: &str, ts: u64) -> Event {
        Event::new(url, user, ts).unwrap()
    }

    fn trace_of(url: &str, n: usize, author: &str) -> Trace {
        let mut events = vec![Retweet {
            user: author.into(),
            timestamp: 0,
        }];
        events.extend((1..n).map(|i| Retweet {
            user: format!("{url}-r{i}"),
            timestamp: i as u64,
        }));
        Trace::new(url, events)
    }

    #[test]
    fn parses_jsonl_record() {
        let events = parse_events(
            r#"{"url":"u1","user":"a","ts":100,"extra":true}"#.as_bytes(),
            EventFormat::Jsonl,
        )
        .unwrap();
        assert_eq!(events, vec![ev("u1", "a", 100)]);
    }

    #[test]
    fn parses_csv_record_with_and_without_header() {
        let plain = parse_events("u1,a,100\n".as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(plain, vec![ev("u1", "a", 100)]);
        let headed = parse_events("url,user,ts\nu1,a,100\n".as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(headed, plain);
    }

    #[test]
    fn empty_user_is_rejected_with_line_number() {
        let err = parse_events("u1,,100".as_bytes(), EventFormat::Csv).unwrap_err();
        assert_eq!(err.to_string(), "empty user_id at line 1");

        let err = parse_events(
            "{\"url\":\"u1\",\"user\":\"a\",\"ts\":1}\n{\"url\":\"u1\",\"user\":\"\",\"ts\":2}"
                .as_bytes(),
            EventFormat::Jsonl,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "empty user_id at line 2");
    }

    #[test]
    fn rejects_bad_timestamps() {
        for (input, fmt) in [
            ("u1,a,1.5", EventFormat::Csv),
            ("u1,a,-3", EventFormat::Csv),
            ("u1,a,abc", EventFormat::Csv),
            (r#"{"url":"u1","user":"a","ts":1.5}"#, EventFormat::Jsonl),
            (r#"{"url":"u1","user":"a","ts":-1}"#, EventFormat::Jsonl),
            (r#"{"url":"u1","user":"a","ts":"10"}"#, EventFormat::Jsonl),
            (r#"{"url":"u1","user":"a"}"#, EventFormat::Jsonl),
        ] {
            let err = parse_events(input.as_bytes(), fmt).unwrap_err();
            assert!(matches!(err, Error::Parse { line: 1, .. }), "{input}: {err}");
        }
    }

    #[test]
    fn groups_and_sorts() {
        let traces = build_traces(vec![
            ev("u1", "a", 5),
            ev("u2", "x", 1),
            ev("u1", "b", 3),
            ev("u1", "c", 9),
        ]);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces["u1"].len(), 3);
        assert_eq!(traces["u2"].len(), 1);
        let users: Vec<_> = traces["u1"].events.iter().map(|e| e.user.as_str()).collect();
        assert_eq!(users, ["b", "a", "c"]);
    }

    #[test]
    fn ties_keep_input_order() {
        let traces = build_traces(vec![ev("u", "a", 5), ev("u", "b", 5), ev("u", "c", 1)]);
        let users: Vec<_> = traces["u"].events.iter().map(|e| e.user.as_str()).collect();
        assert_eq!(users, ["c", "a", "b"]);
    }

    #[test]
    fn grouping_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let events: Vec<Event> = (0..1000)
            .map(|_| {
                ev(
                    &format!("url{}", rng.gen_range(0..10)),
                    &format!("user{}", rng.gen_range(0..50)),
                    rng.gen_range(0..10_000),
                )
            })
            .collect();
        let mut oracle: HashMap<&str, usize> = HashMap::new();
        for e in &events {
            *oracle.entry(e.url.as_str()).or_default() += 1;
        }
        let traces = build_traces(events.clone());
        assert_eq!(traces.len(), oracle.len());
        for (url, n) in &oracle {
            assert_eq!(traces[*url].len(), *n);
        }
        assert_eq!(traces.values().map(Trace::len).sum::<usize>(), 1000);
        for t in traces.values() {
            assert!(t.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
    }

    #[test]
    fn author_with_one_popular_url_is_dropped() {
        let traces: BTreeMap<_, _> = [trace_of("p", 120, "alice"), trace_of("q", 99, "alice")]
            .into_iter()
            .map(|t| (t.url_id.clone(), t))
            .collect();
        let kept = filter_popular(&traces, PopularityFilter::default(), &HashMap::new());
        assert!(kept.is_empty());
    }

    #[test]
    fn author_with_two_popular_urls_is_kept() {
        let traces: BTreeMap<_, _> = [trace_of("p", 150, "bob"), trace_of("q", 101, "bob")]
            .into_iter()
            .map(|t| (t.url_id.clone(), t))
            .collect();
        let kept = filter_popular(&traces, PopularityFilter::default(), &HashMap::new());
        assert_eq!(kept.keys().collect::<Vec<_>>(), ["p", "q"]);
    }

    #[test]
    fn explicit_author_map_overrides_first_user() {
        let traces: BTreeMap<_, _> = [trace_of("p", 150, "x"), trace_of("q", 150, "y")]
            .into_iter()
            .map(|t| (t.url_id.clone(), t))
            .collect();
        let authors: HashMap<String, String> = [("p", "carol"), ("q", "carol")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert!(filter_popular(&traces, PopularityFilter::default(), &HashMap::new()).is_empty());
        assert_eq!(filter_popular(&traces, PopularityFilter::default(), &authors).len(), 2);
    }

    #[test]
    fn labels_parse_and_reject_unknown() {
        let labels = parse_labels("url,label\nu1,campaign\nu2,auto_tweet\n".as_bytes()).unwrap();
        assert_eq!(labels["u1"], ActivityClass::Campaign);
        assert_eq!(labels["u2"], ActivityClass::AutoTweet);
        assert!(parse_labels("u1,spam\n".as_bytes()).is_err());
        assert!(parse_labels("u1,campaign\nu1,auto_tweet\n".as_bytes()).is_err());
    }

    #[test]
    fn class_names_round_trip() {
        for c in ActivityClass::ALL {
            assert_eq!(c.as_str().parse::<ActivityClass>().unwrap(), c);
            assert_eq!(ActivityClass::from_index(c.index()), Some(c));
            assert_eq!(
                serde_json::to_string(&c).unwrap(),
                format!("\"{}\"", c.as_str())
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_events() -> impl Strategy<Value = Vec<Event>> {
            prop::collection::vec((0u8..6, 0u8..8, 0u64..50), 0..200).prop_map(|v| {
                v.into_iter()
                    .map(|(u, w, t)| ev(&format!("u{u}"), &format!("w{w}"), t))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn partition_preserves_event_count(events in arb_events()) {
                let traces = build_traces(events.clone());
                prop_assert_eq!(traces.values().map(Trace::len).sum::<usize>(), events.len());
            }

            #[test]
            fn single_url_grouping_is_a_stable_sort(events in arb_events()) {
                let one: Vec<Event> = events.into_iter().map(|mut e| { e.url = "only".into(); e }).collect();
                let traces = build_traces(one.clone());
                let mut expected: Vec<(String, u64)> = one.iter().map(|e| (e.user.clone(), e.timestamp)).collect();
                expected.sort_by_key(|p| p.1);
                if let Some(t) = traces.get("only") {
                    let got: Vec<(String, u64)> = t.events.iter().map(|e| (e.user.clone(), e.timestamp)).collect();
                    prop_assert_eq!(got, expected);
                } else {
                    prop_assert!(one.is_empty());
                }
            }

            #[test]
            fn raising_min_retweets_never_adds(
                lens in prop::collection::vec((1usize..300, 0u8..4), 1..30),
                lo in 1usize..200,
                bump in 0usize..100,
            ) {
                let traces: BTreeMap<String, Trace> = lens.iter().enumerate().map(|(i, (n, a))| {
                    let t = trace_of(&format!("t{i}"), *n, &format!("a{a}"));
                    (t.url_id.clone(), t)
                }).collect();
                let f = |m| PopularityFilter { min_retweets: m, min_popular_urls_per_author: 2 };
                let low = filter_popular(&traces, f(lo), &HashMap::new());
                let high = filter_popular(&traces, f(lo + bump), &HashMap::new());
                prop_assert!(high.keys().all(|k| low.contains_key(k)));
            }
        }
    }
}
