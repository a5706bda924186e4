//! Event-based precision/recall/F1 with onset and offset collars.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::data::Event;
use crate::error::{Error, Result};

/// Slack on collar comparisons for decimal round-off in TSV times.
const COLLAR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffsetRule {
    /// Offset within `max(collar, fraction * reference duration)`.
    LengthRelative {
        collar: f64,
        fraction: f64,
    },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    /// References in onset order each take the earliest compatible estimate.
    Greedy,
    /// Maximum bipartite matching.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub onset_collar: f64,
    pub offset_rule: OffsetRule,
    pub matching: Matching,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            onset_collar: 0.2,
            offset_rule: OffsetRule::LengthRelative {
                collar: 0.2,
                fraction: 0.2,
            },
            matching: Matching::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn n_ref(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventScores {
    pub per_class: BTreeMap<String, ClassCounts>,
}

impl EventScores {
    /// Mean F1 over classes that occur in the reference. With an empty
    /// reference this is 1 when nothing was estimated and 0 otherwise.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<f64> = self
            .per_class
            .values()
            .filter(|c| c.n_ref() > 0)
            .map(ClassCounts::f1)
            .collect();
        if present.is_empty() {
            let any_est = self.per_class.values().any(|c| c.fp > 0);
            return if any_est { 0.0 } else { 1.0 };
        }
        present.iter().sum::<f64>() / present.len() as f64
    }

    pub fn totals(&self) -> ClassCounts {
        self.per_class
            .values()
            .fold(ClassCounts::default(), |acc, c| ClassCounts {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                fn_: acc.fn_ + c.fn_,
            })
    }

    pub fn micro_f1(&self) -> f64 {
        self.totals().f1()
    }

    pub const CSV_HEADER: &'static str = "class,tp,fp,fn,precision,recall,f1";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        let row = |s: &mut String, name: &str, c: &ClassCounts| {
            writeln!(
                s,
                "{name},{},{},{},{:.6},{:.6},{:.6}",
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            )
            .expect("write to string");
        };
        for (name, c) in &self.per_class {
            row(&mut s, name, c);
        }
        row(&mut s, "micro", &self.totals());
        writeln!(s, "macro,,,,,,{:.6}", self.macro_f1()).expect("write to string");
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>5} {:>5} {:>5} {:>8}\n",
            "class", "tp", "fp", "fn", "f1"
        );
        for (name, c) in &self.per_class {
            writeln!(
                s,
                "{name:<16} {:>5} {:>5} {:>5} {:>8.4}",
                c.tp,
                c.fp,
                c.fn_,
                c.f1()
            )
            .expect("write to string");
        }
        writeln!(
            s,
            "macro F1 {:.4}   micro F1 {:.4}",
            self.macro_f1(),
            self.micro_f1()
        )
        .expect("write to string");
        s
    }
}

fn compatible(r: &Event, e: &Event, cfg: &MetricConfig) -> bool {
    let offset_tol = match cfg.offset_rule {
        OffsetRule::LengthRelative { collar, fraction } => collar.max(fraction * r.duration()),
        OffsetRule::Fixed(c) => c,
    };
    (r.onset - e.onset).abs() <= cfg.onset_collar + COLLAR_SLACK
        && (r.offset - e.offset).abs() <= offset_tol + COLLAR_SLACK
}

fn by_onset(events: &[&Event]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..events.len()).collect();
    idx.sort_by(|&a, &b| {
        events[a]
            .onset
            .total_cmp(&events[b].onset)
            .then(events[a].offset.total_cmp(&events[b].offset))
    });
    idx
}

fn count_matches(refs: &[&Event], ests: &[&Event], cfg: &MetricConfig) -> usize {
    let ro = by_onset(refs);
    let eo = by_onset(ests);
    let adj: Vec<Vec<usize>> = ro
        .iter()
        .map(|&r| {
            eo.iter()
                .enumerate()
                .filter(|(_, &e)| compatible(refs[r], ests[e], cfg))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; eo.len()];
    match cfg.matching {
        Matching::Greedy => {
            for (r, cand) in adj.iter().enumerate() {
                if let Some(&k) = cand.iter().find(|&&k| owner[k].is_none()) {
                    owner[k] = Some(r);
                }
            }
        }
        Matching::Optimal => {
            fn augment(
                r: usize,
                adj: &[Vec<usize>],
                owner: &mut [Option<usize>],
                seen: &mut [bool],
            ) -> bool {
                for &k in &adj[r] {
                    if seen[k] {
                        continue;
                    }
                    seen[k] = true;
                    let free = match owner[k] {
                        None => true,
                        Some(o) => augment(o, adj, owner, seen),
                    };
                    if free {
                        owner[k] = Some(r);
                        return true;
                    }
                }
                false
            }
            for r in 0..adj.len() {
                let mut seen = vec![false; eo.len()];
                augment(r, &adj, &mut owner, &mut seen);
            }
        }
    }
    owner.iter().filter(|o| o.is_some()).count()
}

/// Rejects reference clips with overlapping events of one class.
pub fn validate_reference(clip: &str, events: &[Event]) -> Result<()> {
    let mut by_label: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in events {
        by_label.entry(&e.label).or_default().push(e);
    }
    for (label, mut evs) in by_label {
        evs.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for w in evs.windows(2) {
            if w[1].onset < w[0].offset {
                return Err(Error::InvalidEvent(format!(
                    "{clip}: overlapping `{label}` events at {} and {}",
                    w[0].onset, w[1].onset
                )));
            }
        }
    }
    Ok(())
}

/// Scores estimated events against references, clip by clip. Clips present
/// on only one side count as having no events on the other.
pub fn event_based_scores(
    reference: &BTreeMap<String, Vec<Event>>,
    estimated: &BTreeMap<String, Vec<Event>>,
    cfg: &MetricConfig,
) -> Result<EventScores> {
    for (clip, evs) in reference {
        validate_reference(clip, evs)?;
    }
    let mut scores = EventScores::default();
    let empty = Vec::new();
    let clips: std::collections::BTreeSet<&String> =
        reference.keys().chain(estimated.keys()).collect();
    for clip in clips {
        let refs = reference.get(clip).unwrap_or(&empty);
        let ests = estimated.get(clip).unwrap_or(&empty);
        let labels: std::collections::BTreeSet<&str> = refs
            .iter()
            .chain(ests.iter())
            .map(|e| e.label.as_str())
            .collect();
        for label in labels {
            let r: Vec<&Event> = refs.iter().filter(|e| e.label == label).collect();
            let e: Vec<&Event> = ests.iter().filter(|e| e.label == label).collect();
            let tp = count_matches(&r, &e, cfg);
            let c = scores.per_class.entry(label.to_string()).or_default();
            c.tp += tp;
            c.fp += e.len() - tp;
            c.fn_ += r.len() - tp;
        }
    }
    Ok(scores)
}

/// Micro-averaged F1 over all frame/class cells of binary matrices.
pub fn frame_f1(pred: &Array2<u8>, truth: &Array2<u8>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "frame f1: {:?} vs {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let mut c = ClassCounts::default();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok(1.0);
    }
    Ok(c.f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(label: &str, on: f64, off: f64) -> Event {
        Event::new(label, on, off).unwrap()
    }

    fn one(events: Vec<Event>) -> BTreeMap<String, Vec<Event>> {
        BTreeMap::from([("a.wav".to_string(), events)])
    }

    #[test]
    fn identical_lists_score_one() {
        let r = one(vec![ev("x", 1.0, 2.0), ev("y", 3.0, 5.5)]);
        let s = event_based_scores(&r, &r, &MetricConfig::default()).unwrap();
        assert_eq!(s.macro_f1(), 1.0);
    }

    #[test]
    fn onset_within_collar_is_hit() {
        let r = one(vec![ev("x", 1.0, 2.0)]);
        let e = one(vec![ev("x", 1.15, 2.0)]);
        let s = event_based_scores(&r, &e, &MetricConfig::default()).unwrap();
        assert_eq!(
            s.per_class["x"],
            ClassCounts {
                tp: 1,
                fp: 0,
                fn_: 0
            }
        );
    }

    #[test]
    fn empty_estimate_scores_zero() {
        let r = one(vec![ev("x", 1.0, 2.0)]);
        let s = event_based_scores(&r, &BTreeMap::new(), &MetricConfig::default()).unwrap();
        assert_eq!(s.macro_f1(), 0.0);
        assert_eq!(s.per_class["x"].fn_, 1);
    }

    #[test]
    fn overlapping_reference_rejected() {
        let r = one(vec![ev("x", 1.0, 2.0), ev("x", 1.5, 3.0)]);
        assert!(event_based_scores(&r, &r, &MetricConfig::default()).is_err());
        let ok = one(vec![ev("x", 1.0, 2.0), ev("y", 1.5, 3.0)]);
        assert!(event_based_scores(&ok, &ok, &MetricConfig::default()).is_ok());
    }

    #[test]
    fn optimal_can_beat_greedy() {
        // the first reference grabs the only estimate that fits the second
        let r = one(vec![ev("x", 0.12, 0.34), ev("x", 0.36, 0.56)]);
        let e = one(vec![ev("x", 0.25, 0.34), ev("x", 0.24, 0.53)]);
        let fixed = |matching| MetricConfig {
            offset_rule: OffsetRule::Fixed(0.2),
            matching,
            ..Default::default()
        };
        let g = event_based_scores(&r, &e, &fixed(Matching::Greedy)).unwrap();
        let o = event_based_scores(&r, &e, &fixed(Matching::Optimal)).unwrap();
        assert_eq!(g.per_class["x"].tp, 1);
        assert_eq!(o.per_class["x"].tp, 2);
    }

    #[test]
    fn csv_and_table_render() {
        let r = one(vec![ev("x", 1.0, 2.0)]);
        let s = event_based_scores(&r, &r, &MetricConfig::default()).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with(EventScores::CSV_HEADER));
        assert!(csv.contains("macro,,,,,,1.000000"));
        assert!(s.to_table().contains("macro F1 1.0000"));
    }

    #[test]
    fn frame_f1_counts_cells() {
        let t = Array2::from_shape_vec((2, 2), vec![1, 0, 1, 0]).unwrap();
        let p = Array2::from_shape_vec((2, 2), vec![1, 1, 0, 0]).unwrap();
        assert!((frame_f1(&p, &t).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(frame_f1(&t, &t).unwrap(), 1.0);
    }
}
