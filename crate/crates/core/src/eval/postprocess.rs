//! Clip tagging, median smoothing and frame-to-event decoding.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};

use crate::data::{ClassMap, Event};
use crate::error::{Error, Result};
use crate::FRAME_SECONDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanupOrder {
    MergeThenDrop,
    DropThenMerge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub clip_threshold: f64,
    pub frame_threshold: f64,
    pub median_window: usize,
    pub min_duration: f64,
    pub merge_gap: f64,
    pub order: CleanupOrder,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            clip_threshold: 0.5,
            frame_threshold: 0.5,
            median_window: 7,
            min_duration: 0.1,
            merge_gap: 0.2,
            order: CleanupOrder::MergeThenDrop,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window % 2 == 0 {
            return Err(Error::config(format!(
                "median window must be odd, got {}",
                self.median_window
            )));
        }
        if self.min_duration < 0.0 || self.merge_gap < 0.0 {
            return Err(Error::config("durations must be nonnegative"));
        }
        Ok(())
    }
}

/// Indices of classes whose probability is strictly above `threshold`.
pub fn clip_tags(clm_probs: &Array1<f64>, threshold: f64) -> BTreeSet<usize> {
    clm_probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Sliding median with mirrored edges (`d c b a | a b c d | d c b a`).
pub fn median_smooth(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 {
        return Err(Error::config(format!(
            "median window must be odd, got {window}"
        )));
    }
    let n = x.len() as isize;
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = (window / 2) as isize;
    let reflect = |mut i: isize| -> usize {
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let mut buf = vec![0.0; window];
    Ok((0..n)
        .map(|i| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = x[reflect(i + k as isize - half)];
            }
            buf.sort_by(f64::total_cmp);
            buf[window / 2]
        })
        .collect())
}

/// Maximal runs of `true` as `[start, end)` frame ranges.
pub fn active_runs(active: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &a) in active.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, active.len()));
    }
    runs
}

fn merge(runs: &[(f64, f64)], gap: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &(on, off) in runs {
        match out.last_mut() {
            Some(last) if on - last.1 < gap => last.1 = last.1.max(off),
            _ => out.push((on, off)),
        }
    }
    out
}

fn drop_short(runs: Vec<(f64, f64)>, min: f64) -> Vec<(f64, f64)> {
    runs.into_iter()
        .filter(|(on, off)| off - on >= min)
        .collect()
}

/// Applies the merge and minimum-duration rules to sorted, disjoint
/// intervals in seconds.
pub fn clean_intervals(runs: &[(f64, f64)], cfg: &DecodeConfig) -> Vec<(f64, f64)> {
    match cfg.order {
        CleanupOrder::MergeThenDrop => drop_short(merge(runs, cfg.merge_gap), cfg.min_duration),
        CleanupOrder::DropThenMerge => {
            merge(&drop_short(runs.to_vec(), cfg.min_duration), cfg.merge_gap)
        }
    }
}

/// Decodes frame probabilities `[frames x classes]` into events for the
/// tagged classes only. Events are sorted by onset, then label.
pub fn frames_to_events(
    frame_probs: &Array2<f64>,
    tags: &BTreeSet<usize>,
    classes: &ClassMap,
    cfg: &DecodeConfig,
) -> Result<Vec<Event>> {
    cfg.validate()?;
    if frame_probs.ncols() != classes.len() {
        return Err(Error::shape(format!(
            "{} probability columns for {} classes",
            frame_probs.ncols(),
            classes.len()
        )));
    }
    let mut events = Vec::new();
    for &c in tags {
        if c >= classes.len() {
            return Err(Error::shape(format!("tag index {c} out of range")));
        }
        let col: Vec<f64> = frame_probs.column(c).to_vec();
        let smooth = median_smooth(&col, cfg.median_window)?;
        let active: Vec<bool> = smooth.iter().map(|&p| p > cfg.frame_threshold).collect();
        let runs: Vec<(f64, f64)> = active_runs(&active)
            .into_iter()
            .map(|(a, b)| (a as f64 * FRAME_SECONDS, b as f64 * FRAME_SECONDS))
            .collect();
        for (on, off) in clean_intervals(&runs, cfg) {
            events.push(Event::new(classes.label(c), on, off)?);
        }
    }
    events.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then_with(|| a.label.cmp(&b.label))
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(n: usize) -> ClassMap {
        ClassMap::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn clip_tag_examples() {
        let mut p = Array1::from_elem(10, 0.4);
        p[0] = 0.6;
        assert_eq!(clip_tags(&p, 0.5), BTreeSet::from([0]));
        assert!(clip_tags(&Array1::from_elem(10, 0.5), 0.5).is_empty());
        assert_eq!(clip_tags(&Array1::from_elem(10, 0.9), 0.5).len(), 10);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_smooth(&[0.4; 20], 7).unwrap(), vec![0.4; 20]);
        let mut spike = vec![0.0; 20];
        spike[9] = 1.0;
        assert!(median_smooth(&spike, 7).unwrap().iter().all(|&v| v == 0.0));
        assert!(median_smooth(&spike, 6).is_err());
        // mirrored edge: window around index 0 sees x1 x0 x0 x1 ...
        assert_eq!(
            median_smooth(&[1.0, 0.0, 0.0], 3).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
    }

    fn brute_median(x: &[f64], w: usize) -> Vec<f64> {
        let n = x.len() as isize;
        let h = (w / 2) as isize;
        // explicit mirrored copy of the signal, padded by h on each side
        let mut padded = Vec::new();
        for i in -h..n + h {
            let j = if i < 0 {
                -i - 1
            } else if i >= n {
                2 * n - i - 1
            } else {
                i
            };
            padded.push(x[j as usize]);
        }
        (0..x.len())
            .map(|i| {
                let mut win = padded[i..i + w].to_vec();
                win.sort_by(|a, b| a.partial_cmp(b).unwrap());
                win[w / 2]
            })
            .collect()
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(
            x in proptest::collection::vec(0.0f64..1.0, 8..80),
            half in 0usize..4,
        ) {
            let w = 2 * half + 1;
            prop_assert_eq!(median_smooth(&x, w).unwrap(), brute_median(&x, w));
        }
    }

    fn probs_with_runs(runs: &[(usize, usize)]) -> Array2<f64> {
        let mut p = Array2::from_elem((640, 3), 0.1);
        for &(a, b) in runs {
            for t in a..b {
                p[[t, 1]] = 0.9;
            }
        }
        p
    }

    fn decode(p: &Array2<f64>) -> Vec<Event> {
        let cfg = DecodeConfig {
            median_window: 1,
            ..Default::default()
        };
        frames_to_events(p, &BTreeSet::from([1]), &classes(3), &cfg).unwrap()
    }

    #[test]
    fn five_frame_run_removed() {
        assert!(decode(&probs_with_runs(&[(100, 105)])).is_empty());
    }

    #[test]
    fn close_runs_merge() {
        // [0, 1.0] and [1.1, 2.0] seconds
        let ev = decode(&probs_with_runs(&[(0, 64), (70, 128)]));
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].onset, ev[0].offset), (0.0, 2.0));
    }

    #[test]
    fn distant_runs_stay_apart() {
        // 0.3 s gap is 19.2 frames, use 20
        let ev = decode(&probs_with_runs(&[(0, 64), (84, 128)]));
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn untagged_class_never_decoded() {
        let p = Array2::from_elem((640, 3), 0.99);
        let cfg = DecodeConfig::default();
        let ev = frames_to_events(&p, &BTreeSet::from([2]), &classes(3), &cfg).unwrap();
        assert!(ev.iter().all(|e| e.label == "c2"));
        assert_eq!(ev.len(), 1);
        assert!(frames_to_events(&p, &BTreeSet::new(), &classes(3), &cfg)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn clean_intervals_order_matters() {
        let runs = [(0.0, 0.05), (0.1, 0.2)];
        let merge_first = clean_intervals(&runs, &DecodeConfig::default());
        assert_eq!(merge_first, vec![(0.0, 0.2)]);
        let drop_first = clean_intervals(
            &runs,
            &DecodeConfig {
                order: CleanupOrder::DropThenMerge,
                ..Default::default()
            },
        );
        assert_eq!(drop_first, vec![(0.1, 0.2)]);
    }

    #[test]
    fn active_run_boundaries() {
        assert_eq!(
            active_runs(&[true, true, false, true]),
            vec![(0, 2), (3, 4)]
        );
        assert!(active_runs(&[false; 4]).is_empty());
    }
}
