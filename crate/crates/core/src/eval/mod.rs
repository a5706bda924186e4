//! Inference rules and event-based scoring.

pub mod metric;
pub mod postprocess;

use std::collections::BTreeMap;

use ndarray::Array2;

pub use metric::{
    event_based_scores, frame_f1, validate_reference, ClassCounts, EventScores, Matching,
    MetricConfig, OffsetRule,
};
pub use postprocess::{
    active_runs, clean_intervals, clip_tags, frames_to_events, median_smooth, CleanupOrder,
    DecodeConfig,
};

use crate::data::{ClassMap, Event, Manifest};
use crate::error::Result;
use crate::model::{clm_forward, flm_forward, CmnParameters};

/// Tags the clip with the CLM, then localizes the tagged classes with the FLM.
pub fn detect_events(
    features: &Array2<f64>,
    flm: &CmnParameters,
    clm: &CmnParameters,
    classes: &ClassMap,
    cfg: &DecodeConfig,
) -> Result<Vec<Event>> {
    let tags = clip_tags(&clm_forward(features, clm)?, cfg.clip_threshold);
    if tags.is_empty() {
        return Ok(Vec::new());
    }
    frames_to_events(&flm_forward(features, flm)?, &tags, classes, cfg)
}

/// Predictions in the strong-label TSV format; clips without events have no rows.
pub fn predictions_tsv(predictions: &BTreeMap<String, Vec<Event>>) -> String {
    Manifest::strong(predictions).to_tsv()
}
