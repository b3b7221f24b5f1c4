use serde::{Deserialize, Serialize};

use super::store::StateSnapshot;
use crate::error::{invalid_input, Result};
use crate::gmm::{select_components, BicCurve, ClassId, FitOptions, GmmModel, Vec2, DEFAULT_MAX_COMPONENTS};

/// Share of out-of-class points, in percent, at which new classes are assumed.
pub const OUT_OF_CLASS_PERCENT_THR: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub threshold_percent: f64,
    pub max_components: usize,
    /// Candidate component counts are capped so each has at least this many
    /// points on average.
    pub min_points_per_component: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold_percent: OUT_OF_CLASS_PERCENT_THR,
            max_components: DEFAULT_MAX_COMPONENTS,
            min_points_per_component: 6,
        }
    }
}

impl DetectionConfig {
    /// Largest component count worth trying on `n` points.
    pub fn k_max(&self, n: usize) -> usize {
        (n / self.min_points_per_component.max(1)).clamp(1, self.max_components.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub out_of_class_percent: f64,
    pub total_points: usize,
    pub detected: bool,
    pub out_of_class_points: Vec<Vec2>,
    /// Components fitted on the out-of-class points, with fresh class ids.
    pub new_model: Option<GmmModel>,
    pub merged_model: Option<GmmModel>,
    pub bic: Option<BicCurve>,
    /// Revised task labels for each windowed cycle.
    pub task_labels: Vec<(u32, Vec<ClassId>)>,
}

/// Checks a window of snapshots for quality points that `model` cannot
/// explain. At or above the threshold a mixture is fitted on those points
/// alone, given ids from `first_new_id` on, and merged into `model`.
pub fn detect_new_classes(
    states: &[&StateSnapshot],
    model: &GmmModel,
    first_new_id: u32,
    seed: u64,
    config: &DetectionConfig,
) -> Result<DetectionOutcome> {
    let points: Vec<Vec2> =
        states.iter().flat_map(|s| s.quality_attributes.iter().map(|e| e.quality.to_vec())).collect();
    if points.is_empty() {
        return Err(invalid_input("detection window holds no quality points"));
    }
    let outliers: Vec<Vec2> = points.iter().copied().filter(|p| model.is_out_of_class(p)).collect();
    let percent = 100.0 * outliers.len() as f64 / points.len() as f64;
    let mut outcome = DetectionOutcome {
        out_of_class_percent: percent,
        total_points: points.len(),
        detected: false,
        out_of_class_points: outliers,
        new_model: None,
        merged_model: None,
        bic: None,
        task_labels: Vec::new(),
    };
    if percent < config.threshold_percent {
        return Ok(outcome);
    }

    let out = &outcome.out_of_class_points;
    let selection = select_components(out, config.k_max(out.len()), seed, &FitOptions::default())?;
    outcome.bic = Some(selection.curve.clone());
    let new_model = selection.into_model().relabel_from(first_new_id);
    let merged = model.merge(&new_model)?;
    outcome.task_labels = states
        .iter()
        .map(|s| {
            (s.cycle, s.quality_attributes.iter().map(|e| merged.classify(&e.quality.to_vec()).class_id).collect())
        })
        .collect();
    outcome.detected = true;
    outcome.new_model = Some(new_model);
    outcome.merged_model = Some(merged);
    Ok(outcome)
}
