//! Scenario harness: builds the environment of one experiment, runs the
//! compared approaches over it, and scores them against the ideal baseline.

mod context;
mod report;
mod runner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use context::{ScenarioContext, TRAINING_SAMPLE_SIZE};
pub use report::{CycleRecord, PeriodStats, RsmWindow, RunReport, RunSummary, REPORT_SCHEMA_VERSION};
pub use runner::{run_approach, run_matrix, run_scenario, RunObserver};

use crate::error::{invalid_input, Error, Result};
use crate::lifelong::{LifelongConfig, OperatorMode};
use crate::mapek::AnalysisConfig;
use crate::ml2asr::DEFAULT_TOP_K;
use crate::ranking::PreferenceOrder;
use crate::sim::{AppearanceOrder, RegimeSchedule, SimConfig};

pub const DEFAULT_CYCLES: u32 = 350;
/// RSM is reported over consecutive windows of this many cycles.
pub const RSM_WINDOW: usize = 10;

/// The self-adaptation approaches compared in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Best achievable selection given ground-truth clusters.
    Baseline,
    /// The classifier trained before deployment, never updated.
    Predefined,
    /// Regression-based space reduction on top of the predefined classifier.
    Ml2asr,
    /// Lifelong layer with an operator answering feedback requests.
    LsaFeedback,
    /// Lifelong layer that detects but has nobody to answer.
    LsaNofeedback,
}

impl Approach {
    pub const ALL: [Approach; 5] =
        [Approach::Baseline, Approach::Predefined, Approach::Ml2asr, Approach::LsaFeedback, Approach::LsaNofeedback];

    pub fn slug(self) -> &'static str {
        match self {
            Approach::Baseline => "baseline",
            Approach::Predefined => "predefined",
            Approach::Ml2asr => "ml2asr",
            Approach::LsaFeedback => "lsa_feedback",
            Approach::LsaNofeedback => "lsa_nofeedback",
        }
    }

    /// Approaches evaluated for a scenario with the given operator mode.
    pub fn for_mode(mode: OperatorMode) -> [Approach; 4] {
        let lsa = if mode.is_active() { Approach::LsaFeedback } else { Approach::LsaNofeedback };
        [Approach::Baseline, Approach::Predefined, Approach::Ml2asr, lsa]
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Approach::ALL
            .into_iter()
            .find(|a| a.slug() == s || (s == "lsa" && *a == Approach::LsaFeedback))
            .ok_or_else(|| invalid_input(format!("unknown approach {s:?}")))
    }
}

/// Which quality points the lifelong layer sees each cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionWindow {
    /// Only the options the analysis verified.
    Verified,
    /// Every option of the cycle; the ones analysis skipped are verified
    /// afterwards.
    #[default]
    AllOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ml2asrConfig {
    /// Options verified per cycle.
    pub top_k: usize,
    /// Cycles between retraining rounds.
    pub retrain_period: u32,
    /// Most recent samples kept for training.
    pub history: usize,
}

impl Default for Ml2asrConfig {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K, retrain_period: 10, history: 5000 }
    }
}

/// One experiment: stakeholder preferences, the drift timeline and who
/// answers feedback, plus every tunable of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub preference: PreferenceOrder,
    pub appearance: AppearanceOrder,
    pub operator: OperatorMode,
    pub seed: u64,
    pub cycles: u32,
    /// Overrides the timeline derived from `appearance`.
    pub schedule: Option<RegimeSchedule>,
    /// Cycles of the pre-deployment training window. Derived from the
    /// number of known groups when absent.
    pub training_window: Option<u32>,
    pub analysis: AnalysisConfig,
    pub lifelong: LifelongConfig,
    pub ml2asr: Ml2asrConfig,
    pub detection_window: DetectionWindow,
    pub sim: SimConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            preference: PreferenceOrder::PacketLossFirst,
            appearance: AppearanceOrder::all().remove(0),
            operator: OperatorMode::Automated,
            seed: 1,
            cycles: DEFAULT_CYCLES,
            schedule: None,
            training_window: None,
            analysis: AnalysisConfig::default(),
            lifelong: LifelongConfig::default(),
            ml2asr: Ml2asrConfig::default(),
            detection_window: DetectionWindow::default(),
            sim: SimConfig::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn new(preference: PreferenceOrder, appearance: AppearanceOrder, operator: OperatorMode, seed: u64) -> Self {
        Self { preference, appearance, operator, seed, ..Self::default() }
    }

    /// Short identifier such as `pl-ec_B-RG_automated_s1`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}_s{}", self.preference.slug(), self.appearance.slug(), self.operator, self.seed)
    }

    pub fn resolved_schedule(&self) -> Result<RegimeSchedule> {
        let schedule = match &self.schedule {
            Some(s) => {
                s.validate()?;
                s.clone()
            }
            None => RegimeSchedule::for_order(&self.appearance, self.cycles)?,
        };
        if schedule.cycles() != self.cycles {
            return Err(invalid_input(format!(
                "schedule covers {} cycles but the run has {}",
                schedule.cycles(),
                self.cycles
            )));
        }
        Ok(schedule)
    }

    /// 40 cycles with one known group, 180 with two, never past the first
    /// ramp or the end of the run.
    pub fn resolved_training_window(&self, schedule: &RegimeSchedule) -> Result<u32> {
        let window = self.training_window.unwrap_or(if schedule.initial_groups().len() > 1 { 180 } else { 40 });
        let limit = schedule.first_ramp_start().map_or(self.cycles, |s| s - 1);
        if window == 0 || window > limit {
            return Err(invalid_input(format!("training window of {window} cycles must lie within 1..={limit}")));
        }
        Ok(window)
    }

    pub fn validate(&self) -> Result<()> {
        self.appearance.validate()?;
        self.sim.validate()?;
        let schedule = self.resolved_schedule()?;
        self.resolved_training_window(&schedule)?;
        if !(0.0..1.0).contains(&self.analysis.prob_threshold) {
            return Err(invalid_input("prob_threshold must lie in [0, 1)"));
        }
        if self.lifelong.period == 0 {
            return Err(invalid_input("the lifelong period must be positive"));
        }
        if self.ml2asr.top_k == 0 || self.ml2asr.retrain_period == 0 {
            return Err(invalid_input("ml2asr top_k and retrain_period must be positive"));
        }
        Ok(())
    }
}

/// The 24 scenarios of the evaluation: both preference orders, the six
/// appearance orders, and an active or inactive operator.
pub fn scenario_matrix(seed: u64) -> Vec<ScenarioSpec> {
    let mut specs = Vec::new();
    for preference in PreferenceOrder::ALL {
        for appearance in AppearanceOrder::all() {
            for operator in [OperatorMode::Automated, OperatorMode::Inactive] {
                specs.push(ScenarioSpec::new(preference, appearance.clone(), operator, seed));
            }
        }
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_covers_every_combination_once() {
        let m = scenario_matrix(3);
        assert_eq!(m.len(), 24);
        let mut labels: Vec<String> = m.iter().map(ScenarioSpec::label).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 24);
    }

    #[test]
    fn training_window_follows_known_groups() {
        let one = ScenarioSpec::default();
        assert_eq!(one.resolved_training_window(&one.resolved_schedule().unwrap()).unwrap(), 40);
        let two = ScenarioSpec { appearance: "(B,R),G".parse().unwrap(), ..ScenarioSpec::default() };
        assert_eq!(two.resolved_training_window(&two.resolved_schedule().unwrap()).unwrap(), 180);
        let bad = ScenarioSpec { training_window: Some(141), ..ScenarioSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn approach_names_round_trip() {
        for a in Approach::ALL {
            assert_eq!(a.slug().parse::<Approach>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.slug()));
        }
        assert!("nope".parse::<Approach>().is_err());
    }

    #[test]
    fn spec_json_fills_defaults() {
        let s: ScenarioSpec =
            serde_json::from_str(r#"{"preference":"ec-pl","appearance":"(R),G,B","seed":9}"#).unwrap();
        assert_eq!(s.preference, PreferenceOrder::EnergyFirst);
        assert_eq!(s.cycles, DEFAULT_CYCLES);
        assert_eq!(s.seed, 9);
        s.validate().unwrap();
    }
}
