//! The lifelong learning layer on top of the MAPE-K loop.
//!
//! Every cycle the knowledge manager records what the analysis verified.
//! Every `period` cycles the task manager looks for quality points that no
//! known class explains; when enough of them turn up it proposes new
//! classes, an operator refines and ranks them, and the learner installs
//! the evolved classifier and preference model in the knowledge base.

mod detection;
mod feedback;
mod store;

use serde::{Deserialize, Serialize};

pub use detection::{detect_new_classes, DetectionConfig, DetectionOutcome, OUT_OF_CLASS_PERCENT_THR};
pub use feedback::{
    apply_box_feedback, apply_ranking, automated_operator, evolve, AutomatedOperator, FeedbackRequest, Operator,
    OperatorFeedback, QualityBox, RequestStatus, WindowPoint,
};
pub use store::{collect_state, KnowledgeStore, StateEntry, StateSnapshot};

use crate::error::{Error, Result};
use crate::gmm::ClassId;
use crate::mapek::KnowledgeBase;
use crate::rng::{derive_seed, Stream};

/// Adaptation cycles per lifelong cycle.
pub const DEFAULT_PERIOD: u32 = 10;

/// Who answers feedback requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorMode {
    Automated,
    Human,
    Inactive,
}

impl OperatorMode {
    pub fn is_active(self) -> bool {
        self != OperatorMode::Inactive
    }
}

impl std::str::FromStr for OperatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "automated" | "active" => Ok(OperatorMode::Automated),
            "human" => Ok(OperatorMode::Human),
            "inactive" | "off" => Ok(OperatorMode::Inactive),
            other => Err(crate::error::invalid_input(format!("unknown operator mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for OperatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OperatorMode::Automated => "automated",
            OperatorMode::Human => "human",
            OperatorMode::Inactive => "inactive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifelongConfig {
    pub period: u32,
    pub detection: DetectionConfig,
}

impl Default for LifelongConfig {
    fn default() -> Self {
        Self { period: DEFAULT_PERIOD, detection: DetectionConfig::default() }
    }
}

/// Model-evolution log entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvolutionEvent {
    Detection { cycle: u32, out_of_class_percent: f64, points: usize, detected: bool, new_components: usize },
    FeedbackRequested { cycle: u32, request_id: u64, new_class_ids: Vec<ClassId> },
    FeedbackApplied { cycle: u32, request_id: u64, boxes: usize, ranking: Vec<ClassId>, class_count: usize },
    FeedbackExpired { cycle: u32, request_id: u64 },
}

/// Receives lifelong-loop milestones as they happen.
pub trait LifelongObserver {
    fn request_opened(&mut self, _request: &FeedbackRequest) {}
    fn feedback_applied(&mut self, _request: &FeedbackRequest, _feedback: &OperatorFeedback, _kb: &KnowledgeBase) {}
}

impl LifelongObserver for () {}

/// Task manager, knowledge miner and learner for one run.
#[derive(Debug)]
pub struct LifelongLoop {
    config: LifelongConfig,
    mode: OperatorMode,
    seed: u64,
    store: KnowledgeStore,
    next_class_id: u32,
    next_request_id: u64,
    pending: Option<FeedbackRequest>,
    log: Vec<EvolutionEvent>,
}

impl LifelongLoop {
    /// `next_class_id` must exceed every class id already in use.
    pub fn new(config: LifelongConfig, mode: OperatorMode, seed: u64, next_class_id: u32) -> Self {
        Self {
            config,
            mode,
            seed,
            store: KnowledgeStore::default(),
            next_class_id,
            next_request_id: 1,
            pending: None,
            log: Vec::new(),
        }
    }

    pub fn store(&self) -> &KnowledgeStore {
        &self.store
    }

    pub fn log(&self) -> &[EvolutionEvent] {
        &self.log
    }

    pub fn pending(&self) -> Option<&FeedbackRequest> {
        self.pending.as_ref()
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn next_class_id(&self) -> u32 {
        self.next_class_id
    }

    /// Records the cycle and, at the end of each period, runs detection and
    /// the feedback round. Returns the detection outcome when one ran.
    pub fn end_of_cycle(
        &mut self,
        kb: &mut KnowledgeBase,
        cycle: u32,
        operator: &mut dyn Operator,
        observer: &mut dyn LifelongObserver,
    ) -> Result<Option<DetectionOutcome>> {
        collect_state(&mut self.store, kb, cycle)?;
        if self.config.period == 0 || cycle % self.config.period != 0 {
            return Ok(None);
        }
        let window = self.store.recent(self.config.period as usize);
        if window.iter().all(|s| s.quality_attributes.is_empty()) {
            return Ok(None);
        }
        let seed = derive_seed(self.seed, Stream::Detection, u64::from(cycle));
        let outcome = detect_new_classes(&window, kb.classifier(), self.next_class_id, seed, &self.config.detection)?;
        drop(window);
        self.log.push(EvolutionEvent::Detection {
            cycle,
            out_of_class_percent: outcome.out_of_class_percent,
            points: outcome.total_points,
            detected: outcome.detected,
            new_components: outcome.new_model.as_ref().map_or(0, |m| m.len()),
        });
        if !outcome.detected {
            return Ok(Some(outcome));
        }
        self.store.set_task_labels(&outcome.task_labels);
        if !self.mode.is_active() {
            // Without an operator nothing gets ranked and the goal model stays put.
            return Ok(Some(outcome));
        }

        let window: Vec<StateSnapshot> = self.store.recent(self.config.period as usize).into_iter().cloned().collect();
        let refs: Vec<&StateSnapshot> = window.iter().collect();
        let refit_seed = derive_seed(self.seed, Stream::Refit, self.next_request_id);
        let request = self.propose_model(&outcome, &refs, cycle, refit_seed)?;
        observer.request_opened(&request);
        self.log.push(EvolutionEvent::FeedbackRequested {
            cycle,
            request_id: request.id,
            new_class_ids: request.new_class_ids.clone(),
        });

        match operator.feedback(&request)? {
            Some(feedback) => {
                let refined = apply_box_feedback(&request, &feedback.boxes)?;
                let preference = apply_ranking(&refined, &feedback.ranking)?;
                let mut answered = self.pending.take().expect("request was just opened");
                answered.status = RequestStatus::Answered;
                self.bump_class_ids(refined.class_ids().into_iter());
                self.log.push(EvolutionEvent::FeedbackApplied {
                    cycle,
                    request_id: answered.id,
                    boxes: feedback.boxes.len(),
                    ranking: preference.ranking.clone(),
                    class_count: refined.len(),
                });
                evolve(kb, refined, preference);
                let cycles: Vec<u32> = self.store.recent(self.config.period as usize).iter().map(|s| s.cycle).collect();
                self.store.relabel(&cycles, kb.classifier());
                observer.feedback_applied(&answered, &feedback, kb);
            }
            None => {
                let mut expired = self.pending.take().expect("request was just opened");
                expired.status = RequestStatus::Expired;
                self.log.push(EvolutionEvent::FeedbackExpired { cycle, request_id: expired.id });
            }
        }
        Ok(Some(outcome))
    }

    /// Opens a feedback request for a positive detection. Only one request
    /// may be pending at a time.
    pub fn propose_model(
        &mut self,
        outcome: &DetectionOutcome,
        states: &[&StateSnapshot],
        cycle: u32,
        refit_seed: u64,
    ) -> Result<FeedbackRequest> {
        if self.pending.is_some() {
            return Err(Error::InvalidState("a feedback request is already pending".into()));
        }
        let request = FeedbackRequest::from_outcome(self.next_request_id, cycle, outcome, states, refit_seed)?;
        self.next_request_id += 1;
        self.bump_class_ids(request.new_class_ids.iter().copied());
        // Box refinement may hand out ids past the proposal's own.
        self.next_class_id = self.next_class_id.max(request.next_class_id);
        self.pending = Some(request.clone());
        Ok(request)
    }

    fn bump_class_ids(&mut self, ids: impl Iterator<Item = ClassId>) {
        for id in ids {
            self.next_class_id = self.next_class_id.max(id.0 + 1);
        }
    }
}
