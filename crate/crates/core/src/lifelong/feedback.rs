use serde::{Deserialize, Serialize};

use super::detection::DetectionOutcome;
use super::store::StateSnapshot;
use crate::error::{Error, Result};
use crate::gmm::{select_components, ClassId, FitOptions, GmmModel, Vec2};
use crate::lifelong::DetectionConfig;
use crate::mapek::{KnowledgeBase, PreferenceModel};
use crate::ranking::{rank_model, PreferenceOrder};

/// Axis-aligned selection in (packet loss, energy) space. Bounds are
/// inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl QualityBox {
    pub fn contains(&self, p: &Vec2) -> bool {
        (self.x_min..=self.x_max).contains(&p[0]) && (self.y_min..=self.y_max).contains(&p[1])
    }

    /// Finite, ordered bounds inside the quality domain.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidFeedback(format!("malformed box {self:?}")));
        }
        if self.x_min < 0.0 || self.x_max > 100.0 || self.y_max <= 0.0 {
            return Err(Error::InvalidFeedback(format!("box {self:?} leaves the quality domain")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestStatus {
    Pending,
    Answered,
    Expired,
}

/// A quality point of the detection window with its current task label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub cycle: u32,
    pub option_id: u16,
    pub pl: f64,
    pub ec: f64,
    pub class_id: ClassId,
    pub out_of_class: bool,
}

/// A proposed evolution of the classifier awaiting operator feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub id: u64,
    pub cycle: u32,
    pub status: RequestStatus,
    /// Known classes plus the newly fitted ones.
    pub proposal: GmmModel,
    pub new_class_ids: Vec<ClassId>,
    pub window: Vec<WindowPoint>,
    /// Points no known class explained; box feedback re-partitions these.
    pub out_of_class: Vec<Vec2>,
    /// First id free for components created by box refinement.
    pub next_class_id: u32,
    pub refit_seed: u64,
}

impl FeedbackRequest {
    pub fn from_outcome(
        id: u64,
        cycle: u32,
        outcome: &DetectionOutcome,
        states: &[&StateSnapshot],
        refit_seed: u64,
    ) -> Result<Self> {
        let (Some(new_model), Some(merged)) = (&outcome.new_model, &outcome.merged_model) else {
            return Err(Error::InvalidState("no new classes were detected".into()));
        };
        let base_len = merged.len() - new_model.len();
        let base = GmmModel { components: merged.components[..base_len].to_vec(), ..merged.clone() };
        let window = states
            .iter()
            .flat_map(|s| {
                let merged = &merged;
                let base = &base;
                s.quality_attributes.iter().map(move |e| {
                    let p = e.quality.to_vec();
                    WindowPoint {
                        cycle: s.cycle,
                        option_id: e.option_id,
                        pl: p[0],
                        ec: p[1],
                        class_id: merged.classify(&p).class_id,
                        out_of_class: base.is_out_of_class(&p),
                    }
                })
            })
            .collect();
        let max_id = merged.class_ids().into_iter().map(|c| c.0).max().unwrap_or(0);
        Ok(Self {
            id,
            cycle,
            status: RequestStatus::Pending,
            proposal: merged.clone(),
            new_class_ids: new_model.class_ids(),
            window,
            out_of_class: outcome.out_of_class_points.clone(),
            next_class_id: max_id + 1,
            refit_seed,
        })
    }

    /// The proposal without the newly detected components.
    pub fn base_model(&self) -> GmmModel {
        GmmModel {
            components: self
                .proposal
                .components
                .iter()
                .filter(|c| !self.new_class_ids.contains(&c.class_id))
                .cloned()
                .collect(),
            ..self.proposal.clone()
        }
    }
}

/// Operator answer: optional boxes that re-partition the new points, and a
/// total order over all classes of the refined model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorFeedback {
    #[serde(default)]
    pub boxes: Vec<QualityBox>,
    pub ranking: Vec<ClassId>,
}

/// Splits the request's out-of-class points into one partition per box
/// (first matching box wins) plus the remainder, refits each nonempty
/// partition with its own component count, and replaces the proposed new
/// components with the result. No boxes returns the proposal unchanged.
pub fn apply_box_feedback(request: &FeedbackRequest, boxes: &[QualityBox]) -> Result<GmmModel> {
    if boxes.is_empty() {
        return Ok(request.proposal.clone());
    }
    for b in boxes {
        b.validate()?;
    }
    let mut parts: Vec<Vec<Vec2>> = vec![Vec::new(); boxes.len() + 1];
    for p in &request.out_of_class {
        let slot = boxes.iter().position(|b| b.contains(p)).unwrap_or(boxes.len());
        parts[slot].push(*p);
    }
    if let Some(i) = parts[..boxes.len()].iter().position(Vec::is_empty) {
        return Err(Error::InvalidFeedback(format!("box {} contains none of the new points", i + 1)));
    }
    let config = DetectionConfig::default();
    let total = request.out_of_class.len() as f64;
    let mut components = Vec::new();
    for (i, part) in parts.iter().enumerate().filter(|(_, p)| !p.is_empty()) {
        let seed = request.refit_seed.wrapping_add(i as u64);
        let fitted = select_components(part, config.k_max(part.len()), seed, &FitOptions::default())?.into_model();
        let share = part.len() as f64 / total;
        components.extend(fitted.components.into_iter().map(|mut c| {
            c.weight *= share;
            c
        }));
    }
    let addition = GmmModel::new(components).relabel_from(request.next_class_id);
    request.base_model().merge(&addition)
}

/// Turns a total order over the refined model's classes into a preference
/// model.
pub fn apply_ranking(refined: &GmmModel, ranking: &[ClassId]) -> Result<PreferenceModel> {
    let mut expected = refined.class_ids();
    let mut given = ranking.to_vec();
    expected.sort();
    given.sort();
    if expected != given {
        return Err(Error::InvalidFeedback(format!(
            "ranking {:?} is not a permutation of the classes {:?}",
            ranking.iter().map(|c| c.0).collect::<Vec<_>>(),
            expected.iter().map(|c| c.0).collect::<Vec<_>>()
        )));
    }
    PreferenceModel::new(ranking.to_vec())
}

/// Installs the evolved models in one step, so no analysis sees one without
/// the other.
pub fn evolve(kb: &mut KnowledgeBase, refined: GmmModel, preference: PreferenceModel) {
    kb.install(refined, preference);
}

/// Accepts the proposed components as they are and ranks every class by its
/// mean under the stakeholders' preference order.
pub fn automated_operator(request: &FeedbackRequest, order: PreferenceOrder) -> OperatorFeedback {
    OperatorFeedback { boxes: Vec::new(), ranking: rank_model(&request.proposal, order) }
}

/// Source of operator feedback. `Ok(None)` means the request lapsed without
/// an answer.
pub trait Operator {
    fn feedback(&mut self, request: &FeedbackRequest) -> Result<Option<OperatorFeedback>>;
}

#[derive(Clone, Copy, Debug)]
pub struct AutomatedOperator(pub PreferenceOrder);

impl Operator for AutomatedOperator {
    fn feedback(&mut self, request: &FeedbackRequest) -> Result<Option<OperatorFeedback>> {
        Ok(Some(automated_operator(request, self.0)))
    }
}
