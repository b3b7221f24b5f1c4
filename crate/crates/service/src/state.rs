use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};

use driftguard_core::gmm::{ClassId, GmmModel};
use driftguard_core::lifelong::{apply_box_feedback, apply_ranking, FeedbackRequest, OperatorFeedback, QualityBox};
use driftguard_core::mapek::PreferenceModel;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Events kept for replay to reconnecting clients.
pub const EVENT_BUFFER: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CycleCompleted,
    NewClassDetected,
    FeedbackApplied,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CycleCompleted => "cycle_completed",
            EventKind::NewClassDetected => "new_class_detected",
            EventKind::FeedbackApplied => "feedback_applied",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

/// A verified option of the latest cycle as shown to the operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub option_id: u16,
    pub pl: f64,
    pub ec: f64,
    pub class_id: ClassId,
    pub membership: f64,
}

/// Copy of the run loop's state, replaced wholesale after every cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub label: String,
    pub approach: String,
    pub cycle: u32,
    pub cycles: u32,
    pub finished: bool,
    pub window: Vec<PlotPoint>,
    pub classifier: GmmModel,
    pub preference: PreferenceModel,
    pub pending_request: Option<u64>,
}

/// Reply to a box submission: the proposal refined by the boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedProposal {
    pub request_id: u64,
    pub boxes: Vec<QualityBox>,
    pub model: GmmModel,
    pub new_class_ids: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingAck {
    pub request_id: u64,
    pub status: String,
    pub ranking: Vec<ClassId>,
}

/// Why a feedback submission was refused.
#[derive(Debug, PartialEq)]
pub enum Rejection {
    /// No pending request carries this id.
    Stale(String),
    /// The feedback itself is malformed.
    Invalid(String),
    /// The run loop stopped listening.
    Closed,
}

#[derive(Debug)]
struct Pending {
    request: FeedbackRequest,
    boxes: Vec<QualityBox>,
    refined: GmmModel,
}

/// Feedback that the service forwards to the run loop.
pub type FeedbackMessage = (u64, OperatorFeedback);

struct EventLog {
    buffer: VecDeque<ApiEvent>,
    next_seq: u64,
}

/// Everything the HTTP handlers and the run loop share. The run loop writes
/// snapshots and events; handlers read them and push feedback through the
/// channel.
pub struct ServiceState {
    snapshot: RwLock<Option<Arc<RunSnapshot>>>,
    pending: Mutex<Option<Pending>>,
    answered: Mutex<BTreeMap<u64, RankingAck>>,
    events: Mutex<EventLog>,
    live: broadcast::Sender<ApiEvent>,
    feedback: Mutex<Option<Sender<FeedbackMessage>>>,
}

impl Default for ServiceState {
    fn default() -> Self {
        let (live, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            snapshot: RwLock::new(None),
            pending: Mutex::new(None),
            answered: Mutex::new(BTreeMap::new()),
            events: Mutex::new(EventLog { buffer: VecDeque::new(), next_seq: 1 }),
            live,
            feedback: Mutex::new(None),
        }
    }
}

impl ServiceState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Opens the feedback channel; the receiver belongs to the run loop.
    /// Calling this again replaces the previous channel.
    pub fn feedback_channel(&self) -> Receiver<FeedbackMessage> {
        let (tx, rx) = mpsc::channel();
        *self.feedback.lock().unwrap() = Some(tx);
        rx
    }

    pub fn snapshot(&self) -> Option<Arc<RunSnapshot>> {
        self.snapshot.read().unwrap().clone()
    }

    pub fn set_snapshot(&self, snapshot: RunSnapshot) {
        *self.snapshot.write().unwrap() = Some(Arc::new(snapshot));
    }

    /// Applies `f` to a copy of the current snapshot and installs the result.
    pub fn update_snapshot(&self, f: impl FnOnce(&mut RunSnapshot)) {
        let mut guard = self.snapshot.write().unwrap();
        if let Some(current) = guard.as_ref() {
            let mut next = (**current).clone();
            f(&mut next);
            *guard = Some(Arc::new(next));
        }
    }

    pub fn publish(&self, kind: EventKind, payload: serde_json::Value) -> ApiEvent {
        let mut log = self.events.lock().unwrap();
        let event = ApiEvent { seq: log.next_seq, kind, payload };
        log.next_seq += 1;
        log.buffer.push_back(event.clone());
        while log.buffer.len() > EVENT_BUFFER {
            log.buffer.pop_front();
        }
        // Nobody listening is fine; the buffer still holds the event.
        let _ = self.live.send(event.clone());
        event
    }

    /// Buffered events after `last_seen` plus a receiver for everything
    /// published afterwards, taken atomically so nothing is lost or doubled.
    pub fn subscribe(&self, last_seen: u64) -> (Vec<ApiEvent>, broadcast::Receiver<ApiEvent>) {
        let log = self.events.lock().unwrap();
        let rx = self.live.subscribe();
        let replay = log.buffer.iter().filter(|e| e.seq > last_seen).cloned().collect();
        (replay, rx)
    }

    pub fn pending(&self) -> Option<FeedbackRequest> {
        self.pending.lock().unwrap().as_ref().map(|p| p.request.clone())
    }

    /// Registers a request as pending and announces it.
    pub fn open_request(&self, request: &FeedbackRequest) {
        *self.pending.lock().unwrap() =
            Some(Pending { request: request.clone(), boxes: Vec::new(), refined: request.proposal.clone() });
        self.update_snapshot(|s| s.pending_request = Some(request.id));
        self.publish(
            EventKind::NewClassDetected,
            serde_json::json!({
                "request_id": request.id,
                "cycle": request.cycle,
                "new_class_ids": request.new_class_ids,
                "out_of_class_points": request.out_of_class.len(),
            }),
        );
    }

    /// Drops a request that lapsed without an answer.
    pub fn expire_request(&self, id: u64) {
        let mut pending = self.pending.lock().unwrap();
        if pending.as_ref().is_some_and(|p| p.request.id == id) {
            *pending = None;
        }
        drop(pending);
        self.update_snapshot(|s| s.pending_request = None);
    }

    fn stale(&self, id: u64, pending: &Option<Pending>) -> Rejection {
        match pending {
            Some(p) => Rejection::Stale(format!("request {id} is not pending (pending is {})", p.request.id)),
            None => Rejection::Stale(format!("request {id} is not pending")),
        }
    }

    /// Refines the pending proposal with `boxes`. Each call starts from the
    /// original proposal, so repeating a submission gives the same model.
    pub fn submit_boxes(&self, id: u64, boxes: Vec<QualityBox>) -> Result<RefinedProposal, Rejection> {
        let mut guard = self.pending.lock().unwrap();
        let Some(p) = guard.as_mut().filter(|p| p.request.id == id) else {
            return Err(self.stale(id, &guard));
        };
        let refined = apply_box_feedback(&p.request, &boxes).map_err(|e| Rejection::Invalid(e.to_string()))?;
        p.boxes = boxes.clone();
        p.refined = refined.clone();
        let base: Vec<ClassId> = p.request.base_model().class_ids();
        let new_class_ids = refined.class_ids().into_iter().filter(|c| !base.contains(c)).collect();
        Ok(RefinedProposal { request_id: id, boxes, model: refined, new_class_ids })
    }

    /// Accepts a total order over the refined model and hands the feedback
    /// to the run loop. Resubmitting the accepted ranking for an answered
    /// request returns the same acknowledgement.
    pub fn submit_ranking(&self, id: u64, ranking: Vec<ClassId>) -> Result<RankingAck, Rejection> {
        let mut guard = self.pending.lock().unwrap();
        let mut answered = self.answered.lock().unwrap();
        let Some(p) = guard.as_ref().filter(|p| p.request.id == id) else {
            return match answered.get(&id) {
                Some(ack) if ack.ranking == ranking => Ok(ack.clone()),
                Some(_) => Err(Rejection::Stale(format!("request {id} was already answered with another ranking"))),
                None => Err(self.stale(id, &guard)),
            };
        };
        apply_ranking(&p.refined, &ranking).map_err(|e| Rejection::Invalid(e.to_string()))?;
        let feedback = OperatorFeedback { boxes: p.boxes.clone(), ranking: ranking.clone() };
        let sender = self.feedback.lock().unwrap().clone().ok_or(Rejection::Closed)?;
        sender.send((id, feedback)).map_err(|_| Rejection::Closed)?;
        let ack = RankingAck { request_id: id, status: "accepted".into(), ranking };
        answered.insert(id, ack.clone());
        *guard = None;
        drop(answered);
        drop(guard);
        self.update_snapshot(|s| s.pending_request = None);
        Ok(ack)
    }
}
