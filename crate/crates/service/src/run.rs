use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use driftguard_core::lifelong::{FeedbackRequest, LifelongObserver, Operator, OperatorFeedback};
use driftguard_core::mapek::KnowledgeBase;
use driftguard_core::scenario::{
    run_approach, Approach, CycleRecord, RunObserver, RunReport, ScenarioContext, ScenarioSpec,
};
use driftguard_core::{Error, Result};
use serde_json::json;

use crate::state::{EventKind, FeedbackMessage, PlotPoint, RunSnapshot, ServiceState};

/// Answers feedback requests with whatever the service receives over HTTP.
/// The run loop blocks in [`Operator::feedback`] until an answer for the
/// open request arrives or the timeout passes.
pub struct HumanOperator {
    state: Arc<ServiceState>,
    rx: Receiver<FeedbackMessage>,
    timeout: Option<Duration>,
}

impl HumanOperator {
    /// Takes over the state's feedback channel. `None` waits forever.
    pub fn new(state: Arc<ServiceState>, timeout: Option<Duration>) -> Self {
        let rx = state.feedback_channel();
        Self { state, rx, timeout }
    }
}

impl Operator for HumanOperator {
    fn feedback(&mut self, request: &FeedbackRequest) -> Result<Option<OperatorFeedback>> {
        let deadline = self.timeout.map(|t| Instant::now() + t);
        loop {
            let msg = match deadline {
                None => self.rx.recv().map_err(|_| closed())?,
                Some(d) => match self.rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                    Ok(msg) => msg,
                    Err(RecvTimeoutError::Timeout) => {
                        self.state.expire_request(request.id);
                        return Ok(None);
                    }
                    Err(RecvTimeoutError::Disconnected) => return Err(closed()),
                },
            };
            // Answers to earlier requests can linger in the channel.
            if msg.0 == request.id {
                return Ok(Some(msg.1));
            }
        }
    }
}

fn closed() -> Error {
    Error::InvalidState("the feedback channel closed".into())
}

/// Mirrors run progress into the service state.
pub struct ServiceObserver {
    state: Arc<ServiceState>,
    pace: Option<Duration>,
}

impl ServiceObserver {
    /// `pace` sleeps after every cycle so a person can follow the run.
    pub fn new(state: Arc<ServiceState>, pace: Option<Duration>) -> Self {
        Self { state, pace }
    }
}

impl LifelongObserver for ServiceObserver {
    fn request_opened(&mut self, request: &FeedbackRequest) {
        self.state.open_request(request);
    }

    fn feedback_applied(&mut self, request: &FeedbackRequest, feedback: &OperatorFeedback, kb: &KnowledgeBase) {
        let classifier = (**kb.classifier()).clone();
        let preference = (**kb.preference()).clone();
        self.state.update_snapshot(|s| {
            s.classifier = classifier.clone();
            s.preference = preference.clone();
            s.pending_request = None;
        });
        self.state.publish(
            EventKind::FeedbackApplied,
            json!({
                "request_id": request.id,
                "cycle": request.cycle,
                "boxes": feedback.boxes.len(),
                "ranking": preference.ranking,
                "class_count": classifier.len(),
            }),
        );
    }
}

impl RunObserver for ServiceObserver {
    fn cycle_completed(&mut self, record: &CycleRecord, kb: Option<&KnowledgeBase>, pending: Option<&FeedbackRequest>) {
        let cycle = record.cycle;
        self.state.update_snapshot(|s| {
            s.cycle = cycle;
            s.pending_request = pending.map(|r| r.id);
            if let Some(kb) = kb {
                s.window = kb
                    .results_for_cycle(cycle)
                    .map(|(k, r)| PlotPoint {
                        option_id: k.option_id,
                        pl: r.verification.packet_loss,
                        ec: r.verification.energy,
                        class_id: r.class_id,
                        membership: r.membership,
                    })
                    .collect();
                s.classifier = (**kb.classifier()).clone();
                s.preference = (**kb.preference()).clone();
            }
        });
        self.state.publish(EventKind::CycleCompleted, serde_json::to_value(record).expect("records serialize"));
        if let Some(pace) = self.pace {
            thread::sleep(pace);
        }
    }
}

/// How a served run behaves.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// How long a feedback request may stay open; `None` waits forever.
    pub feedback_timeout: Option<Duration>,
    /// Pause after each cycle.
    pub pace: Option<Duration>,
}

/// Builds the scenario and runs `approach` on a background thread with a
/// human operator connected to `state`. The snapshot exists once this
/// returns, so the service answers `/api/run/state` right away.
pub fn start_run(
    spec: ScenarioSpec,
    approach: Approach,
    state: Arc<ServiceState>,
    options: RunOptions,
) -> Result<JoinHandle<Result<RunReport>>> {
    let ctx = ScenarioContext::build(&spec)?;
    state.set_snapshot(RunSnapshot {
        label: spec.label(),
        approach: approach.to_string(),
        cycle: 0,
        cycles: ctx.cycles(),
        finished: false,
        window: Vec::new(),
        classifier: ctx.predefined.clone(),
        preference: ctx.predefined_preference.clone(),
        pending_request: None,
    });
    let mut operator = HumanOperator::new(state.clone(), options.feedback_timeout);
    let mut observer = ServiceObserver::new(state.clone(), options.pace);
    Ok(thread::spawn(move || {
        let report = run_approach(&ctx, approach, Some(&mut operator), &mut observer);
        state.update_snapshot(|s| s.finished = true);
        report
    }))
}
