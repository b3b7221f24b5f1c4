use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::report::{CycleRecord, RunReport};
use super::{Approach, DetectionWindow, ScenarioContext, ScenarioSpec};
use crate::error::{invalid_input, Error, Result};
use crate::lifelong::{AutomatedOperator, FeedbackRequest, LifelongLoop, LifelongObserver, Operator, OperatorMode};
use crate::mapek::{analyse, plan_and_execute, AnalysisResult, KnowledgeBase, ManagedNetwork, ResultKey, StoredResult};
use crate::ml2asr::{features, reduce_and_select, train, QualityRegressor};
use crate::rng::{stream_rng, Stream};
use crate::sim::QualityPoint;

/// Receives per-cycle progress of a run in addition to lifelong milestones.
pub trait RunObserver: LifelongObserver {
    /// Called after the cycle's adaptation and lifelong step. `kb` is absent
    /// for the baseline, which has no knowledge base.
    fn cycle_completed(
        &mut self,
        _record: &CycleRecord,
        _kb: Option<&KnowledgeBase>,
        _pending: Option<&FeedbackRequest>,
    ) {
    }
}

impl RunObserver for () {}

/// Builds the scenario and runs the four approaches evaluated for its
/// operator mode, in parallel.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<Vec<RunReport>> {
    let ctx = ScenarioContext::build(spec)?;
    Approach::for_mode(spec.operator).par_iter().map(|a| run_approach(&ctx, *a, None, &mut ())).collect()
}

/// Runs every scenario of `specs`; reports come back in input order.
pub fn run_matrix(specs: &[ScenarioSpec]) -> Result<Vec<RunReport>> {
    let nested: Vec<Vec<RunReport>> = specs.par_iter().map(run_scenario).collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Runs one approach over the scenario. `operator` answers feedback requests
/// for `LsaFeedback`; when absent an automated operator is used if the
/// scenario allows it.
pub fn run_approach(
    ctx: &ScenarioContext,
    approach: Approach,
    operator: Option<&mut dyn Operator>,
    observer: &mut dyn RunObserver,
) -> Result<RunReport> {
    match approach {
        Approach::Baseline => run_baseline(ctx, observer),
        _ => run_adaptive(ctx, approach, operator, observer),
    }
}

/// Scans the options in the cycle's random order and takes the first one
/// whose true cluster holds the best available rank.
fn run_baseline(ctx: &ScenarioContext, observer: &mut dyn RunObserver) -> Result<RunReport> {
    let n = ctx.archive.option_count;
    let mut records = Vec::with_capacity(ctx.cycles() as usize);
    for cycle in 1..=ctx.cycles() {
        let ideal = ctx.ideal.ideal_rank(cycle).expect("cycle is archived");
        let mut order: Vec<u16> = (0..n as u16).collect();
        order.shuffle(&mut stream_rng(ctx.spec.seed, Stream::Analysis, u64::from(cycle)));
        let pos = order.iter().position(|o| ctx.truth_rank(cycle, *o) == ideal).expect("the ideal rank is attained");
        let option_id = order[pos];
        let q = ctx.quality(cycle, option_id);
        let record = CycleRecord {
            cycle,
            approach: Approach::Baseline,
            option_id,
            pl: q.packet_loss,
            ec: q.energy,
            utility: ctx.utility.utility(q),
            rank: ideal,
            ideal_rank: ideal,
            class_id: None,
            verifications: pos + 1,
            fallback: false,
            class_count: ctx.ideal.class_count(),
        };
        observer.cycle_completed(&record, None, None);
        records.push(record);
    }
    RunReport::new(ctx, Approach::Baseline, records, Vec::new())
}

struct Regression {
    history: VecDeque<(Vec<f64>, QualityPoint)>,
    limit: usize,
    model: Option<QualityRegressor>,
}

impl Regression {
    fn push(&mut self, x: Vec<f64>, q: QualityPoint) {
        self.history.push_back((x, q));
        while self.history.len() > self.limit {
            self.history.pop_front();
        }
    }

    fn retrain(&mut self) -> Result<()> {
        let samples: Vec<(Vec<f64>, QualityPoint)> = self.history.iter().cloned().collect();
        self.model = Some(train(&samples)?);
        Ok(())
    }
}

fn run_adaptive(
    ctx: &ScenarioContext,
    approach: Approach,
    operator: Option<&mut dyn Operator>,
    observer: &mut dyn RunObserver,
) -> Result<RunReport> {
    let spec = &ctx.spec;
    let options = ctx.sim.options();
    let topology = ctx.sim.topology();
    let mut kb = KnowledgeBase::new(ctx.predefined.clone(), ctx.predefined_preference.clone());
    let mut network = ManagedNetwork::default();
    let next_id = ctx.predefined.class_ids().iter().map(|c| c.0 + 1).max().unwrap_or(0);

    let mut automated = AutomatedOperator(spec.preference);
    let (mut lifelong, operator): (Option<LifelongLoop>, &mut dyn Operator) = match approach {
        Approach::LsaFeedback => {
            if !spec.operator.is_active() {
                return Err(invalid_input("lsa_feedback needs an active operator"));
            }
            let op: &mut dyn Operator = match (operator, spec.operator) {
                (Some(op), _) => op,
                (None, OperatorMode::Automated) => &mut automated,
                (None, _) => return Err(invalid_input("a human-operated run needs an operator channel")),
            };
            (Some(LifelongLoop::new(spec.lifelong.clone(), spec.operator, spec.seed, next_id)), op)
        }
        Approach::LsaNofeedback => {
            (Some(LifelongLoop::new(spec.lifelong.clone(), OperatorMode::Inactive, spec.seed, next_id)), &mut automated)
        }
        _ => (None, &mut automated),
    };

    let mut regression = (approach == Approach::Ml2asr).then(|| Regression {
        history: VecDeque::new(),
        limit: spec.ml2asr.history.max(1),
        model: None,
    });
    if let Some(reg) = regression.as_mut() {
        for (option_id, cycle, q) in &ctx.training_samples {
            let c = ctx.context(*cycle);
            reg.push(features(topology, &options[usize::from(*option_id)], &c.power, &c.uncertainties), *q);
        }
        reg.retrain()?;
    }

    let mut records = Vec::with_capacity(ctx.cycles() as usize);
    for cycle in 1..=ctx.cycles() {
        let c = ctx.context(cycle);
        let mut rng = stream_rng(spec.seed, Stream::Analysis, u64::from(cycle));
        let verify = |o: &crate::sim::AdaptationOption| ctx.quality(cycle, o.id);

        let result: AnalysisResult = match regression.as_mut() {
            Some(reg) => {
                if cycle > 1 && (cycle - 1) % spec.ml2asr.retrain_period == 0 {
                    reg.retrain()?;
                }
                let xs: Vec<Vec<f64>> =
                    options.iter().map(|o| features(topology, o, &c.power, &c.uncertainties)).collect();
                let model = reg.model.as_ref().expect("trained before the first cycle");
                let predictions: Vec<QualityPoint> = xs.iter().map(|x| model.predict(x)).collect();
                let result = reduce_and_select(
                    &mut kb,
                    options,
                    &predictions,
                    spec.ml2asr.top_k,
                    &c.uncertainties,
                    cycle,
                    &spec.analysis,
                    &mut rng,
                    verify,
                )?;
                let verified: Vec<(u16, QualityPoint)> =
                    kb.results_for_cycle(cycle).map(|(k, r)| (k.option_id, r.verification)).collect();
                for (id, q) in verified {
                    reg.push(xs[usize::from(id)].clone(), q);
                }
                result
            }
            None => analyse(&mut kb, options, &c.uncertainties, cycle, &spec.analysis, &mut rng, verify)?,
        };
        plan_and_execute(&result, options, &c.power, topology, &mut network)?;

        if let Some(ll) = lifelong.as_mut() {
            if spec.detection_window == DetectionWindow::AllOptions {
                verify_remaining(ctx, &mut kb, cycle);
            }
            ll.end_of_cycle(&mut kb, cycle, operator, observer)?;
        }
        kb.prune_results(cycle);

        let q = result.verification;
        let record = CycleRecord {
            cycle,
            approach,
            option_id: result.option_id,
            pl: q.packet_loss,
            ec: q.energy,
            utility: ctx.utility.utility(q),
            rank: ctx.truth_rank(cycle, result.option_id),
            ideal_rank: ctx.ideal.ideal_rank(cycle).expect("cycle is archived"),
            class_id: Some(result.class_id),
            verifications: result.verifications,
            fallback: result.fallback,
            class_count: kb.classifier().len(),
        };
        observer.cycle_completed(&record, Some(&kb), lifelong.as_ref().and_then(LifelongLoop::pending));
        records.push(record);
    }
    if network.applied_count() != u64::from(ctx.cycles()) {
        return Err(Error::InvalidState("not every cycle applied a configuration".into()));
    }
    let evolution = lifelong.map(|ll| ll.log().to_vec()).unwrap_or_default();
    RunReport::new(ctx, approach, records, evolution)
}

/// Verifies the options analysis skipped so the knowledge store sees the
/// whole adaptation space of the cycle.
fn verify_remaining(ctx: &ScenarioContext, kb: &mut KnowledgeBase, cycle: u32) {
    let digest = ctx.context(cycle).uncertainties.digest();
    let classifier = kb.classifier().clone();
    for o in ctx.sim.options() {
        let key = ResultKey { cycle, digest, option_id: o.id };
        if kb.result(&key).is_none() {
            let q = ctx.quality(cycle, o.id);
            let c = classifier.classify(&q.to_vec());
            kb.insert_result(key, StoredResult { verification: q, class_id: c.class_id, membership: c.membership });
        }
    }
}
