use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use driftguard_core::gmm::{fit_gmm, select_components, FitOptions, GmmModel, Vec2, DEFAULT_MAX_COMPONENTS};
use driftguard_core::lifelong::{detect_new_classes, DetectionConfig, StateEntry, StateSnapshot};
use driftguard_core::mapek::{analyse, AnalysisConfig, KnowledgeBase, PreferenceModel};
use driftguard_core::ranking::{rank_model, PreferenceOrder};
use driftguard_core::sim::{CycleContext, QualityPoint, RegimeSchedule, SimConfig, Simulator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Setup {
    sim: Simulator,
    contexts: Vec<CycleContext>,
    training: Vec<Vec2>,
    model: GmmModel,
    preference: PreferenceModel,
}

fn setup() -> Setup {
    let sim = Simulator::new(SimConfig::default()).unwrap();
    let schedule = RegimeSchedule::for_order(&"(B),R,G".parse().unwrap(), 350).unwrap();
    let contexts: Vec<CycleContext> = (1..=350).map(|c| sim.cycle_context(&schedule, c, SEED).unwrap()).collect();
    let training: Vec<Vec2> =
        contexts[..3].iter().flat_map(|ctx| sim.options().iter().map(|o| sim.verify_in(ctx, o).to_vec())).collect();
    let model =
        select_components(&training, DEFAULT_MAX_COMPONENTS, SEED, &FitOptions::default()).unwrap().into_model();
    let preference = PreferenceModel::new(rank_model(&model, PreferenceOrder::PacketLossFirst)).unwrap();
    Setup { sim, contexts, training, model, preference }
}

fn simulator(c: &mut Criterion, s: &Setup) {
    c.bench_function("sim/enumerate_options", |b| b.iter(|| Simulator::new(black_box(SimConfig::default())).unwrap()));
    let ctx = &s.contexts[0];
    c.bench_function("sim/verify_cycle", |b| {
        b.iter(|| s.sim.options().iter().map(|o| s.sim.verify_in(ctx, o)).collect::<Vec<QualityPoint>>())
    });
}

fn mixtures(c: &mut Criterion, s: &Setup) {
    let points = &s.training[..3000];
    c.bench_function("gmm/fit_k3_3000", |b| b.iter(|| fit_gmm(black_box(points), 3, SEED).unwrap()));
    c.bench_function("gmm/select_kmax5_3000", |b| {
        b.iter(|| select_components(black_box(points), DEFAULT_MAX_COMPONENTS, SEED, &FitOptions::default()).unwrap())
    });
    let cycle: Vec<Vec2> = s.training[..s.sim.options().len()].to_vec();
    c.bench_function("gmm/classify_cycle", |b| {
        b.iter(|| cycle.iter().map(|p| s.model.classify(p).membership).sum::<f64>())
    });
}

fn analysis(c: &mut Criterion, s: &Setup) {
    let ctx = &s.contexts[0];
    let options = s.sim.options();
    for (name, cfg) in [("default", AnalysisConfig::default()), ("exhaustive", AnalysisConfig::exhaustive())] {
        c.bench_function(&format!("mapek/analyse_{name}"), |b| {
            b.iter_batched(
                || KnowledgeBase::new(s.model.clone(), s.preference.clone()),
                |mut kb| {
                    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
                    analyse(&mut kb, options, &ctx.uncertainties, 1, &cfg, &mut rng, |o| s.sim.verify_in(ctx, o))
                        .unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
}

fn detection(c: &mut Criterion, s: &Setup) {
    // Cycles 151 to 160 of the base scenario: the first group has drifted in.
    let classifier = Arc::new(s.model.clone());
    let preference = Arc::new(s.preference.clone());
    let states: Vec<StateSnapshot> = s.contexts[150..160]
        .iter()
        .map(|ctx| StateSnapshot {
            cycle: ctx.cycle(),
            quality_attributes: s
                .sim
                .options()
                .iter()
                .map(|o| {
                    let q = s.sim.verify_in(ctx, o);
                    let k = classifier.classify(&q.to_vec());
                    StateEntry { option_id: o.id, quality: q, class_id: k.class_id, membership: k.membership }
                })
                .collect(),
            classifier: classifier.clone(),
            preference: preference.clone(),
        })
        .collect();
    let refs: Vec<&StateSnapshot> = states.iter().collect();
    let next_id = s.model.class_ids().iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let mut group = c.benchmark_group("lifelong");
    group.sample_size(10);
    group.bench_function("detect_10_cycles", |b| {
        b.iter(|| detect_new_classes(&refs, &s.model, next_id, SEED, &DetectionConfig::default()).unwrap())
    });
    group.finish();
}

fn benches(c: &mut Criterion) {
    let s = setup();
    simulator(c, &s);
    mixtures(c, &s);
    analysis(c, &s);
    detection(c, &s);
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
