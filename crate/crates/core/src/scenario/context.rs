use rand::seq::index::sample;
use rayon::prelude::*;

use super::ScenarioSpec;
use crate::error::Result;
use crate::gmm::{select_components, FitOptions, GmmModel, Vec2, DEFAULT_MAX_COMPONENTS};
use crate::mapek::PreferenceModel;
use crate::metrics::{build_ideal_baseline, ArchivedCycle, ExhaustiveArchive, IdealBaseline, UtilityModel};
use crate::ranking::rank_model;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sim::{CycleContext, QualityPoint, RegimeSchedule, Simulator};

/// Points drawn from the training window to fit the predefined classifier.
pub const TRAINING_SAMPLE_SIZE: usize = 3000;

/// Everything shared by the approaches run on one scenario: the simulated
/// environment, every cycle's conditions, the exhaustive ground truth and
/// the classifier trained before deployment.
#[derive(Clone, Debug)]
pub struct ScenarioContext {
    pub spec: ScenarioSpec,
    pub sim: Simulator,
    pub schedule: RegimeSchedule,
    pub contexts: Vec<CycleContext>,
    pub archive: ExhaustiveArchive,
    pub ideal: IdealBaseline,
    pub training_window: u32,
    /// (option id, cycle, quality) of the sampled training points.
    pub training_samples: Vec<(u16, u32, QualityPoint)>,
    pub predefined: GmmModel,
    pub predefined_preference: PreferenceModel,
    pub utility: UtilityModel,
}

impl ScenarioContext {
    pub fn build(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let sim = Simulator::new(spec.sim.clone())?;
        let schedule = spec.resolved_schedule()?;
        let training_window = spec.resolved_training_window(&schedule)?;
        let contexts: Vec<CycleContext> =
            (1..=spec.cycles).map(|c| sim.cycle_context(&schedule, c, spec.seed)).collect::<Result<_>>()?;

        let cycles: Vec<ArchivedCycle> = contexts
            .par_iter()
            .map(|ctx| {
                let (qualities, truths) = sim.options().iter().map(|o| sim.verify_labeled_in(ctx, o)).unzip();
                ArchivedCycle { cycle: ctx.cycle(), qualities, truths }
            })
            .collect();
        let archive = ExhaustiveArchive { option_count: sim.options().len(), cycles };
        let ideal = build_ideal_baseline(&archive, spec.preference, derive_seed(spec.seed, Stream::Training, 1))?;

        let n_options = archive.option_count;
        let pool = n_options * training_window as usize;
        let mut rng = stream_rng(spec.seed, Stream::Training, 0);
        let mut picks = sample(&mut rng, pool, TRAINING_SAMPLE_SIZE.min(pool)).into_vec();
        picks.sort_unstable();
        let training_samples: Vec<(u16, u32, QualityPoint)> = picks
            .into_iter()
            .map(|i| {
                let (c, o) = (i / n_options, i % n_options);
                (o as u16, c as u32 + 1, archive.cycles[c].qualities[o])
            })
            .collect();
        let points: Vec<Vec2> = training_samples.iter().map(|(_, _, q)| q.to_vec()).collect();
        let predefined = select_components(
            &points,
            DEFAULT_MAX_COMPONENTS,
            derive_seed(spec.seed, Stream::Training, 2),
            &FitOptions::default(),
        )?
        .into_model();
        let predefined_preference = PreferenceModel::new(rank_model(&predefined, spec.preference))?;

        Ok(Self {
            spec: spec.clone(),
            sim,
            schedule,
            contexts,
            archive,
            ideal,
            training_window,
            training_samples,
            predefined,
            predefined_preference,
            utility: UtilityModel::for_preference(spec.preference),
        })
    }

    pub fn cycles(&self) -> u32 {
        self.spec.cycles
    }

    pub fn context(&self, cycle: u32) -> &CycleContext {
        &self.contexts[cycle as usize - 1]
    }

    /// Verified quality of an option, read from the exhaustive archive.
    pub fn quality(&self, cycle: u32, option_id: u16) -> QualityPoint {
        self.archive.cycles[cycle as usize - 1].qualities[usize::from(option_id)]
    }

    /// Rank of the ground-truth cluster an option belongs to in a cycle.
    pub fn truth_rank(&self, cycle: u32, option_id: u16) -> usize {
        let truth = self.archive.cycles[cycle as usize - 1].truths[usize::from(option_id)];
        self.ideal.rank_of(truth).expect("every archived cluster is ranked")
    }

    /// Start of the drift period, if the schedule has one.
    pub fn drift_start(&self) -> Option<u32> {
        self.schedule.first_ramp_start()
    }

    /// Whether drift ever offers a class better than the best one present
    /// at deployment.
    pub fn has_novel_classes(&self) -> bool {
        let first = self.ideal.ideal_ranks[0];
        self.ideal.ideal_ranks.iter().any(|r| *r < first)
    }
}
