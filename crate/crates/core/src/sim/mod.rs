//! Simulated DeltaIoT-style network: topology, adaptation options,
//! per-cycle uncertainties, and an analytic quality verifier.
//!
//! Drift is produced by regime transforms: every option has a home group and
//! a cluster within it, and while the home group is absent the option reports
//! qualities from one of the groups known at deployment.

mod config;
mod network;
mod regime;
mod topology;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::{
    AffineTransform, ClusterConfig, EnergyModel, GroupConfig, InterferenceModel, LoadModel, SimConfig,
    REFERENCE_QUALITY,
};
pub use network::{
    assign_power, delivery_probability, enumerate_options, expected_flow, AdaptationOption, FlowSummary,
    PowerAssignment, Split, UncertaintySample, SPLIT_LEVELS,
};
pub use regime::{AppearanceOrder, Group, Regime, RegimeSchedule, Segment};
pub use topology::{LinkSpec, MoteId, Topology, TopologyConfig};

use crate::error::{invalid_input, Result};
use crate::gmm::Vec2;
use crate::rng::{stream_rng, Stream};

/// Packet loss in percent and energy consumption in mC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub packet_loss: f64,
    pub energy: f64,
}

impl QualityPoint {
    pub fn new(packet_loss: f64, energy: f64) -> Self {
        Self { packet_loss, energy }
    }

    pub fn to_vec(self) -> Vec2 {
        [self.packet_loss, self.energy]
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self { packet_loss: v[0], energy: v[1] }
    }
}

/// Index of a ground-truth cluster in `Simulator::clusters`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruthClass(pub u8);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub id: TruthClass,
    pub name: String,
    pub group: Group,
    pub transform: AffineTransform,
}

/// Everything the verifier needs for one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleContext {
    pub regime: Regime,
    pub uncertainties: UncertaintySample,
    pub power: PowerAssignment,
}

impl CycleContext {
    pub fn cycle(&self) -> u32 {
        self.regime.cycle
    }
}

#[derive(Clone, Copy, Debug)]
struct OptionProfile {
    home: f64,
    class: f64,
    ramp: f64,
    fallback: f64,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    config: SimConfig,
    topology: Topology,
    options: Vec<AdaptationOption>,
    profiles: Vec<OptionProfile>,
    clusters: Vec<ClusterInfo>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let topology = Topology::new(&config.topology)?;
        let options = enumerate_options(&topology)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.assignment_seed);
        let profiles = options
            .iter()
            .map(|_| OptionProfile {
                home: rng.random(),
                class: rng.random(),
                ramp: rng.random(),
                fallback: rng.random(),
            })
            .collect();
        let mut clusters = Vec::new();
        for g in &config.groups {
            for c in &g.classes {
                let id = u8::try_from(clusters.len()).map_err(|_| invalid_input("too many clusters"))?;
                clusters.push(ClusterInfo {
                    id: TruthClass(id),
                    name: c.name.clone(),
                    group: g.group,
                    transform: c.transform,
                });
            }
        }
        Ok(Self { config, topology, options, profiles, clusters })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn options(&self) -> &[AdaptationOption] {
        &self.options
    }

    pub fn clusters(&self) -> &[ClusterInfo] {
        &self.clusters
    }

    pub fn cluster(&self, id: TruthClass) -> &ClusterInfo {
        &self.clusters[usize::from(id.0)]
    }

    /// Interference mean for a regime: the base mean plus each group's shift
    /// weighted by how far it has appeared.
    pub fn interference_mean(&self, regime: &Regime) -> f64 {
        self.config.interference.mean
            + self.config.groups.iter().map(|g| regime.level(g.group) * g.interference_shift).sum::<f64>()
    }

    fn load_factor(&self, regime: &Regime) -> f64 {
        1.0 + self.config.groups.iter().map(|g| regime.level(g.group) * g.load_shift).sum::<f64>()
    }

    /// Draws SNRs and loads for a regime from `rng`.
    pub fn sample_uncertainties_with<R: Rng>(&self, regime: &Regime, rng: &mut R) -> UncertaintySample {
        let noise = Normal::new(self.interference_mean(regime), self.config.interference.std_dev)
            .expect("validated interference parameters");
        let snr = self.topology.links().iter().map(|l| l.base_snr - noise.sample(rng)).collect();
        let factor = self.load_factor(regime).max(0.0);
        let (lo, hi) = (self.config.load.min * factor, self.config.load.max * factor);
        let load = self.topology.motes().iter().map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        UncertaintySample { cycle: regime.cycle, snr, load }
    }

    /// Deterministic in `(schedule, cycle, seed)`.
    pub fn sample_uncertainties(&self, schedule: &RegimeSchedule, cycle: u32, seed: u64) -> Result<UncertaintySample> {
        let regime = schedule.regime_at(cycle)?;
        let mut rng = stream_rng(seed, Stream::Uncertainty, u64::from(cycle));
        Ok(self.sample_uncertainties_with(&regime, &mut rng))
    }

    pub fn assign_power(&self, uncs: &UncertaintySample) -> PowerAssignment {
        assign_power(&self.topology, uncs, self.config.power_gain_db, self.config.max_power)
    }

    /// Regime, uncertainties and power for one cycle of a run.
    pub fn cycle_context(&self, schedule: &RegimeSchedule, cycle: u32, seed: u64) -> Result<CycleContext> {
        let regime = schedule.regime_at(cycle)?;
        let mut rng = stream_rng(seed, Stream::Uncertainty, u64::from(cycle));
        let uncertainties = self.sample_uncertainties_with(&regime, &mut rng);
        let power = self.assign_power(&uncertainties);
        Ok(CycleContext { regime, uncertainties, power })
    }

    /// Ground-truth cluster of an option under a regime.
    pub fn truth_class(&self, option_id: u16, regime: &Regime) -> TruthClass {
        let p = self.profiles[usize::from(option_id)];
        let groups = &self.config.groups;
        let total: f64 = groups.iter().map(|g| g.share).sum();
        let mut home = groups.len() - 1;
        let mut acc = 0.0;
        for (i, g) in groups.iter().enumerate() {
            acc += g.share / total;
            if p.home < acc {
                home = i;
                break;
            }
        }
        let level = regime.level(groups[home].group);
        let chosen = if level >= 1.0 || p.ramp < level {
            home
        } else {
            let known: Vec<usize> =
                groups.iter().enumerate().filter(|(_, g)| regime.initial.contains(&g.group)).map(|(i, _)| i).collect();
            if known.is_empty() {
                home
            } else {
                known[((p.fallback * known.len() as f64) as usize).min(known.len() - 1)]
            }
        };
        let offset: usize = groups[..chosen].iter().map(|g| g.classes.len()).sum();
        let classes = &groups[chosen].classes;
        let class_total: f64 = classes.iter().map(|c| c.share).sum();
        let mut acc = 0.0;
        let mut idx = classes.len() - 1;
        for (i, c) in classes.iter().enumerate() {
            acc += c.share / class_total;
            if p.class < acc {
                idx = i;
                break;
            }
        }
        TruthClass((offset + idx) as u8)
    }

    /// Quality of the untransformed network.
    pub fn network_quality(
        &self,
        uncs: &UncertaintySample,
        power: &PowerAssignment,
        option: &AdaptationOption,
    ) -> QualityPoint {
        let flow = expected_flow(&self.topology, &self.config, uncs, power, option);
        QualityPoint::new(flow.packet_loss(), flow.energy)
    }

    /// Verified quality together with the cluster that produced it.
    pub fn verify_labeled(
        &self,
        uncs: &UncertaintySample,
        power: &PowerAssignment,
        option: &AdaptationOption,
        regime: &Regime,
    ) -> (QualityPoint, TruthClass) {
        let base = self.network_quality(uncs, power, option);
        let truth = self.truth_class(option.id, regime);
        let [pl, ec] = self.cluster(truth).transform.apply(base.to_vec());
        (QualityPoint::new(pl.clamp(0.0, 100.0), ec.max(f64::MIN_POSITIVE)), truth)
    }

    pub fn verify(
        &self,
        uncs: &UncertaintySample,
        power: &PowerAssignment,
        option: &AdaptationOption,
        regime: &Regime,
    ) -> QualityPoint {
        self.verify_labeled(uncs, power, option, regime).0
    }

    pub fn verify_in(&self, ctx: &CycleContext, option: &AdaptationOption) -> QualityPoint {
        self.verify(&ctx.uncertainties, &ctx.power, option, &ctx.regime)
    }

    pub fn verify_labeled_in(&self, ctx: &CycleContext, option: &AdaptationOption) -> (QualityPoint, TruthClass) {
        self.verify_labeled(&ctx.uncertainties, &ctx.power, option, &ctx.regime)
    }
}
