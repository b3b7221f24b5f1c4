//! The managing system: knowledge, the classifier-guided analysis, and the
//! plan/execute step that applies the chosen option.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::gmm::{ClassId, GmmModel, DEFAULT_OUTLIER_THRESHOLD};
use crate::sim::{AdaptationOption, MoteId, PowerAssignment, QualityPoint, Split, Topology, UncertaintySample};

/// Cycles of verification results kept in the knowledge base.
pub const RETENTION_CYCLES: u32 = 1000;

/// Stakeholder ranking over class ids, best first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub ranking: Vec<ClassId>,
}

impl PreferenceModel {
    pub fn new(ranking: Vec<ClassId>) -> Result<Self> {
        let mut seen = ranking.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != ranking.len() {
            return Err(invalid_input("ranking lists a class twice"));
        }
        Ok(Self { ranking })
    }

    /// 1-based rank, or `None` for unranked classes.
    pub fn rank(&self, class_id: ClassId) -> Option<usize> {
        self.ranking.iter().position(|c| *c == class_id).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResultKey {
    pub cycle: u32,
    pub digest: u64,
    pub option_id: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredResult {
    pub verification: QualityPoint,
    pub class_id: ClassId,
    pub membership: f64,
}

/// Shared knowledge of the feedback loop. The classifier and preference are
/// reference counted so snapshots can hold them without copying.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    results: BTreeMap<ResultKey, StoredResult>,
    classifier: Arc<GmmModel>,
    preference: Arc<PreferenceModel>,
    retention: u32,
}

impl KnowledgeBase {
    pub fn new(classifier: GmmModel, preference: PreferenceModel) -> Self {
        Self {
            results: BTreeMap::new(),
            classifier: Arc::new(classifier),
            preference: Arc::new(preference),
            retention: RETENTION_CYCLES,
        }
    }

    pub fn with_retention(mut self, cycles: u32) -> Self {
        self.retention = cycles;
        self
    }

    pub fn classifier(&self) -> &Arc<GmmModel> {
        &self.classifier
    }

    pub fn preference(&self) -> &Arc<PreferenceModel> {
        &self.preference
    }

    /// Installs a new classifier and preference together.
    pub fn install(&mut self, classifier: GmmModel, preference: PreferenceModel) {
        self.classifier = Arc::new(classifier);
        self.preference = Arc::new(preference);
    }

    pub fn result(&self, key: &ResultKey) -> Option<&StoredResult> {
        self.results.get(key)
    }

    pub fn insert_result(&mut self, key: ResultKey, result: StoredResult) {
        self.results.insert(key, result);
    }

    pub fn result_count(&self) -> usize {
        self.results.len()
    }

    /// Results stored for one cycle, in key order.
    pub fn results_for_cycle(&self, cycle: u32) -> impl Iterator<Item = (&ResultKey, &StoredResult)> {
        let lo = ResultKey { cycle, digest: 0, option_id: 0 };
        let hi = ResultKey { cycle, digest: u64::MAX, option_id: u16::MAX };
        self.results.range(lo..=hi)
    }

    /// Drops results older than the retention window.
    pub fn prune_results(&mut self, current_cycle: u32) {
        let oldest = current_cycle.saturating_sub(self.retention);
        self.results = self.results.split_off(&ResultKey { cycle: oldest, digest: 0, option_id: 0 });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Memberships above this admit a point.
    pub prob_threshold: f64,
    /// Once more outliers than this were seen, every point is admitted.
    /// `None` never admits outliers.
    pub counter_threshold: Option<u32>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { prob_threshold: DEFAULT_OUTLIER_THRESHOLD, counter_threshold: Some(10) }
    }
}

impl AnalysisConfig {
    pub fn exhaustive() -> Self {
        Self { counter_threshold: None, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub option_id: u16,
    pub class_id: ClassId,
    /// Preference rank of `class_id`; absent only for a fallback onto an
    /// unranked class.
    pub rank: Option<usize>,
    pub membership: f64,
    pub verification: QualityPoint,
    pub verifications: usize,
    pub outliers: u32,
    pub fallback: bool,
}

/// Scans options in random order for a member of the best ranked class that
/// has one, verifying each option at most once per cycle and storing every
/// result in `kb`. `verify` is only called on cache misses.
pub fn analyse<R, V>(
    kb: &mut KnowledgeBase,
    options: &[AdaptationOption],
    uncs: &UncertaintySample,
    cycle: u32,
    config: &AnalysisConfig,
    rng: &mut R,
    mut verify: V,
) -> Result<AnalysisResult>
where
    R: Rng + ?Sized,
    V: FnMut(&AdaptationOption) -> QualityPoint,
{
    if options.is_empty() {
        return Err(invalid_input("no adaptation options to analyse"));
    }
    if kb.classifier.is_empty() {
        return Err(Error::InvalidState("the knowledge base has no classifier".into()));
    }
    let digest = uncs.digest();
    let mut order: Vec<&AdaptationOption> = options.iter().collect();
    order.shuffle(rng);

    let classifier = Arc::clone(&kb.classifier);
    let preference = Arc::clone(&kb.preference);
    let mut outliers = 0u32;
    let mut verifications = 0usize;

    let mut lookup = |kb: &mut KnowledgeBase, option: &AdaptationOption, verifications: &mut usize| -> StoredResult {
        let key = ResultKey { cycle, digest, option_id: option.id };
        if let Some(r) = kb.results.get(&key) {
            return *r;
        }
        let q = verify(option);
        *verifications += 1;
        let c = classifier.classify(&q.to_vec());
        let r = StoredResult { verification: q, class_id: c.class_id, membership: c.membership };
        kb.results.insert(key, r);
        r
    };

    for (rank0, target) in preference.ranking.iter().enumerate() {
        for option in &order {
            let r = lookup(kb, option, &mut verifications);
            let admitted =
                r.membership > config.prob_threshold || config.counter_threshold.is_some_and(|limit| outliers > limit);
            if admitted {
                if r.class_id == *target {
                    return Ok(AnalysisResult {
                        option_id: option.id,
                        class_id: r.class_id,
                        rank: Some(rank0 + 1),
                        membership: r.membership,
                        verification: r.verification,
                        verifications,
                        outliers,
                        fallback: false,
                    });
                }
            } else {
                outliers += 1;
            }
        }
    }

    // Nothing matched: take the strongest member of the best ranked class
    // that has any verified member, else the strongest point overall.
    let scanned: Vec<(u16, StoredResult)> = order.iter().map(|o| (o.id, lookup(kb, o, &mut verifications))).collect();
    let best_in = |pred: &dyn Fn(&StoredResult) -> bool| {
        scanned
            .iter()
            .filter(|(_, r)| pred(r))
            .fold(None::<&(u16, StoredResult)>, |acc, x| match acc {
                Some(a) if a.1.membership >= x.1.membership => Some(a),
                _ => Some(x),
            })
            .copied()
    };
    let (option_id, r, rank) = preference
        .ranking
        .iter()
        .enumerate()
        .find_map(|(i, c)| best_in(&|r| r.class_id == *c).map(|(id, r)| (id, r, Some(i + 1))))
        .or_else(|| best_in(&|_| true).map(|(id, r)| (id, r, None)))
        .expect("options are nonempty");
    Ok(AnalysisResult {
        option_id,
        class_id: r.class_id,
        rank,
        membership: r.membership,
        verification: r.verification,
        verifications,
        outliers,
        fallback: true,
    })
}

/// Configuration running on the managed network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfiguration {
    pub option_id: u16,
    pub splits: BTreeMap<MoteId, Split>,
    pub power: BTreeMap<MoteId, u8>,
}

/// Managed-system side of the loop: holds whatever configuration was last
/// applied.
#[derive(Clone, Debug, Default)]
pub struct ManagedNetwork {
    active: Option<NetworkConfiguration>,
    applied: u64,
}

impl ManagedNetwork {
    pub fn active(&self) -> Option<&NetworkConfiguration> {
        self.active.as_ref()
    }

    /// Number of configurations applied so far.
    pub fn applied_count(&self) -> u64 {
        self.applied
    }
}

/// Applies the analysed option and the cycle's power settings. Fallback
/// results are applied like any other.
pub fn plan_and_execute(
    result: &AnalysisResult,
    options: &[AdaptationOption],
    power: &PowerAssignment,
    topology: &Topology,
    network: &mut ManagedNetwork,
) -> Result<NetworkConfiguration> {
    let option = options
        .iter()
        .find(|o| o.id == result.option_id)
        .ok_or_else(|| invalid_input(format!("option {} is not in the adaptation space", result.option_id)))?;
    let config =
        NetworkConfiguration { option_id: option.id, splits: option.splits.clone(), power: power.by_mote(topology) };
    network.active = Some(config.clone());
    network.applied += 1;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianComponent;
    use crate::sim::{enumerate_options, TopologyConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn options() -> Vec<AdaptationOption> {
        enumerate_options(&Topology::new(&TopologyConfig::delta_iot()).unwrap()).unwrap()
    }

    fn uncs() -> UncertaintySample {
        UncertaintySample { cycle: 1, snr: vec![1.0; 19], load: vec![10.0; 15] }
    }

    fn unit(mean: [f64; 2], id: u32, weight: f64) -> GaussianComponent {
        GaussianComponent::new(mean, [[1.0, 0.0], [0.0, 1.0]], weight, 100, ClassId(id))
    }

    fn kb(components: Vec<GaussianComponent>, ranking: &[u32]) -> KnowledgeBase {
        KnowledgeBase::new(
            GmmModel::new(components),
            PreferenceModel::new(ranking.iter().map(|i| ClassId(*i)).collect()).unwrap(),
        )
    }

    #[test]
    fn single_class_selects_the_first_scanned_option() {
        let mut k = kb(vec![unit([0.0, 0.0], 0, 1.0)], &[0]);
        let opts = options();
        let mut calls = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = analyse(&mut k, &opts, &uncs(), 1, &AnalysisConfig::default(), &mut rng, |_| {
            calls += 1;
            QualityPoint::new(0.0, 0.0)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(r.verifications, 1);
        let mut expected: Vec<&AdaptationOption> = opts.iter().collect();
        expected.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(r.option_id, expected[0].id);
        assert!(!r.fallback);
    }

    #[test]
    fn cached_keys_are_not_verified_again() {
        let mut k = kb(vec![unit([0.0, 0.0], 0, 1.0)], &[0]);
        let opts = options();
        let u = uncs();
        let mut first: Vec<&AdaptationOption> = opts.iter().collect();
        first.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        k.insert_result(
            ResultKey { cycle: 4, digest: u.digest(), option_id: first[0].id },
            StoredResult { verification: QualityPoint::new(0.0, 0.0), class_id: ClassId(0), membership: 1.0 },
        );
        let mut calls = 0;
        let r = analyse(&mut k, &opts, &u, 4, &AnalysisConfig::default(), &mut ChaCha8Rng::seed_from_u64(9), |_| {
            calls += 1;
            QualityPoint::new(0.0, 0.0)
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(r.option_id, first[0].id);
    }

    #[test]
    fn outlier_counter_admits_the_eleventh_point() {
        // Class 0 far away; class 1 at the origin is ranked first but the
        // first ten scanned options land far from both.
        let mut k = kb(vec![unit([100.0, 100.0], 0, 0.5), unit([0.0, 0.0], 1, 0.5)], &[1, 0]);
        let opts = options();
        let mut order: Vec<&AdaptationOption> = opts.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let position: BTreeMap<u16, usize> = order.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
        let r =
            analyse(&mut k, &opts, &uncs(), 1, &AnalysisConfig::default(), &mut ChaCha8Rng::seed_from_u64(5), |o| {
                if position[&o.id] < 10 {
                    QualityPoint::new(50.0, -50.0)
                } else {
                    QualityPoint::new(0.5, 0.0)
                }
            })
            .unwrap();
        assert_eq!(r.option_id, order[10].id);
        assert_eq!(r.outliers, 10);
        assert_eq!(r.rank, Some(1));
    }

    #[test]
    fn fallback_picks_the_strongest_member_of_the_best_class() {
        // Everything is an outlier and the counter never admits.
        let mut k = kb(vec![unit([0.0, 0.0], 0, 0.5), unit([30.0, 0.0], 1, 0.5)], &[0, 1]);
        let opts = options();
        let cfg = AnalysisConfig::exhaustive();
        let r = analyse(&mut k, &opts, &uncs(), 1, &cfg, &mut ChaCha8Rng::seed_from_u64(1), |o| {
            QualityPoint::new(5.0 + f64::from(o.id % 7), 0.0)
        })
        .unwrap();
        assert!(r.fallback);
        assert_eq!(r.class_id, ClassId(0));
        assert_eq!(r.verification.packet_loss, 5.0);
        assert_eq!(r.verifications, opts.len());
    }

    #[test]
    fn empty_options_are_rejected() {
        let mut k = kb(vec![unit([0.0, 0.0], 0, 1.0)], &[0]);
        let err =
            analyse(&mut k, &[], &uncs(), 1, &AnalysisConfig::default(), &mut ChaCha8Rng::seed_from_u64(1), |_| {
                QualityPoint::new(0.0, 0.0)
            });
        assert!(err.is_err());
    }

    #[test]
    fn pruning_keeps_the_boundary_cycle() {
        let mut k = kb(vec![unit([0.0, 0.0], 0, 1.0)], &[0]);
        let r = StoredResult { verification: QualityPoint::new(0.0, 0.0), class_id: ClassId(0), membership: 1.0 };
        for cycle in [1, 2, 500] {
            k.insert_result(ResultKey { cycle, digest: 7, option_id: 3 }, r);
        }
        k.prune_results(500);
        assert_eq!(k.result_count(), 3);
        k.prune_results(1002);
        assert_eq!(k.results_for_cycle(1).count(), 0);
        assert_eq!(k.results_for_cycle(2).count(), 1);
    }

    #[test]
    fn execution_applies_option_and_power() {
        let t = Topology::new(&TopologyConfig::delta_iot()).unwrap();
        let opts = options();
        let power = PowerAssignment(vec![3; t.motes().len()]);
        let mut net = ManagedNetwork::default();
        let mut result = AnalysisResult {
            option_id: 0,
            class_id: ClassId(0),
            rank: Some(1),
            membership: 1.0,
            verification: QualityPoint::new(0.0, 0.0),
            verifications: 1,
            outliers: 0,
            fallback: false,
        };
        let a = plan_and_execute(&result, &opts, &power, &t, &mut net).unwrap();
        assert_eq!(a.splits, opts[0].splits);
        let b = plan_and_execute(&result, &opts, &power, &t, &mut net).unwrap();
        assert_eq!(a, b);
        result.fallback = true;
        result.option_id = 7;
        let c = plan_and_execute(&result, &opts, &power, &t, &mut net).unwrap();
        assert_eq!(net.active(), Some(&c));
        assert_eq!(c.splits, opts[7].splits);
        assert_eq!(net.applied_count(), 3);
    }
}
