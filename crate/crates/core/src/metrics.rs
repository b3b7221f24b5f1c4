//! Utility, ranking satisfaction, the ideal-classifier baseline and the
//! Mann-Whitney effect statistic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::gmm::{fit_gmm, ClassId, GmmModel, Vec2};
use crate::ranking::{rank_model, PreferenceOrder};
use crate::sim::{QualityPoint, TruthClass};

/// Weighted sum of per-quality preference curves. Packet loss is scored
/// linearly from 1 at 0 % to 0 at 100 %; energy is a three-level step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub w_pl: f64,
    pub w_ec: f64,
    /// Energy below `ec_low` scores 1, above `ec_high` scores 0.
    pub ec_low: f64,
    pub ec_high: f64,
    pub ec_medium: f64,
}

impl Default for UtilityModel {
    fn default() -> Self {
        Self { w_pl: 0.8, w_ec: 0.2, ec_low: 14.5, ec_high: 15.0, ec_medium: 0.5 }
    }
}

impl UtilityModel {
    /// The leading quality of the preference order gets the larger weight.
    pub fn for_preference(order: PreferenceOrder) -> Self {
        let base = Self::default();
        match order {
            PreferenceOrder::PacketLossFirst => base,
            PreferenceOrder::EnergyFirst => Self { w_pl: base.w_ec, w_ec: base.w_pl, ..base },
        }
    }

    pub fn packet_loss_score(&self, pl: f64) -> f64 {
        (1.0 - pl / 100.0).clamp(0.0, 1.0)
    }

    pub fn energy_score(&self, ec: f64) -> f64 {
        if ec < self.ec_low {
            1.0
        } else if ec <= self.ec_high {
            self.ec_medium
        } else {
            0.0
        }
    }

    pub fn utility(&self, q: QualityPoint) -> f64 {
        self.w_pl * self.packet_loss_score(q.packet_loss) + self.w_ec * self.energy_score(q.energy)
    }
}

/// Utility under the default weights (packet loss 0.8, energy 0.2).
pub fn utility(q: QualityPoint) -> f64 {
    UtilityModel::default().utility(q)
}

/// Mean rank displacement of `r` against `r_star`, normalized by the worst
/// possible displacement `m - 1`.
pub fn rsm(r: &[usize], r_star: &[usize], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(invalid_input("RSM needs at least two ranked classes"));
    }
    if r.is_empty() || r.len() != r_star.len() {
        return Err(invalid_input("RSM needs equally long, nonempty rank lists"));
    }
    if r.iter().chain(r_star).any(|x| *x < 1 || *x > m) {
        return Err(invalid_input(format!("ranks must lie in 1..={m}")));
    }
    let total: f64 = r.iter().zip(r_star).map(|(a, b)| *a as f64 - *b as f64).sum();
    Ok(total / (r.len() as f64 * (m - 1) as f64))
}

/// RSM over consecutive windows of `n` cycles. A trailing partial window is
/// scored over its own length.
pub fn rsm_windows(r: &[usize], r_star: &[usize], m: usize, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid_input("window length must be positive"));
    }
    if r.len() != r_star.len() {
        return Err(invalid_input("rank lists differ in length"));
    }
    r.chunks(n).zip(r_star.chunks(n)).map(|(a, b)| rsm(a, b, m)).collect()
}

/// Probability that a draw from `a` exceeds one from `b`, ties counting one
/// half: the Mann-Whitney U of `a` divided by `|a|·|b|`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid_input("Mann-Whitney U needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid_input("samples must not contain NaN"));
    }
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|x| (*x, true)).chain(b.iter().map(|x| (*x, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their midrank.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_a += midrank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let u = rank_sum_a - na * (na + 1.0) / 2.0;
    Ok(u / (na * nb))
}

/// Exhaustive verification of every option in one cycle, with the cluster
/// that generated each point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedCycle {
    pub cycle: u32,
    pub qualities: Vec<QualityPoint>,
    pub truths: Vec<TruthClass>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveArchive {
    pub option_count: usize,
    pub cycles: Vec<ArchivedCycle>,
}

impl ExhaustiveArchive {
    pub fn validate(&self) -> Result<()> {
        if self.cycles.is_empty() {
            return Err(invalid_input("archive holds no cycles"));
        }
        for (i, c) in self.cycles.iter().enumerate() {
            if c.cycle as usize != i + 1 {
                return Err(invalid_input(format!("archive cycle {} out of sequence at position {i}", c.cycle)));
            }
            if c.qualities.len() != self.option_count || c.truths.len() != self.option_count {
                return Err(invalid_input(format!(
                    "cycle {} covers {} of {} options",
                    c.cycle,
                    c.qualities.len(),
                    self.option_count
                )));
            }
        }
        Ok(())
    }
}

/// Classifier built from ground-truth labels, with the best achievable rank
/// in every cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealBaseline {
    /// One component per observed cluster; class id = truth id.
    pub model: GmmModel,
    pub ranking: Vec<ClassId>,
    pub ideal_ranks: Vec<usize>,
}

impl IdealBaseline {
    pub fn class_count(&self) -> usize {
        self.ranking.len()
    }

    /// 1-based rank of a ground-truth cluster.
    pub fn rank_of(&self, truth: TruthClass) -> Option<usize> {
        let id = ClassId(u32::from(truth.0));
        self.ranking.iter().position(|c| *c == id).map(|p| p + 1)
    }

    pub fn ideal_rank(&self, cycle: u32) -> Option<usize> {
        self.ideal_ranks.get((cycle as usize).checked_sub(1)?).copied()
    }
}

/// Fits one Gaussian per ground-truth cluster over the whole archive, ranks
/// them by `order`, and records the best rank present in each cycle.
pub fn build_ideal_baseline(archive: &ExhaustiveArchive, order: PreferenceOrder, seed: u64) -> Result<IdealBaseline> {
    archive.validate()?;
    let mut by_truth: BTreeMap<TruthClass, Vec<Vec2>> = BTreeMap::new();
    for c in &archive.cycles {
        for (q, t) in c.qualities.iter().zip(&c.truths) {
            by_truth.entry(*t).or_default().push(q.to_vec());
        }
    }
    let total: usize = by_truth.values().map(Vec::len).sum();
    let mut components = Vec::with_capacity(by_truth.len());
    for (truth, points) in &by_truth {
        let mut c = fit_gmm(points, 1, seed)?.components.remove(0);
        c.class_id = ClassId(u32::from(truth.0));
        c.weight = points.len() as f64 / total as f64;
        components.push(c);
    }
    let model = GmmModel::new(components);
    let ranking = rank_model(&model, order);
    let rank: BTreeMap<TruthClass, usize> = by_truth
        .keys()
        .map(|t| (*t, ranking.iter().position(|c| c.0 == u32::from(t.0)).expect("every cluster is ranked") + 1))
        .collect();
    let ideal_ranks = archive
        .cycles
        .iter()
        .map(|c| c.truths.iter().map(|t| rank[t]).min().expect("validated nonempty cycle"))
        .collect();
    Ok(IdealBaseline { model, ranking, ideal_ranks })
}
