//! Options, uncertainties, power settings and the expected-flow quality model.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::topology::{MoteId, Topology};
use crate::error::{Error, Result};

/// Number of distribution settings per configurable mote.
pub const SPLIT_LEVELS: u8 = 6;

/// Share of a two-parent mote's traffic sent over its first parent link, in
/// steps of 20 %. Serialized as that percentage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Split(u8);

impl Split {
    pub fn new(level: u8) -> Option<Self> {
        (level < SPLIT_LEVELS).then_some(Self(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn first_share(self) -> f64 {
        f64::from(self.0) / f64::from(SPLIT_LEVELS - 1)
    }

    pub fn percent(self) -> u8 {
        self.0 * 20
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.percent(), 100 - self.percent())
    }
}

impl Serialize for Split {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.percent())
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pct = u8::deserialize(d)?;
        if pct % 20 != 0 || pct > 100 {
            return Err(serde::de::Error::custom(format!("split {pct} is not a multiple of 20 in 0..=100")));
        }
        Ok(Split(pct / 20))
    }
}

/// One network configuration: a split for every two-parent mote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationOption {
    pub id: u16,
    pub splits: BTreeMap<MoteId, Split>,
}

/// All `6^4` options, ordered lexicographically by (mote id, split level)
/// with the lowest mote id most significant.
pub fn enumerate_options(topology: &Topology) -> Result<Vec<AdaptationOption>> {
    let motes = topology.configurable_motes();
    if motes.len() != 4 {
        return Err(Error::InvalidTopology(format!(
            "expected exactly 4 motes with two parents, found {}",
            motes.len()
        )));
    }
    let levels = usize::from(SPLIT_LEVELS);
    let total = levels.pow(motes.len() as u32);
    Ok((0..total)
        .map(|id| {
            let mut rest = id;
            let mut splits = BTreeMap::new();
            for mote in motes.iter().rev() {
                splits.insert(*mote, Split((rest % levels) as u8));
                rest /= levels;
            }
            AdaptationOption { id: id as u16, splits }
        })
        .collect())
}

/// SNR per link (aligned with `Topology::links`) and load per mote (aligned
/// with `Topology::motes`) for one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySample {
    pub cycle: u32,
    pub snr: Vec<f64>,
    pub load: Vec<f64>,
}

impl UncertaintySample {
    /// Hash of the sample quantized to 0.01; equal samples share a digest.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let quantize = |v: f64| (v * 100.0).round() as i64;
        self.snr.len().hash(&mut h);
        for v in &self.snr {
            quantize(*v).hash(&mut h);
        }
        self.load.len().hash(&mut h);
        for v in &self.load {
            quantize(*v).hash(&mut h);
        }
        h.finish()
    }

    pub fn mean_snr(&self) -> f64 {
        if self.snr.is_empty() {
            0.0
        } else {
            self.snr.iter().sum::<f64>() / self.snr.len() as f64
        }
    }

    pub fn total_load(&self) -> f64 {
        self.load.iter().sum()
    }
}

/// Transmission power per mote (aligned with `Topology::motes`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerAssignment(pub Vec<u8>);

impl PowerAssignment {
    pub fn by_mote(&self, topology: &Topology) -> BTreeMap<MoteId, u8> {
        topology.motes().iter().copied().zip(self.0.iter().copied()).collect()
    }
}

/// Lowest power at which every outgoing link of a mote reaches 0 dB, or the
/// maximum when no setting does.
pub fn assign_power(topology: &Topology, uncs: &UncertaintySample, gain_db: f64, max_power: u8) -> PowerAssignment {
    const SLACK: f64 = 1e-9;
    let power = topology
        .motes()
        .iter()
        .map(|m| {
            let worst = topology.outgoing(*m).iter().map(|&l| uncs.snr[l]).fold(f64::INFINITY, f64::min);
            (0..=max_power).find(|p| worst + gain_db * f64::from(*p) >= -SLACK).unwrap_or(max_power)
        })
        .collect();
    PowerAssignment(power)
}

/// Per-link delivery probability for an effective SNR.
pub fn delivery_probability(snr_eff: f64, window: [f64; 2]) -> f64 {
    ((snr_eff - window[0]) / (window[1] - window[0])).clamp(0.0, 1.0)
}

/// Expected packet counts and charge of one cycle under one option.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub generated: f64,
    pub delivered: f64,
    pub lost: f64,
    /// Charge spent on transmissions, in mC.
    pub energy: f64,
}

impl FlowSummary {
    pub fn packet_loss(&self) -> f64 {
        if self.generated > 0.0 {
            (100.0 * (1.0 - self.delivered / self.generated)).clamp(0.0, 100.0)
        } else {
            0.0
        }
    }
}

/// Propagates expected traffic from the leaves to the gateway. Every packet
/// a mote holds is transmitted once; a two-parent mote splits it per the
/// option and a lost packet is not forwarded.
pub fn expected_flow(
    topology: &Topology,
    config: &SimConfig,
    uncs: &UncertaintySample,
    power: &PowerAssignment,
    option: &AdaptationOption,
) -> FlowSummary {
    let motes = topology.motes();
    let mut received = vec![0.0; motes.len()];
    let mut summary = FlowSummary { generated: 0.0, delivered: 0.0, lost: 0.0, energy: 0.0 };
    for &mote in topology.flow_order() {
        let i = topology.mote_index(mote).expect("flow order lists motes");
        let held = uncs.load[i] + received[i];
        summary.generated += uncs.load[i];
        let p = power.0[i];
        summary.energy += held * (config.energy.per_packet + config.energy.per_power_step * f64::from(p));
        let links = topology.outgoing(mote);
        let first_share = match links.len() {
            1 => 1.0,
            _ => option.splits.get(&mote).map_or(1.0, |s| s.first_share()),
        };
        for (k, &l) in links.iter().enumerate() {
            let share = if k == 0 { first_share } else { 1.0 - first_share };
            if share == 0.0 {
                continue;
            }
            let sent = held * share;
            let d = delivery_probability(uncs.snr[l] + config.power_gain_db * f64::from(p), config.delivery_window_db);
            let ok = sent * d;
            summary.lost += sent - ok;
            let parent = topology.links()[l].to;
            if parent == topology.gateway() {
                summary.delivered += ok;
            } else {
                received[topology.mote_index(parent).expect("parent is a mote")] += ok;
            }
        }
    }
    summary
}
