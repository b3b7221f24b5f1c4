use std::path::Path;

use serde::{Deserialize, Serialize};

use super::regime::Group;
use super::topology::TopologyConfig;
use crate::error::{invalid_input, Result};

/// `q' = offset + scale ⊙ q`, per axis (packet loss, energy).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform { offset: [0.0, 0.0], scale: [1.0, 1.0] };

    /// Maps `reference` onto `center`, shrinking deviations by `scale`.
    pub fn centered(center: [f64; 2], scale: [f64; 2], reference: [f64; 2]) -> Self {
        Self { offset: [center[0] - scale[0] * reference[0], center[1] - scale[1] * reference[1]], scale }
    }

    pub fn apply(&self, q: [f64; 2]) -> [f64; 2] {
        [self.offset[0] + self.scale[0] * q[0], self.offset[1] + self.scale[1] * q[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub name: String,
    /// Fraction of the group's options that land in this cluster.
    pub share: f64,
    pub transform: AffineTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub group: Group,
    /// Fraction of all options whose home is this group.
    pub share: f64,
    /// Added to the interference mean (dB) in proportion to the group's level.
    #[serde(default)]
    pub interference_shift: f64,
    /// Relative change of the load range in proportion to the group's level.
    #[serde(default)]
    pub load_shift: f64,
    pub classes: Vec<ClusterConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Charge per transmitted packet at power 0, in mC.
    pub per_packet: f64,
    /// Extra charge per packet and power step, in mC.
    pub per_power_step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    /// Packets generated per mote and cycle, drawn uniformly from `[min, max]`.
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceModel {
    pub mean: f64,
    pub std_dev: f64,
}

/// Network and drift calibration. Every field can be overridden from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    /// SNR gain per transmission power step, in dB.
    pub power_gain_db: f64,
    pub max_power: u8,
    /// Effective SNR range over which delivery probability rises from 0 to 1.
    pub delivery_window_db: [f64; 2],
    pub energy: EnergyModel,
    pub load: LoadModel,
    pub interference: InterferenceModel,
    pub groups: Vec<GroupConfig>,
    /// Seeds the assignment of options to groups and clusters.
    pub assignment_seed: u64,
}

/// Typical untransformed quality of the default network, used to centre the
/// cluster transforms.
pub const REFERENCE_QUALITY: [f64; 2] = [11.0, 14.2];

impl Default for SimConfig {
    fn default() -> Self {
        let cluster = |name: &str, pl: f64, ec: f64| ClusterConfig {
            name: name.into(),
            share: 0.5,
            transform: AffineTransform::centered([pl, ec], [0.35, 0.25], REFERENCE_QUALITY),
        };
        let group =
            |group, classes| GroupConfig { group, share: 1.0 / 3.0, interference_shift: 0.1, load_shift: 0.0, classes };
        Self {
            topology: TopologyConfig::delta_iot(),
            power_gain_db: 0.6,
            max_power: 15,
            delivery_window_db: [-5.0, 5.0],
            energy: EnergyModel { per_packet: 0.030, per_power_step: 0.0015 },
            load: LoadModel { min: 12.0, max: 18.0 },
            interference: InterferenceModel { mean: 2.0, std_dev: 1.0 },
            groups: vec![
                group(Group::B, vec![cluster("B1", 50.0, 13.4), cluster("B2", 75.0, 13.4)]),
                group(Group::R, vec![cluster("R1", 18.0, 14.65), cluster("R2", 45.0, 14.65)]),
                group(Group::G, vec![cluster("G1", 4.0, 15.6), cluster("G2", 30.0, 15.6)]),
            ],
            assignment_seed: 0x5eed,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The same network with every cluster transform replaced by the identity.
    pub fn identity_transforms(mut self) -> Self {
        for g in &mut self.groups {
            for c in &mut g.classes {
                c.transform = AffineTransform::IDENTITY;
            }
        }
        self
    }

    pub fn group(&self, group: Group) -> Option<&GroupConfig> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_gain_db > 0.0) {
            return Err(invalid_input("power gain must be positive"));
        }
        let [lo, hi] = self.delivery_window_db;
        if !(hi > lo) {
            return Err(invalid_input("delivery window must be increasing"));
        }
        if !(self.load.min >= 0.0 && self.load.max >= self.load.min) {
            return Err(invalid_input("load range must satisfy 0 <= min <= max"));
        }
        if !(self.interference.std_dev >= 0.0) || !self.interference.mean.is_finite() {
            return Err(invalid_input("interference needs a finite mean and non-negative deviation"));
        }
        if !(self.energy.per_packet > 0.0 && self.energy.per_power_step >= 0.0) {
            return Err(invalid_input("energy constants must be positive"));
        }
        if self.groups.is_empty() {
            return Err(invalid_input("at least one group is required"));
        }
        let mut seen = Vec::new();
        for g in &self.groups {
            if seen.contains(&g.group) {
                return Err(invalid_input(format!("group {} configured twice", g.group)));
            }
            seen.push(g.group);
            if !(g.share > 0.0) || g.classes.is_empty() {
                return Err(invalid_input(format!("group {} needs a positive share and a class", g.group)));
            }
            if g.classes.iter().any(|c| !(c.share > 0.0)) {
                return Err(invalid_input(format!("group {} has a class without share", g.group)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = SimConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg = SimConfig::from_json(r#"{"power_gain_db": 1.0}"#).unwrap();
        assert_eq!(cfg.power_gain_db, 1.0);
        assert_eq!(cfg.max_power, 15);
    }

    #[test]
    fn centered_transform_maps_reference_to_center() {
        let t = AffineTransform::centered([50.0, 13.4], [0.3, 0.2], REFERENCE_QUALITY);
        let q = t.apply(REFERENCE_QUALITY);
        assert!((q[0] - 50.0).abs() < 1e-12 && (q[1] - 13.4).abs() < 1e-12);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SimConfig::from_json(r#"{"delivery_window_db": [5.0, -5.0]}"#).is_err());
        assert!(SimConfig::from_json(r#"{"groups": []}"#).is_err());
    }
}
