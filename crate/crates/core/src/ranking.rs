//! Stakeholder preference orders and the lexicographic class ranking they
//! induce on component means.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error};
use crate::gmm::{ClassId, GmmModel, Vec2};

/// Differences on the leading axis up to this value count as ties.
pub const TIE_TOLERANCE: f64 = 0.5;

/// Which quality the stakeholders care about first. Both are minimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PreferenceOrder {
    #[serde(rename = "pl-ec")]
    PacketLossFirst,
    #[serde(rename = "ec-pl")]
    EnergyFirst,
}

impl PreferenceOrder {
    pub const ALL: [PreferenceOrder; 2] = [PreferenceOrder::PacketLossFirst, PreferenceOrder::EnergyFirst];

    /// Axis indices into `[packet_loss, energy]`, leading axis first.
    pub fn axes(self) -> [usize; 2] {
        match self {
            PreferenceOrder::PacketLossFirst => [0, 1],
            PreferenceOrder::EnergyFirst => [1, 0],
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            PreferenceOrder::PacketLossFirst => "pl-ec",
            PreferenceOrder::EnergyFirst => "ec-pl",
        }
    }
}

impl fmt::Display for PreferenceOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreferenceOrder::PacketLossFirst => f.write_str("<less packet loss, less energy>"),
            PreferenceOrder::EnergyFirst => f.write_str("<less energy, less packet loss>"),
        }
    }
}

impl FromStr for PreferenceOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "pl-ec" | "pl,ec" | "pl" => Ok(PreferenceOrder::PacketLossFirst),
            "ec-pl" | "ec,pl" | "ec" => Ok(PreferenceOrder::EnergyFirst),
            other => Err(invalid_input(format!("unknown preference order {other:?}, expected pl-ec or ec-pl"))),
        }
    }
}

/// Sorts classes best first. Means are ordered on the leading axis; a class
/// whose leading value lies within [`TIE_TOLERANCE`] of the first class of
/// the current tie group joins that group, and groups are ordered internally
/// on the second axis. Anchoring on the group's first member keeps the
/// relation transitive.
pub fn rank_means(means: &[(ClassId, Vec2)], order: PreferenceOrder) -> Vec<ClassId> {
    let [a, b] = order.axes();
    let cmp = |x: &(ClassId, Vec2), y: &(ClassId, Vec2)| -> Ordering {
        x.1[a].total_cmp(&y.1[a]).then(x.1[b].total_cmp(&y.1[b])).then(x.0.cmp(&y.0))
    };
    let mut sorted: Vec<(ClassId, Vec2)> = means.to_vec();
    sorted.sort_by(cmp);

    let mut groups: Vec<Vec<(ClassId, Vec2)>> = Vec::new();
    for item in sorted {
        match groups.last_mut() {
            Some(g) if item.1[a] - g[0].1[a] <= TIE_TOLERANCE => g.push(item),
            _ => groups.push(vec![item]),
        }
    }
    groups
        .into_iter()
        .flat_map(|mut g| {
            g.sort_by(|x, y| x.1[b].total_cmp(&y.1[b]).then(x.1[a].total_cmp(&y.1[a])).then(x.0.cmp(&y.0)));
            g.into_iter().map(|(id, _)| id)
        })
        .collect()
}

/// Ranking of every class in `model` by its component mean.
pub fn rank_model(model: &GmmModel, order: PreferenceOrder) -> Vec<ClassId> {
    let means: Vec<(ClassId, Vec2)> = model.components.iter().map(|c| (c.class_id, c.mean)).collect();
    rank_means(&means, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|i| ClassId(*i)).collect()
    }

    #[test]
    fn packet_loss_first() {
        let means = [(ClassId(1), [10.0, 14.9]), (ClassId(2), [30.0, 13.2])];
        assert_eq!(rank_means(&means, PreferenceOrder::PacketLossFirst), ids(&[1, 2]));
        assert_eq!(rank_means(&means, PreferenceOrder::EnergyFirst), ids(&[2, 1]));
    }

    #[test]
    fn near_ties_fall_back_to_the_second_axis() {
        let means = [(ClassId(1), [10.4, 14.9]), (ClassId(2), [10.0, 13.2]), (ClassId(3), [10.2, 13.0])];
        assert_eq!(rank_means(&means, PreferenceOrder::PacketLossFirst), ids(&[3, 2, 1]));
        // 10.6 is more than 0.5 above the anchor 10.0 even though it is close to 10.4.
        let chained = [(ClassId(1), [10.0, 15.0]), (ClassId(2), [10.4, 14.0]), (ClassId(3), [10.8, 13.0])];
        assert_eq!(rank_means(&chained, PreferenceOrder::PacketLossFirst), ids(&[2, 1, 3]));
    }

    #[test]
    fn order_parses() {
        assert_eq!("pl-ec".parse::<PreferenceOrder>().unwrap(), PreferenceOrder::PacketLossFirst);
        assert_eq!("ec,pl".parse::<PreferenceOrder>().unwrap(), PreferenceOrder::EnergyFirst);
        assert!("energy".parse::<PreferenceOrder>().is_err());
        assert_eq!(serde_json::to_string(&PreferenceOrder::EnergyFirst).unwrap(), "\"ec-pl\"");
    }
}
