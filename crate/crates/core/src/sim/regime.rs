use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

/// A group of classes in the quality plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    B,
    R,
    G,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::B, Group::R, Group::G];
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::B => "B",
            Group::R => "R",
            Group::G => "G",
        })
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "B" | "b" => Ok(Group::B),
            "R" | "r" => Ok(Group::R),
            "G" | "g" => Ok(Group::G),
            other => Err(invalid_input(format!("unknown group {other:?}"))),
        }
    }
}

/// Order in which groups become visible. `known` groups are active from the
/// first cycle; `later` groups appear one after another.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AppearanceOrder {
    pub known: Vec<Group>,
    pub later: Vec<Group>,
}

impl AppearanceOrder {
    pub fn new(known: Vec<Group>, later: Vec<Group>) -> Result<Self> {
        let order = Self { known, later };
        order.validate()?;
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.known.is_empty() {
            return Err(invalid_input("at least one group must be known before deployment"));
        }
        let mut all: Vec<Group> = self.known.iter().chain(&self.later).copied().collect();
        all.sort();
        let n = all.len();
        all.dedup();
        if all.len() != n {
            return Err(invalid_input(format!("group listed twice in {self}")));
        }
        Ok(())
    }

    /// The six orders evaluated in the scenario matrix.
    pub fn all() -> Vec<AppearanceOrder> {
        use Group::*;
        [
            (vec![B], vec![R, G]),
            (vec![B], vec![G, R]),
            (vec![R], vec![B, G]),
            (vec![R], vec![G, B]),
            (vec![B, R], vec![G]),
            (vec![B, G], vec![R]),
        ]
        .into_iter()
        .map(|(known, later)| AppearanceOrder { known, later })
        .collect()
    }

    /// Compact label without brackets or commas, usable in file names.
    pub fn slug(&self) -> String {
        let known: String = self.known.iter().map(Group::to_string).collect();
        let later: String = self.later.iter().map(Group::to_string).collect();
        if later.is_empty() {
            known
        } else {
            format!("{known}-{later}")
        }
    }
}

impl fmt::Display for AppearanceOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let known: Vec<String> = self.known.iter().map(Group::to_string).collect();
        write!(f, "({})", known.join(","))?;
        for g in &self.later {
            write!(f, ",{g}")?;
        }
        Ok(())
    }
}

impl FromStr for AppearanceOrder {
    type Err = Error;

    /// Parses `(B),R,G` or `(B,R),G`.
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let s = s.trim_start_matches('<').trim_end_matches('>');
        let rest =
            s.strip_prefix('(').ok_or_else(|| invalid_input(format!("appearance order {s:?} must start with '('")))?;
        let (known, later) = rest.split_once(')').ok_or_else(|| invalid_input(format!("unclosed bracket in {s:?}")))?;
        let parse_list =
            |text: &str| -> Result<Vec<Group>> { text.split(',').filter(|t| !t.is_empty()).map(str::parse).collect() };
        AppearanceOrder::new(parse_list(known)?, parse_list(later)?)
    }
}

impl Serialize for AppearanceOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AppearanceOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u32,
    pub end: u32,
    pub groups: Vec<Group>,
    /// Groups added by this segment fade in linearly over its length.
    #[serde(default)]
    pub ramp: bool,
}

/// Contiguous, non-overlapping cover of cycles `1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub segments: Vec<Segment>,
}

/// The state of the environment in one cycle: how far each group has
/// appeared (0 = absent, 1 = fully present).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub cycle: u32,
    pub levels: BTreeMap<Group, f64>,
    /// Groups present from the first cycle. Options whose own group is not
    /// (yet) present report qualities from one of these.
    pub initial: Vec<Group>,
}

impl Regime {
    pub fn level(&self, group: Group) -> f64 {
        self.levels.get(&group).copied().unwrap_or(0.0)
    }

    /// Groups with a positive level, ascending.
    pub fn active_groups(&self) -> Vec<Group> {
        self.levels.iter().filter(|(_, l)| **l > 0.0).map(|(g, _)| *g).collect()
    }
}

/// Length of one phase in the default timelines.
const SETTLE_END: u32 = 140;
const RAMP_LEN: u32 = 20;
const SECOND_ARRIVAL: u32 = 241;

impl RegimeSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let schedule = Self { segments };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.segments.first().ok_or_else(|| invalid_input("schedule has no segments"))?;
        if first.start != 1 {
            return Err(invalid_input("schedule must start at cycle 1"));
        }
        if first.ramp {
            return Err(invalid_input("the first segment cannot ramp"));
        }
        if first.groups.is_empty() {
            return Err(invalid_input("the first segment needs at least one group"));
        }
        let mut expected = 1;
        for seg in &self.segments {
            if seg.start != expected {
                return Err(invalid_input(format!(
                    "segment starting at {} leaves a gap or overlap (expected {expected})",
                    seg.start
                )));
            }
            if seg.end < seg.start {
                return Err(invalid_input(format!("segment {}..{} is empty", seg.start, seg.end)));
            }
            let mut sorted = seg.groups.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != seg.groups.len() {
                return Err(invalid_input(format!("segment {} lists a group twice", seg.start)));
            }
            expected = seg.end + 1;
        }
        Ok(())
    }

    /// Default timeline for an appearance order. With one known group the
    /// next group ramps in over cycles 141–160 and the last over 241–260;
    /// with two known groups the remaining one ramps in over 241–260.
    pub fn for_order(order: &AppearanceOrder, cycles: u32) -> Result<Self> {
        order.validate()?;
        if cycles == 0 {
            return Err(invalid_input("a run needs at least one cycle"));
        }
        let mut present = order.known.clone();
        let mut segments = Vec::new();
        let arrivals: Vec<u32> = match order.later.len() {
            0 => vec![],
            1 => vec![SECOND_ARRIVAL],
            2 => vec![SETTLE_END + 1, SECOND_ARRIVAL],
            _ => unreachable!("at most three groups exist"),
        };
        let mut cursor = 1;
        for (group, start) in order.later.iter().zip(arrivals) {
            segments.push(Segment { start: cursor, end: start - 1, groups: present.clone(), ramp: false });
            present.push(*group);
            segments.push(Segment { start, end: start + RAMP_LEN - 1, groups: present.clone(), ramp: true });
            cursor = start + RAMP_LEN;
        }
        segments.push(Segment { start: cursor, end: u32::MAX, groups: present, ramp: false });

        // Clip to the run length.
        segments.retain(|s| s.start <= cycles);
        if let Some(last) = segments.last_mut() {
            last.end = last.end.min(cycles);
        }
        Self::new(segments)
    }

    pub fn cycles(&self) -> u32 {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn initial_groups(&self) -> &[Group] {
        &self.segments[0].groups
    }

    /// First cycle of the first ramp, i.e. the start of the drift period.
    pub fn first_ramp_start(&self) -> Option<u32> {
        self.segments.iter().find(|s| s.ramp).map(|s| s.start)
    }

    /// Every group that is present at some point of the schedule.
    pub fn all_groups(&self) -> Vec<Group> {
        let mut groups: Vec<Group> = self.segments.iter().flat_map(|s| s.groups.iter().copied()).collect();
        groups.sort();
        groups.dedup();
        groups
    }

    pub fn regime_at(&self, cycle: u32) -> Result<Regime> {
        let last = self.cycles();
        if cycle == 0 || cycle > last {
            return Err(Error::CycleOutOfRange { cycle, last });
        }
        let idx = self.segments.partition_point(|s| s.end < cycle);
        let seg = &self.segments[idx];
        let prev = idx.checked_sub(1).map(|i| &self.segments[i]);
        let progress = f64::from(cycle - seg.start + 1) / f64::from(seg.end - seg.start + 1);
        let levels = seg
            .groups
            .iter()
            .map(|g| {
                let new = prev.is_some_and(|p| !p.groups.contains(g));
                (*g, if seg.ramp && new { progress } else { 1.0 })
            })
            .collect();
        Ok(Regime { cycle, levels, initial: self.initial_groups().to_vec() })
    }
}
