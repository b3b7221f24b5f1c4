use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type MoteId = u16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: MoteId,
    pub to: MoteId,
    /// Signal-to-noise ratio before interference, in dB.
    pub base_snr: f64,
}

/// Serialized form of a topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub gateway: MoteId,
    pub links: Vec<LinkSpec>,
}

/// Gateway-rooted DAG of motes. Links are stored in the order given; each
/// mote's outgoing links keep that relative order, so the first listed parent
/// is the one that receives the left-hand share of a split.
#[derive(Clone, Debug)]
pub struct Topology {
    gateway: MoteId,
    motes: Vec<MoteId>,
    links: Vec<LinkSpec>,
    outgoing: BTreeMap<MoteId, Vec<usize>>,
    /// Motes ordered so that every mote precedes all of its parents.
    flow_order: Vec<MoteId>,
}

impl Topology {
    pub fn new(config: &TopologyConfig) -> Result<Self> {
        let gateway = config.gateway;
        let mut nodes: BTreeSet<MoteId> = BTreeSet::new();
        let mut outgoing: BTreeMap<MoteId, Vec<usize>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (i, l) in config.links.iter().enumerate() {
            if l.from == gateway {
                return Err(Error::InvalidTopology("the gateway cannot have outgoing links".into()));
            }
            if l.from == l.to {
                return Err(Error::InvalidTopology(format!("self-loop on mote {}", l.from)));
            }
            if !seen.insert((l.from, l.to)) {
                return Err(Error::InvalidTopology(format!("duplicate link {}->{}", l.from, l.to)));
            }
            if !l.base_snr.is_finite() {
                return Err(Error::InvalidTopology(format!("non-finite SNR on {}->{}", l.from, l.to)));
            }
            nodes.insert(l.from);
            nodes.insert(l.to);
            outgoing.entry(l.from).or_default().push(i);
        }
        nodes.remove(&gateway);
        let motes: Vec<MoteId> = nodes.into_iter().collect();
        for m in &motes {
            match outgoing.get(m).map_or(0, Vec::len) {
                0 => return Err(Error::InvalidTopology(format!("mote {m} has no parent link"))),
                1 | 2 => {}
                n => return Err(Error::InvalidTopology(format!("mote {m} has {n} parent links"))),
            }
        }

        // Kahn's algorithm on the reversed graph: a mote is ready once all
        // of its children have been placed.
        let mut pending_children: BTreeMap<MoteId, usize> = motes.iter().map(|m| (*m, 0)).collect();
        for l in &config.links {
            if l.to != gateway {
                *pending_children.get_mut(&l.to).expect("parent is a mote") += 1;
            }
        }
        let mut ready: Vec<MoteId> = pending_children.iter().filter(|(_, c)| **c == 0).map(|(m, _)| *m).collect();
        let mut flow_order = Vec::with_capacity(motes.len());
        while let Some(m) = ready.pop() {
            flow_order.push(m);
            for &li in &outgoing[&m] {
                let parent = config.links[li].to;
                if parent == gateway {
                    continue;
                }
                let c = pending_children.get_mut(&parent).unwrap();
                *c -= 1;
                if *c == 0 {
                    ready.push(parent);
                }
            }
            ready.sort_unstable_by(|a, b| b.cmp(a));
        }
        if flow_order.len() != motes.len() {
            return Err(Error::InvalidTopology("link graph contains a cycle".into()));
        }

        Ok(Self { gateway, motes, links: config.links.clone(), outgoing, flow_order })
    }

    pub fn gateway(&self) -> MoteId {
        self.gateway
    }

    pub fn motes(&self) -> &[MoteId] {
        &self.motes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn outgoing(&self, mote: MoteId) -> &[usize] {
        self.outgoing.get(&mote).map_or(&[], Vec::as_slice)
    }

    pub fn flow_order(&self) -> &[MoteId] {
        &self.flow_order
    }

    pub fn mote_index(&self, mote: MoteId) -> Option<usize> {
        self.motes.binary_search(&mote).ok()
    }

    /// Motes with two parent links, ascending.
    pub fn configurable_motes(&self) -> Vec<MoteId> {
        self.motes.iter().copied().filter(|m| self.outgoing(*m).len() == 2).collect()
    }

    pub fn to_config(&self) -> TopologyConfig {
        TopologyConfig { gateway: self.gateway, links: self.links.clone() }
    }
}

impl TopologyConfig {
    /// A 16-node layout in the spirit of DeltaIoT v1.1: gateway 1, motes
    /// 2..=16, with motes 7, 10, 11 and 12 each reporting to two parents.
    pub fn delta_iot() -> Self {
        let l = |from, to, base_snr| LinkSpec { from, to, base_snr };
        Self {
            gateway: 1,
            links: vec![
                l(2, 1, 9.0),
                l(3, 1, 8.0),
                l(4, 1, 10.0),
                l(5, 2, 7.0),
                l(6, 4, 8.0),
                l(7, 2, 10.0),
                l(7, 3, 4.5),
                l(8, 1, 9.0),
                l(9, 8, 7.5),
                l(10, 5, 5.5),
                l(10, 6, 9.5),
                l(11, 7, 9.0),
                l(11, 9, 3.0),
                l(12, 7, 4.0),
                l(12, 3, 9.5),
                l(13, 12, 8.0),
                l(14, 11, 7.0),
                l(15, 12, 6.0),
                l(16, 10, 7.5),
            ],
        }
    }
}
