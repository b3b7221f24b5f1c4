use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{ClassId, GmmModel};
use crate::mapek::{KnowledgeBase, PreferenceModel, RETENTION_CYCLES};
use crate::sim::QualityPoint;

/// One verified option of a cycle as the classifier saw it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub option_id: u16,
    pub quality: QualityPoint,
    pub class_id: ClassId,
    pub membership: f64,
}

/// Immutable record of one adaptation cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub cycle: u32,
    pub quality_attributes: Vec<StateEntry>,
    pub classifier: Arc<GmmModel>,
    pub preference: Arc<PreferenceModel>,
}

/// Knowledge manager: a bounded history of snapshots plus the task label of
/// every recorded quality point, which detection may revise.
#[derive(Clone, Debug)]
pub struct KnowledgeStore {
    snapshots: VecDeque<StateSnapshot>,
    task_labels: BTreeMap<u32, Vec<ClassId>>,
    retention: usize,
}

impl Default for KnowledgeStore {
    fn default() -> Self {
        Self::with_retention(RETENTION_CYCLES as usize)
    }
}

impl KnowledgeStore {
    pub fn with_retention(cycles: usize) -> Self {
        Self { snapshots: VecDeque::new(), task_labels: BTreeMap::new(), retention: cycles.max(1) }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn latest(&self) -> Option<&StateSnapshot> {
        self.snapshots.back()
    }

    pub fn get(&self, cycle: u32) -> Option<&StateSnapshot> {
        self.snapshots.iter().find(|s| s.cycle == cycle)
    }

    /// The last `n` snapshots, oldest first.
    pub fn recent(&self, n: usize) -> Vec<&StateSnapshot> {
        let skip = self.snapshots.len().saturating_sub(n);
        self.snapshots.iter().skip(skip).collect()
    }

    pub fn task_labels(&self, cycle: u32) -> Option<&[ClassId]> {
        self.task_labels.get(&cycle).map(Vec::as_slice)
    }

    pub fn push(&mut self, snapshot: StateSnapshot) -> Result<()> {
        if self.snapshots.iter().any(|s| s.cycle == snapshot.cycle) {
            return Err(Error::InvalidState(format!("cycle {} was already collected", snapshot.cycle)));
        }
        self.task_labels.insert(snapshot.cycle, snapshot.quality_attributes.iter().map(|e| e.class_id).collect());
        self.snapshots.push_back(snapshot);
        while self.snapshots.len() > self.retention {
            if let Some(old) = self.snapshots.pop_front() {
                self.task_labels.remove(&old.cycle);
            }
        }
        Ok(())
    }

    pub fn set_task_labels(&mut self, labels: &[(u32, Vec<ClassId>)]) {
        for (cycle, l) in labels {
            if self.task_labels.contains_key(cycle) {
                self.task_labels.insert(*cycle, l.clone());
            }
        }
    }

    /// Re-derives the task labels of the given cycles from `model`.
    pub fn relabel(&mut self, cycles: &[u32], model: &GmmModel) {
        for s in &self.snapshots {
            if cycles.contains(&s.cycle) {
                let labels =
                    s.quality_attributes.iter().map(|e| model.classify(&e.quality.to_vec()).class_id).collect();
                self.task_labels.insert(s.cycle, labels);
            }
        }
    }
}

/// Snapshots the verified options of `cycle` together with the models that
/// classified them.
pub fn collect_state<'a>(store: &'a mut KnowledgeStore, kb: &KnowledgeBase, cycle: u32) -> Result<&'a StateSnapshot> {
    let quality_attributes = kb
        .results_for_cycle(cycle)
        .map(|(k, r)| StateEntry {
            option_id: k.option_id,
            quality: r.verification,
            class_id: r.class_id,
            membership: r.membership,
        })
        .collect();
    store.push(StateSnapshot {
        cycle,
        quality_attributes,
        classifier: Arc::clone(kb.classifier()),
        preference: Arc::clone(kb.preference()),
    })?;
    Ok(store.latest().expect("just pushed"))
}
