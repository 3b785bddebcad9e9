use std::collections::BTreeMap;

use super::{PkBatch, TripletLossOut};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolEntry {
    /// Dataset index of the sample.
    pub index: usize,
    pub hinge: f32,
}

/// Per-identity store of recently hard samples, highest hinge first.
#[derive(Clone, Debug, PartialEq)]
pub struct HardPool {
    capacity: usize,
    entries: BTreeMap<u32, Vec<PoolEntry>>,
}

impl HardPool {
    pub fn new(capacity: usize) -> Self {
        HardPool {
            capacity,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(Vec::is_empty)
    }

    pub fn entries(&self, person_id: u32) -> &[PoolEntry] {
        self.entries.get(&person_id).map_or(&[], Vec::as_slice)
    }

    /// Inserts every anchor with a positive hinge under its identity. A sample
    /// already present takes its newest hinge. Each identity then keeps its
    /// `capacity` highest hinges (ties favour the lower dataset index).
    pub fn update(&mut self, batch: &PkBatch, out: &TripletLossOut) {
        for (slot, term) in out.per_anchor.iter().enumerate() {
            if term.hinge <= 0.0 {
                continue;
            }
            let (index, pid) = (batch.indices[slot], batch.person_ids[slot]);
            let list = self.entries.entry(pid).or_default();
            match list.iter_mut().find(|e| e.index == index) {
                Some(e) => e.hinge = term.hinge,
                None => list.push(PoolEntry {
                    index,
                    hinge: term.hinge,
                }),
            }
        }
        for list in self.entries.values_mut() {
            list.sort_by(|a, b| b.hinge.total_cmp(&a.hinge).then(a.index.cmp(&b.index)));
            list.truncate(self.capacity);
        }
    }
}

pub fn update_hard_pool(mut pool: HardPool, batch: &PkBatch, out: &TripletLossOut) -> HardPool {
    pool.update(batch, out);
    pool
}
