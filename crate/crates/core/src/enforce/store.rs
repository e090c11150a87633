//! Shared keyed state, modeling the maps the enforcement programs share:
//! CFI target sets, object ownership, private slab caches, buddy and
//! vmalloc records, and per-subject private stacks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dtree::FlatTree;
use crate::model::AllocatorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subject {
    Kernel,
    Compartment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotState {
    Live,
    /// Freed but never recycled back to the allocator; reusable only for
    /// the same cache.
    Retained,
}

/// One tracked heap object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub addr: u64,
    pub size: u64,
    pub type_id: u64,
    /// Private cache id when the object lives in a compartment slab cache.
    pub cache: Option<u64>,
    /// Slot extent for cache-backed objects.
    pub slot_size: Option<u64>,
    pub allocator: AllocatorKind,
    pub owner: Subject,
    /// Allocated after time 0 under enforcement; untracked objects predate
    /// compartmentalization and have unknown types until audited.
    pub tracked: bool,
    pub freed: bool,
    pub free_tick: Option<u64>,
}

impl ObjectRecord {
    /// Occupied extent: the whole slot for cache-backed objects.
    pub fn extent(&self) -> u64 {
        self.slot_size.unwrap_or(self.size)
    }

    pub fn contains_span(&self, addr: u64, size: u64) -> bool {
        addr >= self.addr && addr.saturating_add(size) <= self.addr + self.extent()
    }
}

/// A private slab cache: uniformly sized slots holding one object type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHandle {
    pub id: u64,
    pub slot_size: u64,
    pub co_owned: bool,
    pub slots: Vec<(u64, SlotState)>,
}

impl CacheHandle {
    pub fn slot_mut(&mut self, addr: u64) -> Option<&mut (u64, SlotState)> {
        self.slots.iter_mut().find(|(a, _)| *a == addr)
    }
}

/// A subject's private stack, carved from the buddy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackRegion {
    pub base: u64,
    pub size: u64,
    pub owner: u64,
}

impl StackRegion {
    pub fn contains_span(&self, addr: u64, size: u64) -> bool {
        addr >= self.base && addr.saturating_add(size) <= self.base + self.size
    }

    pub fn intersects(&self, addr: u64, size: u64) -> bool {
        addr < self.base + self.size && self.base < addr.saturating_add(size)
    }
}

/// All shared replay state.
#[derive(Debug, Clone, Default)]
pub struct MapStore {
    pub cfi_targets: BTreeMap<u64, BTreeSet<u64>>,
    pub object_owner: BTreeMap<u64, ObjectRecord>,
    pub caches: BTreeMap<u64, CacheHandle>,
    pub buddy_sites: BTreeMap<u64, u64>,
    pub vmalloc_descs: BTreeMap<u64, u64>,
    pub stacks: BTreeMap<u64, StackRegion>,
    /// Model arrays loaded for audition.
    pub model: Option<FlatTree>,
}

impl MapStore {
    /// Record whose base is exactly `addr`.
    pub fn object_at_base(&self, addr: u64) -> Option<&ObjectRecord> {
        self.object_owner.get(&addr)
    }

    /// Record whose extent contains `addr`.
    pub fn resolve_object(&self, addr: u64) -> Option<&ObjectRecord> {
        self.object_owner
            .range(..=addr)
            .next_back()
            .map(|(_, rec)| rec)
            .filter(|rec| addr < rec.addr + rec.extent())
    }

    pub fn resolve_stack(&self, addr: u64) -> Option<&StackRegion> {
        self.stacks.values().find(|r| addr >= r.base && addr < r.base + r.size)
    }

    /// Any live interval (object or stack) overlapping `[addr, addr+size)`,
    /// excluding an object based exactly at `addr`.
    pub fn span_conflict(&self, addr: u64, size: u64) -> Option<u64> {
        let end = addr.saturating_add(size);
        if let Some((base, rec)) = self.object_owner.range(..end).next_back() {
            if *base != addr && addr < rec.addr + rec.extent() && rec.addr < end {
                return Some(*base);
            }
            // A neighbor below could still reach into the span.
            if let Some((b2, r2)) = self.object_owner.range(..addr).next_back() {
                if addr < r2.addr + r2.extent() {
                    return Some(*b2);
                }
            }
        }
        self.stacks.values().find(|r| r.intersects(addr, size)).map(|r| r.base)
    }

    pub fn remove_object(&mut self, addr: u64) {
        self.object_owner.remove(&addr);
        self.buddy_sites.remove(&addr);
        self.vmalloc_descs.remove(&addr);
    }

    /// Memory-disjointness invariant: object extents and stack regions are
    /// pairwise disjoint. Retained slots still occupy their interval.
    pub fn verify_disjoint(&self) -> Result<(), String> {
        let mut intervals: Vec<(u64, u64, &'static str)> = self
            .object_owner
            .values()
            .map(|r| (r.addr, r.addr + r.extent(), "object"))
            .collect();
        intervals.extend(self.stacks.values().map(|r| (r.base, r.base + r.size, "stack")));
        intervals.sort_unstable();
        for pair in intervals.windows(2) {
            let (a_lo, a_hi, a_kind) = pair[0];
            let (b_lo, _, b_kind) = pair[1];
            if b_lo < a_hi {
                return Err(format!(
                    "{a_kind} [{a_lo:#x},{a_hi:#x}) overlaps {b_kind} at {b_lo:#x}"
                ));
            }
        }
        Ok(())
    }
}
