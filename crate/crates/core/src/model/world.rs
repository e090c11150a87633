//! Compartment specification, control-flow graph, and the static memory
//! layout of the replayed world.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Half-open address interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddrRange {
    pub lo: u64,
    pub hi: u64,
}

impl AddrRange {
    pub fn new(lo: u64, hi: u64) -> Self {
        AddrRange { lo, hi }
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.lo && addr < self.hi
    }

    pub fn contains_span(&self, addr: u64, size: u64) -> bool {
        self.contains(addr) && addr.saturating_add(size) <= self.hi
    }

    pub fn overlaps(&self, other: &AddrRange) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

/// Object type identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeId {
    pub id: u64,
    pub name: String,
    /// Bytes; objects range from a byte to two pages.
    pub nominal_size: u64,
}

/// Legal targets per indirect-transfer site.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowGraph {
    pub legal_targets: BTreeMap<u64, BTreeSet<u64>>,
}

impl ControlFlowGraph {
    pub fn targets(&self, site: u64) -> Option<&BTreeSet<u64>> {
        self.legal_targets.get(&site)
    }
}

/// Class of a statically known memory region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionClass {
    KernelCode,
    KernelData,
    KernelHeap,
    KernelStack,
    EbpfPrograms,
    CompartmentCode,
    CompartmentData,
    CompartmentStack,
    CompartmentHeap,
}

/// One static region of the world's memory map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRegion {
    pub class: RegionClass,
    pub lo: u64,
    pub hi: u64,
}

impl LayoutRegion {
    pub fn range(&self) -> AddrRange {
        AddrRange::new(self.lo, self.hi)
    }
}

/// Predicate over an interface value (argument or return), evaluated in the
/// signed 64-bit domain so error codes like `-22` keep their meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ValuePredicate {
    /// Inclusive range membership.
    Range { min: i64, max: i64 },
    /// Value must be one of the listed values.
    AnyOf { values: Vec<i64> },
    /// Value must not be any of the listed values (sensitive addresses).
    NoneOf { values: Vec<i64> },
    /// Zero on success or a negative errno in `-4095..=-1`.
    ZeroOrNegErrno,
}

impl ValuePredicate {
    pub fn holds(&self, raw: u64) -> bool {
        let v = raw as i64;
        match self {
            ValuePredicate::Range { min, max } => v >= *min && v <= *max,
            ValuePredicate::AnyOf { values } => values.contains(&v),
            ValuePredicate::NoneOf { values } => !values.contains(&v),
            ValuePredicate::ZeroOrNegErrno => v == 0 || (-4095..=-1).contains(&v),
        }
    }
}

/// Authorization contract for one boundary-crossing function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceContract {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<ValuePredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ret: Option<ValuePredicate>,
}

/// Everything the analyzer and the enforcement engine need to know about a
/// compartment: where its code lives, how it is entered and exited, which
/// object types it owns or co-owns, interface contracts, the allocator and
/// free entry points, and the static memory layout of the world.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompartmentSpec {
    /// Disjoint `[lo, hi)` compartment code intervals.
    pub code_ranges: Vec<AddrRange>,
    /// Functions callable from outside the compartment.
    #[serde(default)]
    pub entry_functions: BTreeSet<String>,
    /// Call-site addresses inside the compartment that call out.
    #[serde(default)]
    pub external_calls: BTreeSet<u64>,
    /// Types owned by the compartment alone.
    #[serde(default)]
    pub owned_types: BTreeSet<u64>,
    /// Types shared between the compartment and the kernel.
    #[serde(default)]
    pub co_owned_types: BTreeSet<u64>,
    /// Function name -> argument/return predicates.
    #[serde(default)]
    pub interface_contracts: BTreeMap<String, InterfaceContract>,
    /// Known object types.
    #[serde(default)]
    pub types: Vec<TypeId>,
    /// Entry addresses of heap-allocation functions.
    #[serde(default)]
    pub allocator_entries: BTreeSet<u64>,
    /// Entry addresses of free functions.
    #[serde(default)]
    pub free_entries: BTreeSet<u64>,
    /// Static memory map of the replayed world.
    #[serde(default)]
    pub layout: Vec<LayoutRegion>,
}

impl CompartmentSpec {
    pub fn contains_code(&self, addr: u64) -> bool {
        self.code_ranges.iter().any(|r| r.contains(addr))
    }

    /// A type belongs to the compartment if it is owned or co-owned.
    pub fn is_compartment_type(&self, type_id: u64) -> bool {
        self.owned_types.contains(&type_id) || self.co_owned_types.contains(&type_id)
    }

    pub fn type_info(&self, type_id: u64) -> Option<&TypeId> {
        self.types.iter().find(|t| t.id == type_id)
    }

    /// Static region lookup; compartment code ranges win over the layout.
    pub fn region_of(&self, addr: u64) -> Option<RegionClass> {
        if self.contains_code(addr) {
            return Some(RegionClass::CompartmentCode);
        }
        self.layout.iter().find(|r| r.range().contains(addr)).map(|r| r.class)
    }

    pub fn layout_region(&self, class: RegionClass) -> Option<&LayoutRegion> {
        self.layout.iter().find(|r| r.class == class)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, a) in self.code_ranges.iter().enumerate() {
            if a.lo >= a.hi {
                return Err(ModelError::InvalidSpec(format!("empty code range {:#x}..{:#x}", a.lo, a.hi)));
            }
            for b in &self.code_ranges[i + 1..] {
                if a.overlaps(b) {
                    return Err(ModelError::InvalidSpec(format!(
                        "code ranges {:#x}..{:#x} and {:#x}..{:#x} overlap",
                        a.lo, a.hi, b.lo, b.hi
                    )));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for t in &self.types {
            if !seen.insert(t.id) {
                return Err(ModelError::InvalidSpec(format!("duplicate type id {}", t.id)));
            }
            if t.nominal_size == 0 || t.nominal_size > 8192 {
                return Err(ModelError::InvalidSpec(format!(
                    "type {} nominal_size {} outside [1, 8192]",
                    t.id, t.nominal_size
                )));
            }
        }
        Ok(())
    }
}
