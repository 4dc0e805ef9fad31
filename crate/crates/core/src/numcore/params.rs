use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    /// Updated by the optimiser.
    Trainable,
    /// Learnable, but held fixed in the current stage (e.g. a pretrained head).
    Frozen,
    /// Running statistics; never counted as parameters.
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
}

/// Named parameter slots with gradients and Adam moments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    slots: Vec<Slot>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor2, kind: SlotKind) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(invalid(format!("duplicate parameter slot {name}")));
        }
        let (r, c) = value.shape();
        self.slots.push(Slot {
            name: name.to_string(),
            kind,
            value,
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
        });
        self.index.insert(name.to_string(), self.slots.len() - 1);
        Ok(self.slots.len() - 1)
    }

    /// Rebuilds the name index; needed after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.slots.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn slot(&self, i: usize) -> &Slot {
        &self.slots[i]
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut Slot {
        &mut self.slots[i]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Slot] {
        &mut self.slots
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        self.slot_index(name)
            .map(|i| &self.slots[i].value)
            .ok_or_else(|| invalid(format!("unknown parameter slot {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        let i = self
            .slot_index(name)
            .ok_or_else(|| invalid(format!("unknown parameter slot {name}")))?;
        Ok(&mut self.slots[i].value)
    }

    pub fn set_kind_prefix(&mut self, prefix: &str, kind: SlotKind) {
        for s in &mut self.slots {
            if s.name.starts_with(prefix) && s.kind != SlotKind::Buffer {
                s.kind = kind;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Parameter count for one kind.
    pub fn count(&self, kind: SlotKind) -> usize {
        self.slots.iter().filter(|s| s.kind == kind).map(|s| s.value.len()).sum()
    }

    /// Trainable plus frozen entries; buffers excluded.
    pub fn total_parameters(&self) -> usize {
        self.count(SlotKind::Trainable) + self.count(SlotKind::Frozen)
    }
}
