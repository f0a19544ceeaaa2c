//! Uniform access to every learnable or persistent tensor in a model.
//!
//! Layers push `Slot`s into a flat list: parameters (with their gradient
//! buffers) feed the optimizer and EMA updates, state tensors (spectral-norm
//! u vectors, batch-norm statistics) ride along for checkpointing. Order is
//! stable across calls — optimizer moments are matched to slots by position,
//! checkpoints by name.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// Trainable parameter: updated by the optimizer and averaged by EMA.
    Param,
    /// Persistent non-trainable state, serialized but never stepped.
    State,
}

pub struct Slot<'a, R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [R],
    pub grad: Option<&'a mut [R]>,
    pub kind: SlotKind,
}

impl<'a, R> Slot<'a, R> {
    pub fn param(name: String, shape: Vec<usize>, data: &'a mut [R], grad: &'a mut [R]) -> Self {
        Slot {
            name,
            shape,
            data,
            grad: Some(grad),
            kind: SlotKind::Param,
        }
    }

    pub fn state(name: String, shape: Vec<usize>, data: &'a mut [R]) -> Self {
        Slot {
            name,
            shape,
            data,
            grad: None,
            kind: SlotKind::State,
        }
    }
}
