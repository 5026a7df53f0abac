use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub type ParamId = u64;

/// A trainable tensor with shared ownership.
///
/// Cloning a `Param` yields another handle to the *same* storage; this is how
/// the generator and discriminator paths reference one shared extractor.
/// [`Param::deep_clone`] makes an independent copy.
#[derive(Clone, Debug)]
pub struct Param(Arc<ParamInner>);

#[derive(Debug)]
struct ParamInner {
    id: ParamId,
    name: String,
    value: RwLock<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param(Arc::new(ParamInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            value: RwLock::new(value),
        }))
    }

    pub fn id(&self) -> ParamId {
        self.0.id
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor> {
        self.0.value.read().expect("parameter lock poisoned")
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn set(&self, value: Tensor) {
        *self.0.value.write().expect("parameter lock poisoned") = value;
    }

    pub fn update(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.value.write().expect("parameter lock poisoned"));
    }

    /// True when both handles point at the same storage.
    pub fn same_storage(&self, other: &Param) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn deep_clone(&self) -> Param {
        Param::new(self.name(), self.value().clone())
    }
}

/// Anything that owns parameters.
pub trait Module {
    /// Every parameter, in a stable order.
    fn params(&self) -> Vec<Param>;

    fn count_parameters(&self) -> usize {
        self.params().iter().map(Param::numel).sum()
    }
}
