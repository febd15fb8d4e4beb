//! Named parameters and the visitor trait every layer implements.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Scalar, Tensor};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique identity of a parameter, used to map tape leaves back to
/// the tensors they were read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable; counted by `count_params`.
    Weight,
    /// Persistent state such as running statistics; saved but not trained.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    id: ParamId,
    kind: ParamKind,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn weight(value: Tensor<T>) -> Self {
        Self { id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)), kind: ParamKind::Weight, value }
    }

    pub fn buffer(value: Tensor<T>) -> Self {
        Self { id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)), kind: ParamKind::Buffer, value }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Weight
    }
}

/// Anything that owns parameters. Names are dot-separated paths; the visit
/// order is stable and defines the weight-file order.
pub trait Module<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>);

    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        self.named_params().iter().filter(|(_, p)| p.is_trainable()).map(|(_, p)| p.value.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Module<T> for Param<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((prefix.to_string(), self));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        if let Some(m) = self {
            m.collect(prefix, out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        if let Some(m) = self {
            m.collect_mut(prefix, out);
        }
    }
}

/// Implements [`Module`] for a struct by listing its parameter-owning fields.
macro_rules! impl_module {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::tensor::Scalar> $crate::param::Module<T> for $ty<T> {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a $crate::param::Param<T>)>) {
                $( self.$field.collect(&$crate::param::join(prefix, stringify!($field)), out); )*
            }

            fn collect_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut $crate::param::Param<T>)>,
            ) {
                $( self.$field.collect_mut(&$crate::param::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_module;

/// Folds the batch statistics gathered by a training tape into the running
/// statistics of `module`.
pub fn apply_stat_updates<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, updates: &[crate::autograd::StatUpdate]) {
    use std::collections::HashMap;
    let mut by_id: HashMap<ParamId, &mut Param<T>> =
        module.named_params_mut().into_iter().map(|(_, p)| (p.id(), p)).collect();
    for u in updates {
        let Some(mean) = by_id.remove(&u.running_mean) else { continue };
        let Some(var) = by_id.remove(&u.running_var) else { continue };
        crate::kernels::update_running_stats(&mut mean.value, &mut var.value, &u.batch_mean, &u.batch_var, u.count, u.momentum);
        by_id.insert(u.running_mean, mean);
        by_id.insert(u.running_var, var);
    }
}
