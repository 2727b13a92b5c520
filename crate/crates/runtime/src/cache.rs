use std::sync::Arc;

use kforge_compiler::frontend::{MethodId, MethodTable, Type};
use kforge_device::{device_stdlib, CompiledKernel};
use kforge_vm::Kernel;

use crate::ContextId;

/// Identity of one cached kernel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelCacheKey {
    pub method: MethodId,
    pub arg_types: Vec<Type>,
    /// Mix of the ages of every method and name the compilation depended on.
    pub fingerprint: u64,
    pub context: ContextId,
}

/// Methods and dispatch names a compiled kernel depends on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dependencies {
    pub methods: Vec<MethodId>,
    pub names: Vec<String>,
}

impl Dependencies {
    pub fn of(k: &CompiledKernel) -> Dependencies {
        let mut methods: Vec<MethodId> = k.callees.iter().map(|(id, _)| *id).collect();
        methods.sort();
        methods.dedup();
        let mut names: Vec<String> = k.name_deps.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        Dependencies { methods, names }
    }

    /// Fingerprint of the dependencies at the table's current world age.
    /// Methods of the device library are looked up there.
    pub fn fingerprint(&self, table: &MethodTable) -> u64 {
        let mut h = 0x6b66_6f72_6765_u64;
        for id in &self.methods {
            let age = table.method_age(*id).or_else(|| device_stdlib().method_age(*id)).unwrap_or(u64::MAX);
            h = mix(h, id.0);
            h = mix(h, age);
        }
        for n in &self.names {
            h = mix(h, fnv1a(n.as_bytes()));
            h = mix(h, table.generation(n));
        }
        h
    }
}

/// Stable 64-bit combiner (splitmix64 finalizer over the running state).
pub fn mix(h: u64, x: u64) -> u64 {
    let mut z = h ^ x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone)]
pub struct CachedKernel {
    pub key: KernelCacheKey,
    pub deps: Dependencies,
    pub compiled: Arc<CompiledKernel>,
    pub kernel: Arc<Kernel>,
}

/// Per-context kernel cache. Entries for a (method, argument types) pair are
/// kept side by side; the one whose recorded fingerprint matches the current
/// ages is a hit.
#[derive(Debug, Default, Clone)]
pub struct KernelCache {
    entries: Vec<CachedKernel>,
}

impl KernelCache {
    pub fn lookup(&self, table: &MethodTable, method: MethodId, arg_types: &[Type]) -> Option<&CachedKernel> {
        self.entries
            .iter()
            .filter(|e| e.key.method == method && e.key.arg_types == arg_types)
            .find(|e| e.deps.fingerprint(table) == e.key.fingerprint)
    }

    pub fn insert(&mut self, entry: CachedKernel) {
        self.entries.retain(|e| e.key != entry.key);
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &KernelCacheKey> {
        self.entries.iter().map(|e| &e.key)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(mix(0, 1), 2), mix(mix(0, 2), 1));
        assert_eq!(mix(5, 7), mix(5, 7));
    }
}
