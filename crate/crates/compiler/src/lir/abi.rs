//! Kernel entry-point rewriting: aggregates arrive by value in Param space.

use thiserror::Error;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbiError {
    #[error("no function `{0}` in module")]
    NotFound(String),
    #[error("kernel parameter `{param}` is a mutable aggregate and cannot be passed by value")]
    MutableAggregate { param: String },
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Rename `name` to `name.inner` (inline-always) and add a wrapper kernel
/// `name` that receives immutable aggregates by value in Param space, copies
/// each into a local slot and passes the slot's generic address to the inner
/// function. The wrapper becomes the first function of the module.
pub fn rewrite_kernel_abi(m: &mut LirModule, name: &str) -> Result<(), AbiError> {
    let idx = m.functions.iter().position(|f| f.name == name).ok_or_else(|| AbiError::NotFound(name.to_string()))?;
    for p in &m.functions[idx].params {
        if let Some(crate::frontend::types::Type::Record(r)) = &p.source_type {
            if r.mutable {
                return Err(AbiError::MutableAggregate { param: p.name.clone() });
            }
        }
    }
    let mut inner = m.functions.remove(idx);
    let inner_name = format!("{name}.inner");
    inner.name = inner_name.clone();
    inner.attrs = Attrs { inline_always: true, ..Attrs::default() };

    let mut w = LirFunction::new(name, LirType::Void);
    w.attrs = Attrs { kernel: true, wrapper: true, inline_always: false };
    let mut incoming = Vec::new();
    for p in &inner.params {
        match &p.by_ref {
            Some(t) => {
                let v = w.add_param(p.name.clone(), LirType::Ptr(Space::Param));
                let q = w.params.last_mut().unwrap();
                q.by_ref = Some(t.clone());
                q.param_space = true;
                q.source_type = p.source_type.clone();
                incoming.push((v, Some(t.clone())));
            }
            None => {
                let v = w.add_param(p.name.clone(), p.ty.clone());
                w.params.last_mut().unwrap().source_type = p.source_type.clone();
                incoming.push((v, None));
            }
        }
    }
    {
        let mut b = IrBuilder::new(&mut w);
        let mut args = Vec::new();
        for (v, by_value) in incoming {
            match by_value {
                Some(t) => {
                    let val = b.load(Space::Param, t.clone(), v)?;
                    let slot = b.alloc_local(t)?;
                    b.store(Space::Local, slot, val)?;
                    args.push(b.addrcast(slot, Space::Generic)?);
                }
                None => args.push(v),
            }
        }
        b.call(&inner_name, args, inner.ret.clone())?;
        b.ret(None)?;
    }
    m.functions.insert(0, w);
    m.functions.insert(1, inner);
    Ok(())
}
