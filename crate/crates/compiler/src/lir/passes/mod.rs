//! Optimization passes over LIR modules.

mod dce;
mod fold;
mod inline;
mod promote;

use thiserror::Error;

use super::{verify_module, Inst, IrError, LirFunction, LirModule, ValueId};

pub use dce::dce;
pub use fold::fold;
pub use inline::inline;
pub use promote::promote;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PassOptions {
    /// Rounds of inlining for callees not marked inline-always.
    pub max_inline_depth: u32,
}

impl Default for PassOptions {
    fn default() -> Self {
        PassOptions { max_inline_depth: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PassError {
    #[error("unknown pass `{0}`")]
    Unknown(String),
    #[error("pass `{pass}` produced invalid IR: {source}")]
    Invalid { pass: String, source: IrError },
}

pub const DEFAULT_PIPELINE: &[&str] = &["inline", "promote", "fold", "promote", "dce"];

/// Run the named passes in order, verifying the module after each one.
pub fn run_passes(mut m: LirModule, pipeline: &[&str], opts: &PassOptions) -> Result<LirModule, PassError> {
    for p in pipeline {
        match *p {
            "inline" => inline(&mut m, opts),
            "promote" => m.functions.iter_mut().for_each(promote),
            "fold" => m.functions.iter_mut().for_each(fold),
            "dce" => m.functions.iter_mut().for_each(dce),
            "addrspace" => m.functions.iter_mut().for_each(super::infer_address_spaces),
            other => return Err(PassError::Unknown(other.to_string())),
        }
        verify_module(&m).map_err(|source| PassError::Invalid { pass: p.to_string(), source })?;
    }
    Ok(m)
}

/// Rewrite operands through `map`, following chains.
pub(crate) fn apply_replacements(f: &mut LirFunction, map: &std::collections::HashMap<ValueId, ValueId>) {
    if map.is_empty() {
        return;
    }
    let resolve = |mut v: ValueId| {
        let mut n = 0;
        while let Some(w) = map.get(&v) {
            v = *w;
            n += 1;
            if n > map.len() {
                break;
            }
        }
        v
    };
    for vd in &mut f.values {
        if let super::Def::Inst(i) = &mut vd.def {
            i.map_operands(resolve);
        }
    }
    for b in &mut f.blocks {
        if let Some(t) = &mut b.term {
            t.map_operands(resolve);
        }
    }
}

/// Replace phis whose incoming values are all the same value (or the phi itself).
pub(crate) fn simplify_phis(f: &mut LirFunction) -> bool {
    let mut any = false;
    loop {
        let mut map = std::collections::HashMap::new();
        for (b, v) in f.placed().collect::<Vec<_>>() {
            let Some(Inst::Phi(inc)) = f.inst(v) else { continue };
            let mut uniq: Option<ValueId> = None;
            let mut trivial = true;
            for (_, x) in inc {
                if *x == v || Some(*x) == uniq {
                    continue;
                }
                if uniq.is_some() {
                    trivial = false;
                    break;
                }
                uniq = Some(*x);
            }
            if trivial {
                if let Some(u) = uniq {
                    map.insert(v, u);
                    f.remove_inst(b, v);
                }
            }
        }
        if map.is_empty() {
            return any;
        }
        any = true;
        apply_replacements(f, &map);
    }
}
