use std::fmt;

use kforge_compiler::lir::{Inst, LirModule, LirType};
use kforge_compiler::Span;

use crate::intrinsics::is_device_intrinsic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub function: String,
    pub span: Option<Span>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(f, "{s}: {} (in {})", self.message, self.function),
            None => write!(f, "{} (in {})", self.message, self.function),
        }
    }
}

/// Check that optimized LIR only uses what the device can execute. Returns
/// every violation found, in instruction order.
pub fn validate_device(m: &LirModule) -> Vec<Violation> {
    let mut out = Vec::new();
    for f in &m.functions {
        for (_, v) in f.placed() {
            let Some(inst) = f.inst(v) else { continue };
            let message = match inst {
                Inst::RtCall { name, .. } if name == "ksl_alloc" => Some("dynamic allocation".to_string()),
                Inst::RtCall { name, .. } => Some(format!("host runtime call `{name}`")),
                Inst::Call { callee, .. } => Some(format!("call to `{callee}` was not inlined")),
                Inst::Intrinsic { name, .. } if !is_device_intrinsic(name) => Some(format!("unknown intrinsic `{name}`")),
                Inst::Intrinsic { name, args } if name == "shfl_down_u32" => args
                    .iter()
                    .any(|a| *f.ty(*a) != LirType::I32)
                    .then(|| "shuffle of a value that is not a 32-bit word".to_string()),
                _ => None,
            };
            if let Some(message) = message {
                out.push(Violation { function: f.name.clone(), span: f.value(v).span, message });
            }
        }
    }
    out
}
