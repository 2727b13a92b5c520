//! Low-level SSA IR with address-space-qualified memory operations.

mod builder;
pub mod cfg;
pub mod eval;
mod print;
mod verify;

pub mod abi;
pub mod addrspace;
pub mod lower;
pub mod passes;

use std::fmt;
use std::sync::Arc;

use crate::frontend::types::Type;
use crate::span::Span;

pub use abi::{rewrite_kernel_abi, AbiError};
pub use addrspace::infer_address_spaces;
pub use builder::IrBuilder;
pub use eval::Imm;
pub use lower::{
    lir_type, lower_hir, scalar_type, AllocationPolicy, CodegenError, CodegenHooks, CodegenParams, ExceptionPolicy, IntrinsicCall,
    NoCodegenHooks,
};
pub use passes::{run_passes, PassError, PassOptions};
pub use verify::{verify_function, verify_module, IrError};

/// Memory state spaces. Values carry no tag at run time; the tag lives in types
/// and on memory instructions only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    Generic,
    Global,
    Shared,
    Param,
    Local,
}

impl Space {
    pub const ALL: [Space; 5] = [Space::Generic, Space::Global, Space::Shared, Space::Param, Space::Local];

    pub fn name(self) -> &'static str {
        match self {
            Space::Generic => "generic",
            Space::Global => "global",
            Space::Shared => "shared",
            Space::Param => "param",
            Space::Local => "local",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LirType {
    Void,
    I1,
    I32,
    I64,
    F32,
    F64,
    /// Address into a state space (`ptr` when generic).
    Ptr(Space),
    /// Packed aggregate.
    Struct(Arc<[LirType]>),
}

impl LirType {
    pub fn structure(fields: Vec<LirType>) -> LirType {
        LirType::Struct(fields.into())
    }

    pub fn size(&self) -> u64 {
        match self {
            LirType::Void => 0,
            LirType::I1 => 1,
            LirType::I32 | LirType::F32 => 4,
            LirType::I64 | LirType::F64 | LirType::Ptr(_) => 8,
            LirType::Struct(fs) => fs.iter().map(|f| f.size()).sum(),
        }
    }

    pub fn field_offset(&self, k: usize) -> u64 {
        match self {
            LirType::Struct(fs) => fs[..k].iter().map(|f| f.size()).sum(),
            _ => 0,
        }
    }

    pub fn fields(&self) -> &[LirType] {
        match self {
            LirType::Struct(fs) => fs,
            _ => &[],
        }
    }

    pub fn is_int(&self) -> bool {
        matches!(self, LirType::I1 | LirType::I32 | LirType::I64)
    }

    pub fn is_float(&self) -> bool {
        matches!(self, LirType::F32 | LirType::F64)
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, LirType::Ptr(_))
    }

    pub fn is_scalar(&self) -> bool {
        self.is_int() || self.is_float() || self.is_ptr()
    }
}

impl fmt::Display for LirType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LirType::Void => f.write_str("void"),
            LirType::I1 => f.write_str("i1"),
            LirType::I32 => f.write_str("i32"),
            LirType::I64 => f.write_str("i64"),
            LirType::F32 => f.write_str("f32"),
            LirType::F64 => f.write_str("f64"),
            LirType::Ptr(Space::Generic) => f.write_str("ptr"),
            LirType::Ptr(s) => write!(f, "ptr<{s}>"),
            LirType::Struct(fs) => {
                f.write_str("{")?;
                for (i, t) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str("}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%v{}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bb{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstVal {
    Imm(Imm),
    /// All-zero bits of the result type (aggregates, pointers, uninitialized slots).
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    SDiv,
    SRem,
    IPow,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    FAdd,
    FSub,
    FMul,
    FDiv,
    FRem,
    FPow,
}

impl BinKind {
    pub fn name(self) -> &'static str {
        use BinKind::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            SDiv => "sdiv",
            SRem => "srem",
            IPow => "ipow",
            And => "and",
            Or => "or",
            Xor => "xor",
            Shl => "shl",
            LShr => "lshr",
            FAdd => "fadd",
            FSub => "fsub",
            FMul => "fmul",
            FDiv => "fdiv",
            FRem => "frem",
            FPow => "fpow",
        }
    }

    pub fn is_float(self) -> bool {
        use BinKind::*;
        matches!(self, FAdd | FSub | FMul | FDiv | FRem | FPow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnKind {
    Neg,
    FNeg,
    Not,
}

impl UnKind {
    pub fn name(self) -> &'static str {
        match self {
            UnKind::Neg => "neg",
            UnKind::FNeg => "fneg",
            UnKind::Not => "not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    FEq,
    FNe,
    FLt,
    FLe,
    FGt,
    FGe,
}

impl CmpPred {
    pub fn name(self) -> &'static str {
        use CmpPred::*;
        match self {
            Eq => "eq",
            Ne => "ne",
            Slt => "slt",
            Sle => "sle",
            Sgt => "sgt",
            Sge => "sge",
            Ult => "ult",
            FEq => "feq",
            FNe => "fne",
            FLt => "flt",
            FLe => "fle",
            FGt => "fgt",
            FGe => "fge",
        }
    }

    pub fn is_float(self) -> bool {
        use CmpPred::*;
        matches!(self, FEq | FNe | FLt | FLe | FGt | FGe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastKind {
    Sext,
    Zext,
    Trunc,
    SiToFp,
    UiToFp,
    FpToSi,
    FpExt,
    FpTrunc,
    Bitcast,
}

impl CastKind {
    pub fn name(self) -> &'static str {
        use CastKind::*;
        match self {
            Sext => "sext",
            Zext => "zext",
            Trunc => "trunc",
            SiToFp => "sitofp",
            UiToFp => "uitofp",
            FpToSi => "fptosi",
            FpExt => "fpext",
            FpTrunc => "fptrunc",
            Bitcast => "bitcast",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inst {
    Const(ConstVal),
    Bin(BinKind, ValueId, ValueId),
    Un(UnKind, ValueId),
    Cmp(CmpPred, ValueId, ValueId),
    Cast(CastKind, ValueId),
    Select(ValueId, ValueId, ValueId),
    Extract(ValueId, u32),
    Insert(ValueId, u32, ValueId),
    MakeStruct(Vec<ValueId>),
    Load { space: Space, ptr: ValueId },
    Store { space: Space, ptr: ValueId, value: ValueId },
    AddrCast(ValueId),
    ElemAddr { elem: LirType, ptr: ValueId, index: ValueId },
    FieldAddr { agg: LirType, ptr: ValueId, field: u32 },
    AllocLocal(LirType),
    Call { callee: String, args: Vec<ValueId> },
    Intrinsic { name: String, args: Vec<ValueId> },
    /// Call into the host runtime library.
    RtCall { name: String, args: Vec<ValueId> },
    Phi(Vec<(BlockId, ValueId)>),
}

impl Inst {
    pub fn operands(&self) -> Vec<ValueId> {
        match self {
            Inst::Const(_) | Inst::AllocLocal(_) => vec![],
            Inst::Bin(_, a, b) | Inst::Cmp(_, a, b) => vec![*a, *b],
            Inst::Un(_, a) | Inst::Cast(_, a) | Inst::Extract(a, _) | Inst::AddrCast(a) => vec![*a],
            Inst::Select(c, a, b) => vec![*c, *a, *b],
            Inst::Insert(a, _, v) => vec![*a, *v],
            Inst::MakeStruct(vs) => vs.clone(),
            Inst::Load { ptr, .. } => vec![*ptr],
            Inst::Store { ptr, value, .. } => vec![*ptr, *value],
            Inst::ElemAddr { ptr, index, .. } => vec![*ptr, *index],
            Inst::FieldAddr { ptr, .. } => vec![*ptr],
            Inst::Call { args, .. } | Inst::Intrinsic { args, .. } | Inst::RtCall { args, .. } => args.clone(),
            Inst::Phi(inc) => inc.iter().map(|(_, v)| *v).collect(),
        }
    }

    pub fn map_operands(&mut self, mut f: impl FnMut(ValueId) -> ValueId) {
        match self {
            Inst::Const(_) | Inst::AllocLocal(_) => {}
            Inst::Bin(_, a, b) | Inst::Cmp(_, a, b) => {
                *a = f(*a);
                *b = f(*b);
            }
            Inst::Un(_, a) | Inst::Cast(_, a) | Inst::Extract(a, _) | Inst::AddrCast(a) => *a = f(*a),
            Inst::Select(c, a, b) => {
                *c = f(*c);
                *a = f(*a);
                *b = f(*b);
            }
            Inst::Insert(a, _, v) => {
                *a = f(*a);
                *v = f(*v);
            }
            Inst::MakeStruct(vs) => vs.iter_mut().for_each(|v| *v = f(*v)),
            Inst::Load { ptr, .. } => *ptr = f(*ptr),
            Inst::Store { ptr, value, .. } => {
                *ptr = f(*ptr);
                *value = f(*value);
            }
            Inst::ElemAddr { ptr, index, .. } => {
                *ptr = f(*ptr);
                *index = f(*index);
            }
            Inst::FieldAddr { ptr, .. } => *ptr = f(*ptr),
            Inst::Call { args, .. } | Inst::Intrinsic { args, .. } | Inst::RtCall { args, .. } => {
                args.iter_mut().for_each(|v| *v = f(*v))
            }
            Inst::Phi(inc) => inc.iter_mut().for_each(|(_, v)| *v = f(*v)),
        }
    }

    /// Instructions that must be kept even when their result is unused.
    pub fn has_side_effects(&self) -> bool {
        match self {
            Inst::Store { .. } | Inst::Call { .. } | Inst::RtCall { .. } => true,
            Inst::Intrinsic { name, .. } => !is_pure_intrinsic(name),
            // Integer division can trap.
            Inst::Bin(BinKind::SDiv | BinKind::SRem, ..) => true,
            _ => false,
        }
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, Inst::Load { .. } | Inst::Store { .. })
    }
}

/// Intrinsics that read no memory and have no effects.
pub fn is_pure_intrinsic(name: &str) -> bool {
    matches!(
        name,
        "thread_idx_x"
            | "thread_idx_y"
            | "thread_idx_z"
            | "block_idx_x"
            | "block_idx_y"
            | "block_idx_z"
            | "block_dim_x"
            | "block_dim_y"
            | "block_dim_z"
            | "grid_dim_x"
            | "grid_dim_y"
            | "grid_dim_z"
            | "warpsize"
            | "abs_i32"
            | "abs_i64"
            | "fabs_f32"
            | "fabs_f64"
            | "sqrt_f32"
            | "sqrt_f64"
            | "pow_f32"
            | "pow_f64"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminator {
    Br(BlockId),
    CondBr(ValueId, BlockId, BlockId),
    Ret(Option<ValueId>),
    /// Abort the thread with an i32 error code.
    Trap(ValueId),
    Unreachable,
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br(b) => vec![*b],
            Terminator::CondBr(_, t, f) => {
                if t == f {
                    vec![*t]
                } else {
                    vec![*t, *f]
                }
            }
            _ => vec![],
        }
    }

    pub fn operands(&self) -> Vec<ValueId> {
        match self {
            Terminator::CondBr(c, ..) => vec![*c],
            Terminator::Ret(Some(v)) | Terminator::Trap(v) => vec![*v],
            _ => vec![],
        }
    }

    pub fn map_operands(&mut self, mut f: impl FnMut(ValueId) -> ValueId) {
        match self {
            Terminator::CondBr(c, ..) => *c = f(*c),
            Terminator::Ret(Some(v)) | Terminator::Trap(v) => *v = f(*v),
            _ => {}
        }
    }

    pub fn map_blocks(&mut self, mut f: impl FnMut(BlockId) -> BlockId) {
        match self {
            Terminator::Br(b) => *b = f(*b),
            Terminator::CondBr(_, t, e) => {
                *t = f(*t);
                *e = f(*e);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Def {
    Param(u32),
    Inst(Inst),
    /// Deleted by a pass; must have no remaining uses.
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueData {
    pub ty: LirType,
    pub def: Def,
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub insts: Vec<ValueId>,
    pub term: Option<Terminator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LirParam {
    pub name: String,
    pub ty: LirType,
    pub value: ValueId,
    /// Pointee type when an aggregate is passed by reference.
    pub by_ref: Option<LirType>,
    /// Aggregate passed by value in Param space (the value is its address there).
    pub param_space: bool,
    /// Source-level type, when known.
    pub source_type: Option<Type>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Attrs {
    pub kernel: bool,
    pub wrapper: bool,
    pub inline_always: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LirFunction {
    pub name: String,
    pub params: Vec<LirParam>,
    pub ret: LirType,
    pub blocks: Vec<Block>,
    pub values: Vec<ValueData>,
    pub attrs: Attrs,
}

impl LirFunction {
    pub fn new(name: impl Into<String>, ret: LirType) -> Self {
        LirFunction {
            name: name.into(),
            params: Vec::new(),
            ret,
            blocks: vec![Block::default()],
            values: Vec::new(),
            attrs: Attrs::default(),
        }
    }

    pub fn entry(&self) -> BlockId {
        BlockId(0)
    }

    pub fn add_param(&mut self, name: impl Into<String>, ty: LirType) -> ValueId {
        let v = ValueId(self.values.len() as u32);
        self.values.push(ValueData { ty: ty.clone(), def: Def::Param(self.params.len() as u32), span: None });
        self.params.push(LirParam {
            name: name.into(),
            ty,
            value: v,
            by_ref: None,
            param_space: false,
            source_type: None,
        });
        v
    }

    pub fn add_block(&mut self) -> BlockId {
        self.blocks.push(Block::default());
        BlockId(self.blocks.len() as u32 - 1)
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.0 as usize]
    }

    pub fn block_mut(&mut self, b: BlockId) -> &mut Block {
        &mut self.blocks[b.0 as usize]
    }

    pub fn value(&self, v: ValueId) -> &ValueData {
        &self.values[v.0 as usize]
    }

    pub fn ty(&self, v: ValueId) -> &LirType {
        &self.values[v.0 as usize].ty
    }

    pub fn inst(&self, v: ValueId) -> Option<&Inst> {
        match &self.values[v.0 as usize].def {
            Def::Inst(i) => Some(i),
            _ => None,
        }
    }

    pub fn inst_mut(&mut self, v: ValueId) -> Option<&mut Inst> {
        match &mut self.values[v.0 as usize].def {
            Def::Inst(i) => Some(i),
            _ => None,
        }
    }

    /// Allocate an instruction value without placing it in a block.
    pub fn new_inst(&mut self, inst: Inst, ty: LirType, span: Option<Span>) -> ValueId {
        self.values.push(ValueData { ty, def: Def::Inst(inst), span });
        ValueId(self.values.len() as u32 - 1)
    }

    pub fn term(&self, b: BlockId) -> &Terminator {
        self.block(b).term.as_ref().expect("block without terminator")
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    /// All placed instructions in block order.
    pub fn placed(&self) -> impl Iterator<Item = (BlockId, ValueId)> + '_ {
        self.block_ids()
            .flat_map(move |b| self.block(b).insts.iter().map(move |v| (b, *v)))
    }

    pub fn count_insts(&self, pred: impl Fn(&Inst) -> bool) -> usize {
        self.placed().filter(|(_, v)| self.inst(*v).is_some_and(&pred)).count()
    }

    pub fn total_insts(&self) -> usize {
        self.blocks.iter().map(|b| b.insts.len() + b.term.is_some() as usize).sum()
    }

    /// Replace every use of `from` with `to`.
    pub fn replace_uses(&mut self, from: ValueId, to: ValueId) {
        let sub = |v: ValueId| if v == from { to } else { v };
        for vd in &mut self.values {
            if let Def::Inst(i) = &mut vd.def {
                i.map_operands(sub);
            }
        }
        for b in &mut self.blocks {
            if let Some(t) = &mut b.term {
                t.map_operands(sub);
            }
        }
    }

    /// Use counts over placed instructions and terminators.
    pub fn use_counts(&self) -> Vec<u32> {
        let mut n = vec![0u32; self.values.len()];
        for (_, v) in self.placed() {
            if let Some(i) = self.inst(v) {
                for o in i.operands() {
                    n[o.0 as usize] += 1;
                }
            }
        }
        for b in &self.blocks {
            if let Some(t) = &b.term {
                for o in t.operands() {
                    n[o.0 as usize] += 1;
                }
            }
        }
        n
    }

    /// Placed instructions that use `v`, with their blocks.
    pub fn users(&self, v: ValueId) -> Vec<(BlockId, ValueId)> {
        self.placed()
            .filter(|(_, u)| self.inst(*u).is_some_and(|i| i.operands().contains(&v)))
            .collect()
    }

    /// Unlink a placed instruction from its block and mark it removed.
    pub fn remove_inst(&mut self, b: BlockId, v: ValueId) {
        self.block_mut(b).insts.retain(|x| *x != v);
        self.values[v.0 as usize].def = Def::Removed;
    }

    pub fn dump(&self) -> String {
        print::function(self)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LirModule {
    pub functions: Vec<LirFunction>,
}

impl LirModule {
    pub fn get(&self, name: &str) -> Option<&LirFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut LirFunction> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn dump(&self) -> String {
        let parts: Vec<String> = self.functions.iter().map(|f| f.dump()).collect();
        parts.join("\n")
    }

    /// Number of instructions matching `pred` across all functions.
    pub fn count_insts(&self, pred: impl Fn(&Inst) -> bool + Copy) -> usize {
        self.functions.iter().map(|f| f.count_insts(pred)).sum()
    }
}
