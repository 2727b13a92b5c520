use super::verify::check_inst;
use super::*;

/// Appends type-checked instructions to a function. Emitting into a block that
/// already has a terminator is an error.
pub struct IrBuilder<'f> {
    f: &'f mut LirFunction,
    cur: BlockId,
    span: Option<Span>,
}

impl<'f> IrBuilder<'f> {
    pub fn new(f: &'f mut LirFunction) -> Self {
        let cur = f.entry();
        IrBuilder { f, cur, span: None }
    }

    pub fn function(&self) -> &LirFunction {
        self.f
    }

    pub fn function_mut(&mut self) -> &mut LirFunction {
        self.f
    }

    pub fn set_span(&mut self, span: Option<Span>) {
        self.span = span;
    }

    pub fn new_block(&mut self) -> BlockId {
        self.f.add_block()
    }

    pub fn switch_to(&mut self, b: BlockId) {
        self.cur = b;
    }

    pub fn current_block(&self) -> BlockId {
        self.cur
    }

    pub fn is_terminated(&self) -> bool {
        self.f.block(self.cur).term.is_some()
    }

    pub fn ty(&self, v: ValueId) -> &LirType {
        self.f.ty(v)
    }

    fn make(&mut self, inst: Inst, ty: LirType) -> Result<ValueId, IrError> {
        check_inst(self.f, &inst, &ty).map_err(IrError::Build)?;
        Ok(self.f.new_inst(inst, ty, self.span))
    }

    pub fn emit(&mut self, inst: Inst, ty: LirType) -> Result<ValueId, IrError> {
        if self.is_terminated() {
            return Err(IrError::Build(format!("{} is already terminated", self.cur)));
        }
        let v = self.make(inst, ty)?;
        self.f.block_mut(self.cur).insts.push(v);
        Ok(v)
    }

    pub fn imm(&mut self, i: Imm) -> Result<ValueId, IrError> {
        self.emit(Inst::Const(ConstVal::Imm(i)), i.ty())
    }

    pub fn bool(&mut self, b: bool) -> Result<ValueId, IrError> {
        self.imm(Imm::I1(b))
    }

    pub fn i32(&mut self, x: i32) -> Result<ValueId, IrError> {
        self.imm(Imm::I32(x))
    }

    pub fn i64(&mut self, x: i64) -> Result<ValueId, IrError> {
        self.imm(Imm::I64(x))
    }

    pub fn f32(&mut self, x: f32) -> Result<ValueId, IrError> {
        self.imm(Imm::F32(x))
    }

    pub fn f64(&mut self, x: f64) -> Result<ValueId, IrError> {
        self.imm(Imm::F64(x))
    }

    pub fn zero(&mut self, ty: LirType) -> Result<ValueId, IrError> {
        self.emit(Inst::Const(ConstVal::Zero), ty)
    }

    pub fn bin(&mut self, k: BinKind, a: ValueId, b: ValueId) -> Result<ValueId, IrError> {
        let ty = self.ty(a).clone();
        self.emit(Inst::Bin(k, a, b), ty)
    }

    pub fn un(&mut self, k: UnKind, a: ValueId) -> Result<ValueId, IrError> {
        let ty = self.ty(a).clone();
        self.emit(Inst::Un(k, a), ty)
    }

    pub fn cmp(&mut self, p: CmpPred, a: ValueId, b: ValueId) -> Result<ValueId, IrError> {
        self.emit(Inst::Cmp(p, a, b), LirType::I1)
    }

    pub fn cast(&mut self, k: CastKind, a: ValueId, to: LirType) -> Result<ValueId, IrError> {
        self.emit(Inst::Cast(k, a), to)
    }

    pub fn select(&mut self, c: ValueId, a: ValueId, b: ValueId) -> Result<ValueId, IrError> {
        let ty = self.ty(a).clone();
        self.emit(Inst::Select(c, a, b), ty)
    }

    pub fn extract(&mut self, a: ValueId, k: u32) -> Result<ValueId, IrError> {
        let ty = self.ty(a).fields().get(k as usize).cloned().unwrap_or(LirType::Void);
        self.emit(Inst::Extract(a, k), ty)
    }

    pub fn insert(&mut self, a: ValueId, k: u32, v: ValueId) -> Result<ValueId, IrError> {
        let ty = self.ty(a).clone();
        self.emit(Inst::Insert(a, k, v), ty)
    }

    pub fn make_struct(&mut self, ty: LirType, fields: Vec<ValueId>) -> Result<ValueId, IrError> {
        self.emit(Inst::MakeStruct(fields), ty)
    }

    pub fn load(&mut self, space: Space, ty: LirType, ptr: ValueId) -> Result<ValueId, IrError> {
        self.emit(Inst::Load { space, ptr }, ty)
    }

    pub fn store(&mut self, space: Space, ptr: ValueId, value: ValueId) -> Result<ValueId, IrError> {
        self.emit(Inst::Store { space, ptr, value }, LirType::Void)
    }

    pub fn addrcast(&mut self, ptr: ValueId, to: Space) -> Result<ValueId, IrError> {
        self.emit(Inst::AddrCast(ptr), LirType::Ptr(to))
    }

    pub fn elemaddr(&mut self, elem: LirType, ptr: ValueId, index: ValueId) -> Result<ValueId, IrError> {
        let ty = self.ty(ptr).clone();
        self.emit(Inst::ElemAddr { elem, ptr, index }, ty)
    }

    pub fn fieldaddr(&mut self, agg: LirType, ptr: ValueId, field: u32) -> Result<ValueId, IrError> {
        let ty = self.ty(ptr).clone();
        self.emit(Inst::FieldAddr { agg, ptr, field }, ty)
    }

    /// Stack slot, hoisted to the top of the entry block.
    pub fn alloc_local(&mut self, ty: LirType) -> Result<ValueId, IrError> {
        let v = self.make(Inst::AllocLocal(ty), LirType::Ptr(Space::Local))?;
        let entry = self.f.entry();
        let at = {
            let f = &*self.f;
            f.block(entry)
                .insts
                .iter()
                .take_while(|x| matches!(f.inst(**x), Some(Inst::AllocLocal(_))))
                .count()
        };
        self.f.block_mut(entry).insts.insert(at, v);
        Ok(v)
    }

    pub fn call(&mut self, callee: &str, args: Vec<ValueId>, ret: LirType) -> Result<ValueId, IrError> {
        self.emit(Inst::Call { callee: callee.to_string(), args }, ret)
    }

    pub fn intrinsic(&mut self, name: &str, args: Vec<ValueId>, ret: LirType) -> Result<ValueId, IrError> {
        self.emit(Inst::Intrinsic { name: name.to_string(), args }, ret)
    }

    pub fn rtcall(&mut self, name: &str, args: Vec<ValueId>, ret: LirType) -> Result<ValueId, IrError> {
        self.emit(Inst::RtCall { name: name.to_string(), args }, ret)
    }

    /// Phi at the head of the current block.
    pub fn phi(&mut self, ty: LirType, incoming: Vec<(BlockId, ValueId)>) -> Result<ValueId, IrError> {
        let v = self.make(Inst::Phi(incoming), ty)?;
        let cur = self.cur;
        let at = {
            let f = &*self.f;
            f.block(cur).insts.iter().take_while(|x| matches!(f.inst(**x), Some(Inst::Phi(_)))).count()
        };
        self.f.block_mut(cur).insts.insert(at, v);
        Ok(v)
    }

    fn terminate(&mut self, t: Terminator) -> Result<(), IrError> {
        if self.is_terminated() {
            return Err(IrError::Build(format!("{} is already terminated", self.cur)));
        }
        self.f.block_mut(self.cur).term = Some(t);
        Ok(())
    }

    pub fn br(&mut self, to: BlockId) -> Result<(), IrError> {
        self.terminate(Terminator::Br(to))
    }

    pub fn cond_br(&mut self, c: ValueId, t: BlockId, e: BlockId) -> Result<(), IrError> {
        if *self.ty(c) != LirType::I1 {
            return Err(IrError::Build("branch condition must be i1".into()));
        }
        self.terminate(Terminator::CondBr(c, t, e))
    }

    pub fn ret(&mut self, v: Option<ValueId>) -> Result<(), IrError> {
        let got = v.map(|v| self.ty(v).clone()).unwrap_or(LirType::Void);
        if got != self.f.ret {
            return Err(IrError::Build(format!("return of {got} from function returning {}", self.f.ret)));
        }
        self.terminate(Terminator::Ret(v))
    }

    pub fn trap(&mut self, code: ValueId) -> Result<(), IrError> {
        if *self.ty(code) != LirType::I32 {
            return Err(IrError::Build("trap code must be i32".into()));
        }
        self.terminate(Terminator::Trap(code))
    }

    pub fn unreachable(&mut self) -> Result<(), IrError> {
        self.terminate(Terminator::Unreachable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ill_typed_instructions() {
        let mut f = LirFunction::new("t", LirType::Void);
        let mut b = IrBuilder::new(&mut f);
        let x = b.i32(1).unwrap();
        let y = b.f32(1.0).unwrap();
        assert!(b.bin(BinKind::Add, x, y).is_err());
        assert!(b.bin(BinKind::FAdd, x, x).is_err());
        let g = b.zero(LirType::Ptr(Space::Global)).unwrap();
        assert!(b.load(Space::Shared, LirType::F32, g).is_err());
        assert!(b.load(Space::Global, LirType::F32, g).is_ok());
        b.ret(None).unwrap();
        assert!(b.i32(3).is_err());
    }

    #[test]
    fn allocas_are_hoisted() {
        let mut f = LirFunction::new("t", LirType::Void);
        let mut b = IrBuilder::new(&mut f);
        let x = b.i32(1).unwrap();
        let s = b.alloc_local(LirType::I32).unwrap();
        b.store(Space::Local, s, x).unwrap();
        b.ret(None).unwrap();
        assert_eq!(f.block(BlockId(0)).insts[0], s);
        verify_function(&f).unwrap();
    }
}
