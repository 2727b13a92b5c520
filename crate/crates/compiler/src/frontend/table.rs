//! Method table: named methods, multiple dispatch and definition ages.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::ast::{Ast, FunctionDef, Item, RecordDef, TypeExpr};
use super::types::{RecordType, Scalar, Type, TypePattern};
use crate::span::Span;

static NEXT_METHOD_ID: AtomicU64 = AtomicU64::new(1);
static NEXT_TABLE_ID: AtomicU64 = AtomicU64::new(1);

/// Process-wide unique method identity; stable across redefinitions with the
/// same signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodId(pub u64);

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableId(pub u64);

#[derive(Debug, Clone)]
pub struct MethodParam {
    pub name: String,
    pub constraint: TypePattern,
}

#[derive(Debug, Clone)]
pub struct Method {
    pub id: MethodId,
    pub table: TableId,
    pub name: String,
    pub params: Vec<MethodParam>,
    pub body: Arc<FunctionDef>,
    /// World age at definition.
    pub age: u64,
}

impl Method {
    pub fn applicable(&self, args: &[Type]) -> bool {
        self.params.len() == args.len()
            && self.params.iter().zip(args).all(|(p, t)| p.constraint.matches(t))
    }

    /// (constrained parameter count, exact-type count); higher is more specific.
    pub fn specificity(&self) -> (usize, usize) {
        let constrained = self.params.iter().filter(|p| p.constraint.is_constrained()).count();
        let exact = self.params.iter().filter(|p| p.constraint.is_exact()).count();
        (constrained, exact)
    }

    pub fn signature(&self) -> String {
        let ps: Vec<String> = self
            .params
            .iter()
            .map(|p| match p.constraint {
                TypePattern::Any => p.name.clone(),
                ref c => format!("{}::{c}", p.name),
            })
            .collect();
        format!("{}({})", self.name, ps.join(", "))
    }
}

#[derive(Debug, Clone)]
pub struct RecordDecl {
    pub name: Arc<str>,
    pub fields: Vec<(Arc<str>, Option<Scalar>)>,
    pub mutable: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TableError {
    #[error("{span}: duplicate parameter name `{name}`")]
    DuplicateParam { name: String, span: Span },
    #[error("{span}: type `{name}` expects {expected} parameter(s), got {got}")]
    ConstraintArity { name: String, expected: usize, got: usize, span: Span },
    #[error("{span}: unknown type `{name}`")]
    UnknownType { name: String, span: Span },
    #[error("{span}: record field `{field}` must have a scalar type")]
    BadFieldType { field: String, span: Span },
    #[error("no method matching {name}({})", join_types(.args))]
    NoMethod { name: String, args: Vec<Type> },
    #[error("ambiguous call {name}({}): candidates {}", join_types(.args), .candidates.join(", "))]
    Ambiguous { name: String, args: Vec<Type>, candidates: Vec<String> },
    #[error("record `{name}` expects {expected} field(s), got {got}")]
    RecordArity { name: String, expected: usize, got: usize },
    #[error("record `{name}` field `{field}` cannot hold a value of type {ty}")]
    RecordFieldType { name: String, field: String, ty: Type },
}

pub(crate) fn join_types(ts: &[Type]) -> String {
    ts.iter().map(|t| format!("::{t}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone)]
pub struct MethodTable {
    id: TableId,
    methods: BTreeMap<String, Vec<Arc<Method>>>,
    records: HashMap<String, Arc<RecordDecl>>,
    world_age: u64,
    generations: HashMap<String, u64>,
}

impl Default for MethodTable {
    fn default() -> Self {
        Self::new()
    }
}

impl MethodTable {
    pub fn new() -> Self {
        MethodTable {
            id: TableId(NEXT_TABLE_ID.fetch_add(1, Ordering::Relaxed)),
            methods: BTreeMap::new(),
            records: HashMap::new(),
            world_age: 0,
            generations: HashMap::new(),
        }
    }

    pub fn id(&self) -> TableId {
        self.id
    }

    pub fn world_age(&self) -> u64 {
        self.world_age
    }

    /// Define every record and function of a parsed program, records first.
    pub fn load(&mut self, ast: &Ast) -> Result<Vec<Arc<Method>>, TableError> {
        for item in &ast.items {
            if let Item::Record(r) = item {
                self.define_record(r)?;
            }
        }
        let mut out = Vec::new();
        for item in &ast.items {
            if let Item::Function(f) = item {
                out.push(self.define(f)?);
            }
        }
        Ok(out)
    }

    pub fn define_record(&mut self, def: &RecordDef) -> Result<Arc<RecordDecl>, TableError> {
        let mut fields = Vec::new();
        for fd in &def.fields {
            let ty = match &fd.ty {
                None => None,
                Some(t) => match self.resolve_type(t)? {
                    TypePattern::Exact(Type::Scalar(s)) => Some(s),
                    _ => {
                        return Err(TableError::BadFieldType { field: fd.name.clone(), span: fd.span })
                    }
                },
            };
            fields.push((Arc::from(fd.name.as_str()), ty));
        }
        let decl = Arc::new(RecordDecl {
            name: Arc::from(def.name.as_str()),
            fields,
            mutable: def.mutable,
        });
        self.records.insert(def.name.clone(), decl.clone());
        Ok(decl)
    }

    pub fn record(&self, name: &str) -> Option<&Arc<RecordDecl>> {
        self.records.get(name)
    }

    /// Monomorphize a record for the given constructor argument types.
    pub fn instantiate_record(&self, name: &str, args: &[Type]) -> Result<Arc<RecordType>, TableError> {
        let decl = self.records.get(name).ok_or_else(|| TableError::UnknownType {
            name: name.to_string(),
            span: Span::default(),
        })?;
        if decl.fields.len() != args.len() {
            return Err(TableError::RecordArity {
                name: name.to_string(),
                expected: decl.fields.len(),
                got: args.len(),
            });
        }
        let mut fields = Vec::with_capacity(args.len());
        for ((fname, declared), arg) in decl.fields.iter().zip(args) {
            let arg_scalar = arg.as_scalar();
            let ty = match (declared, arg_scalar) {
                (Some(d), Some(a)) if d == &a || (d.is_numeric() && a.is_numeric()) => *d,
                (None, Some(a)) => a,
                _ => {
                    return Err(TableError::RecordFieldType {
                        name: name.to_string(),
                        field: fname.to_string(),
                        ty: arg.clone(),
                    })
                }
            };
            fields.push((fname.clone(), ty));
        }
        Ok(Arc::new(RecordType {
            name: decl.name.clone(),
            fields,
            mutable: decl.mutable,
        }))
    }

    /// Resolve a type expression to a parameter constraint.
    pub fn resolve_type(&self, t: &TypeExpr) -> Result<TypePattern, TableError> {
        let arity = |expected: &[usize]| -> Result<(), TableError> {
            if expected.contains(&t.args.len()) {
                Ok(())
            } else {
                Err(TableError::ConstraintArity {
                    name: t.name.clone(),
                    expected: *expected.last().unwrap(),
                    got: t.args.len(),
                    span: t.span,
                })
            }
        };
        if let Some(s) = Scalar::from_name(&t.name) {
            arity(&[0])?;
            return Ok(TypePattern::Exact(Type::Scalar(s)));
        }
        match t.name.as_str() {
            "Any" => {
                arity(&[0])?;
                Ok(TypePattern::Any)
            }
            "Nothing" => {
                arity(&[0])?;
                Ok(TypePattern::Exact(Type::Nothing))
            }
            "Array" => {
                arity(&[0, 1])?;
                match t.args.first() {
                    None => Ok(TypePattern::ArrayOf(Box::new(TypePattern::Any))),
                    Some(e) => Ok(TypePattern::ArrayOf(Box::new(self.resolve_type(e)?))),
                }
            }
            name => {
                let decl = self.records.get(name).ok_or_else(|| TableError::UnknownType {
                    name: name.to_string(),
                    span: t.span,
                })?;
                if t.args.is_empty() {
                    return Ok(TypePattern::RecordName(decl.name.clone()));
                }
                arity(&[0, decl.fields.len()])?;
                let mut args = Vec::new();
                for a in &t.args {
                    match self.resolve_type(a)? {
                        TypePattern::Exact(ty) => args.push(ty),
                        _ => {
                            return Err(TableError::UnknownType {
                                name: format!("{name}{{...}}"),
                                span: a.span,
                            })
                        }
                    }
                }
                let rt = self.instantiate_record(name, &args)?;
                Ok(TypePattern::Exact(Type::Record(rt)))
            }
        }
    }

    /// Store a method; redefinition of an identical signature replaces the
    /// prior method but keeps its identity. The world age always advances.
    pub fn define(&mut self, def: &FunctionDef) -> Result<Arc<Method>, TableError> {
        let mut params = Vec::with_capacity(def.params.len());
        for (i, p) in def.params.iter().enumerate() {
            if def.params[..i].iter().any(|q| q.name == p.name) {
                return Err(TableError::DuplicateParam { name: p.name.clone(), span: p.span });
            }
            let constraint = match &p.ty {
                None => TypePattern::Any,
                Some(t) => self.resolve_type(t)?,
            };
            params.push(MethodParam { name: p.name.clone(), constraint });
        }
        self.world_age += 1;
        *self.generations.entry(def.name.clone()).or_insert(0) += 1;
        let list = self.methods.entry(def.name.clone()).or_default();
        let same_sig = |m: &Arc<Method>| {
            m.params.len() == params.len()
                && m.params.iter().zip(&params).all(|(a, b)| a.constraint == b.constraint)
        };
        let existing = list.iter().position(same_sig);
        let id = match existing {
            Some(i) => list[i].id,
            None => MethodId(NEXT_METHOD_ID.fetch_add(1, Ordering::Relaxed)),
        };
        let method = Arc::new(Method {
            id,
            table: self.id,
            name: def.name.clone(),
            params,
            body: Arc::new(def.clone()),
            age: self.world_age,
        });
        match existing {
            Some(i) => list[i] = method.clone(),
            None => list.push(method.clone()),
        }
        Ok(method)
    }

    pub fn methods(&self, name: &str) -> &[Arc<Method>] {
        self.methods.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn has_methods(&self, name: &str) -> bool {
        !self.methods(name).is_empty()
    }

    pub fn all_methods(&self) -> impl Iterator<Item = &Arc<Method>> {
        self.methods.values().flatten()
    }

    /// Current age of a method of this table; `None` when it lives elsewhere.
    pub fn method_age(&self, id: MethodId) -> Option<u64> {
        self.all_methods().find(|m| m.id == id).map(|m| m.age)
    }

    /// Number of definitions ever made under `name`.
    pub fn generation(&self, name: &str) -> u64 {
        self.generations.get(name).copied().unwrap_or(0)
    }

    /// Select the unique most specific applicable method.
    pub fn dispatch(&self, name: &str, args: &[Type]) -> Result<Arc<Method>, TableError> {
        select_most_specific(name, self.methods(name), args)
    }
}

pub(crate) fn select_most_specific(
    name: &str,
    candidates: &[Arc<Method>],
    args: &[Type],
) -> Result<Arc<Method>, TableError> {
    let applicable: Vec<&Arc<Method>> = candidates.iter().filter(|m| m.applicable(args)).collect();
    let best = applicable.iter().map(|m| m.specificity()).max();
    let Some(best) = best else {
        return Err(TableError::NoMethod { name: name.to_string(), args: args.to_vec() });
    };
    let top: Vec<&&Arc<Method>> = applicable.iter().filter(|m| m.specificity() == best).collect();
    if top.len() > 1 {
        return Err(TableError::Ambiguous {
            name: name.to_string(),
            args: args.to_vec(),
            candidates: top.iter().map(|m| m.signature()).collect(),
        });
    }
    Ok((*top[0]).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::parse;

    fn table(src: &str) -> MethodTable {
        let mut t = MethodTable::new();
        t.load(&parse(src).unwrap()).unwrap();
        t
    }

    fn rec(t: &MethodTable, name: &str) -> Type {
        Type::Record(t.instantiate_record(name, &[Type::F64, Type::F64]).unwrap())
    }

    const SHAPES: &str = "record Rect x; y end\nrecord Line x; y end\n\
        function intersect(a::Rect, b::Rect) return a end\n\
        function intersect(a::Rect, b::Line) return b end\n";

    #[test]
    fn narrowly_typed_methods_coexist() {
        let t = table(SHAPES);
        assert_eq!(t.methods("intersect").len(), 2);
        let m = t.dispatch("intersect", &[rec(&t, "Rect"), rec(&t, "Line")]).unwrap();
        assert_eq!(m.signature(), "intersect(a::Rect, b::Line)");
    }

    #[test]
    fn singleton_unconstrained_method_accepts_anything() {
        let t = table("function f(x) return x end");
        for ty in [Type::I64, Type::F32, Type::BOOL] {
            assert_eq!(t.dispatch("f", &[ty]).unwrap().name, "f");
        }
    }

    #[test]
    fn exact_beats_unconstrained() {
        let t = table("function f(x) return 1 end\nfunction f(x::Int64) return 2 end");
        let m = t.dispatch("f", &[Type::I64]).unwrap();
        assert_eq!(m.params[0].constraint, TypePattern::Exact(Type::I64));
        let m = t.dispatch("f", &[Type::F64]).unwrap();
        assert_eq!(m.params[0].constraint, TypePattern::Any);
    }

    #[test]
    fn equally_specific_methods_are_ambiguous() {
        let t = table("function g(a::Int64, b) return 1 end\nfunction g(a, b::Int64) return 2 end");
        let err = t.dispatch("g", &[Type::I64, Type::I64]).unwrap_err();
        assert!(matches!(err, TableError::Ambiguous { .. }), "{err}");
    }

    #[test]
    fn no_applicable_method() {
        let t = table(SHAPES);
        let err = t.dispatch("intersect", &[Type::I64, Type::I64]).unwrap_err();
        assert!(matches!(err, TableError::NoMethod { .. }));
    }

    #[test]
    fn ages_increase_and_redefinition_replaces() {
        let mut t = MethodTable::new();
        let ast = parse("function f(x) return 1 end\nfunction g(x) return 2 end\nfunction f(x) return 3 end").unwrap();
        let fs: Vec<_> = ast.functions().collect();
        let f1 = t.define(fs[0]).unwrap();
        let g = t.define(fs[1]).unwrap();
        assert_eq!(g.age, f1.age + 1);
        let f2 = t.define(fs[2]).unwrap();
        assert!(f2.age > f1.age);
        assert_eq!(f2.id, f1.id);
        assert_eq!(t.methods("f").len(), 1);
        assert!(t.world_age() >= f2.age);
        assert_eq!(t.method_age(f1.id), Some(f2.age));
    }

    #[test]
    fn duplicate_params_rejected() {
        let mut t = MethodTable::new();
        let ast = parse("function f(x, x) return x end").unwrap();
        let err = t.define(ast.functions().next().unwrap()).unwrap_err();
        assert!(matches!(err, TableError::DuplicateParam { .. }));
    }

    #[test]
    fn constraint_arity_checked() {
        let mut t = MethodTable::new();
        let ast = parse("function f(x::Array{Float32, Int64}) return x end").unwrap();
        let err = t.define(ast.functions().next().unwrap()).unwrap_err();
        assert!(matches!(err, TableError::ConstraintArity { .. }), "{err}");
    }

    /// Independent oracle: brute-force the maximum specificity score and count
    /// how many applicable methods attain it.
    #[test]
    fn dispatch_agrees_with_bruteforce_enumeration() {
        let src = "function h(a, b) return 0 end\n\
                   function h(a::Int64, b) return 1 end\n\
                   function h(a, b::Int64) return 2 end\n\
                   function h(a::Int64, b::Float64) return 3 end\n\
                   function h(a::Float64, b::Float64) return 4 end\n";
        let t = table(src);
        let types = [Type::I64, Type::F64, Type::F32];
        for a in &types {
            for b in &types {
                let args = [a.clone(), b.clone()];
                let scores: Vec<(usize, usize)> = t
                    .methods("h")
                    .iter()
                    .filter(|m| m.params.iter().zip(&args).all(|(p, t)| p.constraint.matches(t)))
                    .map(|m| {
                        let c = m.params.iter().filter(|p| p.constraint != TypePattern::Any).count();
                        (c, c)
                    })
                    .collect();
                let max = scores.iter().max().copied();
                let ties = scores.iter().filter(|s| Some(**s) == max).count();
                match t.dispatch("h", &args) {
                    Ok(_) => assert_eq!(ties, 1, "{args:?}"),
                    Err(TableError::Ambiguous { .. }) => assert!(ties > 1, "{args:?}"),
                    Err(e) => panic!("{e}"),
                }
            }
        }
        // (Int64, Int64): h(a::Int64, b) and h(a, b::Int64) tie.
        assert!(matches!(
            t.dispatch("h", &[Type::I64, Type::I64]),
            Err(TableError::Ambiguous { .. })
        ));
    }
}
