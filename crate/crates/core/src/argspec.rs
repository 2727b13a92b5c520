//! Kernel argument specifications as written on the command line.
//!
//! ```text
//! f32            Float32 scalar type
//! Point{i64,i64} record type
//! f32[]          array of Float32
//! i64(5)         scalar value
//! Point{i64,i64}(1,2)
//! f32[](file:a.bin) | f32[](zeros:100) | f32[](random:100) | f32[](iota:100)
//! ```

use std::path::PathBuf;

use kforge_compiler::frontend::{MethodTable, Scalar, Type, Value};
use kforge_runtime::HostArray;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArgSpecError {
    #[error("bad type `{0}`")]
    Type(String),
    #[error("bad value in `{spec}`: {reason}")]
    Value { spec: String, reason: String },
    #[error("cannot read `{path}`: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArraySource {
    File(PathBuf),
    Zeros(u64),
    Random(u64),
    Iota(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Scalar(Value),
    Array(ArraySource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgSpec {
    pub ty: Type,
    pub value: Option<ArgValue>,
}

fn scalar_name(s: &str) -> Option<Scalar> {
    match s {
        "f32" => Some(Scalar::Float32),
        "f64" => Some(Scalar::Float64),
        "i32" => Some(Scalar::Int32),
        "i64" => Some(Scalar::Int64),
        "bool" => Some(Scalar::Bool),
        other => Scalar::from_name(other),
    }
}

/// Split at top-level commas (outside braces and parentheses).
fn split_top(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '{' | '(' => depth += 1,
            '}' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

pub fn parse_type(spec: &str, table: &MethodTable) -> Result<Type, ArgSpecError> {
    let bad = || ArgSpecError::Type(spec.to_string());
    let spec = spec.trim();
    if let Some(elem) = spec.strip_suffix("[]") {
        return Ok(Type::array(parse_type(elem, table)?));
    }
    if let Some(s) = scalar_name(spec) {
        return Ok(Type::Scalar(s));
    }
    let (name, rest) = spec.split_once('{').ok_or_else(bad)?;
    let inner = rest.strip_suffix('}').ok_or_else(bad)?;
    let fields = split_top(inner).into_iter().map(|f| parse_type(f, table)).collect::<Result<Vec<_>, _>>()?;
    let rt = table.instantiate_record(name.trim(), &fields).map_err(|_| bad())?;
    Ok(Type::Record(rt))
}

fn scalar_literal(text: &str, s: Scalar, spec: &str) -> Result<Value, ArgSpecError> {
    let bad = |reason: String| ArgSpecError::Value { spec: spec.to_string(), reason };
    let text = text.trim();
    Ok(match s {
        Scalar::Bool => Value::Bool(text.parse().map_err(|e| bad(format!("{e}")))?),
        Scalar::Int32 => Value::I32(text.parse().map_err(|e| bad(format!("{e}")))?),
        Scalar::Int64 => Value::I64(text.parse().map_err(|e| bad(format!("{e}")))?),
        Scalar::Float32 => Value::F32(text.parse().map_err(|e| bad(format!("{e}")))?),
        Scalar::Float64 => Value::F64(text.parse().map_err(|e| bad(format!("{e}")))?),
    })
}

fn value_of(ty: &Type, text: &str, spec: &str) -> Result<Value, ArgSpecError> {
    match ty {
        Type::Scalar(s) => scalar_literal(text, *s, spec),
        Type::Record(r) => {
            let parts = split_top(text);
            if parts.len() != r.fields.len() {
                return Err(ArgSpecError::Value { spec: spec.to_string(), reason: format!("{} expects {} fields", r.name, r.fields.len()) });
            }
            let vals = parts.iter().zip(r.fields.iter()).map(|(p, (_, s))| scalar_literal(p, *s, spec)).collect::<Result<Vec<_>, _>>()?;
            Ok(Value::Record(r.clone(), vals.into()))
        }
        other => Err(ArgSpecError::Value { spec: spec.to_string(), reason: format!("no literal syntax for {other}") }),
    }
}

/// Parse `TYPE` or `TYPE(VALUE)`.
pub fn parse_arg(spec: &str, table: &MethodTable) -> Result<ArgSpec, ArgSpecError> {
    let spec = spec.trim();
    let Some(body) = spec.strip_suffix(')') else {
        return Ok(ArgSpec { ty: parse_type(spec, table)?, value: None });
    };
    // The value starts at the first parenthesis that is not inside a record type.
    let open = spec.find('(').ok_or_else(|| ArgSpecError::Type(spec.to_string()))?;
    let ty = parse_type(&spec[..open], table)?;
    let text = &body[open + 1..];
    let bad = |reason: &str| ArgSpecError::Value { spec: spec.to_string(), reason: reason.to_string() };
    let value = match &ty {
        Type::Array(_) => {
            let (kind, rest) = text.split_once(':').ok_or_else(|| bad("expected file:, zeros:, random: or iota:"))?;
            let count = || rest.trim().parse::<u64>().map_err(|_| bad("expected an element count"));
            ArgValue::Array(match kind {
                "file" => ArraySource::File(PathBuf::from(rest)),
                "zeros" => ArraySource::Zeros(count()?),
                "random" => ArraySource::Random(count()?),
                "iota" => ArraySource::Iota(count()?),
                _ => return Err(bad("expected file:, zeros:, random: or iota:")),
            })
        }
        t => ArgValue::Scalar(value_of(t, text, spec)?),
    };
    Ok(ArgSpec { ty, value: Some(value) })
}

fn random_scalar(s: Scalar, rng: &mut ChaCha8Rng) -> Value {
    match s {
        Scalar::Bool => Value::Bool(rng.gen()),
        Scalar::Int32 => Value::I32(rng.gen_range(-100..100)),
        Scalar::Int64 => Value::I64(rng.gen_range(-100..100)),
        Scalar::Float32 => Value::F32(rng.gen()),
        Scalar::Float64 => Value::F64(rng.gen()),
    }
}

fn iota_scalar(s: Scalar, i: u64) -> Value {
    match s {
        Scalar::Bool => Value::Bool(i % 2 == 1),
        Scalar::Int32 => Value::I32(i as i32),
        Scalar::Int64 => Value::I64(i as i64),
        Scalar::Float32 => Value::F32(i as f32),
        Scalar::Float64 => Value::F64(i as f64),
    }
}

fn element(elem: &Type, gen: &mut dyn FnMut(Scalar) -> Value) -> Value {
    match elem {
        Type::Scalar(s) => gen(*s),
        Type::Record(r) => Value::Record(r.clone(), r.fields.iter().map(|(_, s)| gen(*s)).collect::<Vec<_>>().into()),
        _ => Value::Nothing,
    }
}

/// Materialize an array argument on the host.
pub fn host_array(elem: &Type, source: &ArraySource, rng: &mut ChaCha8Rng) -> Result<HostArray, ArgSpecError> {
    let build = |vals: Vec<Value>| {
        HostArray::from_values(elem.clone(), &vals).map_err(|e| ArgSpecError::Value { spec: format!("{elem}[]"), reason: e.to_string() })
    };
    match source {
        ArraySource::File(path) => {
            let file = std::fs::File::open(path).map_err(|e| ArgSpecError::File { path: path.display().to_string(), reason: e.to_string() })?;
            HostArray::read_from(elem.clone(), std::io::BufReader::new(file))
                .map_err(|e| ArgSpecError::File { path: path.display().to_string(), reason: e.to_string() })
        }
        ArraySource::Zeros(n) => build((0..*n).map(|_| element(elem, &mut |s| iota_scalar(s, 0))).collect()),
        ArraySource::Iota(n) => build((1..=*n).map(|i| element(elem, &mut |s| iota_scalar(s, i))).collect()),
        ArraySource::Random(n) => build((0..*n).map(|_| element(elem, &mut |s| random_scalar(s, rng))).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kforge_compiler::frontend::parse;

    fn table() -> MethodTable {
        let mut t = MethodTable::new();
        t.load(&parse("record Point x; y end\n").unwrap()).unwrap();
        t
    }

    #[test]
    fn types() {
        let t = table();
        assert_eq!(parse_type("f32[]", &t).unwrap(), Type::array(Type::F32));
        assert_eq!(parse_type("Int64", &t).unwrap(), Type::I64);
        let p = parse_type("Point{i64,f64}", &t).unwrap();
        assert_eq!(p.size(), 16);
        assert!(parse_type("Nope{i64}", &t).is_err());
        assert!(parse_type("f16", &t).is_err());
    }

    #[test]
    fn values() {
        let t = table();
        let a = parse_arg("f32[](file:dir/a.bin)", &t).unwrap();
        assert_eq!(a.value, Some(ArgValue::Array(ArraySource::File("dir/a.bin".into()))));
        assert_eq!(parse_arg("i64(-5)", &t).unwrap().value, Some(ArgValue::Scalar(Value::I64(-5))));
        let p = parse_arg("Point{i64,i64}(1, 2)", &t).unwrap();
        assert!(matches!(p.value, Some(ArgValue::Scalar(Value::Record(_, _)))));
        assert!(parse_arg("i64(x)", &t).is_err());
        assert!(parse_arg("f32[](many:3)", &t).is_err());
    }
}
