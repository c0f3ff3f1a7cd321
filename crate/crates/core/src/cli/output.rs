use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{invalid, CliResult};
use crate::numerics::round_sig;

fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x, 12)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats rounded to 12 significant digits.
pub fn rounded_json<S: Serialize>(value: &S) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| invalid(e.to_string()))?;
    let text = serde_json::to_string_pretty(&round_floats(v)).map_err(|e| invalid(e.to_string()))?;
    Ok(text + "\n")
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    write_bytes(path, rounded_json(value)?.as_bytes())
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(header.len() + 32 * rows.len());
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
}
