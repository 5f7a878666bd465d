//! Deterministic JSON and CSV output: fixed key order, floats rounded to 12 significant digits.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Text form used in CSV cells.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let r = round_sig(x);
        if r == 0.0 { "0".into() } else { format!("{r}") }
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(x) = n.as_f64() {
                    if let Some(m) = serde_json::Number::from_f64(round_sig(x)) {
                        *n = m;
                    }
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn to_value<T: Serialize>(t: &T) -> Result<Value> {
    let mut v = serde_json::to_value(t).map_err(|e| Error::Io(e.to_string()))?;
    round_value(&mut v);
    Ok(v)
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn to_json<T: Serialize>(t: &T) -> Result<String> {
    let v = to_value(t)?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// CSV text from a header and rows of cells.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(fmt_float(2.0), "2");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
    }

    #[test]
    fn json_is_deterministic_and_ordered() {
        let v = json!({"z": 1.0 / 3.0, "a": [0.1 + 0.2, 2], "m": {"k": 1e-20 / 3.0}});
        let a = to_json(&v).unwrap();
        assert_eq!(a, to_json(&v).unwrap());
        assert!(a.find("\"z\"").unwrap() < a.find("\"a\"").unwrap());
        assert!(a.contains("0.333333333333"));
        assert!(a.contains("0.3"));
        assert!(!a.contains("0.30000000000000004"));
    }
}
