//! Canonical JSON emission for reproducible artifacts.
//!
//! Objects are written with sorted keys (the default `serde_json` map is a
//! BTreeMap), every float carries 17 significant digits so values
//! round-trip exactly, and non-finite numbers degrade to `null` (JSON has
//! no encoding for them). Two runs that produce equal in-memory values
//! therefore produce byte-identical files.

use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::Path;

/// Renders a value as canonical, indented JSON with a trailing newline.
pub fn canonical(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

/// Writes canonical JSON to a file.
pub fn write_canonical(path: &Path, value: &Value) -> io::Result<()> {
    fs::write(path, canonical(value))
}

/// Hex SHA-256 of the canonical rendering; the content hash recorded in
/// manifests.
pub fn content_hash(value: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical(value).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// One float, 17 significant digits, valid JSON number syntax.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(num) => {
            if let Some(i) = num.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = num.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(f) = num.as_f64() {
                out.push_str(&format_float(f));
            } else {
                out.push_str("null");
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                out.push_str(
                    &serde_json::to_string(key).expect("string serialization is infallible"),
                );
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push('}');
        }
    }
}

fn push_indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_carry_17_significant_digits() {
        let doc = canonical(&json!({"x": 0.1, "n": 3}));
        assert!(doc.contains("1.0000000000000001e-1"), "{doc}");
        assert!(doc.contains("\"n\": 3"), "{doc}");
    }

    #[test]
    fn keys_are_sorted_and_rendering_is_stable() {
        let a = canonical(&json!({"b": 1, "a": [1.5, {"z": true, "y": null}]}));
        let b = canonical(&json!({"a": [1.5, {"y": null, "z": true}], "b": 1}));
        assert_eq!(a, b);
        let pos_a = a.find("\"a\"").unwrap();
        let pos_b = a.find("\"b\"").unwrap();
        assert!(pos_a < pos_b);
    }

    #[test]
    fn non_finite_floats_become_null() {
        let mut doc = serde_json::Map::new();
        doc.insert(
            "bad".into(),
            Value::Number(serde_json::Number::from_f64(1.0).unwrap()),
        );
        // serde_json cannot hold NaN, so exercise format_float directly.
        assert_eq!(format_float(f64::NAN), "null");
        assert_eq!(format_float(f64::INFINITY), "null");
        assert!(canonical(&Value::Object(doc)).contains("1.0000000000000000e0"));
    }

    #[test]
    fn hash_is_stable_across_key_order() {
        let a = content_hash(&json!({"b": 1, "a": 2}));
        let b = content_hash(&json!({"a": 2, "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
