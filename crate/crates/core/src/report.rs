//! Report values: JSON trees in which every number sits below an object
//! carrying a `"provenance"` key. Keys are sorted (serde_json's default
//! map), so serialization is canonical.

use serde_json::{json, Map, Value};

use crate::geometry::{ConeFg, ConeH};
use crate::tanconvex::PolytopeV;
use crate::Provenance;

pub fn tag(p: Provenance) -> Value {
    serde_json::to_value(p).expect("provenance serializes")
}

/// An object with the given provenance and fields.
pub fn tagged(p: Provenance, fields: Value) -> Value {
    let mut map = match fields {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    map.insert("provenance".into(), tag(p));
    Value::Object(map)
}

pub fn point(p: Provenance, x: &[f64]) -> Value {
    tagged(p, json!({ "point": x }))
}

pub fn cone_fg(p: Provenance, c: &ConeFg) -> Value {
    tagged(p, json!({ "rays": c.rays(), "is_zero": c.is_zero() }))
}

pub fn cone_h(p: Provenance, c: &ConeH) -> Value {
    tagged(p, json!({ "normals": c.normals(), "generators": c.generators().rays() }))
}

pub fn polytope(p: Provenance, poly: &PolytopeV) -> Value {
    tagged(p, json!({ "vertices": poly.vertices() }))
}

/// Path of the first number without a tagged ancestor.
pub fn untagged_number(v: &Value) -> Option<String> {
    fn walk(v: &Value, tagged: bool, path: &mut Vec<String>) -> Option<String> {
        match v {
            Value::Number(_) if !tagged => Some(if path.is_empty() { "/".into() } else { path.join("/") }),
            Value::Array(items) => items.iter().enumerate().find_map(|(i, item)| {
                path.push(i.to_string());
                let r = walk(item, tagged, path);
                path.pop();
                r
            }),
            Value::Object(map) => {
                let here = tagged || map.contains_key("provenance");
                map.iter().find_map(|(k, item)| {
                    path.push(k.clone());
                    let r = walk(item, here, path);
                    path.pop();
                    r
                })
            }
            _ => None,
        }
    }
    walk(v, false, &mut Vec::new())
}

/// Sorted-key pretty JSON with a trailing newline.
pub fn canonical(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Indented `key: value` rendering; arrays of scalars stay on one line and
/// provenance tags are folded into the parent's heading.
pub fn render_text(v: &Value) -> String {
    let mut out = String::new();
    render(v, 0, &mut out);
    out
}

fn is_flat(v: &Value) -> bool {
    match v {
        Value::Array(items) => items.iter().all(|i| !i.is_object() && (!i.is_array() || is_flat(i))),
        Value::Object(_) => false,
        _ => true,
    }
}

fn inline(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => format!("[{}]", items.iter().map(inline).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

fn render(v: &Value, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(map) => {
            for (k, item) in map {
                if k == "provenance" {
                    continue;
                }
                let suffix = match item.get("provenance") {
                    Some(Value::String(p)) => format!(" ({p})"),
                    _ => String::new(),
                };
                if is_flat(item) {
                    out.push_str(&format!("{pad}{k}{suffix}: {}\n", inline(item)));
                } else {
                    out.push_str(&format!("{pad}{k}{suffix}:\n"));
                    render(item, depth + 1, out);
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                if is_flat(item) {
                    out.push_str(&format!("{pad}- {}\n", inline(item)));
                } else {
                    let suffix = match item.get("provenance") {
                        Some(Value::String(p)) => format!(" ({p})"),
                        _ => String::new(),
                    };
                    out.push_str(&format!("{pad}-{suffix}\n"));
                    render(item, depth + 1, out);
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", inline(other))),
    }
}
