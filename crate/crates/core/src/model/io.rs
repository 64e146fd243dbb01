//! JSON model files.
//!
//! ```json
//! {"domains":[2,2],"unary":[[0,1],[0,0]],"factors":[{"vars":[0,1],"table":[0,"-inf",0,2]}]}
//! ```
//!
//! `-inf` is written as the string `"-inf"`. Tables use the canonical
//! row-major layout. The writer puts each table on its own line so that
//! validation errors can name a line.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::{Factor, Location, Model};
use crate::error::{Error, Result};

/// A real number or `-inf`, serialized as a JSON number or `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsonReal(pub f64);

impl Serialize for JsonReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for JsonReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = JsonReal;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or the string \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<JsonReal, E> {
                Ok(JsonReal(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<JsonReal, E> {
                Ok(JsonReal(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<JsonReal, E> {
                Ok(JsonReal(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<JsonReal, E> {
                match v {
                    "-inf" => Ok(JsonReal(f64::NEG_INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    domains: Vec<usize>,
    unary: Vec<Vec<JsonReal>>,
    factors: Vec<FactorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorFile {
    vars: Vec<usize>,
    table: Vec<JsonReal>,
}

fn unwrap_reals(v: Vec<JsonReal>) -> Vec<f64> {
    v.into_iter().map(|x| x.0).collect()
}

impl Model {
    /// Parses and validates a model document.
    pub fn from_json_str(src: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(src)
            .map_err(|e| Error::Validation(format!("line {}: {e}", e.line())))?;
        let factors = file
            .factors
            .into_iter()
            .map(|f| Factor {
                vars: f.vars,
                table: unwrap_reals(f.table),
            })
            .collect();
        let unary = file.unary.into_iter().map(unwrap_reals).collect();
        Model::new_located(file.domains, unary, factors).map_err(|(loc, msg)| {
            let (line, what) = locate(src, loc);
            Error::Validation(format!("line {line}: {what}: {msg}"))
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Model> {
        let src = std::fs::read_to_string(path)?;
        Model::from_json_str(&src)
    }

    /// Serializes in canonical factor order, one table per line.
    pub fn to_json_string(&self) -> String {
        let reals = |t: &[f64]| {
            let v: Vec<JsonReal> = t.iter().copied().map(JsonReal).collect();
            serde_json::to_string(&v).expect("finite or -inf reals always serialize")
        };
        let mut out = String::from("{\n");
        let _ = writeln!(
            out,
            "  \"domains\": {},",
            serde_json::to_string(self.graph.domains()).unwrap()
        );
        out.push_str("  \"unary\": [");
        for (v, t) in self.theta.unary.iter().enumerate() {
            let sep = if v + 1 < self.theta.unary.len() { "," } else { "" };
            let _ = write!(out, "\n    {}{sep}", reals(t));
        }
        out.push_str(if self.theta.unary.is_empty() { "],\n" } else { "\n  ],\n" });
        out.push_str("  \"factors\": [");
        let n = self.theta.factors.len();
        for (e, t) in self.theta.factors.iter().enumerate() {
            let sep = if e + 1 < n { "," } else { "" };
            let _ = write!(
                out,
                "\n    {{\"vars\": {}, \"table\": {}}}{sep}",
                serde_json::to_string(self.graph.edge(e)).unwrap(),
                reals(t)
            );
        }
        out.push_str(if n == 0 { "]\n}\n" } else { "\n  ]\n}\n" });
        out
    }

    /// Writes the model file atomically (temp file + rename).
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json_string().as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// 1-based line of the item at `loc` in `src`, plus a description.
fn locate(src: &str, loc: Location) -> (usize, String) {
    let line_of = |offset: usize| src[..offset].bytes().filter(|&b| b == b'\n').count() + 1;
    let key = |name: &str| src.find(&format!("\"{name}\""));
    match loc {
        Location::Domains => (key("domains").map_or(1, line_of), "domains".into()),
        Location::Unary(v) => {
            // the v-th inner array after the "unary" key
            let pos = key("unary").and_then(|start| {
                let open = start + src[start..].find('[')?;
                nth_inner_array(src, open, v)
            });
            (pos.map_or(1, line_of), format!("unary table {v}"))
        }
        Location::Factor(k) => {
            let pos = key("factors").and_then(|start| {
                src[start..]
                    .match_indices("\"vars\"")
                    .nth(k)
                    .map(|(i, _)| start + i)
            });
            (pos.map_or(1, line_of), format!("factor #{k}"))
        }
    }
}

/// Byte offset of the `n`-th `[` directly nested inside the array opened at `open`.
fn nth_inner_array(src: &str, open: usize, n: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut seen = 0usize;
    let mut in_str = false;
    for (i, b) in src.bytes().enumerate().skip(open) {
        match b {
            b'"' => in_str = !in_str,
            _ if in_str => {}
            b'[' => {
                depth += 1;
                if depth == 2 {
                    if seen == n {
                        return Some(i);
                    }
                    seen += 1;
                }
            }
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"domains":[2,2],"unary":[[0,1],[0,0]],"factors":[{"vars":[0,1],"table":[0,"-inf",0,2]}]}"#;

    #[test]
    fn parses_neg_inf_strings() {
        let m = Model::from_json_str(SAMPLE).unwrap();
        assert_eq!(m.factor(0), &[0.0, f64::NEG_INFINITY, 0.0, 2.0]);
        assert_eq!(m.unary(0), &[0.0, 1.0]);
    }

    #[test]
    fn round_trips_through_text() {
        let m = Model::from_json_str(SAMPLE).unwrap();
        let text = m.to_json_string();
        assert!(text.contains("\"-inf\""));
        let back = Model::from_json_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_string(), text);
    }

    proptest::proptest! {
        #[test]
        fn reals_round_trip_bit_exactly(xs in proptest::collection::vec(-1e3f64..1e3, 4)) {
            let m = Model::new(vec![2, 2], vec![xs[..2].to_vec(), xs[2..].to_vec()], vec![]).unwrap();
            let back = Model::from_json_str(&m.to_json_string()).unwrap();
            proptest::prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn errors_name_the_line() {
        let src = "{\n  \"domains\": [2, 2, 2],\n  \"unary\": [\n    [0, 0],\n    [0, 0],\n    [0, 0]\n  ],\n  \"factors\": [\n    {\"vars\": [0, 1], \"table\": [0, 0, 0, 0]},\n    {\"vars\": [2], \"table\": [0, 0]}\n  ]\n}\n";
        let e = Model::from_json_str(src).unwrap_err().to_string();
        assert!(e.contains("line 10") && e.contains("factor #1"), "{e}");

        let bad_unary = src.replace("    [0, 0],\n    [0, 0]\n", "    [0, 0],\n    [0]\n");
        let e = Model::from_json_str(&bad_unary).unwrap_err().to_string();
        assert!(e.contains("line 6") && e.contains("unary table 2"), "{e}");

        let dup = src.replace("{\"vars\": [2]", "{\"vars\": [0, 1]").replace("[0, 0]}", "[0, 0, 0, 0]}");
        let e = Model::from_json_str(&dup).unwrap_err().to_string();
        assert!(e.contains("duplicate") && e.contains("line 10"), "{e}");

        let e = Model::from_json_str("{\n\"domains\": [2],\n\"unary\": [[0, \"inf\"]], \"factors\": []}")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn rejects_incompatible_pattern() {
        let src = r#"{"domains":[2,2],"unary":[[0,0],[0,0]],"factors":[{"vars":[0,1],"table":[0,0,"-inf","-inf"]}]}"#;
        let e = Model::from_json_str(src).unwrap_err().to_string();
        assert!(e.contains("incompatible"), "{e}");
    }
}
