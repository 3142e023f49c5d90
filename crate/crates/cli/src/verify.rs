//! Comparison of a produced summary.json against a golden fixture.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::Value;

/// `|a − g| ≤ abs + rel·|g|`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    #[serde(default)]
    pub abs: f64,
    #[serde(default)]
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-12, rel: 1e-9 }
    }
}

impl Tolerance {
    pub fn accepts(&self, golden: f64, actual: f64) -> bool {
        if golden.is_nan() || actual.is_nan() {
            return golden.is_nan() && actual.is_nan();
        }
        (actual - golden).abs() <= self.abs + self.rel * golden.abs()
    }
}

/// Tolerance file: a default plus per-field overrides. A field key ending
/// in `*` matches every path with that prefix.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub default: Tolerance,
    #[serde(default)]
    pub fields: BTreeMap<String, Tolerance>,
}

impl Tolerances {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid tolerance file {}", path.display()))
    }

    pub fn for_field(&self, field: &str) -> Tolerance {
        if let Some(t) = self.fields.get(field) {
            return *t;
        }
        self.fields
            .iter()
            .filter_map(|(k, t)| k.strip_suffix('*').filter(|p| field.starts_with(p)).map(|p| (p.len(), *t)))
            .max_by_key(|(len, _)| *len)
            .map(|(_, t)| t)
            .unwrap_or(self.default)
    }
}

/// Leaf values keyed by dotted path (`a.b[2].c`).
pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, out);
                }
                if a.is_empty() {
                    out.insert(prefix.to_string(), v.clone());
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCheck {
    pub field: String,
    pub golden: String,
    pub actual: String,
    pub tolerance: Option<Tolerance>,
    pub pass: bool,
}

fn show(v: Option<&Value>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "<missing>".into())
}

/// Every golden leaf must be present and agree; extra produced fields fail too.
pub fn compare(golden: &Value, actual: &Value, tol: &Tolerances) -> Vec<FieldCheck> {
    let g = flatten(golden);
    let a = flatten(actual);
    let mut keys: Vec<&String> = g.keys().chain(a.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let (gv, av) = (g.get(k), a.get(k));
            let (tolerance, pass) = match (gv.and_then(Value::as_f64), av.and_then(Value::as_f64)) {
                (Some(x), Some(y)) => {
                    let t = tol.for_field(k);
                    (Some(t), t.accepts(x, y))
                }
                _ => (None, gv.is_some() && gv == av),
            };
            FieldCheck { field: k.clone(), golden: show(gv), actual: show(av), tolerance, pass }
        })
        .collect()
}

fn read_json(path: &Path, role: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("{role} fixture missing: {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{role} file is not valid JSON: {}", path.display()))
}

pub fn render_table(checks: &[FieldCheck]) -> String {
    let w = checks.iter().map(|c| c.field.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<w$}  {:>24}  {:>24}  {:>18}  status\n", "field", "golden", "actual", "tolerance");
    for c in checks {
        let tol = c.tolerance.map(|t| format!("{:e}+{:e}·|g|", t.abs, t.rel)).unwrap_or_else(|| "exact".into());
        s.push_str(&format!(
            "{:<w$}  {:>24}  {:>24}  {:>18}  {}\n",
            c.field,
            c.golden,
            c.actual,
            tol,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    s
}

/// Loads both summaries and the tolerance set (defaults when absent).
pub fn verify_dirs(out: &Path, golden: &Path, tolerances: Option<&Path>) -> Result<Vec<FieldCheck>> {
    let golden_file = golden.join("summary.json");
    let actual_file = out.join("summary.json");
    let g = read_json(&golden_file, "golden")?;
    let a = read_json(&actual_file, "produced")?;
    let default_path = golden.join("tolerances.toml");
    let tol = match tolerances {
        Some(p) => Tolerances::load(p)?,
        None if default_path.exists() => Tolerances::load(&default_path)?,
        None => {
            let t = Tolerances::default();
            log::info!(
                "no tolerance file; using defaults abs {:e}, rel {:e} for every numeric field",
                t.default.abs,
                t.default.rel
            );
            t
        }
    };
    Ok(compare(&g, &a, &tol))
}
