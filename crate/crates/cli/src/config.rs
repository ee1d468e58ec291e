//! Flat `key=value` configuration.
//!
//! Keys are dotted paths into [`ReportConfig`], e.g.
//! `pipeline.dr.step_length = 0.7` or `walk.accel_noise_sigma = 0.6`. A key
//! must already exist in the default configuration; values are parsed to
//! the type of the value they replace.

use std::collections::BTreeMap;
use std::path::Path;

use floorplan::report::ReportConfig;
use serde_json::Value;

use crate::CliError;

/// Every settable key with its default value, in sorted order.
pub fn keys() -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(ReportConfig::default()).unwrap(), &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn parse_value(current: &Value, raw: &str) -> Option<Value> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("none") || raw == "null" {
        return Some(Value::Null);
    }
    match current {
        Value::String(_) => Some(Value::String(raw.to_string())),
        Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw).ok().map(Value::Number),
        Value::Array(_) => {
            let inner = raw.trim_start_matches('[').trim_end_matches(']');
            if inner.trim().is_empty() {
                return Some(Value::Array(Vec::new()));
            }
            inner.split(',').map(|s| serde_json::from_str::<Value>(s.trim()).ok()).collect::<Option<Vec<_>>>().map(Value::Array)
        }
        _ => serde_json::from_str(raw).ok().or_else(|| Some(Value::String(raw.to_string()))),
    }
}

/// Applies `key=value` overrides in order on top of `base`.
pub fn apply(base: &ReportConfig, overrides: &[(String, String)]) -> Result<ReportConfig, CliError> {
    let mut tree = serde_json::to_value(base).unwrap();
    let known = keys();
    for (key, raw) in overrides {
        if !known.contains_key(key) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot.get_mut(part).expect("known key resolves");
        }
        let v = parse_value(slot, raw).ok_or_else(|| CliError::Usage(format!("bad value `{raw}` for `{key}`")))?;
        *slot = v;
        // reject type errors at the key that caused them
        serde_json::from_value::<ReportConfig>(tree.clone()).map_err(|e| CliError::Usage(format!("bad value `{raw}` for `{key}`: {e}")))?;
    }
    Ok(serde_json::from_value(tree).unwrap())
}

/// Parses a `key=value` pair.
pub fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
}

/// Reads a config file: one `key = value` per line, `#` comments.
pub fn read_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let pair = split_pair(line).ok_or_else(|| CliError::Usage(format!("{}: line {}: expected key = value", path.display(), i + 1)))?;
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_cover_nested_params() {
        let k = keys();
        assert!(k.contains_key("seed"));
        assert!(k.contains_key("pipeline.dr.step_length"));
        assert!(k.contains_key("walk.n_steps"));
        assert!(!k.contains_key("pipeline"));
    }

    #[test]
    fn overrides_parse_by_type() {
        let ov = [
            ("pipeline.dr.quant_deg".to_string(), "none".to_string()),
            ("walk.n_steps".to_string(), "12".to_string()),
            ("block_sizes".to_string(), "0.7, 1.4".to_string()),
            ("seed".to_string(), "7".to_string()),
        ];
        let c = apply(&ReportConfig::default(), &ov).unwrap();
        assert_eq!(c.pipeline.dr.quant_deg, None);
        assert_eq!(c.walk.n_steps, Some(12));
        assert_eq!(c.block_sizes, vec![0.7, 1.4]);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_usage_errors() {
        let bad = apply(&ReportConfig::default(), &[("pipeline.colour".into(), "1".into())]);
        assert!(matches!(bad, Err(CliError::Usage(m)) if m.contains("pipeline.colour")));
        let bad = apply(&ReportConfig::default(), &[("seed".into(), "-3".into())]);
        assert!(matches!(bad, Err(CliError::Usage(_))));
        let bad = apply(&ReportConfig::default(), &[("n_traces".into(), "many".into())]);
        assert!(matches!(bad, Err(CliError::Usage(_))));
    }
}
