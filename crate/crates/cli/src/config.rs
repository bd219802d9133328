//! Loading scenario, spec and parameter files, with `DERA_` environment
//! overrides applied to scenario keys.

use std::collections::BTreeMap;
use std::path::Path;

use dera_core::model::{DeraParameters, MeasurementSet, ParamId};
use dera_core::scenario::ScenarioConfig;
use dera_core::system::AugmentedSpec;
use dera_core::{Error, Result};

pub const ENV_PREFIX: &str = "DERA_";

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// `DERA_*` variables from the process environment, keyed by the lowercase
/// remainder of the name.
pub fn env_overrides() -> BTreeMap<String, String> {
    std::env::vars()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_ascii_lowercase(), v))
        })
        .collect()
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies overrides to a scenario document. Keys naming a model parameter
/// go into `[params]`; everything else is a top-level scenario key.
pub fn load_scenario(path: &Path, overrides: &BTreeMap<String, String>) -> Result<ScenarioConfig> {
    let text = read_text(path)?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    for (k, v) in overrides {
        let value = parse_value(v);
        if k.parse::<ParamId>().is_ok() {
            let params = doc
                .entry("params")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match params {
                toml::Value::Table(t) => {
                    t.insert(k.clone(), value);
                }
                _ => return Err(Error::Config("`params` must be a table".into())),
            }
        } else {
            let value = match (k.as_str(), doc.get(k)) {
                ("flags", _) | (_, Some(toml::Value::String(_))) => toml::Value::String(v.clone()),
                _ => value,
            };
            doc.insert(k.clone(), value);
        }
    }
    let merged = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    ScenarioConfig::from_toml_str(&merged)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_spec(path: &Path, set: Option<MeasurementSet>) -> Result<AugmentedSpec> {
    let mut spec = AugmentedSpec::from_toml_str(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = set {
        spec.measurement_set = s;
    }
    Ok(spec)
}

/// Parameter values from a flat key-value file, laid over `base`.
pub fn load_params(path: &Path, base: &DeraParameters) -> Result<DeraParameters> {
    let text = read_text(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    let mut p = *base;
    for (k, v) in &table {
        let id: ParamId = k.parse()?;
        let x = match v {
            toml::Value::Float(f) => *f,
            toml::Value::Integer(i) => *i as f64,
            _ => return Err(Error::Config(format!("{}: `{k}` must be numeric", path.display()))),
        };
        p.set(id, x);
    }
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dera_core::model::FlagConfig;

    #[test]
    fn override_targets_params_and_top_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, "flags = \"case2\"\nseed = 1\n").unwrap();
        let mut o = BTreeMap::new();
        o.insert("seed".to_string(), "9".to_string());
        o.insert("t_rv".to_string(), "0.3".to_string());
        o.insert("flags".to_string(), FlagConfig::CASE2.to_string());
        let s = load_scenario(&path, &o).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.params.get(ParamId::TRv), 0.3);
        assert_eq!(s.flags, FlagConfig::CASE2);
    }

    #[test]
    fn values_parse_as_toml() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("[1.0, 2.0]").as_array().unwrap().len(), 2);
        assert_eq!(parse_value("case1"), toml::Value::String("case1".into()));
    }
}
