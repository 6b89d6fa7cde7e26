use std::fs;
use std::path::Path;

use anyhow::Result;
use realchart::bots::BotKind;
use realchart::engine::ContestConfig;
use realchart_server::SimulationConfig;
use serde::Deserialize;
use serde_json::Value;

use crate::{Failure, SimulateArgs};

/// `serve --config` file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default)]
    pub handshake_timeout_ms: Option<u64>,
    #[serde(rename = "contest")]
    pub contests: Vec<ContestConfig>,
}

fn read_toml(path: &Path) -> Result<toml::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    Ok(toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?)
}

pub fn load_serve(path: &Path) -> Result<ServeConfig> {
    let value = read_toml(path)?;
    Ok(value
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Usage(format!("{}: {e}", path.display())))?)
}

/// Built-in defaults, then the config file, then flags.
pub fn load_simulation(args: &SimulateArgs) -> Result<SimulationConfig> {
    let defaults = SimulationConfig::new(BotKind::Coin, 26, 35, 0);
    let mut merged = serde_json::to_value(&defaults)?;
    if let Some(path) = &args.config {
        let file = serde_json::to_value(read_toml(path)?)?;
        merge(&mut merged, file);
    }
    let cfg = &mut merged;
    if let Some(bot) = args.bot {
        cfg["bot"] = serde_json::to_value(bot)?;
    }
    if let Some(feature) = args.feature {
        cfg["feature"] = serde_json::to_value(feature)?;
    }
    if let Some(n) = args.sessions {
        cfg["sessions"] = n.into();
    }
    if let Some(n) = args.charts {
        cfg["contest"]["charts_per_subject"] = n.into();
    }
    if let Some(seed) = args.seed {
        cfg["seed"] = seed.into();
    }
    if args.control {
        cfg["control"] = true.into();
    }
    let config: SimulationConfig =
        serde_json::from_value(merged).map_err(|e| Failure::Usage(format!("simulation config: {e}")))?;
    config
        .contest
        .validate()
        .map_err(|e| Failure::Usage(format!("simulation config: {e}")))?;
    Ok(config)
}

/// Tables merge key by key except `data`, which the file replaces whole
/// since its fields depend on the model.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if k != "data" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_replaces_data_and_recurses_elsewhere() {
        let mut base = json!({"contest": {"a": 1, "b": 2}, "data": {"model": "random_walk", "sigma": 1.0}});
        merge(&mut base, json!({"contest": {"b": 3}, "data": {"model": "ar1", "phi": 0.5}}));
        assert_eq!(base, json!({"contest": {"a": 1, "b": 3}, "data": {"model": "ar1", "phi": 0.5}}));
    }
}
