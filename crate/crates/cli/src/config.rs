//! INI configuration mapped onto `EEEConfig`.
//!
//! ```ini
//! [instance]
//! path = data/berlin52.tsp
//! optimum = 7542
//!
//! [space]
//! alpha = 0.5, 2
//! beta = 1, 5
//! rho = 0.1, 0.9
//! ants = 50, 250
//! base_samples = 8
//! strict = true
//! tau0 = 1
//! q = 1000
//!
//! [exploration]
//! runs = 3
//! iterations = 10
//!
//! [exploitation]
//! top_p = 5
//! runs = 10
//! iterations = 30
//!
//! [evaluation]
//! iterations = 10000
//! resample_size = 10
//! level = 0.95
//! aggregate_runs = 10
//!
//! [engine]
//! seed = 0
//! workers = 1
//! partitions = 4
//! combiner = true
//! persist_pheromones = false
//! out = eee-out
//! ```
//!
//! Every key is optional; unknown sections and keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use eee_core::pipeline::EEEConfig;
use eee_core::sampling::{Param, Strictness};
use ini::Ini;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Load { path: String, reason: String },
    #[error("[{section}] {key}: {reason}")]
    Value {
        section: String,
        key: String,
        reason: String,
    },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::Value {
            section: section.into(),
            key: key.into(),
            reason: format!("`{value}`: {e}"),
        })
}

fn parse_range(section: &str, key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let bad = || ConfigError::Value {
        section: section.into(),
        key: key.into(),
        reason: format!("`{value}` is not `low, high`"),
    };
    let (lo, hi) = value.split_once(',').ok_or_else(bad)?;
    Ok((parse(section, key, lo)?, parse(section, key, hi)?))
}

fn set_range(cfg: &mut EEEConfig, param: Param, range: (f64, f64)) {
    match cfg.space.dims.iter_mut().find(|d| d.param == param) {
        Some(d) => (d.low, d.high) = range,
        None => cfg
            .space
            .dims
            .push(eee_core::sampling::Dimension::new(param, range.0, range.1)),
    }
}

/// Applies every key of `ini` onto `cfg`. Relative instance paths resolve
/// against `base`.
pub fn apply_ini(cfg: &mut EEEConfig, ini: &Ini, base: &Path) -> Result<(), ConfigError> {
    for (section, props) in ini {
        let section = section.unwrap_or("");
        for (key, value) in props.iter() {
            let v = value;
            let unknown = || ConfigError::UnknownKey {
                section: section.into(),
                key: key.into(),
            };
            match section {
                "instance" => match key {
                    "path" => cfg.instance = base.join(v.trim()),
                    "optimum" => cfg.optimum = parse(section, key, v)?,
                    _ => return Err(unknown()),
                },
                "space" => match key {
                    "alpha" => set_range(cfg, Param::Alpha, parse_range(section, key, v)?),
                    "beta" => set_range(cfg, Param::Beta, parse_range(section, key, v)?),
                    "rho" => set_range(cfg, Param::Rho, parse_range(section, key, v)?),
                    "ants" => set_range(cfg, Param::Ants, parse_range(section, key, v)?),
                    "base_samples" => cfg.base_samples = parse(section, key, v)?,
                    "strict" => {
                        cfg.strictness = if parse::<bool>(section, key, v)? {
                            Strictness::Strict
                        } else {
                            Strictness::Warn
                        }
                    }
                    "tau0" => cfg.tau0 = parse(section, key, v)?,
                    "q" => cfg.q = parse(section, key, v)?,
                    _ => return Err(unknown()),
                },
                "exploration" => match key {
                    "runs" => cfg.exploration.runs = parse(section, key, v)?,
                    "iterations" => cfg.exploration.iterations = parse(section, key, v)?,
                    _ => return Err(unknown()),
                },
                "exploitation" => match key {
                    "top_p" => cfg.top_p = parse(section, key, v)?,
                    "runs" => cfg.exploitation.runs = parse(section, key, v)?,
                    "iterations" => cfg.exploitation.iterations = parse(section, key, v)?,
                    _ => return Err(unknown()),
                },
                "evaluation" => match key {
                    "iterations" => cfg.evaluation.iterations = parse(section, key, v)?,
                    "resample_size" => cfg.evaluation.resample_size = Some(parse(section, key, v)?),
                    "level" => cfg.evaluation.level = parse(section, key, v)?,
                    "aggregate_runs" => cfg.evaluation.aggregate_runs = parse(section, key, v)?,
                    _ => return Err(unknown()),
                },
                "engine" => match key {
                    "seed" => cfg.seed = parse(section, key, v)?,
                    "workers" => cfg.engine.workers = parse(section, key, v)?,
                    "partitions" => cfg.engine.partitions = parse(section, key, v)?,
                    "combiner" => cfg.engine.combiner = parse(section, key, v)?,
                    "persist_pheromones" => cfg.persist_pheromones = parse(section, key, v)?,
                    "out" => cfg.out = PathBuf::from(v.trim()),
                    _ => return Err(unknown()),
                },
                "" => return Err(unknown()),
                other => return Err(ConfigError::UnknownSection(other.into())),
            }
        }
    }
    Ok(())
}

pub fn load_file(cfg: &mut EEEConfig, path: &Path) -> Result<(), ConfigError> {
    let ini = Ini::load_from_file(path).map_err(|e| ConfigError::Load {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    apply_ini(cfg, &ini, base)
}
