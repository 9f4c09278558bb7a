//! Layered run configuration: JSON file, then `MOEGEO_SEED`, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "MOEGEO_SEED";

/// Keys shared by every command; removed before the command's own record
/// is decoded so that record can reject anything it does not know.
#[derive(Debug, Clone, Default)]
pub struct Envelope {
    pub out_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

/// A parsed config file plus its original bytes.
pub struct Layered {
    map: Map<String, Value>,
    raw: Option<String>,
    pub envelope: Envelope,
}

impl Layered {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let (map, raw) = match path {
            None => (Map::new(), None),
            Some(p) => {
                let raw = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&raw)? {
                    Value::Object(m) => (m, Some(raw)),
                    _ => return Err(CliError::Config("config file must hold a JSON object".into())),
                }
            }
        };
        let mut layered = Layered { map, raw, envelope: Envelope::default() };
        layered.envelope.out_dir = layered.take::<PathBuf>("out_dir")?;
        layered.envelope.parallelism = layered.take::<usize>("parallelism")?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
            layered.map.insert("seed".into(), Value::from(seed));
        }
        Ok(layered)
    }

    /// Removes and decodes one key.
    pub fn take<T: DeserializeOwned>(&mut self, key: &str) -> CliResult<Option<T>> {
        self.map
            .remove(key)
            .map(|v| serde_json::from_value(v).map_err(|e| CliError::Config(format!("{key}: {e}"))))
            .transpose()
    }

    pub fn seed(&self) -> Option<u64> {
        self.map.get("seed").and_then(Value::as_u64)
    }

    /// Decodes the remaining keys into the command's record.
    pub fn finish<T: DeserializeOwned>(self) -> CliResult<(T, Option<String>, Envelope)> {
        let cfg = serde_json::from_value(Value::Object(self.map))?;
        Ok((cfg, self.raw, self.envelope))
    }
}

/// Creates the output directory, copies the config file verbatim and
/// records the resolved settings.
pub fn prepare_out_dir<T: Serialize>(dir: &Path, raw: Option<&str>, resolved: &T) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    if let Some(raw) = raw {
        fs::write(dir.join("config.json"), raw)?;
    }
    fs::write(dir.join("resolved_config.json"), to_json(resolved)? + "\n")?;
    Ok(())
}

pub fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    fs::write(path, to_json(v)? + "\n")?;
    Ok(())
}
