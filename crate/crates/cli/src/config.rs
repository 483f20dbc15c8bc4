//! Config files, flag overlays, run manifests and exit codes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Process exit codes, one per failure category.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const MISMATCH: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A check ran and failed (gradient check over tolerance).
    CheckFailed(String),
    Core(tearnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tearnet::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::CheckFailed(_) => exit::NUMERIC,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => exit::USAGE,
                E::Io { .. } | E::Json { .. } | E::Parse { .. } => exit::IO,
                E::Mismatch(_) => exit::MISMATCH,
                E::NonFiniteLoss { .. } | E::NonFiniteGradient(_) | E::RetryCap { .. } => exit::NUMERIC,
                E::Shape { .. } | E::NonScalarLoss(_) => exit::OTHER,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<tearnet::Error> for CliError {
    fn from(e: tearnet::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Read a TOML or JSON (by extension) config file into a JSON value.
pub fn read_config(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| tearnet::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value = if is_json {
        serde_json::from_str(&text).map_err(|e| tearnet::Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            tearnet::Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()))?
    };
    if !value.is_object() {
        return Err(CliError::Usage(format!("{} must hold a table of settings", path.display())));
    }
    Ok(value)
}

/// Values given on the command line replace those from the config file.
/// Unset flags (null, empty lists) leave the file's value in place.
pub fn overlay(base: &mut Value, flags: Value) {
    let (Value::Object(b), Value::Object(f)) = (base, flags) else {
        return;
    };
    for (k, v) in f {
        let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
        if !unset {
            b.insert(k, v);
        }
    }
}

/// Resolve a command's options: config file first, then flags on top.
pub fn resolve<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&Path>) -> CliResult<A> {
    let mut base = match config {
        Some(p) => read_config(p)?,
        None => Value::Object(Default::default()),
    };
    let f = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    overlay(&mut base, f);
    serde_json::from_value(base).map_err(|e| {
        CliError::Usage(format!(
            "bad setting in {}: {e}",
            config.map_or("flags".to_string(), |p| p.display().to_string())
        ))
    })
}

/// Written as `run.json` next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time: f64,
}

pub struct Run {
    command: String,
    config: Value,
    seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    pub fn new(command: &str, resolved: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(resolved).unwrap_or(Value::Null),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn finish(self, out: &Path) -> CliResult<()> {
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time: self.start.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(out).map_err(|e| tearnet::Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
        let path = out.join("run.json");
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| tearnet::Error::Io { path, source: e })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Opts {
        seed: Option<u64>,
        lr: Option<f64>,
        names: Vec<String>,
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\nlr = 0.5\nnames = [\"a\"]\n").unwrap();
        let flags = Opts {
            seed: Some(9),
            ..Opts::default()
        };
        let r = resolve(&flags, Some(&p)).unwrap();
        assert_eq!(
            r,
            Opts {
                seed: Some(9),
                lr: Some(0.5),
                names: vec!["a".into()]
            }
        );
    }

    #[test]
    fn json_configs_and_bad_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"lr": "fast"}"#).unwrap();
        let e = resolve(&Opts::default(), Some(&p)).unwrap_err();
        assert_eq!(e.exit_code(), exit::USAGE);
        let missing = resolve(&Opts::default(), Some(&dir.path().join("none.toml"))).unwrap_err();
        assert_eq!(missing.exit_code(), exit::IO);
    }

    #[test]
    fn toml_errors_carry_a_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 1\nlr = = 2\n").unwrap();
        let e = read_config(&p).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
