//! TOML experiment files. Every table rejects unknown keys; parse errors keep
//! the line, column and key reported by the TOML parser.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiagnosticsSpec, GridSpec, InitialData, SolverConfig, TimeSpec};
use crate::error::{Error, Result};
use crate::tensor::BulkParams;
use crate::uniaxial::{BulkTriple, ScalarRun};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Write a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSweep {
    pub hyperviscosity: Vec<f64>,
    /// Time step per entry; empty means `time.dt` for all.
    #[serde(default)]
    pub dt: Vec<f64>,
}

impl EpsSweep {
    /// One solver configuration per hyperviscosity value.
    pub fn configs(&self, base: &SolverConfig) -> Result<Vec<SolverConfig>> {
        if !self.dt.is_empty() && self.dt.len() != self.hyperviscosity.len() {
            return Err(Error::Config(format!(
                "sweep.dt has {} entries, sweep.hyperviscosity has {}",
                self.dt.len(),
                self.hyperviscosity.len()
            )));
        }
        self.hyperviscosity
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let mut cfg = base.clone();
                cfg.params = cfg.params.with_hyperviscosity(eps);
                if let Some(&dt) = self.dt.get(i) {
                    cfg.time.dt = dt;
                }
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// `run`, `tail` and `eps-sweep` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub params: BulkParams,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub init: InitialData,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sweep: Option<EpsSweep>,
}

impl RunFile {
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            params: self.params,
            grid: self.grid.clone(),
            time: self.time.clone(),
            init: self.init.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `uniaxial` files: one scalar run, optionally repeated over `(a, b, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniaxialFile {
    pub scalar: ScalarRun,
    #[serde(default)]
    pub sweep: Vec<BulkTriple>,
}

pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[params]
elastic = 1.0
viscosity = 1.0
relaxation = 1.0
a = -0.5
b = 1.0
c = 1.0
tumbling = 0.3

[grid]
n = 16

[time]
dt = 0.01
t_final = 0.1

[init]
kind = "random"
q_norm = 1.0
u_norm = 1.0
k0 = 1.0
seed = 3
"#;

    #[test]
    fn minimal_run_file() {
        let f: RunFile = parse(MINIMAL, "minimal").unwrap();
        assert_eq!(f.params.hyperviscosity, 0.0);
        assert_eq!(f.grid.box_scale, 1.0);
        assert_eq!(f.time.order, 2);
        assert_eq!(f.output.checkpoint_every, 0);
        let cfg = f.solver_config().unwrap();
        assert_eq!(cfg.steps_from(0.0), 10);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("dt = 0.01\n", "");
        let err = parse::<RunFile>(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");
        assert!(err.contains("cfg.toml"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = MINIMAL.replace("n = 16", "n = 16\nsize = 3");
        let err = parse::<RunFile>(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("size"), "{err}");
        assert!(err.contains("line"), "{err}");
    }
}
