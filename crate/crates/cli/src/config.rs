//! Run configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use uisim::engine::{Calibration, Variant, VariantConfig};
use uisim::harness::modbus::{MODBUS_BAUDS, MODBUS_WINDOW};
use uisim::harness::probe::TargetState;
use uisim::harness::pto::{Mix, PTO_FREQS};
use uisim::harness::sweep::SweepSpec;
use uisim::kernel::{KernelCosts, Scheme};

pub const DEFAULT_SEED: u64 = 0x5eed;
pub const DEFAULT_OUT: &str = "results";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("`variant` and `[machine]` are mutually exclusive")]
    PresetAndExplicit,
    #[error("unknown variant `{0}` (expected base, v1..v5)")]
    Variant(String),
    #[error("unknown scheme `{0}` (expected ext, kernel, intel, software or v1..v5)")]
    Scheme(String),
    #[error("unknown {kind} `{value}`")]
    Value { kind: &'static str, value: String },
    #[error("scheme `ext` needs an extension variant, not base")]
    ExtOnBase,
    #[error("invalid machine configuration: {0}")]
    Machine(#[from] uisim::engine::ConfigError),
}

/// Sweep axes. Empty lists fall back to the full default grid.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub schemes: Vec<String>,
    pub states: Vec<String>,
    pub samples: Option<usize>,
    pub mixes: Vec<String>,
    pub freqs: Vec<u64>,
    pub fractions: Vec<f64>,
    pub bauds: Vec<u64>,
    pub window: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `base` or `v1`..`v5`.
    pub variant: Option<String>,
    /// Explicit machine description instead of a preset.
    pub machine: Option<VariantConfig>,
    pub scheme: Option<String>,
    pub calibration: Option<Calibration>,
    pub costs: Option<KernelCosts>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variant: Option<String>,
    pub scheme: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_string(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io { path: p.clone(), err })?;
        Self::parse(&text, &p)
    }

    /// File (if any) with `ov` applied on top.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if ov.variant.is_some() {
            c.variant = ov.variant.clone();
            // a flag picks a preset, replacing any explicit machine
            c.machine = None;
        }
        if ov.scheme.is_some() {
            c.scheme = ov.scheme.clone();
        }
        if ov.seed.is_some() {
            c.seed = ov.seed;
        }
        if ov.out.is_some() {
            c.out = ov.out.clone();
        }
        if c.variant.is_some() && c.machine.is_some() {
            return Err(ConfigError::PresetAndExplicit);
        }
        Ok(c)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn costs(&self) -> KernelCosts {
        self.costs.unwrap_or_default()
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration.unwrap_or_default()
    }

    /// The extension machine, or `None` for the base core.
    pub fn machine(&self) -> Result<Option<VariantConfig>, ConfigError> {
        let mut cfg = match (&self.machine, self.variant.as_deref()) {
            (Some(m), _) => m.clone(),
            (None, Some(v)) if v.eq_ignore_ascii_case("base") => return Ok(None),
            (None, Some(v)) => VariantConfig::preset(Variant::parse(v).ok_or_else(|| ConfigError::Variant(v.into()))?),
            (None, None) => VariantConfig::preset(Variant::V5),
        };
        if let Some(cal) = self.calibration {
            cfg.calibration = cal;
        }
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// The single scheme a `run` command targets.
    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        match self.scheme.as_deref() {
            None | Some("ext") => match self.machine()? {
                Some(c) => Ok(Scheme::Extension(c)),
                None if self.scheme.is_some() => Err(ConfigError::ExtOnBase),
                None => Ok(Scheme::Kernel),
            },
            Some(s) => self.parse_scheme(s),
        }
    }

    fn parse_scheme(&self, s: &str) -> Result<Scheme, ConfigError> {
        let mut scheme = Scheme::parse(s).ok_or_else(|| ConfigError::Scheme(s.into()))?;
        if let (Scheme::Extension(c), Some(cal)) = (&mut scheme, self.calibration) {
            c.calibration = cal;
        }
        Ok(scheme)
    }

    /// Schemes for a sweep: the experiment list, or every preset and baseline.
    pub fn sweep_schemes(&self) -> Result<Vec<Scheme>, ConfigError> {
        if self.experiment.schemes.is_empty() {
            let all = ["v1", "v2", "v3", "v4", "v5", "kernel", "intel", "software"];
            return all.iter().map(|s| self.parse_scheme(s)).collect();
        }
        self.experiment.schemes.iter().map(|s| self.parse_scheme(s)).collect()
    }

    pub fn states(&self) -> Result<Vec<TargetState>, ConfigError> {
        parse_list(&self.experiment.states, &TargetState::ALL, "state", TargetState::parse)
    }

    pub fn mixes(&self) -> Result<Vec<Mix>, ConfigError> {
        parse_list(&self.experiment.mixes, &Mix::ALL, "mix", Mix::parse)
    }

    pub fn samples(&self) -> usize {
        self.experiment.samples.unwrap_or(10_000)
    }

    pub fn freqs(&self) -> Vec<u64> {
        or_default(&self.experiment.freqs, &PTO_FREQS)
    }

    pub fn bauds(&self) -> Vec<u64> {
        or_default(&self.experiment.bauds, &MODBUS_BAUDS)
    }

    pub fn window(&self) -> u64 {
        self.experiment.window.unwrap_or(MODBUS_WINDOW)
    }

    /// The full sweep matrix described by this config.
    pub fn sweep_spec(&self) -> Result<SweepSpec, ConfigError> {
        Ok(SweepSpec {
            schemes: self.sweep_schemes()?,
            costs: self.costs(),
            seed: self.seed(),
            latency_states: self.states()?,
            latency_samples: self.samples(),
            pto_mixes: self.mixes()?,
            pto_freqs: self.freqs(),
            pto_fractions: self.experiment.fractions.clone(),
            modbus_bauds: self.bauds(),
            modbus_window: self.window(),
        })
    }
}

fn or_default<T: Copy>(v: &[T], d: &[T]) -> Vec<T> {
    if v.is_empty() { d.to_vec() } else { v.to_vec() }
}

pub fn parse_list<T: Copy>(
    names: &[String],
    all: &[T],
    kind: &'static str,
    parse: fn(&str) -> Option<T>,
) -> Result<Vec<T>, ConfigError> {
    if names.is_empty() {
        return Ok(all.to_vec());
    }
    names.iter().map(|n| parse(n).ok_or_else(|| ConfigError::Value { kind, value: n.clone() })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::parse("variant = \"v2\"\nseed = 9\n[experiment]\nschemes = [\"v1\"]\n", "t").unwrap();
        assert_eq!(c.seed(), 9);
        c = RunConfig { seed: Some(3), ..c };
        assert_eq!(c.seed(), 3);
        assert_eq!(c.scheme().unwrap().label(), "v2");
    }

    #[test]
    fn preset_and_explicit_conflict() {
        let text = r#"
variant = "v1"
[machine]
iid = "cam"
stack_port = "tcm_stack"
table_port = "tcm_table"
extra_banks = 1
"#;
        let path = std::env::temp_dir().join("uisim-conflict.toml");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(RunConfig::resolve(Some(&path), &Overrides::default()), Err(ConfigError::PresetAndExplicit)));
        // a --variant flag replaces the explicit machine
        let ov = Overrides { variant: Some("v3".into()), ..Overrides::default() };
        assert_eq!(RunConfig::resolve(Some(&path), &ov).unwrap().scheme().unwrap().label(), "v3");
    }

    #[test]
    fn explicit_machine_matching_a_preset_is_labelled_by_it() {
        let text = "[machine]\niid = \"cam\"\nstack_port = \"tcm_stack\"\ntable_port = \"tcm_table\"\nextra_banks = 1\n";
        let c = RunConfig::parse(text, "t").unwrap();
        assert_eq!(c.scheme().unwrap().label(), "v5");
    }

    #[test]
    fn unknown_fields_are_reported_with_location() {
        let e = RunConfig::parse("seed = 1\nsede = 2\n", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("cfg.toml") && e.contains("sede") && e.contains("line 2"), "{e}");
    }

    #[test]
    fn seed_has_a_fixed_default() {
        assert_eq!(RunConfig::default().seed(), DEFAULT_SEED);
    }

    #[test]
    fn bad_scheme_names() {
        let c = RunConfig { scheme: Some("posix".into()), ..RunConfig::default() };
        assert!(matches!(c.scheme(), Err(ConfigError::Scheme(_))));
        let c = RunConfig { scheme: Some("ext".into()), variant: Some("base".into()), ..RunConfig::default() };
        assert!(matches!(c.scheme(), Err(ConfigError::ExtOnBase)));
    }
}
