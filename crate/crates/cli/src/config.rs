use std::path::{Path, PathBuf};

use mixedconv::echo::{GaussianFactor, TrigFactor};
use mixedconv::harness::{self, InstanceSpec, SuiteOptions, DEFAULT_HALF_WIDTH, DEFAULT_MARGIN};
use mixedconv::norms::ExponentVector;
use mixedconv::weights::WeightFamily;
use serde::Deserialize;

/// A configuration file. Every section is optional; absent values fall back
/// to the defaults of the library and the command line wins over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub harness: HarnessSection,
    pub basis: Option<BasisSection>,
    pub axes: Option<AxesSection>,
    pub weights: Option<WeightsSection>,
    pub exponents: Option<ExponentsSection>,
    pub generator: Option<GeneratorSection>,
    #[serde(default)]
    pub stft: StftSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSection {
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub resolution: Option<usize>,
    pub margin: Option<f64>,
    pub weighted: Option<bool>,
    pub signed: Option<bool>,
    pub refine: Option<bool>,
    /// Trials of the Young check.
    pub trials: Option<usize>,
    /// Sequence lengths of the sharpness family.
    #[serde(rename = "N")]
    pub sharpness_n: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub plots: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Basis vectors `e_1, ..., e_d` in physical coordinates.
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxesSection {
    /// `true` for axes in `E0`.
    pub periodic: Vec<bool>,
    #[serde(default)]
    pub echo: Vec<Vec<f64>>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default = "constant")]
    pub omega: String,
    #[serde(default = "constant")]
    pub v: String,
    #[serde(default = "yes")]
    pub omega_on_lines: bool,
}

fn constant() -> String {
    "constant".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsSection {
    /// Comma separated, `inf` allowed.
    pub p: String,
    pub r: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub gaussians: Vec<GaussianFactor>,
    pub trig: Vec<TrigFactor>,
    pub sequence: Vec<SequenceEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub index: Vec<i64>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    pub points: Option<usize>,
    pub refined_points: Option<usize>,
    pub tolerance: Option<f64>,
}

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn has_instance(&self) -> bool {
        self.axes.is_some() || self.exponents.is_some() || self.generator.is_some()
    }

    /// The single instance described by the instance sections.
    pub fn instance(&self) -> Result<InstanceSpec, ConfigError> {
        let missing = |s: &str| ConfigError(format!("config: section [{s}] is required for an instance"));
        let axes = self.axes.as_ref().ok_or_else(|| missing("axes"))?;
        let exps = self.exponents.as_ref().ok_or_else(|| missing("exponents"))?;
        let generator = self.generator.as_ref().ok_or_else(|| missing("generator"))?;
        let d = axes.periodic.len();
        let basis = match &self.basis {
            None => Vec::new(),
            Some(b) => {
                if b.vectors.len() != d || b.vectors.iter().any(|v| v.len() != d) {
                    return Err(ConfigError(format!("config: basis.vectors must be {d} vectors of length {d}")));
                }
                // rows of T_E are the physical coordinates; the vectors are its columns
                (0..d).flat_map(|i| b.vectors.iter().map(move |v| v[i])).collect()
            }
        };
        let field = |name: &str, e: mixedconv::Error| ConfigError(format!("config: {name}: {e}"));
        let weights = self.weights.clone().unwrap_or(WeightsSection {
            omega: constant(),
            v: constant(),
            omega_on_lines: true,
        });
        let omega: WeightFamily = weights.omega.parse().map_err(|e| field("weights.omega", e))?;
        let v: WeightFamily = weights.v.parse().map_err(|e| field("weights.v", e))?;
        let p: ExponentVector = exps.p.parse().map_err(|e| field("exponents.p", e))?;
        let r: ExponentVector = exps.r.parse().map_err(|e| field("exponents.r", e))?;
        Ok(InstanceSpec {
            basis,
            e0: axes.periodic.clone(),
            echo: axes.echo.clone(),
            gaussians: generator.gaussians.clone(),
            trig: generator.trig.clone(),
            omega,
            v,
            omega_on_lines: weights.omega_on_lines,
            p,
            r,
            a: generator.sequence.iter().map(|e| (e.index.clone(), e.value)).collect(),
            half_width: axes.half_width.unwrap_or(DEFAULT_HALF_WIDTH),
        })
    }

    /// The instance from the file, or `fallback` when the file has none.
    pub fn instance_or(&self, fallback: fn() -> InstanceSpec) -> Result<InstanceSpec, ConfigError> {
        if self.has_instance() {
            self.instance()
        } else {
            Ok(fallback())
        }
    }

    pub fn suite_options(&self) -> SuiteOptions {
        let h = &self.harness;
        let d = SuiteOptions::default();
        SuiteOptions {
            seed: h.seed.unwrap_or(d.seed),
            count: h.count.unwrap_or(d.count),
            dims: h.dims.clone().unwrap_or(d.dims),
            weighted: h.weighted.unwrap_or(d.weighted),
            resolution: h.resolution.unwrap_or(d.resolution),
            margin: h.margin.unwrap_or(DEFAULT_MARGIN),
            refine: h.refine.unwrap_or(d.refine),
            signed: h.signed.unwrap_or(d.signed),
        }
    }
}

/// Default instances for `verify` and `trace`.
pub fn default_verify_instance() -> InstanceSpec {
    harness::hand_instance()
}

pub fn default_trace_instance() -> InstanceSpec {
    harness::shear_example()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[harness]
seed = 3
count = 4
dims = [1, 2]
N = [4, 9]

[basis]
vectors = [[1.0, 0.0], [0.5, 1.0]]

[axes]
periodic = [false, true]
echo = [[0.0, 0.0], [0.25, 0.0]]

[weights]
omega = "exp:0.25"
v = "poly:1"

[exponents]
p = "1, inf"
r = "0.5, 1"

[generator]
gaussians = [{ center = 0.0, sigma = 0.6 }, { center = 0.0, sigma = 1.0 }]
trig = [{ offset = 1.0, terms = [] }, { offset = 1.5, terms = [{ freq = 1, amp = 0.5, phase = 0.0 }] }]
sequence = [{ index = [0, 0], value = 1.0 }, { index = [1, 2], value = 0.5 }]
"#;

    #[test]
    fn full_config_parses() {
        let c: Config = toml::from_str(FULL).unwrap();
        let spec = c.instance().unwrap();
        assert_eq!(spec.basis, vec![1.0, 0.5, 0.0, 1.0]);
        assert_eq!(spec.p.entries()[1], f64::INFINITY);
        assert_eq!(spec.a.len(), 2);
        assert_eq!(spec.omega, WeightFamily::Exponential { r: 0.25 });
        let opts = c.suite_options();
        assert_eq!((opts.seed, opts.count, opts.dims.clone()), (3, 4, vec![1, 2]));
        assert_eq!(c.harness.sharpness_n, Some(vec![4, 9]));
    }

    #[test]
    fn unknown_fields_are_rejected_with_location() {
        let err = toml::from_str::<Config>("[harness]\nsed = 1\n").unwrap_err().to_string();
        assert!(err.contains("sed") && err.contains("line 2"), "{err}");
        assert!(toml::from_str::<Config>("[plots]\n").is_err());
    }

    #[test]
    fn instance_needs_its_sections() {
        let c: Config = toml::from_str("[axes]\nperiodic = [true]\n").unwrap();
        assert!(c.instance().unwrap_err().0.contains("[exponents]"));
        let empty = Config::default();
        assert_eq!(empty.instance_or(default_verify_instance).unwrap(), harness::hand_instance());
    }
}
