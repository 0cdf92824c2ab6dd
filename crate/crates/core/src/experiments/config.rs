use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitlaw::QuadratureConfig;
use crate::maps::{histogram_density, ulam_density, MapKind, MapModel, UlamOptions};
use crate::orbit::{required_bits, PrecisionPolicy, DEFAULT_ABORT_DIVISOR, DEFAULT_SLACK_BITS};

/// Stream domain of the histogram density estimate.
const HISTOGRAM_DOMAIN: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n: usize,
    pub samples: usize,
    pub tau_grid: Vec<f64>,
    pub k_max: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Forward steps used to sample maps without a closed-form density.
    pub burn_in: usize,
    pub map: MapConfig,
    pub density: DensityConfig,
    pub ulam: UlamConfig,
    pub precision: PrecisionConfig,
    pub quadrature: QuadratureConfig,
    pub almost_sure: AlmostSureConfig,
    pub a2: A2Config,
    pub e2: E2Config,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n: 4096,
            samples: 20_000,
            tau_grid: vec![0.5, 1.0, 2.0],
            k_max: 8,
            workers: 0,
            burn_in: crate::maps::DEFAULT_BURN_IN,
            map: MapConfig::default(),
            density: DensityConfig::default(),
            ulam: UlamConfig::default(),
            precision: PrecisionConfig::default(),
            quadrature: QuadratureConfig::default(),
            almost_sure: AlmostSureConfig::default(),
            a2: A2Config::default(),
            e2: E2Config::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// `doubling | beta | gauss | mp | cusp | logistic`.
    pub name: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            name: "doubling".into(),
            beta: None,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// The map's closed form, falling back to Ulam when it has none.
    Auto,
    ClosedForm,
    Ulam,
    /// Occupation histogram of jittered hardware orbits on the Ulam grid.
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub source: DensitySource,
    pub histogram_chains: usize,
    pub histogram_steps: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            source: DensitySource::Auto,
            histogram_chains: 64,
            histogram_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlamConfig {
    /// Bins of the Ulam and histogram grids.
    pub bins: usize,
}

impl Default for UlamConfig {
    fn default() -> Self {
        Self { bins: 4096 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionChoice {
    /// Exact dyadic for the doubling map, budgeted BigFixed otherwise.
    Auto,
    Hardware,
    BigFixed,
    ExactDyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecisionConfig {
    pub kind: PrecisionChoice,
    /// Required for `big_fixed`; ignored otherwise.
    pub bits: Option<u32>,
    pub slack_bits: u32,
    pub abort_divisor: f64,
    /// Re-runs of an aborted best-effort orbit at 1.5x, 2x, ... the bits.
    pub max_retries: u32,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        Self {
            kind: PrecisionChoice::Auto,
            bits: None,
            slack_bits: DEFAULT_SLACK_BITS,
            abort_divisor: DEFAULT_ABORT_DIVISOR,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmostSureConfig {
    pub paths: usize,
    /// `a` in `n_k = floor(a^k)`.
    pub subseq_base: f64,
    /// `c` in the upper rate `r_n = c log log n / n`.
    pub as_constant: f64,
    /// Exponent used by the summability check reported alongside.
    pub as_gamma: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for AlmostSureConfig {
    fn default() -> Self {
        Self {
            paths: 2000,
            subseq_base: 1.5,
            as_constant: 1.0,
            as_gamma: 0.75,
            n_min: 16,
            n_max: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2Config {
    /// `a` in `r_n = n^-a`.
    pub a_exponent: f64,
    /// Orbit lengths whose radii `n^-a` enter the fit.
    pub n_grid: Vec<usize>,
    /// Extra fixed radii reported per return time.
    pub radii: Vec<f64>,
    /// Largest return time for the fixed radii.
    pub j_limit: usize,
    pub samples: usize,
}

impl Default for A2Config {
    fn default() -> Self {
        Self {
            a_exponent: 0.5,
            n_grid: vec![1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18, 1 << 20],
            radii: vec![1e-2, 1e-3],
            j_limit: 10,
            samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2Config {
    /// Ball centres; the first is conventionally a periodic point.
    pub centers: Vec<f64>,
    pub r: f64,
    pub p: usize,
    pub samples: usize,
    /// Orbit length for the hitting-count dispersion diagnostic.
    pub dispersion_n: usize,
    pub dispersion_samples: usize,
}

impl Default for E2Config {
    fn default() -> Self {
        Self {
            centers: vec![0.0, std::f64::consts::SQRT_2 - 1.0],
            r: 0.01,
            p: 5,
            samples: 100_000,
            dispersion_n: 1000,
            dispersion_samples: 5000,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        let defaults = toml::Table::try_from(Self::default()).map_err(|e| Error::config("config", e.to_string()))?;
        if let Some(key) = unknown_key(&doc, &defaults, "") {
            return Err(Error::config(key, "unknown configuration key"));
        }
        toml::from_str(text).map_err(|e| Error::config(toml_error_key(&e), e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(Error::config("samples", format!("need at least 100, got {}", self.samples)));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.tau_grid.is_empty() {
            return Err(Error::config("tau_grid", "must not be empty"));
        }
        for t in &self.tau_grid {
            positive("tau_grid", *t)?;
        }
        if self.tau_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("tau_grid", "must be strictly ascending"));
        }
        let a = self.almost_sure.subseq_base;
        if !(a > 1.0 && a.is_finite()) {
            return Err(Error::config("almost_sure.subseq_base", format!("must exceed 1, got {a}")));
        }
        positive("almost_sure.as_constant", self.almost_sure.as_constant)?;
        if !(self.almost_sure.as_gamma > 0.0 && self.almost_sure.as_gamma <= 1.0) {
            return Err(Error::config("almost_sure.as_gamma", "must lie in (0, 1]"));
        }
        if self.almost_sure.n_min < 16 || self.almost_sure.n_max < self.almost_sure.n_min {
            return Err(Error::config("almost_sure.n_min", "need 16 <= n_min <= n_max"));
        }
        if self.almost_sure.paths < 100 {
            return Err(Error::config("almost_sure.paths", "need at least 100"));
        }
        let ae = self.a2.a_exponent;
        if !(ae > 0.0 && ae < 1.0) {
            return Err(Error::config("a2.a_exponent", format!("must lie in (0, 1), got {ae}")));
        }
        if self.a2.n_grid.iter().any(|n| *n < 3) {
            return Err(Error::config("a2.n_grid", "entries must be at least 3"));
        }
        for r in &self.a2.radii {
            positive("a2.radii", *r)?;
        }
        if self.a2.samples < 100 {
            return Err(Error::config("a2.samples", "need at least 100"));
        }
        positive("e2.r", self.e2.r)?;
        if self.e2.samples < 100 {
            return Err(Error::config("e2.samples", "need at least 100"));
        }
        if self.ulam.bins < 16 {
            return Err(Error::config("ulam.bins", "need at least 16 bins"));
        }
        if self.density.histogram_chains == 0 || self.density.histogram_steps == 0 {
            return Err(Error::config("density.histogram_steps", "histogram needs at least one point"));
        }
        if self.precision.kind == PrecisionChoice::BigFixed && self.precision.bits.is_none() {
            return Err(Error::config("precision.bits", "required when precision.kind = big_fixed"));
        }
        positive("precision.abort_divisor", self.precision.abort_divisor)?;
        self.quadrature.validate()?;
        let map = self.base_map()?;
        for c in &self.e2.centers {
            if !map.contains(*c) {
                return Err(Error::config("e2.centers", format!("{c} is outside the domain of {}", map.name())));
            }
        }
        self.policy_for(&map, self.n)?.validate(&map)?;
        Ok(())
    }

    fn base_map(&self) -> Result<MapModel> {
        MapModel::from_name(&self.map.name, self.map.beta, self.map.gamma).map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key: format!("map.{key}"),
                message,
            },
            other => other,
        })
    }

    /// The configured map with its density resolved.
    pub fn build_map(&self) -> Result<MapModel> {
        let map = self.base_map()?;
        let source = match self.density.source {
            DensitySource::Auto if map.density.is_unknown() => DensitySource::Ulam,
            DensitySource::Auto => DensitySource::ClosedForm,
            s => s,
        };
        match source {
            DensitySource::ClosedForm if map.density.is_unknown() => Err(Error::config(
                "density.source",
                format!("{} has no closed-form density; use ulam", map.name()),
            )),
            DensitySource::Ulam => {
                let policy = match map.kind {
                    MapKind::Gauss => PrecisionPolicy::big_fixed(256),
                    _ => PrecisionPolicy::hardware(),
                };
                let density = ulam_density(&map, &UlamOptions::new(self.ulam.bins), &policy)?;
                Ok(map.with_density(density))
            }
            DensitySource::Histogram => {
                let mut rng = super::sample_rng(self.seed, HISTOGRAM_DOMAIN, 0);
                let density = histogram_density(
                    &map,
                    self.ulam.bins,
                    self.density.histogram_chains,
                    self.density.histogram_steps,
                    self.burn_in,
                    &mut rng,
                )?;
                Ok(map.with_density(density))
            }
            _ => Ok(map),
        }
    }

    /// Precision policy for orbits of length `n`.
    pub fn policy_for(&self, map: &MapModel, n: usize) -> Result<PrecisionPolicy> {
        let pc = &self.precision;
        let mut policy = match pc.kind {
            PrecisionChoice::Auto if map.kind == MapKind::Doubling => PrecisionPolicy::exact_dyadic(),
            PrecisionChoice::Auto => PrecisionPolicy::auto(map, n.max(1), pc.slack_bits),
            PrecisionChoice::Hardware => PrecisionPolicy::hardware(),
            PrecisionChoice::BigFixed => PrecisionPolicy::big_fixed(
                pc.bits.ok_or_else(|| Error::config("precision.bits", "required for big_fixed"))?,
            ),
            PrecisionChoice::ExactDyadic => PrecisionPolicy::exact_dyadic(),
        };
        policy.slack_bits = pc.slack_bits;
        policy.abort_divisor = pc.abort_divisor;
        Ok(policy)
    }

    /// Policies tried in turn when an orbit aborts. Only budgets flagged
    /// best-effort escalate; guaranteed budgets and explicit choices do not.
    pub fn policy_ladder(&self, map: &MapModel, n: usize) -> Result<Vec<PrecisionPolicy>> {
        let base = self.policy_for(map, n)?;
        let mut ladder = vec![base];
        if self.precision.kind == PrecisionChoice::Auto && !required_bits(map, n.max(1), base.slack_bits).is_guaranteed() {
            if let crate::orbit::PrecisionKind::BigFixed { bits } = base.kind {
                for i in 1..=self.precision.max_retries {
                    let mut p = base;
                    p.kind = crate::orbit::PrecisionKind::BigFixed {
                        bits: bits + bits * i / 2,
                    };
                    ladder.push(p);
                }
            }
        }
        Ok(ladder)
    }
}

/// First key of `doc` absent from the defaulted key tree, as a dotted path.
fn unknown_key(doc: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in doc {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let parts: Vec<&str> = path.split('.').collect();
        match known.get(k) {
            None if is_optional_key(&parts) => {}
            None => return Some(path),
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(t) = v {
                    if let Some(bad) = unknown_key(t, sub, &path) {
                        return Some(bad);
                    }
                }
            }
            Some(_) => {}
        }
    }
    None
}

fn toml_error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // serde reports unknown keys as "unknown field `x`, expected ..."
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "config".into()
}

/// Applies `key.path=value` overrides to a TOML document. Values parse as TOML
/// (numbers, booleans, arrays) and fall back to plain strings. Keys must exist
/// in the fully defaulted configuration.
pub fn apply_overrides(base: &ExperimentConfig, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut doc = toml::Value::try_from(base).map_err(|e| Error::config("config", e.to_string()))?;
    for (key, raw) in overrides {
        let value = parse_value(raw);
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut doc;
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(key.clone(), "not a section"))?;
            let last = i == parts.len() - 1;
            if !table.contains_key(*part) && !is_optional_key(&parts[..=i]) {
                return Err(Error::config(key.clone(), "unknown configuration key"));
            }
            if last {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.get_mut(*part).expect("checked above");
        }
    }
    let text = toml::to_string(&doc).map_err(|e| Error::config("config", e.to_string()))?;
    ExperimentConfig::from_toml_str(&text)
}

/// Optional keys are omitted from the serialised defaults when unset.
fn is_optional_key(path: &[&str]) -> bool {
    matches!(path, ["map", "beta"] | ["map", "gamma"] | ["precision", "bits"])
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
