//! Run configuration: a versioned TOML schema, validated before any work starts.

use std::fmt;
use std::path::{Path, PathBuf};

use mflab::kernels::KernelFamily;
use mflab::observables::{Model, OpenDiagram};
use mflab::KernelSpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Every suite `all` expands to, in run order.
pub const ALL_SUITES: [&str; 11] = [
    "green-identities",
    "green-exponents",
    "rw",
    "saw",
    "perc",
    "ising",
    "lt",
    "observe",
    "bounds",
    "lemmas",
    "sigma-scaling",
];

/// A configuration problem, tied to the path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; not part of the recorded configuration.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default = "default_suite")]
    pub suite: Vec<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub rw: RwConfig,
    #[serde(default)]
    pub saw: SawConfig,
    #[serde(default)]
    pub perc: PercConfig,
    #[serde(default)]
    pub ising: IsingConfig,
    #[serde(default)]
    pub lt: LtConfig,
    #[serde(default)]
    pub observe: ObserveConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub lemmas: LemmaConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

fn default_seed() -> u64 {
    20240917
}

fn default_out() -> PathBuf {
    PathBuf::from("reports")
}

fn default_suite() -> Vec<String> {
    vec!["all".into()]
}

fn default_kernel() -> KernelSpec {
    KernelSpec::nn(3)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            seed: default_seed(),
            out: default_out(),
            suite: default_suite(),
            model: ModelConfig::default(),
            kernel: default_kernel(),
            green: GreenConfig::default(),
            rw: RwConfig::default(),
            saw: SawConfig::default(),
            perc: PercConfig::default(),
            ising: IsingConfig::default(),
            lt: LtConfig::default(),
            observe: ObserveConfig::default(),
            bounds: BoundsConfig::default(),
            lemmas: LemmaConfig::default(),
            scaling: ScalingConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Green,
    Saw,
    Percolation,
    Ising,
    LatticeTrees,
}

impl std::str::FromStr for ModelName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "green" => Ok(ModelName::Green),
            "saw" => Ok(ModelName::Saw),
            "percolation" | "perc" => Ok(ModelName::Percolation),
            "ising" => Ok(ModelName::Ising),
            "lattice_trees" | "lt" => Ok(ModelName::LatticeTrees),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    /// SAW repulsion strength.
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: ModelName::Green,
            lambda: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn model(&self) -> Model {
        match self.name {
            ModelName::Green => Model::Green,
            ModelName::Saw => Model::Saw { lambda: self.lambda },
            ModelName::Percolation => Model::Percolation,
            ModelName::Ising => Model::Ising,
            ModelName::LatticeTrees => Model::LatticeTrees,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    pub kernels: Vec<KernelSpec>,
    /// `(β′, β)` pairs for the finite-difference and derivative identities.
    pub pairs: Vec<[f64; 2]>,
    /// Fixed series order; `None` picks one from the tail target.
    pub order: Option<usize>,
    pub exponent_betas: Vec<f64>,
    pub exponent_tol: f64,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            kernels: vec![KernelSpec::nn(3), KernelSpec::nn(4), KernelSpec::spread_out(3, 2), KernelSpec::spread_out(4, 2)],
            pairs: vec![[0.0, 0.5], [0.3, 0.7], [0.6, 0.9]],
            order: None,
            exponent_betas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            exponent_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RwConfig {
    /// Kernels whose walk is certified regular.
    pub kernels: Vec<KernelSpec>,
    /// Kernel of the anti-concentration scan.
    pub occupancy_kernel: KernelSpec,
    pub steps: Vec<usize>,
    pub trials: usize,
    /// Largest allowed ratio of `m^{d/2}·sup P[X_m ∈ B]` across `m`.
    pub max_ratio: f64,
}

impl Default for RwConfig {
    fn default() -> Self {
        RwConfig {
            kernels: vec![KernelSpec::nn(3), KernelSpec::spread_out(3, 2)],
            occupancy_kernel: KernelSpec::nn(3),
            steps: vec![4, 16, 64],
            trials: 1_000_000,
            max_ratio: 2.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SawConfig {
    pub dims: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub order: usize,
    pub grid_points: usize,
    pub beta_max: f64,
}

impl Default for SawConfig {
    fn default() -> Self {
        SawConfig {
            dims: vec![2, 3],
            lambdas: vec![0.5, 1.0],
            order: 8,
            grid_points: 8,
            beta_max: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PercConfig {
    /// Any of `triangle`, `k5`, `patch3`.
    pub graphs: Vec<String>,
    pub grid_points: usize,
    pub mc_betas: Vec<f64>,
    pub trials: usize,
    /// Allowed MC deviation in standard errors.
    pub sigmas: f64,
}

impl Default for PercConfig {
    fn default() -> Self {
        PercConfig {
            graphs: vec!["triangle".into(), "k5".into(), "patch3".into()],
            grid_points: 16,
            mc_betas: vec![0.2, 0.5],
            trials: 100_000,
            sigmas: 3.0,
        }
    }
}

pub const PERC_GRAPHS: [&str; 3] = ["triangle", "k5", "patch3"];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IsingConfig {
    /// Shapes such as `2x2` or `chain6`; nearest-neighbour couplings in the shape's dimension.
    pub volumes: Vec<String>,
    pub grid_points: usize,
    pub beta_max: f64,
}

impl Default for IsingConfig {
    fn default() -> Self {
        IsingConfig {
            volumes: vec!["2x2".into(), "chain6".into()],
            grid_points: 16,
            beta_max: 2.0,
        }
    }
}

impl IsingConfig {
    /// Dimension implied by a shape string, if it parses.
    pub fn shape_dim(shape: &str) -> Option<usize> {
        if let Some(n) = shape.strip_prefix("chain") {
            return n.parse::<usize>().ok().filter(|&n| n > 0).map(|_| 1);
        }
        let sides: Option<Vec<usize>> = shape.split('x').map(|s| s.parse().ok().filter(|&n: &usize| n > 0)).collect();
        sides.map(|s| s.len())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LtConfig {
    /// `[d, B]` pairs: dimension and bond budget of the nearest-neighbour enumeration.
    pub cases: Vec<[usize; 2]>,
    pub grid_points: usize,
}

impl Default for LtConfig {
    fn default() -> Self {
        LtConfig {
            cases: vec![[1, 2], [1, 4], [2, 2], [2, 4]],
            grid_points: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObserveConfig {
    /// Number of `β` points in `[0, beta_max]`.
    pub grid_points: usize,
    /// Upper end of the grid; models clip it to their validated range.
    pub beta_max: f64,
    /// Box radius of the Green field.
    pub radius: usize,
    /// SAW series order.
    pub saw_order: usize,
    /// Percolation torus side and trials.
    pub torus_side: usize,
    pub trials: usize,
    /// Half-width of the Ising box.
    pub ising_half_width: usize,
    /// Lattice-tree bond budget.
    pub tree_bonds: usize,
}

impl Default for ObserveConfig {
    fn default() -> Self {
        ObserveConfig {
            grid_points: 8,
            beta_max: 0.9,
            radius: 6,
            saw_order: 8,
            torus_side: 7,
            trials: 20_000,
            ising_half_width: 1,
            tree_bonds: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// `β` grid of the Green-field bound fits.
    pub betas: Vec<f64>,
    pub radius: usize,
    /// Smallness threshold for `β(δ)` and the initialisation bound.
    pub delta: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            betas: vec![0.2, 0.4, 0.6, 0.8],
            radius: 6,
            delta: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub dim: usize,
    pub instances: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig { dim: 3, instances: 50 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub dim: usize,
    pub ranges: Vec<u32>,
    pub beta: f64,
    pub diagram: DiagramName,
    /// Accepted slope window is `[−d − width, −d + width]`.
    pub slope_width: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DiagramName {
    Bubble,
    Triangle,
}

impl From<DiagramName> for OpenDiagram {
    fn from(d: DiagramName) -> Self {
        match d {
            DiagramName::Bubble => OpenDiagram::Bubble,
            DiagramName::Triangle => OpenDiagram::Triangle,
        }
    }
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            dim: 5,
            ranges: vec![1, 2, 4, 8],
            beta: 0.9,
            diagram: DiagramName::Bubble,
            slope_width: 1.0,
        }
    }
}

impl RunConfig {
    /// Parses TOML; type errors carry the path of the offending field.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.inner().message().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Suite names with `all` expanded, deduplicated, in canonical order.
    pub fn resolved_suites(&self) -> Vec<&'static str> {
        let wants = |name: &str| self.suite.iter().any(|s| s == name || s == "all");
        ALL_SUITES.iter().copied().filter(|s| wants(s)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::new("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        for (i, s) in self.suite.iter().enumerate() {
            if s != "all" && !ALL_SUITES.contains(&s.as_str()) {
                return Err(ConfigError::new(format!("suite[{i}]"), format!("unknown suite `{s}`")));
            }
        }
        check_lambda("model.lambda", self.model.lambda)?;
        check_kernel("kernel", &self.kernel)?;

        let g = &self.green;
        for (i, k) in g.kernels.iter().enumerate() {
            check_kernel(&format!("green.kernels[{i}]"), k)?;
        }
        for (i, [lo, hi]) in g.pairs.iter().enumerate() {
            let path = format!("green.pairs[{i}]");
            check_unit(&path, *lo)?;
            check_unit(&path, *hi)?;
            if lo > hi {
                return Err(ConfigError::new(path, "need beta_low <= beta"));
            }
        }
        for (i, b) in g.exponent_betas.iter().enumerate() {
            check_range(&format!("green.exponent_betas[{i}]"), *b, 0.0, 1.0, false)?;
        }
        check_positive("green.exponent_tol", g.exponent_tol)?;

        let rw = &self.rw;
        for (i, k) in rw.kernels.iter().enumerate() {
            check_kernel(&format!("rw.kernels[{i}]"), k)?;
        }
        check_kernel("rw.occupancy_kernel", &rw.occupancy_kernel)?;
        if rw.trials < 10_000 {
            return Err(ConfigError::new("rw.trials", "at least 10000 trials"));
        }
        if rw.steps.contains(&0) {
            return Err(ConfigError::new("rw.steps", "step counts must be positive"));
        }
        if rw.max_ratio < 1.0 {
            return Err(ConfigError::new("rw.max_ratio", "must be >= 1"));
        }

        let saw = &self.saw;
        for (i, d) in saw.dims.iter().enumerate() {
            if !(1..=5).contains(d) {
                return Err(ConfigError::new(format!("saw.dims[{i}]"), "dimension must be in 1..=5"));
            }
        }
        for (i, l) in saw.lambdas.iter().enumerate() {
            check_lambda(&format!("saw.lambdas[{i}]"), *l)?;
        }
        if !(1..=12).contains(&saw.order) {
            return Err(ConfigError::new("saw.order", "order must be in 1..=12"));
        }
        check_grid("saw.grid_points", saw.grid_points)?;
        check_positive("saw.beta_max", saw.beta_max)?;

        let perc = &self.perc;
        for (i, name) in perc.graphs.iter().enumerate() {
            if !PERC_GRAPHS.contains(&name.as_str()) {
                return Err(ConfigError::new(format!("perc.graphs[{i}]"), format!("unknown graph `{name}`")));
            }
        }
        check_grid("perc.grid_points", perc.grid_points)?;
        for (i, b) in perc.mc_betas.iter().enumerate() {
            check_range(&format!("perc.mc_betas[{i}]"), *b, 0.0, f64::INFINITY, true)?;
        }
        if perc.trials == 0 {
            return Err(ConfigError::new("perc.trials", "must be positive"));
        }
        check_positive("perc.sigmas", perc.sigmas)?;

        let ising = &self.ising;
        for (i, v) in ising.volumes.iter().enumerate() {
            if IsingConfig::shape_dim(v).is_none() {
                return Err(ConfigError::new(format!("ising.volumes[{i}]"), format!("bad shape `{v}`")));
            }
        }
        check_grid("ising.grid_points", ising.grid_points)?;
        check_positive("ising.beta_max", ising.beta_max)?;

        for (i, [d, b]) in self.lt.cases.iter().enumerate() {
            if !(1..=3).contains(d) || *b > 8 {
                return Err(ConfigError::new(format!("lt.cases[{i}]"), "need 1 <= d <= 3 and B <= 8"));
            }
        }
        check_grid("lt.grid_points", self.lt.grid_points)?;

        let o = &self.observe;
        check_grid("observe.grid_points", o.grid_points)?;
        check_range("observe.beta_max", o.beta_max, 0.0, 1.0, false)?;
        if o.radius == 0 || o.radius > 40 {
            return Err(ConfigError::new("observe.radius", "must be in 1..=40"));
        }
        if !(1..=12).contains(&o.saw_order) {
            return Err(ConfigError::new("observe.saw_order", "must be in 1..=12"));
        }
        if o.torus_side < 3 || o.torus_side.is_multiple_of(2) {
            return Err(ConfigError::new("observe.torus_side", "must be odd and >= 3"));
        }
        if o.trials == 0 {
            return Err(ConfigError::new("observe.trials", "must be positive"));
        }
        if self.model.name == ModelName::Ising && (2 * o.ising_half_width + 1).pow(self.kernel.d as u32) > mflab::ising::MAX_SITES {
            return Err(ConfigError::new("observe.ising_half_width", "box too large for exact enumeration"));
        }
        if o.tree_bonds == 0 || o.tree_bonds > 8 {
            return Err(ConfigError::new("observe.tree_bonds", "must be in 1..=8"));
        }

        let b = &self.bounds;
        if b.betas.is_empty() {
            return Err(ConfigError::new("bounds.betas", "grid is empty"));
        }
        for (i, beta) in b.betas.iter().enumerate() {
            check_range(&format!("bounds.betas[{i}]"), *beta, 0.0, 1.0, false)?;
        }
        if b.radius == 0 || b.radius > 40 {
            return Err(ConfigError::new("bounds.radius", "must be in 1..=40"));
        }
        check_range("bounds.delta", b.delta, 0.0, 1.0, false)?;

        if !(1..=6).contains(&self.lemmas.dim) {
            return Err(ConfigError::new("lemmas.dim", "must be in 1..=6"));
        }
        if self.lemmas.instances == 0 {
            return Err(ConfigError::new("lemmas.instances", "must be positive"));
        }

        let sc = &self.scaling;
        if !(1..=8).contains(&sc.dim) {
            return Err(ConfigError::new("scaling.dim", "must be in 1..=8"));
        }
        if sc.ranges.len() < 2 || sc.ranges.contains(&0) {
            return Err(ConfigError::new("scaling.ranges", "need at least two positive ranges"));
        }
        check_range("scaling.beta", sc.beta, 0.0, 1.0, false)?;
        check_positive("scaling.slope_width", sc.slope_width)?;
        Ok(())
    }
}

fn check_kernel(path: &str, k: &KernelSpec) -> Result<(), ConfigError> {
    if k.family == KernelFamily::Custom {
        return Err(ConfigError::new(format!("{path}.family"), "custom kernels need a field and cannot be configured"));
    }
    if !(1..=8).contains(&k.d) {
        return Err(ConfigError::new(format!("{path}.d"), "dimension must be in 1..=8"));
    }
    if k.range == 0 {
        return Err(ConfigError::new(format!("{path}.R"), "range must be positive"));
    }
    k.build().map(|_| ()).map_err(|e| ConfigError::new(path, e.to_string()))
}

fn check_lambda(path: &str, v: f64) -> Result<(), ConfigError> {
    check_range(path, v, 0.0, 1.0, true)
}

fn check_unit(path: &str, v: f64) -> Result<(), ConfigError> {
    check_range(path, v, 0.0, 1.0, false)
}

fn check_positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be positive and finite, got {v}")))
    }
}

fn check_range(path: &str, v: f64, lo: f64, hi: f64, closed: bool) -> Result<(), ConfigError> {
    let ok = v >= lo && (v < hi || (closed && v == hi));
    if ok && v.is_finite() {
        Ok(())
    } else {
        let bracket = if closed { "]" } else { ")" };
        Err(ConfigError::new(path, format!("{v} outside [{lo}, {hi}{bracket}")))
    }
}

fn check_grid(path: &str, n: usize) -> Result<(), ConfigError> {
    if (1..=256).contains(&n) {
        Ok(())
    } else {
        Err(ConfigError::new(path, "grid size must be in 1..=256"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.resolved_suites().len(), ALL_SUITES.len());
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let c = RunConfig::from_toml("schema = 1\nsuite = []\n").unwrap();
        assert!(c.resolved_suites().is_empty());
        assert_eq!(c.saw, SawConfig::default());
    }

    #[test]
    fn ising_box_is_checked_only_for_the_ising_model() {
        let mut c = RunConfig::default();
        c.observe.ising_half_width = 1;
        c.validate().unwrap();
        c.model.name = ModelName::Ising;
        assert_eq!(c.validate().unwrap_err().path, "observe.ising_half_width");
        c.kernel = KernelSpec::nn(2);
        c.validate().unwrap();
    }

    #[test]
    fn type_errors_name_the_field() {
        let e = RunConfig::from_toml("schema = 1\n[saw]\nlambdas = [0.5, \"x\"]\n").unwrap_err();
        assert_eq!(e.path, "saw.lambdas[1]");
        let e = RunConfig::from_toml("schema = 1\n[kernel]\nfamily = \"nn\"\nd = 3\nbogus = 1\n").unwrap_err();
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn validation_errors_name_the_field() {
        let mut c = RunConfig::default();
        c.saw.lambdas = vec![0.5, 1.5];
        assert_eq!(c.validate().unwrap_err().path, "saw.lambdas[1]");
        let mut c = RunConfig::default();
        c.green.pairs = vec![[0.7, 0.3]];
        assert_eq!(c.validate().unwrap_err().path, "green.pairs[0]");
        let c = RunConfig {
            suite: vec!["nope".into()],
            ..Default::default()
        };
        assert_eq!(c.validate().unwrap_err().path, "suite[0]");
        let c = RunConfig {
            schema: 7,
            ..Default::default()
        };
        assert_eq!(c.validate().unwrap_err().path, "schema");
    }

    #[test]
    fn shape_dimensions() {
        assert_eq!(IsingConfig::shape_dim("2x2"), Some(2));
        assert_eq!(IsingConfig::shape_dim("chain6"), Some(1));
        assert_eq!(IsingConfig::shape_dim("2xq"), None);
        assert_eq!(IsingConfig::shape_dim("chain0"), None);
    }
}
