//! Scenario files. A [`ScenarioConfig`] is what the user writes, with most
//! fields optional; [`ScenarioConfig::resolve`] fills the defaults from the
//! preset and checks every invariant, giving a [`ResolvedConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use roughfk_core::coefficients::Exponents;
use roughfk_core::mesh::Mesh;
use roughfk_core::presets::{self, DriverKind, DriverSpec, PresetInfo};
use roughfk_core::SmoothPath;

use crate::error::{CliError, CliResult};

pub const DEFAULT_ALPHA: f64 = 0.45;
pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_PATHS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    U,
    Grad,
    Hess,
    Residuals,
    Markov,
    Robustness,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSection {
    pub kind: Option<DriverKind>,
    pub dim: Option<usize>,
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub refine: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSection {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Grid nodes `k` of the times `s = k T / N`.
    pub s_nodes: Option<Vec<usize>>,
    pub start: Option<Vec<f64>>,
    pub stop: Option<Vec<f64>>,
    pub points: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSection {
    pub s_node: Option<usize>,
    pub t_node: Option<usize>,
    pub x: Option<f64>,
    pub slice_paths: Option<usize>,
    pub mesh_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub eps: Option<Vec<f64>>,
    pub perturbation: Option<SmoothPath>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub p: Option<Vec<f64>>,
    /// Draw a fresh driver for every path (random drivers only).
    pub resample_driver: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSection {
    /// Independent driver realizations the residual tables are averaged over.
    pub drivers: Option<usize>,
    /// Driver direction of the controlledness check.
    pub mu: Option<usize>,
}

/// A scenario as written by the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(alias = "preset")]
    pub scenario: String,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub outputs: Option<Vec<Output>>,
    pub format: Option<Format>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub driver: DriverSection,
    #[serde(default)]
    pub exponents: ExponentSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub markov: MarkovSection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub moments: MomentsSection,
    #[serde(default)]
    pub residuals: ResidualSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub s_nodes: Vec<usize>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub points: Vec<usize>,
}

impl MeshConfig {
    pub fn mesh(&self) -> CliResult<Mesh> {
        Mesh::new(self.start.clone(), self.stop.clone(), self.points.clone()).map_err(CliError::at_load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSettings {
    pub s_node: usize,
    pub t_node: usize,
    pub x: f64,
    pub slice_paths: usize,
    pub mesh_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSettings {
    pub eps: Vec<f64>,
    pub perturbation: SmoothPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSettings {
    pub p: Vec<f64>,
    pub resample_driver: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSettings {
    pub drivers: usize,
    pub mu: usize,
}

/// Every field explicit and validated. Serializes to a file that parses and
/// resolves back to itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub scenario: String,
    pub paths: usize,
    pub seed: u64,
    pub outputs: Vec<Output>,
    pub format: Format,
    pub out_dir: PathBuf,
    pub params: BTreeMap<String, f64>,
    pub driver: DriverSpec,
    pub exponents: Exponents,
    pub mesh: MeshConfig,
    pub markov: MarkovSettings,
    pub robustness: RobustnessSettings,
    pub moments: MomentSettings,
    pub residuals: ResidualSettings,
}

impl ResolvedConfig {
    pub fn wants(&self, o: Output) -> bool {
        self.outputs.contains(&o)
    }

    /// Derivative order of the surface: 0, 1 or 2.
    pub fn order(&self) -> usize {
        if self.wants(Output::Hess) {
            2
        } else if self.wants(Output::Grad) {
            1
        } else {
            0
        }
    }

    pub fn info(&self) -> &'static PresetInfo {
        presets::info(&self.scenario).expect("resolved scenario exists")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }
}

fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Invalid(msg.into()))
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return invalid(format!("`{name}` must be positive"));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Defaults only.
    pub fn for_scenario(name: &str) -> Self {
        ScenarioConfig { scenario: name.to_string(), ..Default::default() }
    }

    /// TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Invalid(e.to_string()))
    }

    pub fn resolve(&self) -> CliResult<ResolvedConfig> {
        let info = presets::info(&self.scenario).map_err(CliError::at_load)?;
        let params = presets::resolve_params(info, &self.params).map_err(CliError::at_load)?;

        let d = &self.driver;
        let kind = d.kind.unwrap_or(info.default_driver);
        let driver = DriverSpec {
            kind,
            dim: d.dim.unwrap_or(info.rough_dim),
            horizon: d.horizon.unwrap_or(1.0),
            steps: d.steps.unwrap_or(DEFAULT_STEPS),
            refine: d.refine.unwrap_or(if kind.is_random() { 8 } else { 4 }),
        };
        positive("driver.steps", driver.steps)?;
        positive("driver.refine", driver.refine)?;
        if driver.dim != info.rough_dim {
            return invalid(format!(
                "preset `{}` needs driver.dim = {}, got {}",
                info.name, info.rough_dim, driver.dim
            ));
        }
        if !(driver.horizon.is_finite() && driver.horizon > 0.0) {
            return invalid(format!("driver.horizon = {} must be positive", driver.horizon));
        }

        let e = &self.exponents;
        let alpha = e.alpha.unwrap_or(DEFAULT_ALPHA);
        let base = Exponents::defaults(alpha);
        let exponents = Exponents {
            alpha,
            delta: e.delta.unwrap_or(base.delta),
            eta: e.eta.unwrap_or(base.eta),
            lambda: e.lambda.unwrap_or(base.lambda),
            kappa: e.kappa.unwrap_or(base.kappa),
            theta: e.theta.unwrap_or(base.theta),
        };
        exponents.validate().map_err(CliError::at_load)?;

        let paths = self.paths.unwrap_or(DEFAULT_PATHS);
        positive("paths", paths)?;
        let outputs = {
            let mut o = self.outputs.clone().unwrap_or_else(|| vec![Output::U]);
            o.sort();
            o.dedup();
            o
        };
        if outputs.is_empty() {
            return invalid("`outputs` is empty");
        }

        let dim = info.dim;
        let m = &self.mesh;
        let default_points = if dim == 1 { 11 } else { 5 };
        let s_nodes = {
            let mut s = m.s_nodes.clone().unwrap_or_else(|| {
                if outputs.contains(&Output::Residuals) {
                    (0..=driver.steps).collect()
                } else {
                    vec![0]
                }
            });
            s.sort_unstable();
            s.dedup();
            s
        };
        let mesh = MeshConfig {
            s_nodes,
            start: m.start.clone().unwrap_or_else(|| info.x0.iter().map(|v| v - 0.5).collect()),
            stop: m.stop.clone().unwrap_or_else(|| info.x0.iter().map(|v| v + 0.5).collect()),
            points: m.points.clone().unwrap_or_else(|| vec![default_points; dim]),
        };
        if mesh.start.len() != dim {
            return invalid(format!("mesh has {} axes, preset `{}` has d = {dim}", mesh.start.len(), info.name));
        }
        mesh.mesh()?;
        if mesh.s_nodes.is_empty() {
            return invalid("mesh.s_nodes is empty");
        }
        if let Some(&k) = mesh.s_nodes.iter().find(|&&k| k > driver.steps) {
            return invalid(format!("mesh.s_nodes contains {k} > driver.steps = {}", driver.steps));
        }

        let mk = &self.markov;
        let markov = MarkovSettings {
            s_node: mk.s_node.unwrap_or(0),
            t_node: mk.t_node.unwrap_or(driver.steps / 2),
            x: mk.x.unwrap_or(info.x0[0]),
            slice_paths: mk.slice_paths.unwrap_or(2000),
            mesh_points: mk.mesh_points.unwrap_or(41),
        };
        positive("markov.slice_paths", markov.slice_paths)?;
        if markov.mesh_points < 2 {
            return invalid("markov.mesh_points must be at least 2");
        }
        if markov.s_node > markov.t_node || markov.t_node > driver.steps {
            return invalid(format!(
                "markov needs s_node ≤ t_node ≤ {}, got {} and {}",
                driver.steps, markov.s_node, markov.t_node
            ));
        }

        let robustness = RobustnessSettings {
            eps: self.robustness.eps.clone().unwrap_or_else(|| vec![1e-2, 1e-3]),
            perturbation: self.robustness.perturbation.unwrap_or(SmoothPath::Sin),
        };
        if robustness.eps.is_empty() || robustness.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return invalid("robustness.eps must be a non-empty list of positive numbers");
        }

        let moments = MomentSettings {
            p: self.moments.p.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
            resample_driver: self.moments.resample_driver.unwrap_or(kind.is_random()),
        };
        if moments.p.is_empty() || moments.p.iter().any(|p| !p.is_finite()) {
            return invalid("moments.p must be a non-empty list of finite numbers");
        }

        let residuals = ResidualSettings {
            drivers: self.residuals.drivers.unwrap_or(1),
            mu: self.residuals.mu.unwrap_or(0),
        };
        positive("residuals.drivers", residuals.drivers)?;
        if residuals.mu >= driver.dim {
            return invalid(format!("residuals.mu = {} but the driver has dimension {}", residuals.mu, driver.dim));
        }

        let cfg = ResolvedConfig {
            scenario: info.name.to_string(),
            paths,
            seed: self.seed.unwrap_or(0),
            outputs,
            format: self.format.unwrap_or_default(),
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            params,
            driver,
            exponents,
            mesh,
            markov,
            robustness,
            moments,
            residuals,
        };
        check_outputs(&cfg)?;
        Ok(cfg)
    }
}

/// Constraints that depend on which outputs are requested.
fn check_outputs(cfg: &ResolvedConfig) -> CliResult<()> {
    let info = cfg.info();
    if cfg.wants(Output::Markov) && info.dim != 1 {
        return invalid(format!("markov output needs d = 1, preset `{}` has d = {}", info.name, info.dim));
    }
    if cfg.wants(Output::Moments) && cfg.paths < 10 {
        return invalid("moments output needs at least 10 paths");
    }
    if cfg.wants(Output::Residuals) {
        let s = &cfg.mesh.s_nodes;
        let contiguous = s.windows(2).all(|w| w[1] == w[0] + 1);
        if s.len() < 3 || !contiguous {
            return invalid("residuals need at least three consecutive mesh.s_nodes");
        }
        if cfg.mesh.points.iter().any(|&p| p < 5) {
            return invalid("residuals need at least 5 mesh points per axis");
        }
    }
    Ok(())
}
