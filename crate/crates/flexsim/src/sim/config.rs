//! Scenario configuration, loaded from TOML.

use crate::adaptation::AdaptationConfig;
use crate::chain_dynamics::{Chain, DeformationForcing, JointKind, JointSpec, LinkModel};
use crate::control::{ControllerKind, PdGain, TwistGain};
use crate::flexible_link::{LinkParams, ModeCounts};
use crate::reference_gen::TrajectorySpec;
use crate::screw_algebra::{Mat6, Vec3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub rho: f64,
    pub youngs: f64,
    /// Section width along the body z axis [m].
    pub width: f64,
    /// Section height along the body y axis [m].
    pub height: f64,
    pub length: f64,
    #[serde(default)]
    pub rigid: bool,
    #[serde(default)]
    pub modes: Option<ModeCounts>,
}

impl LinkConfig {
    pub fn params(&self) -> LinkParams {
        LinkParams::rectangular(self.rho, self.youngs, self.width, self.height, self.length, self.rigid)
    }

    pub fn mode_counts(&self) -> ModeCounts {
        if self.rigid {
            ModeCounts::none()
        } else {
            self.modes.unwrap_or_default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    /// Parent link index; omitted for the base joint.
    #[serde(default)]
    pub parent: Option<usize>,
    pub kind: JointKind,
    #[serde(default)]
    pub base_point: [f64; 3],
    pub motor_inertia: Vec<f64>,
    /// Optional twist projection onto the constrained directions, checked against `kind`.
    #[serde(default)]
    pub projection: Option<[[f64; 6]; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_f: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub forcing: DeformationForcing,
    #[serde(default = "yes")]
    pub project_velocities: bool,
    /// Log every n-th control sample.
    #[serde(default = "one")]
    pub decimation: usize,
    #[serde(default)]
    pub start: StartMode,
}

/// Initial joint rates of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StartMode {
    /// All twists zero.
    #[default]
    Rest,
    /// Joint rates of the reference at `t = 0`, so the initial twist error vanishes.
    Reference,
}

fn default_substeps() -> usize {
    5
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    pub twist: Vec<TwistGain>,
    pub pd: Vec<PdGain>,
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationBlock {
    #[serde(flatten)]
    pub config: AdaptationConfig,
    /// Gramian window length [s].
    #[serde(default = "default_window")]
    pub pe_window: f64,
}

fn default_window() -> f64 {
    1.0
}

impl Default for AdaptationBlock {
    fn default() -> Self {
        Self { config: AdaptationConfig::default(), pe_window: default_window() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Solve for the desired-trajectory interaction wrenches each sample.
    #[serde(default = "yes")]
    pub power_residuals: bool,
    /// Start of the decay-envelope window; defaults to three blend time constants.
    #[serde(default)]
    pub envelope_start: Option<f64>,
    #[serde(default = "default_slack")]
    pub envelope_slack: f64,
    #[serde(default = "default_floor")]
    pub envelope_floor: f64,
    /// Random states used for the adaptive bound constants; zero skips them.
    #[serde(default)]
    pub bound_samples: usize,
    #[serde(default = "one_f")]
    pub young_eps: f64,
}

fn default_slack() -> f64 {
    0.05
}

fn default_floor() -> f64 {
    1e-9
}

fn one_f() -> f64 {
    1.0
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            power_residuals: true,
            envelope_start: None,
            envelope_slack: default_slack(),
            envelope_floor: default_floor(),
            bound_samples: 0,
            young_eps: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_grid")]
    pub deformation_points: usize,
    #[serde(default = "default_interval")]
    pub deformation_interval: f64,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid() -> usize {
    21
}

fn default_interval() -> f64 {
    0.01
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), deformation_points: default_grid(), deformation_interval: default_interval() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub controller: ControllerKind,
    /// Run these controllers side by side on the same reference instead of `controller`.
    #[serde(default)]
    pub compare: Vec<ControllerKind>,
    /// Enters the link equations as `+Rᵀg`, so `[0, 0, 9.81]` pulls towards −z.
    #[serde(default)]
    pub gravity: [f64; 3],
    pub integration: IntegrationConfig,
    pub trajectory: TrajectorySpec,
    pub links: Vec<LinkConfig>,
    pub joints: Vec<JointConfig>,
    pub gains: GainConfig,
    #[serde(default)]
    pub adaptation: AdaptationBlock,
    #[serde(default)]
    pub monitors: MonitorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn joint_specs(&self) -> Vec<JointSpec> {
        self.joints
            .iter()
            .enumerate()
            .map(|(j, c)| JointSpec {
                parent: c.parent,
                child: j,
                kind: c.kind.clone(),
                base_point: Vec3::from(c.base_point),
                motor_inertia: c.motor_inertia.clone(),
            })
            .collect()
    }

    pub fn build_chain(&self) -> Result<Chain, ConfigError> {
        let links = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| LinkModel::new(l.params(), l.mode_counts()).map_err(|e| format!("links[{i}]: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Invalid(vec![e]))?;
        let mut chain = Chain::new(links, self.joint_specs(), Vec3::from(self.gravity))
            .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        chain.forcing = self.integration.forcing;
        chain.project_velocities = self.integration.project_velocities;
        Ok(chain)
    }

    pub fn controllers(&self) -> Vec<ControllerKind> {
        if self.compare.is_empty() {
            vec![self.controller]
        } else {
            self.compare.clone()
        }
    }

    /// Schema and physics checks; every problem found is reported.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let n = self.links.len();
        if n == 0 {
            errs.push("at least one link is required".into());
        }
        if self.joints.len() != n {
            errs.push(format!("{} joints given for {} links", self.joints.len(), n));
        }
        let ig = &self.integration;
        if !(ig.dt > 0.0 && ig.dt.is_finite()) {
            errs.push("integration.dt must be positive".into());
        }
        if !(ig.t_f >= 0.0 && ig.t_f.is_finite()) {
            errs.push("integration.t_f must be non-negative".into());
        }
        if ig.substeps == 0 {
            errs.push("integration.substeps must be at least 1".into());
        }
        if ig.decimation == 0 {
            errs.push("integration.decimation must be at least 1".into());
        }
        if let Err(e) = self.trajectory.validate() {
            errs.push(e);
        }
        for (i, l) in self.links.iter().enumerate() {
            for (name, v) in [("rho", l.rho), ("youngs", l.youngs), ("width", l.width), ("height", l.height), ("length", l.length)] {
                if !(v > 0.0 && v.is_finite()) {
                    errs.push(format!("links[{i}].{name} must be positive"));
                }
            }
        }
        for (j, jc) in self.joints.iter().enumerate() {
            let axes = match jc.kind {
                JointKind::Revolute { .. } => 1,
                JointKind::Universal { .. } => 2,
            };
            if jc.motor_inertia.len() != axes {
                errs.push(format!("joints[{j}].motor_inertia needs {axes} entries"));
            }
            if jc.motor_inertia.iter().any(|&m| !(m >= 0.0)) {
                errs.push(format!("joints[{j}].motor_inertia must be non-negative"));
            }
            match jc.parent {
                Some(p) if p >= j => errs.push(format!("joints[{j}].parent must precede the joint")),
                None if j > 0 => errs.push(format!("joints[{j}] needs a parent")),
                _ => {}
            }
            if let Some(rows) = &jc.projection {
                let p = Mat6::from_fn(|r, c| rows[r][c]);
                if (p * p - p).abs().max() > 1e-9 {
                    errs.push(format!("joints[{j}].projection is not idempotent"));
                } else if j < self.joint_specs().len() && (p - self.joint_specs()[j].projection()).abs().max() > 1e-9 {
                    errs.push(format!("joints[{j}].projection does not match the joint kind"));
                }
            }
        }
        let g = &self.gains;
        if g.twist.len() != n {
            errs.push(format!("gains.twist needs {n} entries"));
        }
        if g.pd.len() != self.joints.len() {
            errs.push(format!("gains.pd needs {} entries", self.joints.len()));
        }
        for (i, k) in g.twist.iter().enumerate() {
            if let Err(e) = k.validate() {
                errs.push(format!("gains.twist[{i}]: {e}"));
            }
        }
        for (i, pd) in g.pd.iter().enumerate() {
            if !(pd.kp >= 0.0 && pd.kd >= 0.0) {
                errs.push(format!("gains.pd[{i}] must be non-negative"));
            }
        }
        if !(g.torque_limit > 0.0) {
            errs.push("gains.torque_limit must be positive".into());
        }
        let a = &self.adaptation.config;
        if a.gains.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            errs.push("adaptation.gains must be positive".into());
        }
        if a.bound < 0.0 {
            errs.push("adaptation.bound is negative: lower bound exceeds upper bound".into());
        } else if !(a.bound < 1.0) {
            errs.push("adaptation.bound must be below 1 so the lower bound stays positive".into());
        }
        if a.initial_offsets.iter().any(|o| o.abs() > a.bound) {
            errs.push("adaptation.initial_offsets must lie inside the bound box".into());
        }
        if !(a.noise >= 0.0) {
            errs.push("adaptation.noise must be non-negative".into());
        }
        if !(self.adaptation.pe_window > 0.0) {
            errs.push("adaptation.pe_window must be positive".into());
        }
        if self.output.deformation_points < 2 {
            errs.push("output.deformation_points must be at least 2".into());
        }
        if !(self.output.deformation_interval > 0.0) {
            errs.push("output.deformation_interval must be positive".into());
        }
        if !(self.monitors.young_eps > 0.0) {
            errs.push("monitors.young_eps must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
