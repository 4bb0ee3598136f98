//! Control laws, torque saturation and the wrench-to-motor map.

use crate::adaptation::{bias_regressor, mass_regressor, ParamVector};
use crate::chain_dynamics::{bias_hc, inertia_matrix, Chain, ChainState, JointKind, LinkModel, LinkState};
use crate::screw_algebra::{Mat3, Mat6, Twist, Vec3, Vec6, Wrench};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("actuation map of joint {joint} is rank deficient")]
    RankDeficient { joint: usize },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Slpc,
    SlpcAdaptive,
    Ptc,
    Pd,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Slpc => "slpc",
            ControllerKind::SlpcAdaptive => "slpc-adaptive",
            ControllerKind::Ptc => "ptc",
            ControllerKind::Pd => "pd",
        }
    }
}

/// Twist gain of one link; angular entries first, matching the twist stacking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistGain {
    #[serde(default)]
    pub k_angular: [f64; 3],
    #[serde(default)]
    pub k_linear: [f64; 3],
    /// Full matrix overriding the diagonal entries.
    #[serde(default)]
    pub matrix: Option<[[f64; 6]; 6]>,
}

impl TwistGain {
    pub fn diagonal(k_angular: [f64; 3], k_linear: [f64; 3]) -> Self {
        Self { k_angular, k_linear, matrix: None }
    }

    pub fn matrix(&self) -> Mat6 {
        match &self.matrix {
            Some(rows) => Mat6::from_fn(|r, c| rows[r][c]),
            None => {
                let d: Vec<f64> = self.k_angular.iter().chain(self.k_linear.iter()).copied().collect();
                Mat6::from_diagonal(&Vec6::from_vec(d))
            }
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let k = self.matrix();
        if (k - k.transpose()).abs().max() > 1e-12 {
            return Err(ControlError::InvalidGains("twist gain is not symmetric".into()));
        }
        if k.symmetric_eigenvalues().min() < -1e-12 {
            return Err(ControlError::InvalidGains("twist gain has a negative eigenvalue".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGain {
    pub kp: f64,
    pub kd: f64,
}

pub fn twist_error(vd: &Twist, v: &Twist) -> Vec6 {
    vd.to_vec6() - v.to_vec6()
}

/// `M V̇_d + H_c + K M e_V`.
pub fn slpc_nominal(link: &LinkModel, ls: &LinkState, vd: &Twist, vd_dot: &Vec6, k: &Mat6, g: &Vec3) -> Wrench {
    let m = inertia_matrix(link);
    let e = twist_error(vd, &ls.twist);
    let h = bias_hc(link, &ls.def, &ls.rotation(), &ls.twist, g);
    Wrench::from_vec6(&(m * vd_dot + h + k * m * e))
}

/// SLPC with `M` and `H_c` evaluated at the estimate `ŝ`.
pub fn slpc_adaptive(
    link: &LinkModel,
    ls: &LinkState,
    vd: &Twist,
    vd_dot: &Vec6,
    k: &Mat6,
    g: &Vec3,
    s_hat: &ParamVector,
) -> Wrench {
    let e = twist_error(vd, &ls.twist);
    let me = mass_regressor(link, &e).eval(s_hat);
    let ff = mass_regressor(link, vd_dot).eval(s_hat) + bias_regressor(link, ls, g).eval(s_hat);
    Wrench::from_vec6(&(ff + k * me))
}

pub fn ptc(vd: &Twist, v: &Twist, k: &Mat6) -> Wrench {
    Wrench::from_vec6(&(k * twist_error(vd, v)))
}

pub fn pd_joint(theta_d: &[f64], theta: &[f64], rate_d: &[f64], rate: &[f64], gain: &PdGain) -> Vec<f64> {
    (0..theta.len())
        .map(|k| gain.kp * (theta_d[k] - theta[k]) + gain.kd * (rate_d[k] - rate[k]))
        .collect()
}

pub fn saturate(x: f64, limit: f64) -> f64 {
    x.clamp(-limit, limit)
}

pub fn saturate_torques(torques: &[Vec<f64>], limit: f64) -> (Vec<Vec<f64>>, bool) {
    let mut hit = false;
    let out = torques
        .iter()
        .map(|t| {
            t.iter()
                .map(|&x| {
                    let y = saturate(x, limit);
                    hit |= y != x;
                    y
                })
                .collect()
        })
        .collect();
    (out, hit)
}

pub fn saturate_wrench(w: &Wrench, limit: f64) -> Wrench {
    Wrench::new(w.tau.map(|x| saturate(x, limit)), w.force.map(|x| saturate(x, limit)))
}

/// Motor torques realizing desired link wrenches, and the unactuated remainder per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    pub torques: Vec<Vec<f64>>,
    /// Part of the wrench transmitted across each joint that the motors cannot supply.
    pub residuals: Vec<Vec6>,
}

/// Free-axis directions of joint `j` in child-frame components at the current configuration.
pub fn actuated_axes(chain: &Chain, state: &ChainState, j: usize) -> Vec<Vec3> {
    let js = &chain.joints[j];
    match &js.kind {
        JointKind::Revolute { axis } => vec![Vec3::from(*axis).normalize()],
        JointKind::Universal { parent_axis, child_axis } => {
            let rc = state.links[js.child].rotation();
            let rcp: Mat3 = match js.parent {
                Some(p) => (rc.inverse() * state.links[p].rotation()).into_inner(),
                None => rc.inverse().into_inner(),
            };
            vec![rcp * Vec3::from(*parent_axis).normalize(), Vec3::from(*child_axis).normalize()]
        }
    }
}

/// Recursively accumulates the wrench each joint must transmit, from the tip
/// inwards, and projects it onto the joint's actuated axes by least squares.
pub fn wrench_to_actuation(chain: &Chain, state: &ChainState, desired: &[Wrench]) -> Result<Actuation, ControlError> {
    let n = chain.links.len();
    let mut transmitted: Vec<Vec6> = desired.iter().map(Wrench::to_vec6).collect();
    let mut torques = vec![Vec::new(); n];
    let mut residuals = vec![Vec6::zeros(); n];
    for j in (0..chain.joints.len()).rev() {
        let js = &chain.joints[j];
        let f = transmitted[js.child];
        let axes = actuated_axes(chain, state, j);
        let a = DMatrix::from_fn(3, axes.len(), |r, c| axes[c][r]);
        let ata = a.transpose() * &a;
        let tau_rot: Vec3 = f.fixed_rows::<3>(0).into_owned();
        let sol = ata
            .clone()
            .cholesky()
            .ok_or(ControlError::RankDeficient { joint: j })?
            .solve(&(a.transpose() * DVector::from_column_slice(tau_rot.as_slice())));
        if ata.determinant().abs() < 1e-12 {
            return Err(ControlError::RankDeficient { joint: j });
        }
        let supplied = &a * &sol;
        let mut res = f;
        for r in 0..3 {
            res[r] -= supplied[r];
        }
        residuals[j] = res;
        torques[j] = sol.iter().copied().collect();
        if let Some(p) = js.parent {
            let l = &chain.links[p];
            let r_t = l.tip_position(&state.links[p].def);
            let rpc: Mat3 = (state.links[p].rotation().inverse() * state.links[js.child].rotation()).into_inner();
            let tau = rpc * f.fixed_rows::<3>(0).into_owned();
            let force = rpc * f.fixed_rows::<3>(3).into_owned();
            let mut add = Vec6::zeros();
            add.fixed_rows_mut::<3>(0).copy_from(&(tau + r_t.cross(&force)));
            add.fixed_rows_mut::<3>(3).copy_from(&force);
            transmitted[p] += add;
        }
    }
    Ok(Actuation { torques, residuals })
}
