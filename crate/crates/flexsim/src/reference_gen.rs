//! Desired endpoint path, deflection-corrected joint reference and desired link twists.

use crate::chain_dynamics::{Chain, ChainState, JointKind};
use crate::screw_algebra::{body_jacobian, skew, Twist, Vec3, Vec6};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Circle radius [m].
    pub r_d: f64,
    /// Angular rate along the circle [rad/s].
    pub omega_d: f64,
    pub tau_ramp: f64,
    pub tau_blend: f64,
    pub t_f: f64,
    /// Initial absolute yaw of link 1 [rad].
    pub theta1z0: f64,
    /// Initial pitch of link 1 [rad].
    pub theta1y0: f64,
    /// Initial absolute yaw of link 2 [rad].
    pub theta2z0: f64,
    #[serde(default)]
    pub ik: IkMode,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        for (name, v) in [("tau_ramp", self.tau_ramp), ("tau_blend", self.tau_blend), ("omega_d", self.omega_d)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("trajectory.{name} must be positive"));
            }
        }
        if !(self.r_d >= 0.0) {
            errs.push("trajectory.r_d must be non-negative".into());
        }
        if !(self.t_f >= 0.0) {
            errs.push("trajectory.t_f must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    pub fn ramp(&self, t: f64) -> (f64, f64) {
        let e = (-t / self.tau_ramp).exp();
        (1.0 - e, e / self.tau_ramp)
    }

    pub fn blend(&self, t: f64) -> (f64, f64) {
        let e = (-t / self.tau_blend).exp();
        (e, -e / self.tau_blend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IkMode {
    /// Small-angle closed form for a yaw-pitch base joint followed by a yaw joint.
    #[default]
    ClosedForm,
    /// Damped pseudoinverse of the rigid kinematic Jacobian on the path plane.
    Pseudoinverse,
}

pub const PINV_DAMPING: f64 = 1e-6;

/// Desired endpoint offset and velocity in the inertial frame; the path lies in the yz-plane.
pub fn endpoint_reference(spec: &TrajectorySpec, t: f64) -> (Vec3, Vec3) {
    let (rho, rho_dot) = spec.ramp(t);
    let (s, c) = (spec.omega_d * t).sin_cos();
    let p = Vec3::new(0.0, spec.r_d * s * rho, spec.r_d * c * rho);
    let v = Vec3::new(
        0.0,
        spec.r_d * (spec.omega_d * c * rho + s * rho_dot),
        spec.r_d * (-spec.omega_d * s * rho + c * rho_dot),
    );
    (p, v)
}

/// Accumulated inertial tip deflection and its rate.
pub fn deflection_estimate(chain: &Chain, state: &ChainState) -> (Vec3, Vec3) {
    let mut d = Vec3::zeros();
    let mut dd = Vec3::zeros();
    for (l, ls) in chain.links.iter().zip(&state.links) {
        let rot = ls.rotation();
        let r = l.tip_deflection(&ls.def);
        let rdot = l.tip_deflection_rate(&ls.def);
        d += rot * r;
        dd += rot * (ls.twist.omega.cross(&r) + rdot);
    }
    (d, dd)
}

/// Joint coordinates and rates, one inner vector per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointReference {
    pub q: Vec<Vec<f64>>,
    pub qdot: Vec<Vec<f64>>,
}

impl JointReference {
    pub fn flat_q(&self) -> Vec<f64> {
        self.q.iter().flatten().copied().collect()
    }

    pub fn flat_qdot(&self) -> Vec<f64> {
        self.qdot.iter().flatten().copied().collect()
    }
}

fn reach(chain: &Chain) -> f64 {
    chain.links.iter().map(|l| l.params.length()).sum()
}

/// Closed-form joint reference for the target `p` (already deflection corrected).
pub fn closed_form_ik(spec: &TrajectorySpec, reach: f64, p: &Vec3, pdot: &Vec3, t: f64) -> JointReference {
    let (b, bd) = spec.blend(t);
    let t1z = p.y / reach + spec.theta1z0 * b;
    let t1y = -p.z / reach + spec.theta1y0 * b;
    let t2z = p.y / reach + spec.theta2z0 * b;
    let d1z = pdot.y / reach + spec.theta1z0 * bd;
    let d1y = -pdot.z / reach + spec.theta1y0 * bd;
    let d2z = pdot.y / reach + spec.theta2z0 * bd;
    JointReference { q: vec![vec![t1z, t1y], vec![t2z - t1z]], qdot: vec![vec![d1z, d1y], vec![d2z - d1z]] }
}

fn closed_form_applies(chain: &Chain) -> bool {
    chain.joints.len() == 2
        && matches!(chain.joints[0].kind, JointKind::Universal { .. })
        && matches!(chain.joints[1].kind, JointKind::Revolute { .. })
}

/// Rigid forward kinematics: inertial tip position of the last link.
pub fn forward_kinematics(chain: &Chain, q: &[Vec<f64>]) -> Vec3 {
    let s = chain.assemble(q);
    let last = s.links.len() - 1;
    let ls = &s.links[last];
    let l = &chain.links[last];
    ls.p + ls.rotation() * l.params.r_b(l.params.c)
}

fn unflatten(chain: &Chain, flat: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut k = 0;
    for j in &chain.joints {
        out.push(flat[k..k + j.free_axes()].to_vec());
        k += j.free_axes();
    }
    out
}

/// Central-difference kinematic Jacobian of the yz tip position.
pub fn kinematic_jacobian(chain: &Chain, q: &[Vec<f64>]) -> DMatrix<f64> {
    let flat: Vec<f64> = q.iter().flatten().copied().collect();
    let h = 1e-6;
    let mut jac = DMatrix::zeros(2, flat.len());
    for k in 0..flat.len() {
        let mut qp = flat.clone();
        let mut qm = flat.clone();
        qp[k] += h;
        qm[k] -= h;
        let d = (forward_kinematics(chain, &unflatten(chain, &qp)) - forward_kinematics(chain, &unflatten(chain, &qm)))
            / (2.0 * h);
        jac[(0, k)] = d.y;
        jac[(1, k)] = d.z;
    }
    jac
}

fn damped_pinv_solve(jac: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    let jjt = jac * jac.transpose();
    let sv_min = jjt.clone().symmetric_eigenvalues().min().max(0.0).sqrt();
    let reg = jjt + DMatrix::identity(jac.nrows(), jac.nrows()) * PINV_DAMPING * PINV_DAMPING;
    let y = reg.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
    (jac.transpose() * y, sv_min < 1e-3)
}

/// Deflection-corrected joint reference, plus a flag raised on a near-singular Jacobian.
pub fn corrected_joint_reference(
    spec: &TrajectorySpec,
    chain: &Chain,
    state: &ChainState,
    t: f64,
    previous: Option<&JointReference>,
) -> (JointReference, bool) {
    let (p, pdot) = endpoint_reference(spec, t);
    let (d, dd) = deflection_estimate(chain, state);
    let (pc, pcd) = (p - d, pdot - dd);
    if spec.ik == IkMode::ClosedForm && closed_form_applies(chain) {
        return (closed_form_ik(spec, reach(chain), &pc, &pcd, t), false);
    }
    // home offset so that the path is centred on the initial tip position
    let q0 = initial_joint_coordinates(spec, chain);
    let home = forward_kinematics(chain, &q0);
    let target = home + pc;
    let mut q: Vec<f64> = previous.map(|r| r.flat_q()).unwrap_or_else(|| q0.iter().flatten().copied().collect());
    let mut singular = false;
    for _ in 0..20 {
        let qq = unflatten(chain, &q);
        let err = target - forward_kinematics(chain, &qq);
        let e = DVector::from_vec(vec![err.y, err.z]);
        if e.norm() < 1e-12 {
            break;
        }
        let (dq, s) = damped_pinv_solve(&kinematic_jacobian(chain, &qq), &e);
        singular |= s;
        for (a, b) in q.iter_mut().zip(dq.iter()) {
            *a += b;
        }
    }
    let qq = unflatten(chain, &q);
    let (qdot, s) = damped_pinv_solve(&kinematic_jacobian(chain, &qq), &DVector::from_vec(vec![pcd.y, pcd.z]));
    singular |= s;
    (JointReference { q: qq, qdot: unflatten(chain, qdot.as_slice()) }, singular)
}

/// Joint coordinates at `t = 0` from the absolute angles of the trajectory.
pub fn initial_joint_coordinates(spec: &TrajectorySpec, chain: &Chain) -> Vec<Vec<f64>> {
    if closed_form_applies(chain) {
        vec![vec![spec.theta1z0, spec.theta1y0], vec![spec.theta2z0 - spec.theta1z0]]
    } else {
        chain.joints.iter().map(|j| vec![0.0; j.free_axes()]).collect()
    }
}

/// Body twist from exponential coordinates, their rates and the body-frame origin.
pub fn vdi(theta: &Vec3, theta_dot: &Vec3, r: &Vec3, r_dot: &Vec3) -> Twist {
    let omega = body_jacobian(theta) * theta_dot;
    Twist::new(omega, r_dot + skew(&omega) * r)
}

/// Desired twists of the rigid chain placed at `q_d` and moving at `q̇_d`.
pub fn rigid_desired_twists(chain: &Chain, reference: &JointReference) -> Vec<Twist> {
    let mut s = chain.assemble(&reference.q);
    for ls in &mut s.links {
        ls.def.q.fill(0.0);
    }
    propagate_twists(chain, &s, &reference.qdot, false)
}

/// Desired twists mapped through the configuration of `state`, so that they
/// satisfy the joint constraints of that configuration exactly. The actual
/// deformation rates carry through the joints.
pub fn consistent_desired_twists(chain: &Chain, state: &ChainState, rates: &[Vec<f64>]) -> Vec<Twist> {
    propagate_twists(chain, state, rates, true)
}

fn propagate_twists(chain: &Chain, state: &ChainState, rates: &[Vec<f64>], with_deformation_rate: bool) -> Vec<Twist> {
    let mut out: Vec<Twist> = Vec::with_capacity(chain.links.len());
    for (j, js) in chain.joints.iter().enumerate() {
        let rc = state.links[js.child].rotation();
        let (rcp, parent) = match js.parent {
            Some(p) => ((rc.inverse() * state.links[p].rotation()).into_inner(), Some(p)),
            None => (rc.inverse().into_inner(), None),
        };
        let w_rel = match &js.kind {
            JointKind::Revolute { axis } => Vec3::from(*axis).normalize() * rates[j][0],
            JointKind::Universal { parent_axis, child_axis } => {
                let zp = rcp * Vec3::from(*parent_axis).normalize();
                zp * rates[j][0] + Vec3::from(*child_axis).normalize() * rates[j][1]
            }
        };
        let tw = match parent {
            None => Twist::new(w_rel, Vec3::zeros()),
            Some(p) => {
                let vp: Twist = out[p];
                let l = &chain.links[p];
                let def = &state.links[p].def;
                let r_t = l.tip_position(def);
                let mut u = vp.v + vp.omega.cross(&r_t);
                if with_deformation_rate {
                    u += l.tip_deflection_rate(def);
                }
                Twist::new(rcp * vp.omega + w_rel, rcp * u)
            }
        };
        out.push(tw);
    }
    out
}

/// Second-order finite differences of twist samples at a fixed step.
///
/// Uses the three-point stencil on the latest three samples; the first
/// sample has zero rate and the second a two-point difference.
#[derive(Debug, Clone)]
pub struct TwistDifferentiator {
    dt: f64,
    history: VecDeque<Vec<Vec6>>,
}

impl TwistDifferentiator {
    pub fn new(dt: f64) -> Self {
        Self { dt, history: VecDeque::with_capacity(3) }
    }

    pub fn push(&mut self, twists: &[Twist]) -> Vec<Vec6> {
        if self.history.len() == 3 {
            self.history.pop_front();
        }
        self.history.push_back(twists.iter().map(Twist::to_vec6).collect());
        let h = &self.history;
        let n = twists.len();
        match h.len() {
            1 => vec![Vec6::zeros(); n],
            2 => (0..n).map(|i| (h[1][i] - h[0][i]) / self.dt).collect(),
            _ => (0..n).map(|i| (3.0 * h[2][i] - 4.0 * h[1][i] + h[0][i]) / (2.0 * self.dt)).collect(),
        }
    }
}

/// Everything the controllers need from the reference at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub p_d: Vec3,
    pub pdot_d: Vec3,
    pub deflection: Vec3,
    pub joint: JointReference,
    pub twists: Vec<Twist>,
    pub twist_rates: Vec<Vec6>,
    pub near_singular: bool,
}

#[derive(Debug, Clone)]
pub struct ReferenceGenerator {
    pub spec: TrajectorySpec,
    diff: TwistDifferentiator,
    last: Option<JointReference>,
}

impl ReferenceGenerator {
    pub fn new(spec: TrajectorySpec, dt: f64) -> Self {
        Self { spec, diff: TwistDifferentiator::new(dt), last: None }
    }

    pub fn sample(&mut self, chain: &Chain, state: &ChainState) -> ReferenceSample {
        let t = state.t;
        let (p_d, pdot_d) = endpoint_reference(&self.spec, t);
        let (deflection, _) = deflection_estimate(chain, state);
        let (joint, near_singular) = corrected_joint_reference(&self.spec, chain, state, t, self.last.as_ref());
        let twists = consistent_desired_twists(chain, state, &joint.qdot);
        let twist_rates = self.diff.push(&twists);
        self.last = Some(joint.clone());
        ReferenceSample { t, p_d, pdot_d, deflection, joint, twists, twist_rates, near_singular }
    }
}
