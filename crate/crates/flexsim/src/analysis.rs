//! Runtime monitors: Lyapunov functions, interaction power residuals,
//! decay envelopes, elastic energy and adaptive bound constants.

use crate::adaptation::{bias_regressor, mass_regressor, ParamVector, N_PARAMS};
use crate::chain_dynamics::{inertia_matrix, ChainState, InteractionWrenches, LinkModel, LinkState};
use crate::exec;
use crate::flexible_link::{elastic_energy, DeformationState};
use crate::screw_algebra::{Mat6, Twist, Vec3, Vec6};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// `ν = eᵀ M e`.
pub fn lyapunov(e: &Vec6, m: &Mat6) -> f64 {
    e.dot(&(m * e))
}

/// `α = 2 λ_min(KM) / λ_max(M)`. Eigenvalues of `KM` are real for `K` PSD and `M` SPD.
pub fn decay_rate(k: &Mat6, m: &Mat6) -> f64 {
    let km = k * m;
    let lam_min = km.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let m_max = m.symmetric_eigenvalues().max();
    2.0 * lam_min.max(0.0) / m_max
}

/// `ν + e_sᵀ Λ⁻¹ e_s` with `Λ` diagonal.
pub fn augmented_lyapunov(nu: f64, e_s: &ParamVector, gains: &[f64; N_PARAMS]) -> f64 {
    nu + (0..N_PARAMS).map(|k| e_s[k] * e_s[k] / gains[k]).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResiduals {
    /// `p_i = 2 e_iᵀ (W_Jd,i − W_J,i)`.
    pub per_link: Vec<f64>,
    pub total: f64,
    /// Contribution of each joint to its parent side (`p_T`) and child side (`p_B`).
    pub joint_terms: Vec<(f64, f64)>,
    /// `p_T,parent + p_B,child` for every joint; the ground side counts as zero.
    pub pair_sums: Vec<f64>,
}

impl PowerResiduals {
    pub fn max_abs(&self) -> f64 {
        self.per_link.iter().fold(0.0, |a, p| a.max(p.abs()))
    }

    /// `|Σp| ≤ rel·max|p_i| + abs`.
    pub fn telescopes(&self, rel: f64, abs: f64) -> bool {
        self.total.abs() <= rel * self.max_abs() + abs
    }
}

/// Interaction wrenches enter the rigid equations as `−Gᵀλ` on the left-hand side;
/// the applied wrench is its negative.
pub fn power_residuals(
    actual: &InteractionWrenches,
    desired: &InteractionWrenches,
    errors: &[Vec6],
    parents: &[Option<usize>],
    children: &[usize],
) -> PowerResiduals {
    let per_link: Vec<f64> = errors
        .iter()
        .enumerate()
        .map(|(i, e)| 2.0 * e.dot(&(actual.per_link[i] - desired.per_link[i])))
        .collect();
    let total = per_link.iter().sum();
    let mut joint_terms = Vec::with_capacity(children.len());
    let mut pair_sums = Vec::with_capacity(children.len());
    for j in 0..children.len() {
        let (ap, ac) = &actual.per_joint[j];
        let (dp, dc) = &desired.per_joint[j];
        let p_b = 2.0 * errors[children[j]].dot(&(ac - dc));
        let p_t = match (parents[j], ap, dp) {
            (Some(p), Some(a), Some(d)) => 2.0 * errors[p].dot(&(a - d)),
            _ => 0.0,
        };
        joint_terms.push((p_t, p_b));
        pair_sums.push(p_t + p_b);
    }
    PowerResiduals { per_link, total, joint_terms, pair_sums }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<f64>,
    /// Smallest value of `bound − value` over the checked samples.
    pub worst_margin: f64,
}

/// `V(t) ≤ V(t₀)e^{−μ(t−t₀)} + (c/μ)(1 − e^{−μ(t−t₀)})` for `t ≥ t₀`, with `t₀` the
/// first sample at or after `t_start`. `slack` scales the bound, `floor` is added to it.
pub fn decay_envelope_check(
    t: &[f64],
    v: &[f64],
    rate: f64,
    offset: f64,
    t_start: f64,
    slack: f64,
    floor: f64,
) -> EnvelopeReport {
    let mut report = EnvelopeReport { checked: 0, violations: 0, first_violation: None, worst_margin: f64::INFINITY };
    let Some(i0) = t.iter().position(|&x| x >= t_start) else {
        return report;
    };
    let (t0, v0) = (t[i0], v[i0]);
    for i in i0..t.len() {
        let dt = t[i] - t0;
        let decay = (-rate * dt).exp();
        let band = if rate > 0.0 { offset / rate * (1.0 - decay) } else { offset * dt };
        let bound = (v0 * decay + band) * (1.0 + slack) + floor;
        let margin = bound - v[i];
        report.checked += 1;
        report.worst_margin = report.worst_margin.min(margin);
        if margin < 0.0 {
            report.violations += 1;
            report.first_violation.get_or_insert(t[i]);
        }
    }
    report
}

/// Elastic energy of every link.
pub fn elastic_energies(links: &[LinkModel], state: &ChainState) -> Vec<f64> {
    links
        .iter()
        .zip(&state.links)
        .map(|(l, s)| elastic_energy(&l.params, &l.basis, &s.def, &s.twist.omega))
        .collect()
}

/// Ratio of the maximum over the last third of a series to the maximum over the
/// middle third. A ratio well above one indicates growth.
pub fn growth_ratio(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 3 {
        return 1.0;
    }
    let mx = |s: &[f64]| s.iter().fold(0.0_f64, |a, &b| a.max(b));
    let mid = mx(&series[n / 3..2 * n / 3]);
    let late = mx(&series[2 * n / 3..]);
    if mid == 0.0 {
        if late == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        late / mid
    }
}

/// Sampling ranges for the operating envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingEnvelope {
    pub omega_max: f64,
    pub v_max: f64,
    pub q_max: f64,
    pub qdot_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub c_m: f64,
    pub c_h: f64,
    pub c_q: f64,
}

pub fn spectral_norm(a: &Mat6) -> f64 {
    a.singular_values().max()
}

/// `∂M/∂s_k`; `M` is affine in `s`.
pub fn mass_partial(link: &LinkModel, k: usize) -> Mat6 {
    let mut d = Mat6::zeros();
    for j in 0..6 {
        let y = mass_regressor(link, &Vec6::ith(j, 1.0)).y;
        d.set_column(j, &y.column(k));
    }
    d
}

pub fn random_link_state(link: &LinkModel, env: &OperatingEnvelope, rng: &mut impl Rng) -> LinkState {
    let mut u = |a: f64| rng.random_range(-a..=a);
    let theta = Vec3::new(u(std::f64::consts::PI), u(1.0), u(1.0));
    let twist = Twist::new(
        Vec3::new(u(env.omega_max), u(env.omega_max), u(env.omega_max)),
        Vec3::new(u(env.v_max), u(env.v_max), u(env.v_max)),
    );
    let n = link.n_modes();
    let q = DVector::from_fn(n, |_, _| u(env.q_max));
    let qdot = DVector::from_fn(n, |_, _| u(env.qdot_max));
    LinkState { theta, p: Vec3::zeros(), twist, def: DeformationState { q, qdot } }
}

/// `c_M`, `c_H` and `c_Q` of one link. `c_H` is the largest column norm over
/// `samples` random states; `eps` is the Young's-inequality weight.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_bound_constants(
    link: &LinkModel,
    k: &Mat6,
    gains: &[f64; N_PARAMS],
    vd_dot_bound: f64,
    s_true: &ParamVector,
    lower: &ParamVector,
    upper: &ParamVector,
    env: &OperatingEnvelope,
    g: &Vec3,
    samples: usize,
    seed: u64,
    eps: f64,
) -> BoundConstants {
    let c_m = (0..N_PARAMS).map(|kk| spectral_norm(&mass_partial(link, kk))).fold(0.0, f64::max);
    let c_h = exec::map_indexed(samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let ls = random_link_state(link, env, &mut rng);
        let y = bias_regressor(link, &ls, g).y;
        (0..N_PARAMS).map(|kk| y.column(kk).norm()).fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    let sup_es = ParamVector::from_fn(|i, _| (s_true[i] - lower[i]).abs().max((upper[i] - s_true[i]).abs())).norm();
    let lam_max = gains.iter().copied().fold(0.0, f64::max);
    let m_min = inertia_matrix(link).symmetric_eigenvalues().min();
    let a = 2.0 * spectral_norm(k) * c_m + c_m * vd_dot_bound + c_h;
    let c_q = a * a * lam_max / (2.0 * eps * m_min) * sup_es * sup_es;
    BoundConstants { c_m, c_h, c_q }
}

/// Per-sample monitor values appended to the log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StabilityRecord {
    pub nu: Vec<f64>,
    pub nu_aug: Vec<f64>,
    pub alpha: Vec<f64>,
    pub v_total: f64,
    pub v_aug_total: f64,
    pub p: Vec<f64>,
    pub p_sum: f64,
    pub pair_sums: Vec<f64>,
    pub energy: Vec<f64>,
}
