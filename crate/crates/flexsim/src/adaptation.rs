//! Online estimation of `s = [rhoA, Ib22, Ib33, EIy, EIz]` per link.

use crate::chain_dynamics::{bias_hc_from_samples, inertia_matrix, LinkModel, LinkState};
use crate::screw_algebra::{Mat3, Twist, Vec3, Vec6};
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const N_PARAMS: usize = 5;
pub const PARAM_NAMES: [&str; N_PARAMS] = ["rho_a", "ib22", "ib33", "ei_y", "ei_z"];

pub type ParamVector = SVector<f64, N_PARAMS>;
pub type RegressorV = SMatrix<f64, 6, N_PARAMS>;
pub type RegressorXi = SMatrix<f64, 3, 2>;
pub type Stacked = SMatrix<f64, 9, N_PARAMS>;

/// True parameter vector of a link model.
pub fn true_params(link: &LinkModel) -> ParamVector {
    let ib = link.mass.inertia;
    ParamVector::from([link.rho_a(), ib[(1, 1)], ib[(2, 2)], link.params.ei_y(), link.params.ei_z()])
}

/// Linear-in-parameters form `y = Y s + known`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear<const R: usize> {
    pub y: SMatrix<f64, R, N_PARAMS>,
    pub known: SVector<f64, R>,
}

impl<const R: usize> Linear<R> {
    pub fn eval(&self, s: &ParamVector) -> SVector<f64, R> {
        self.y * s + self.known
    }
}

fn put(y: &mut RegressorV, col: usize, top: Vec3, bot: Vec3) {
    for r in 0..3 {
        y[(r, col)] += top[r];
        y[(r + 3, col)] += bot[r];
    }
}

/// `M(s) x` in regressor form.
pub fn mass_regressor(link: &LinkModel, x: &Vec6) -> Linear<6> {
    let w: Vec3 = x.fixed_rows::<3>(0).into_owned();
    let v: Vec3 = x.fixed_rows::<3>(3).into_owned();
    let ra = link.rho_a();
    let s_unit = link.mass.coupling / ra;
    let l = link.mass.mass / ra;
    let mut y = RegressorV::zeros();
    put(&mut y, 0, s_unit * v, -s_unit * w + l * v);
    put(&mut y, 1, Vec3::new(0.0, w.y, 0.0), Vec3::zeros());
    put(&mut y, 2, Vec3::new(0.0, 0.0, w.z), Vec3::zeros());
    let m = inertia_matrix(link);
    let mut rest = Mat3::zeros();
    rest.copy_from(&m.fixed_view::<3, 3>(0, 0));
    rest[(1, 1)] = 0.0;
    rest[(2, 2)] = 0.0;
    let mut known = Vec6::zeros();
    known.fixed_rows_mut::<3>(0).copy_from(&(rest * w));
    Linear { y, known }
}

/// `H_c(s)` in regressor form. `g` enters as `+Rᵀg`.
pub fn bias_regressor(link: &LinkModel, ls: &LinkState, g: &Vec3) -> Linear<6> {
    let samples = link.sample(&ls.def, &ls.twist);
    let w = ls.twist.omega;
    let v = ls.twist.v;
    let gb = ls.rotation().inverse() * g;
    let ea = link.params.ea();
    let mut y = RegressorV::zeros();
    let mut known = Vec6::zeros();
    let mut i_line = Mat3::zeros();
    for (nd, s) in link.nodes.iter().zip(&samples) {
        let wt = nd.w;
        let rho_top = nd.r_b.cross(&w.cross(&v)) + s.r.cross(&w.cross(&s.v_b)) + s.r_ib.cross(&gb);
        let rho_bot = w.cross(&s.v_b) + gb;
        put(&mut y, 0, wt * rho_top, wt * rho_bot);
        let fz = Vec3::new(0.0, 0.0, -s.r4.z);
        let fy = Vec3::new(0.0, -s.r4.y, 0.0);
        put(&mut y, 3, wt * s.r_ib.cross(&fz), wt * fz);
        put(&mut y, 4, wt * s.r_ib.cross(&fy), wt * fy);
        let fx = Vec3::new(ea * s.r2.x, 0.0, 0.0);
        let mut k = known.fixed_rows::<3>(0).into_owned();
        k += wt * s.r_ib.cross(&fx);
        known.fixed_rows_mut::<3>(0).copy_from(&k);
        let mut k = known.fixed_rows::<3>(3).into_owned();
        k += wt * fx;
        known.fixed_rows_mut::<3>(3).copy_from(&k);
        i_line += wt * (Mat3::identity() * nd.r_b.norm_squared() - nd.r_b * nd.r_b.transpose());
    }
    // gyroscopic part ω × (Ib ω)
    put(&mut y, 1, w.cross(&Vec3::new(0.0, w.y, 0.0)), Vec3::zeros());
    put(&mut y, 2, w.cross(&Vec3::new(0.0, 0.0, w.z)), Vec3::zeros());
    let mut rest = i_line * link.rho_a();
    rest[(1, 1)] = 0.0;
    rest[(2, 2)] = 0.0;
    let mut k = known.fixed_rows::<3>(0).into_owned();
    k += w.cross(&(rest * w));
    known.fixed_rows_mut::<3>(0).copy_from(&k);
    Linear { y, known }
}

/// `M(s) V̇ + H_c(s)` in regressor form.
pub fn regressor_v(link: &LinkModel, ls: &LinkState, vdot: &Vec6, g: &Vec3) -> Linear<6> {
    let m = mass_regressor(link, vdot);
    let h = bias_regressor(link, ls, g);
    Linear { y: m.y + h.y, known: m.known + h.known }
}

/// Tip strain-rate relation `Y_xi s_xi + known = -(v̇_xi + ω × v_xi)(c)`,
/// normalized by the link's reference `rhoA`.
pub fn regressor_xi(link: &LinkModel, ls: &LinkState) -> (RegressorXi, Vec3) {
    let n = link.n_modes();
    if n == 0 {
        return (RegressorXi::zeros(), Vec3::zeros());
    }
    let [_, _, phi2, _, phi4] = link.basis.shapes_at(link.params.c);
    let r2 = phi2 * &ls.def.q;
    let r4 = phi4 * &ls.def.q;
    let ra = link.rho_a();
    let mut y = RegressorXi::zeros();
    y[(2, 0)] = r4.z / ra;
    y[(1, 1)] = r4.y / ra;
    (y, Vec3::new(-link.params.ea() * r2.x / ra, 0.0, 0.0))
}

/// `Y_xi` embedded in the five parameter columns.
pub fn pad_xi(y: &RegressorXi) -> SMatrix<f64, 3, N_PARAMS> {
    let mut out = SMatrix::<f64, 3, N_PARAMS>::zeros();
    out.fixed_view_mut::<3, 2>(0, 3).copy_from(y);
    out
}

pub fn stack(yv: &RegressorV, yxi: &RegressorXi) -> Stacked {
    let mut out = Stacked::zeros();
    out.fixed_view_mut::<6, N_PARAMS>(0, 0).copy_from(yv);
    out.fixed_view_mut::<3, N_PARAMS>(6, 0).copy_from(&pad_xi(yxi));
    out
}

/// Ground-truth left-hand sides a simulator can supply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    /// `M V̇ + H_c` with the true parameters.
    pub dynamic: Vec6,
    /// `-(v̇_xi + ω × v_xi)` at the tip.
    pub strain: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrainSource {
    /// Tip strain relation evaluated with the true stiffness.
    #[default]
    Model,
    /// Tip elastic acceleration of the plant.
    Plant,
}

/// Measured left-hand sides from the true link model at the plant state.
pub fn measure(
    link: &LinkModel,
    ls: &LinkState,
    vdot: &Vec6,
    qddot: &DVector<f64>,
    g: &Vec3,
    source: StrainSource,
) -> Measurements {
    let samples = link.sample(&ls.def, &ls.twist);
    let dynamic = inertia_matrix(link) * vdot + bias_hc_from_samples(link, &samples, &ls.rotation(), &ls.twist, g);
    let strain = if link.n_modes() == 0 {
        Vec3::zeros()
    } else {
        match source {
            StrainSource::Model => {
                let (y, known) = regressor_xi(link, ls);
                let s = true_params(link);
                y * SVector::<f64, 2>::new(s[3], s[4]) + known
            }
            StrainSource::Plant => {
                let w = ls.twist.omega;
                let wdot: Vec3 = vdot.fixed_rows::<3>(0).into_owned();
                let r = link.tip_deflection(&ls.def);
                let rdot = link.tip_deflection_rate(&ls.def);
                let a = &link.tip_phi * qddot + wdot.cross(&r) + w.cross(&rdot);
                -(a + w.cross(&(rdot + w.cross(&r))))
            }
        }
    };
    Measurements { dynamic, strain }
}

/// Output residuals `(measured) - (parallel model at ŝ)`.
pub fn residuals(
    yv: &Linear<6>,
    yxi: &(RegressorXi, Vec3),
    measured: &Measurements,
    s_hat: &ParamVector,
) -> (Vec6, Vec3) {
    let eps_v = measured.dynamic - yv.eval(s_hat);
    let eps_xi = measured.strain - (yxi.0 * SVector::<f64, 2>::new(s_hat[3], s_hat[4]) + yxi.1);
    (eps_v, eps_xi)
}

pub fn lumped_gamma(yv: &RegressorV, eps_v: &Vec6, yxi: &RegressorXi, eps_xi: &Vec3) -> ParamVector {
    yv.transpose() * eps_v + pad_xi(yxi).transpose() * eps_xi
}

/// Elementwise projection that stops updates pushing past a bound.
pub fn project(s: &ParamVector, lo: &ParamVector, hi: &ParamVector, e: &ParamVector) -> ParamVector {
    ParamVector::from_fn(|k, _| {
        if (s[k] >= hi[k] && e[k] > 0.0) || (s[k] <= lo[k] && e[k] < 0.0) {
            0.0
        } else {
            e[k]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Diagonal of `Λ`.
    pub gains: [f64; N_PARAMS],
    /// Relative initial offsets of `ŝ` from the true values.
    pub initial_offsets: [f64; N_PARAMS],
    /// Relative half-width of the projection box.
    pub bound: f64,
    /// Standard deviation of additive measurement noise, relative to each channel's magnitude.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub strain_source: StrainSource,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            gains: [5e5, 1e3, 1e3, 10.0, 100.0],
            initial_offsets: [0.1, -0.1, 0.1, -0.1, 0.1],
            bound: 0.2,
            noise: 0.0,
            strain_source: StrainSource::Model,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub s_hat: ParamVector,
    pub lower: ParamVector,
    pub upper: ParamVector,
    pub gains: ParamVector,
    pub gramian: Gramian,
}

impl AdaptState {
    pub fn new(s_true: &ParamVector, cfg: &AdaptationConfig, window: f64, dt: f64) -> Self {
        let offs = ParamVector::from(cfg.initial_offsets);
        Self {
            s_hat: s_true.component_mul(&offs.add_scalar(1.0)),
            lower: s_true * (1.0 - cfg.bound),
            upper: s_true * (1.0 + cfg.bound),
            gains: ParamVector::from(cfg.gains),
            gramian: Gramian::new(window, dt),
        }
    }

    /// Euler step `ŝ ← ŝ + dt·project(ŝ, ΛΓ)`, clamped to the box.
    pub fn update(&mut self, gamma: &ParamVector, dt: f64) {
        let step = project(&self.s_hat, &self.lower, &self.upper, &self.gains.component_mul(gamma));
        self.s_hat += dt * step;
        for k in 0..N_PARAMS {
            self.s_hat[k] = self.s_hat[k].clamp(self.lower[k], self.upper[k]);
        }
    }

    /// `e_sᵀ Λ⁻¹ e_s` with `e_s = s - ŝ`.
    pub fn weighted_error(&self, s_true: &ParamVector) -> f64 {
        let e = s_true - self.s_hat;
        (0..N_PARAMS).map(|k| e[k] * e[k] / self.gains[k]).sum()
    }
}

/// Windowed integral of `ȲᵀȲ` by the trapezoidal rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    dt: f64,
    capacity: usize,
    samples: VecDeque<SMatrix<f64, N_PARAMS, N_PARAMS>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeStatus {
    NotReady,
    Ready(f64),
}

impl PeStatus {
    pub fn value(&self) -> Option<f64> {
        match self {
            PeStatus::NotReady => None,
            PeStatus::Ready(v) => Some(*v),
        }
    }
}

impl Gramian {
    pub fn new(window: f64, dt: f64) -> Self {
        let capacity = ((window / dt).round() as usize).max(1) + 1;
        Self { dt, capacity, samples: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, y: &Stacked) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(y.transpose() * y);
    }

    pub fn integral(&self) -> SMatrix<f64, N_PARAMS, N_PARAMS> {
        let n = self.samples.len();
        let mut acc = SMatrix::<f64, N_PARAMS, N_PARAMS>::zeros();
        for (k, m) in self.samples.iter().enumerate() {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            acc += m * w;
        }
        acc * self.dt
    }

    /// Smallest eigenvalue over the selected parameter columns.
    pub fn min_eigenvalue(&self, active: &[usize]) -> PeStatus {
        if self.samples.len() < self.capacity {
            return PeStatus::NotReady;
        }
        PeStatus::Ready(min_eig_subset(&self.integral(), active))
    }
}

pub fn min_eig_subset(m: &SMatrix<f64, N_PARAMS, N_PARAMS>, active: &[usize]) -> f64 {
    let k = active.len();
    if k == 0 {
        return 0.0;
    }
    let sub = DMatrix::from_fn(k, k, |i, j| m[(active[i], active[j])]);
    sub.symmetric_eigenvalues().min()
}

/// Parameter columns that the link's motion can excite: stiffness is dropped for rigid links.
pub fn active_columns(link: &LinkModel) -> Vec<usize> {
    if link.n_modes() == 0 {
        vec![0, 1, 2]
    } else {
        (0..N_PARAMS).collect()
    }
}

/// Convenience for tests: evaluates the regressor and the left-hand side directly.
pub fn direct_lhs(link: &LinkModel, ls: &LinkState, vdot: &Vec6, g: &Vec3) -> Vec6 {
    let samples = link.sample(&ls.def, &ls.twist);
    inertia_matrix(link) * vdot + bias_hc_from_samples(link, &samples, &ls.rotation(), &ls.twist, g)
}

pub fn zero_twist_state(link: &LinkModel) -> LinkState {
    LinkState {
        theta: Vec3::zeros(),
        p: Vec3::zeros(),
        twist: Twist::zero(),
        def: crate::flexible_link::DeformationState::zeros(link.n_modes()),
    }
}
