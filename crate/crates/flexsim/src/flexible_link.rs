//! Euler-Bernoulli link: parameters, clamped-free modal basis, field
//! evaluation, stiffness and distributed mass properties.

use crate::screw_algebra::{skew, Mat3, Vec3};
use nalgebra::{DVector, Dyn, OMatrix, U3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3 x n matrix of mode shapes; column k holds mode k on its axis.
pub type Shape3 = OMatrix<f64, U3, Dyn>;

pub const QUAD_POINTS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("invalid link parameter: {0}")]
    InvalidParams(String),
    #[error("characteristic root {0} did not converge")]
    RootNotConverged(usize),
    #[error("xi = {xi} outside [{a}, {c}]")]
    OutOfDomain { xi: f64, a: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub rho: f64,
    pub area: f64,
    pub youngs: f64,
    pub iy: f64,
    pub iz: f64,
    pub a: f64,
    pub c: f64,
    #[serde(default)]
    pub rigid: bool,
    #[serde(default)]
    pub offset_y: f64,
    #[serde(default)]
    pub offset_z: f64,
}

impl LinkParams {
    /// Rectangular `b x h` section, `h` along the body y axis.
    pub fn rectangular(rho: f64, youngs: f64, b: f64, h: f64, length: f64, rigid: bool) -> Self {
        Self {
            rho,
            area: b * h,
            youngs,
            iy: h * b.powi(3) / 12.0,
            iz: b * h.powi(3) / 12.0,
            a: 0.0,
            c: length,
            rigid,
            offset_y: 0.0,
            offset_z: 0.0,
        }
    }

    pub fn length(&self) -> f64 {
        self.c - self.a
    }

    pub fn rho_a(&self) -> f64 {
        self.rho * self.area
    }

    pub fn mass(&self) -> f64 {
        self.rho_a() * self.length()
    }

    pub fn ei_y(&self) -> f64 {
        self.youngs * self.iy
    }

    pub fn ei_z(&self) -> f64 {
        self.youngs * self.iz
    }

    pub fn ea(&self) -> f64 {
        self.youngs * self.area
    }

    /// Undeformed position of the section at `xi`.
    pub fn r_b(&self, xi: f64) -> Vec3 {
        Vec3::new(xi, self.offset_y, self.offset_z)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let positive = [("rho", self.rho), ("area", self.area), ("youngs", self.youngs)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LinkError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.iy >= 0.0 && self.iz >= 0.0) {
            return Err(LinkError::InvalidParams("second moments must be nonnegative".into()));
        }
        if !(self.c - self.a > 0.0) {
            return Err(LinkError::InvalidParams(format!("need c > a, got a={} c={}", self.a, self.c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub axial: usize,
    pub bend_y: usize,
    pub bend_z: usize,
}

impl Default for ModeCounts {
    fn default() -> Self {
        Self { axial: 1, bend_y: 3, bend_z: 3 }
    }
}

impl ModeCounts {
    pub fn none() -> Self {
        Self { axial: 0, bend_y: 0, bend_z: 0 }
    }

    pub fn total(&self) -> usize {
        self.axial + self.bend_y + self.bend_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// `h(y) + t(y)` form with `y = beta x`, `one_minus_sigma` kept separately
    /// so the growing exponential cancels without loss.
    Bending { beta: f64, sigma: f64, one_minus_sigma: f64 },
    Axial { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Displacement axis: 0 = x (axial), 1 = y, 2 = z.
    pub axis: usize,
    pub norm: f64,
    shape: Shape,
}

impl Mode {
    pub fn wavenumber(&self) -> f64 {
        match self.shape {
            Shape::Bending { beta, .. } => beta,
            Shape::Axial { gamma } => gamma,
        }
    }

    /// Shape and its first four derivatives at distance `x` from the clamped end.
    pub fn derivatives(&self, x: f64) -> [f64; 5] {
        match self.shape {
            Shape::Bending { beta, sigma, one_minus_sigma } => {
                let y = beta * x;
                let (ep, em) = (y.exp(), (-y).exp());
                let h0 = 0.5 * (one_minus_sigma * ep + (1.0 + sigma) * em);
                let h1 = 0.5 * (one_minus_sigma * ep - (1.0 + sigma) * em);
                let (s, c) = y.sin_cos();
                let t0 = -c + sigma * s;
                let t1 = s + sigma * c;
                let vals = [h0 + t0, h1 + t1, h0 - t0, h1 - t1, h0 + t0];
                let mut out = [0.0; 5];
                let mut scale = self.norm;
                for (o, v) in out.iter_mut().zip(vals) {
                    *o = scale * v;
                    scale *= beta;
                }
                out
            }
            Shape::Axial { gamma } => {
                let (s, c) = (gamma * x).sin_cos();
                let vals = [s, c, -s, -c, s];
                let mut out = [0.0; 5];
                let mut scale = self.norm;
                for (o, v) in out.iter_mut().zip(vals) {
                    *o = scale * v;
                    scale *= gamma;
                }
                out
            }
        }
    }
}

/// Clamped-free modes, ordered axial, y-bending, z-bending.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    pub modes: Vec<Mode>,
    pub counts: ModeCounts,
    pub a: f64,
    pub c: f64,
}

/// Roots of `1 + cos x cosh x = 0`, found by bisection on `sech x + cos x`.
pub fn clamped_free_roots(n: usize) -> Result<Vec<f64>, LinkError> {
    let f = |x: f64| 1.0 / x.cosh() + x.cos();
    let mut roots = Vec::with_capacity(n);
    for k in 1..=n {
        let (mut lo, mut hi) = ((k - 1) as f64 * std::f64::consts::PI, k as f64 * std::f64::consts::PI);
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo * fhi > 0.0 {
            return Err(LinkError::RootNotConverged(k));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * hi {
                break;
            }
        }
        if hi - lo > 1e-12 * hi {
            return Err(LinkError::RootNotConverged(k));
        }
        roots.push(0.5 * (lo + hi));
    }
    Ok(roots)
}

pub fn make_clamped_free_basis(counts: ModeCounts, params: &LinkParams) -> Result<ModalBasis, LinkError> {
    params.validate()?;
    let counts = if params.rigid { ModeCounts::none() } else { counts };
    if counts.bend_y.max(counts.bend_z) > 40 {
        return Err(LinkError::InvalidParams("at most 40 bending modes per axis".into()));
    }
    let l = params.length();
    let rho_a = params.rho_a();
    let mut modes = Vec::with_capacity(counts.total());
    for k in 1..=counts.axial {
        let gamma = (2 * k - 1) as f64 * std::f64::consts::PI / (2.0 * l);
        modes.push(Mode { axis: 0, norm: (2.0 / (rho_a * l)).sqrt(), shape: Shape::Axial { gamma } });
    }
    let roots = clamped_free_roots(counts.bend_y.max(counts.bend_z))?;
    for (axis, n) in [(1, counts.bend_y), (2, counts.bend_z)] {
        for &x in roots.iter().take(n) {
            let (sh, ch, s, c) = (x.sinh(), x.cosh(), x.sin(), x.cos());
            let den = sh + s;
            let sigma = (ch + c) / den;
            let one_minus_sigma = (s - c - (-x).exp()) / den;
            let norm = 1.0 / (rho_a * l).sqrt();
            modes.push(Mode { axis, norm, shape: Shape::Bending { beta: x / l, sigma, one_minus_sigma } });
        }
    }
    Ok(ModalBasis { modes, counts, a: params.a, c: params.c })
}

impl ModalBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode-shape matrices for derivative orders 0..=4 at `xi` (no domain check).
    pub fn shapes_at(&self, xi: f64) -> [Shape3; 5] {
        let n = self.len();
        let mut out: [Shape3; 5] = std::array::from_fn(|_| Shape3::zeros(n));
        let x = xi - self.a;
        for (k, m) in self.modes.iter().enumerate() {
            let d = m.derivatives(x);
            for (o, v) in out.iter_mut().zip(d) {
                o[(m.axis, k)] = v;
            }
        }
        out
    }

    /// Axis-only linear eigenfrequencies squared, `(EI/rhoA) beta^4` or `(EA/rhoA) gamma^2`.
    pub fn eigenfrequencies_sq(&self, params: &LinkParams) -> Vec<f64> {
        let rho_a = params.rho_a();
        self.modes
            .iter()
            .map(|m| match (m.axis, m.shape) {
                (0, Shape::Axial { gamma }) => params.ea() / rho_a * gamma * gamma,
                (1, Shape::Bending { beta, .. }) => params.ei_z() / rho_a * beta.powi(4),
                (_, Shape::Bending { beta, .. }) => params.ei_y() / rho_a * beta.powi(4),
                _ => unreachable!(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl DeformationState {
    pub fn zeros(n: usize) -> Self {
        Self { q: DVector::zeros(n), qdot: DVector::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Field value and spatial derivatives `[r, r', r'', r''', r'''']`.
pub type FieldPoint = [Vec3; 5];

pub fn eval_deformation(basis: &ModalBasis, state: &DeformationState, xi: f64) -> Result<FieldPoint, LinkError> {
    let tol = 1e-12 * (basis.c - basis.a).abs().max(1.0);
    if !(xi >= basis.a - tol && xi <= basis.c + tol) {
        return Err(LinkError::OutOfDomain { xi, a: basis.a, c: basis.c });
    }
    let shapes = basis.shapes_at(xi);
    Ok(std::array::from_fn(|k| &shapes[k] * &state.q))
}

/// Deformation rate `r_xi_dot(xi)`.
pub fn eval_deformation_rate(basis: &ModalBasis, state: &DeformationState, xi: f64) -> Result<Vec3, LinkError> {
    let tol = 1e-12 * (basis.c - basis.a).abs().max(1.0);
    if !(xi >= basis.a - tol && xi <= basis.c + tol) {
        return Err(LinkError::OutOfDomain { xi, a: basis.a, c: basis.c });
    }
    Ok(&basis.shapes_at(xi)[0] * &state.qdot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSectionStiffness {
    pub iv1: Mat3,
    pub iv2: Mat3,
}

pub fn stiffness_matrices(params: &LinkParams) -> CrossSectionStiffness {
    CrossSectionStiffness {
        iv1: Mat3::from_diagonal(&Vec3::new(params.ea(), 0.0, 0.0)),
        iv2: Mat3::from_diagonal(&Vec3::new(0.0, params.ei_z(), params.ei_y())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    /// `-rhoA ∫ skew(r_b)^2`.
    pub inertia: Mat3,
    /// `rhoA ∫ skew(r_b)`.
    pub coupling: Mat3,
    /// `rhoA ∫ r_b`.
    pub first_moment: Vec3,
    /// Polar rotary inertia of the cross-sections about the beam axis, `rho (Iy + Iz) l`.
    pub torsion: f64,
}

/// Closed-form integrals over the undeformed reference line.
pub fn mass_properties(params: &LinkParams) -> MassProperties {
    let (a, c) = (params.a, params.c);
    let ra = params.rho_a();
    let l = c - a;
    let sx = (c * c - a * a) / 2.0;
    let sxx = (c.powi(3) - a.powi(3)) / 3.0;
    let (y, z) = (params.offset_y, params.offset_z);
    let first_moment = ra * Vec3::new(sx, y * l, z * l);
    // -∫ skew(r)^2 = ∫ (|r|^2 I - r r^T)
    let rr = Mat3::new(sxx, y * sx, z * sx, y * sx, y * y * l, y * z * l, z * sx, y * z * l, z * z * l);
    let inertia = ra * (Mat3::identity() * rr.trace() - rr);
    MassProperties {
        mass: ra * l,
        inertia,
        coupling: skew(&first_moment),
        first_moment,
        torsion: params.rho * (params.iy + params.iz) * l,
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to `[a, c]`.
    pub fn on_interval(&self, a: f64, c: f64) -> Vec<(f64, f64)> {
        let (mid, half) = (0.5 * (a + c), 0.5 * (c - a));
        self.nodes.iter().zip(&self.weights).map(|(x, w)| (mid + half * x, half * w)).collect()
    }
}

/// Elastic energy: kinetic `rhoA/2 ∫|v_xi|^2` plus strain `1/2 ∫ (r'ᵀ Iv1 r' + r''ᵀ Iv2 r'')`.
pub fn elastic_energy(params: &LinkParams, basis: &ModalBasis, state: &DeformationState, omega: &Vec3) -> f64 {
    if basis.is_empty() {
        return 0.0;
    }
    let k = stiffness_matrices(params);
    let rho_a = params.rho_a();
    let mut e = 0.0;
    for (xi, w) in GaussLegendre::new(QUAD_POINTS).on_interval(params.a, params.c) {
        let s = basis.shapes_at(xi);
        let r = &s[0] * &state.q;
        let vxi = &s[0] * &state.qdot + omega.cross(&r);
        let d1 = &s[1] * &state.q;
        let d2 = &s[2] * &state.q;
        e += w * (0.5 * rho_a * vxi.norm_squared() + 0.5 * (d1.dot(&(k.iv1 * d1)) + d2.dot(&(k.iv2 * d2))));
    }
    e
}
