//! Per-link dynamic operators, joint constraints and constrained time stepping.

use crate::flexible_link::{
    make_clamped_free_basis, mass_properties, stiffness_matrices, CrossSectionStiffness, DeformationState,
    GaussLegendre, LinkError, LinkParams, MassProperties, ModalBasis, ModeCounts, Shape3, QUAD_POINTS,
};
use crate::screw_algebra::{
    axis_rotation, body_jacobian_inv, exp_so3, skew, Mat3, Mat6, Rotation, Twist, Vec3, Vec6, Wrench,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("inertia matrix of link {link} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { link: usize, min_eig: f64 },
    #[error("singular constrained system at t = {t}: {detail}")]
    Singular { t: f64, detail: String },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

/// Quadrature node with modal values; mode `k` displaces along `LinkModel::axes[k]` only.
#[derive(Debug, Clone)]
pub struct QuadNode {
    pub xi: f64,
    pub w: f64,
    pub r_b: Vec3,
    pub phi: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi4: Vec<f64>,
}

/// Link data with quadrature tables precomputed.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub params: LinkParams,
    pub basis: ModalBasis,
    pub stiffness: CrossSectionStiffness,
    pub mass: MassProperties,
    pub axes: Vec<usize>,
    pub nodes: Vec<QuadNode>,
    /// Shapes and slopes at the tip `xi = c`.
    pub tip_phi: Shape3,
    pub tip_phi1: Shape3,
    /// `∫ rhoA Φᵀ Φ`.
    pub modal_mass: DMatrix<f64>,
    /// `∫ Φᵀ (Iv2 Φ'''' - Iv1 Φ'')`.
    pub modal_stiffness: DMatrix<f64>,
    /// `rhoA ∫ Φ`.
    pub modal_first_moment: DMatrix<f64>,
}

impl LinkModel {
    pub fn new(params: LinkParams, counts: ModeCounts) -> Result<Self, LinkError> {
        let basis = make_clamped_free_basis(counts, &params)?;
        let stiffness = stiffness_matrices(&params);
        let n = basis.len();
        let rho_a = params.rho_a();
        let axes: Vec<usize> = basis.modes.iter().map(|m| m.axis).collect();
        let mut nodes = Vec::with_capacity(QUAD_POINTS);
        let mut modal_mass = DMatrix::zeros(n, n);
        let mut modal_stiffness = DMatrix::zeros(n, n);
        let mut modal_first_moment = DMatrix::zeros(3, n);
        for (xi, w) in GaussLegendre::new(QUAD_POINTS).on_interval(params.a, params.c) {
            let [phi, _, phi2, _, phi4] = basis.shapes_at(xi);
            modal_mass += w * rho_a * phi.transpose() * &phi;
            modal_stiffness += w * phi.transpose() * (stiffness.iv2 * &phi4 - stiffness.iv1 * &phi2);
            modal_first_moment += w * rho_a * &phi;
            let pick = |m: &Shape3| axes.iter().enumerate().map(|(k, &ax)| m[(ax, k)]).collect::<Vec<f64>>();
            nodes.push(QuadNode { xi, w, r_b: params.r_b(xi), phi: pick(&phi), phi2: pick(&phi2), phi4: pick(&phi4) });
        }
        let [tip_phi, tip_phi1, ..] = basis.shapes_at(params.c);
        Ok(Self {
            mass: mass_properties(&params),
            params,
            basis,
            stiffness,
            axes,
            nodes,
            tip_phi,
            tip_phi1,
            modal_mass,
            modal_stiffness,
            modal_first_moment,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.basis.len()
    }

    pub fn rho_a(&self) -> f64 {
        self.params.rho_a()
    }

    /// `Σ_k vals[k] x[k] e_axis(k)`.
    pub fn combine(&self, vals: &[f64], x: &DVector<f64>) -> Vec3 {
        let mut r = Vec3::zeros();
        for (k, &ax) in self.axes.iter().enumerate() {
            r[ax] += vals[k] * x[k];
        }
        r
    }

    /// Deformed tip position in the link frame, `r_b(c) + r_xi(c)`.
    pub fn tip_position(&self, def: &DeformationState) -> Vec3 {
        self.params.r_b(self.params.c) + self.tip_deflection(def)
    }

    pub fn tip_deflection(&self, def: &DeformationState) -> Vec3 {
        &self.tip_phi * &def.q
    }

    pub fn tip_deflection_rate(&self, def: &DeformationState) -> Vec3 {
        &self.tip_phi * &def.qdot
    }

    /// Field samples at the quadrature nodes.
    pub fn sample(&self, def: &DeformationState, twist: &Twist) -> Vec<FieldSample> {
        let k = &self.stiffness;
        self.nodes
            .iter()
            .map(|nd| {
                let r = self.combine(&nd.phi, &def.q);
                let rdot = self.combine(&nd.phi, &def.qdot);
                let r2 = self.combine(&nd.phi2, &def.q);
                let r4 = self.combine(&nd.phi4, &def.q);
                let v_b = twist.v + twist.omega.cross(&nd.r_b);
                let v_xi = rdot + twist.omega.cross(&r);
                FieldSample { r, rdot, r_ib: nd.r_b + r, v_b, v_xi, elastic: k.iv1 * r2 - k.iv2 * r4, r2, r4 }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub r: Vec3,
    pub rdot: Vec3,
    pub r2: Vec3,
    pub r4: Vec3,
    pub r_ib: Vec3,
    pub v_b: Vec3,
    pub v_xi: Vec3,
    /// `Iv1 r'' - Iv2 r''''`.
    pub elastic: Vec3,
}

fn stack(top: Vec3, bottom: Vec3) -> Vec6 {
    let mut x = Vec6::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&top);
    x.fixed_rows_mut::<3>(3).copy_from(&bottom);
    x
}

/// Rigid inertia `M`. The section's polar inertia is added about the beam axis,
/// which the line integral alone leaves at zero.
pub fn inertia_matrix(link: &LinkModel) -> Mat6 {
    let mp = &link.mass;
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&mp.inertia);
    m[(0, 0)] += mp.torsion;
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&mp.coupling);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-mp.coupling));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Mat3::identity() * mp.mass));
    m
}

/// Like [`inertia_matrix`] but rejects a matrix that is not positive definite.
pub fn checked_inertia_matrix(link: &LinkModel, index: usize) -> Result<Mat6, DynamicsError> {
    let m = inertia_matrix(link);
    let min_eig = m.symmetric_eigenvalues().min();
    if min_eig <= 0.0 {
        return Err(DynamicsError::NotPositiveDefinite { link: index, min_eig });
    }
    Ok(m)
}

/// Controllable-form bias `H_c`; `g` enters as `+Rᵀg` on the left-hand side.
pub fn bias_hc(link: &LinkModel, def: &DeformationState, rot: &Rotation, twist: &Twist, g: &Vec3) -> Vec6 {
    bias_hc_from_samples(link, &link.sample(def, twist), rot, twist, g)
}

pub fn bias_hc_from_samples(link: &LinkModel, samples: &[FieldSample], rot: &Rotation, twist: &Twist, g: &Vec3) -> Vec6 {
    let rho_a = link.rho_a();
    let gb = rot.inverse() * g;
    let (mut top, mut bot) = (Vec3::zeros(), Vec3::zeros());
    for (nd, s) in link.nodes.iter().zip(samples) {
        let cor = twist.omega.cross(&s.v_b);
        top += nd.w * s.r_ib.cross(&(rho_a * (cor + gb) + s.elastic));
        bot += nd.w * (rho_a * cor + s.elastic);
    }
    bot += link.mass.mass * gb;
    stack(top, bot)
}

/// Full bias `H` with `v_ib = v_xi + v_b`.
pub fn bias_h(link: &LinkModel, def: &DeformationState, rot: &Rotation, twist: &Twist, g: &Vec3) -> Vec6 {
    bias_h_from_samples(link, &link.sample(def, twist), rot, twist, g)
}

pub fn bias_h_from_samples(link: &LinkModel, samples: &[FieldSample], rot: &Rotation, twist: &Twist, g: &Vec3) -> Vec6 {
    let rho_a = link.rho_a();
    let gb = rot.inverse() * g;
    let (mut top, mut bot) = (Vec3::zeros(), Vec3::zeros());
    for (nd, s) in link.nodes.iter().zip(samples) {
        let cor = twist.omega.cross(&(s.v_b + s.v_xi));
        top += nd.w * rho_a * s.r_ib.cross(&(cor + gb));
        bot += nd.w * rho_a * cor;
    }
    bot += link.mass.mass * gb;
    stack(top, bot)
}

/// Distributed inertia `D` for an elastic acceleration field given at the quadrature nodes.
pub fn distributed_inertia_d(link: &LinkModel, samples: &[FieldSample], vxidot: &[Vec3]) -> Vec6 {
    let rho_a = link.rho_a();
    let (mut top, mut bot) = (Vec3::zeros(), Vec3::zeros());
    for ((nd, s), a) in link.nodes.iter().zip(samples).zip(vxidot) {
        top += nd.w * rho_a * s.r_ib.cross(a);
        bot += nd.w * rho_a * a;
    }
    stack(top, bot)
}

/// `v̇_xi = Φ q̈ + ω̇ × r_xi + ω × ṙ_xi` at the quadrature nodes.
pub fn vxidot_from_modal(
    link: &LinkModel,
    samples: &[FieldSample],
    omega: &Vec3,
    omega_dot: &Vec3,
    qddot: &DVector<f64>,
) -> Vec<Vec3> {
    link.nodes
        .iter()
        .zip(samples)
        .map(|(nd, s)| link.combine(&nd.phi, qddot) + omega_dot.cross(&s.r) + omega.cross(&s.rdot))
        .collect()
}

/// Strain-rate substitution `v̇_xi = -ω × v_xi + (Iv1 r'' - Iv2 r'''')/rhoA` at the quadrature nodes.
pub fn vxidot_substituted(link: &LinkModel, samples: &[FieldSample], omega: &Vec3) -> Vec<Vec3> {
    let rho_a = link.rho_a();
    samples.iter().map(|s| -omega.cross(&s.v_xi) + s.elastic / rho_a).collect()
}

/// Net wrench from endpoint loads, moment arms taken from the deformation only.
pub fn endpoint_wrench_map(w_base: &Wrench, w_tip: &Wrench, r_xi_a: &Vec3, r_xi_c: &Vec3) -> Wrench {
    Wrench {
        tau: w_base.tau - w_tip.tau - r_xi_a.cross(&w_base.force) + r_xi_c.cross(&w_tip.force),
        force: w_base.force - w_tip.force,
    }
}

/// Modal components of the strain-rate right-hand side
/// `-ω × v_xi - (Iv2 r'''' - Iv1 r'')/rhoA`, projected with the mass weight.
pub fn strain_pde_modal_rhs(link: &LinkModel, def: &DeformationState, omega: &Vec3) -> DVector<f64> {
    let n = link.n_modes();
    if n == 0 {
        return DVector::zeros(0);
    }
    let twist = Twist::new(*omega, Vec3::zeros());
    let samples = link.sample(def, &twist);
    let rho_a = link.rho_a();
    let mut f = DVector::zeros(n);
    for (nd, s) in link.nodes.iter().zip(&samples) {
        let density = -rho_a * omega.cross(&s.v_xi) + s.elastic;
        for (k, &ax) in link.axes.iter().enumerate() {
            f[k] += nd.w * nd.phi[k] * density[ax];
        }
    }
    link.modal_mass.clone().lu().solve(&f).unwrap_or(f)
}

/// Twist of the tip point in link-frame components.
///
/// The reference point moves to `r_b(c)` with the physical shift
/// `v_tip = v + ω × r`, then the deformation twist is added.
pub fn tip_twist(link: &LinkModel, def: &DeformationState, twist: &Twist) -> Twist {
    let r_c = link.params.r_b(link.params.c);
    let r_xi = link.tip_deflection(def);
    let rdot = link.tip_deflection_rate(def);
    Twist::new(twist.omega, twist.v + twist.omega.cross(&r_c) + rdot + twist.omega.cross(&r_xi))
}

/// How the interior of the beam is loaded in the plant's modal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DeformationForcing {
    /// Rigid-body acceleration and gravity of each section load the beam.
    #[default]
    Interior,
    /// Only the strain-rate terms; endpoint loads are the sole forcing.
    Strain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum JointKind {
    Revolute { axis: [f64; 3] },
    /// Rotation about `parent_axis`, then about `child_axis`.
    Universal { parent_axis: [f64; 3], child_axis: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// `None` means the joint attaches to the fixed base.
    pub parent: Option<usize>,
    pub child: usize,
    pub kind: JointKind,
    /// Base attachment point when `parent` is `None`.
    pub base_point: Vec3,
    /// Rotor inertia per free axis.
    pub motor_inertia: Vec<f64>,
}

impl JointSpec {
    pub fn free_axes(&self) -> usize {
        match self.kind {
            JointKind::Revolute { .. } => 1,
            JointKind::Universal { .. } => 2,
        }
    }

    pub fn constraint_rows(&self) -> usize {
        6 - self.free_axes()
    }

    /// Free-axis selector at the home configuration, `diag` of the angular block.
    pub fn free_selector(&self) -> Mat3 {
        let mut s = Mat3::zeros();
        match &self.kind {
            JointKind::Revolute { axis } => {
                let a = Vec3::from(*axis).normalize();
                s += a * a.transpose();
            }
            JointKind::Universal { parent_axis, child_axis } => {
                for ax in [parent_axis, child_axis] {
                    let a = Vec3::from(*ax).normalize();
                    s += a * a.transpose();
                }
            }
        }
        s
    }

    /// 6x6 projection onto constrained twist directions at the home configuration.
    pub fn projection(&self) -> Mat6 {
        let mut p = Mat6::identity();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() - self.free_selector()));
        p
    }

    /// Joint rotation for the given joint coordinates.
    pub fn relative_rotation(&self, q: &[f64]) -> Rotation {
        match &self.kind {
            JointKind::Revolute { axis } => axis_rotation(&Vec3::from(*axis).normalize(), q[0]),
            JointKind::Universal { parent_axis, child_axis } => {
                axis_rotation(&Vec3::from(*parent_axis).normalize(), q[0])
                    * axis_rotation(&Vec3::from(*child_axis).normalize(), q[1])
            }
        }
    }
}

fn perpendicular_pair(a: &Vec3) -> (Vec3, Vec3) {
    let trial = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = (trial - a * a.dot(&trial)).normalize();
    (u, a.cross(&u))
}

fn revolute_angle(axis: &Vec3, rot: &Mat3) -> f64 {
    let (u, w) = perpendicular_pair(axis);
    let ru = rot * u;
    ru.dot(&w).atan2(ru.dot(&u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    /// Exponential coordinates of the link orientation.
    pub theta: Vec3,
    /// Link frame origin in the inertial frame.
    pub p: Vec3,
    pub twist: Twist,
    pub def: DeformationState,
}

impl LinkState {
    pub fn rotation(&self) -> Rotation {
        exp_so3(&self.theta)
    }

    /// Origin expressed in link-frame components.
    pub fn r_body(&self) -> Vec3 {
        self.rotation().inverse() * self.p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub t: f64,
    pub links: Vec<LinkState>,
}

/// Applied loads held constant over a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInputs {
    /// Motor torque per joint and free axis.
    pub joint_torques: Vec<Vec<f64>>,
    /// External wrench at each link tip, link-frame components, referred to the tip point.
    pub tip_wrenches: Vec<Wrench>,
}

impl ChainInputs {
    pub fn zeros(chain: &Chain) -> Self {
        Self {
            joint_torques: chain.joints.iter().map(|j| vec![0.0; j.free_axes()]).collect(),
            tip_wrenches: vec![Wrench::zero(); chain.links.len()],
        }
    }
}

/// Transmitted joint wrench in both frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointWrench {
    /// Load on the child, parent-frame components, referred to the parent's tip point.
    pub tip_side: Wrench,
    /// Load on the child, child-frame components, referred to the child origin.
    pub base_side: Wrench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionWrenches {
    pub joints: Vec<JointWrench>,
    /// Constraint contribution to each link's rigid equation, as it appears on the left-hand side.
    pub per_link: Vec<Vec6>,
    /// The same contribution split by joint: (parent link, child link).
    pub per_joint: Vec<(Option<Vec6>, Vec6)>,
    pub multipliers: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baumgarte {
    pub omega: f64,
    pub zeta: f64,
}

impl Default for Baumgarte {
    fn default() -> Self {
        Self { omega: 50.0, zeta: 1.0 }
    }
}

/// Accelerations of every link plus joint multipliers for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Accelerations {
    pub twist_dot: Vec<Vec6>,
    pub qddot: Vec<DVector<f64>>,
    pub interaction: InteractionWrenches,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub links: Vec<LinkModel>,
    pub joints: Vec<JointSpec>,
    /// Enters as `+Rᵀg` on the left-hand side of the link equations.
    pub g: Vec3,
    pub baumgarte: Baumgarte,
    pub forcing: DeformationForcing,
    pub project_velocities: bool,
    offsets: Vec<usize>,
}

/// Constraint Jacobian rows of one joint together with the velocity-product and position terms.
struct JointRows {
    /// Rows over the parent block (rigid 6 + modes) or empty for the base.
    parent: DMatrix<f64>,
    child: DMatrix<f64>,
    kappa: DVector<f64>,
    position: DVector<f64>,
    /// Covectors of the free-axis rates over (parent ω, child ω), with rate-product terms.
    axis_rates: Vec<(Vec3, Vec3, f64)>,
}

impl Chain {
    pub fn new(links: Vec<LinkModel>, joints: Vec<JointSpec>, g: Vec3) -> Result<Self, DynamicsError> {
        for (i, l) in links.iter().enumerate() {
            checked_inertia_matrix(l, i)?;
        }
        if joints.len() != links.len() {
            return Err(DynamicsError::InvalidChain("need exactly one joint per link".into()));
        }
        for (j, js) in joints.iter().enumerate() {
            if js.child != j {
                return Err(DynamicsError::InvalidChain(format!("joint {j} must drive link {j}")));
            }
            if let Some(p) = js.parent {
                if p >= j {
                    return Err(DynamicsError::InvalidChain(format!("joint {j} parent {p} must precede its child")));
                }
            }
            if js.motor_inertia.len() != js.free_axes() {
                return Err(DynamicsError::InvalidChain(format!("joint {j} needs one motor inertia per free axis")));
            }
        }
        let mut offsets = Vec::with_capacity(links.len() + 1);
        let mut acc = 0;
        for l in &links {
            offsets.push(acc);
            acc += 6 + l.n_modes();
        }
        offsets.push(acc);
        Ok(Self {
            links,
            joints,
            g,
            baumgarte: Baumgarte::default(),
            forcing: DeformationForcing::Interior,
            project_velocities: true,
            offsets,
        })
    }

    pub fn n_velocity(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_constraints(&self) -> usize {
        self.joints.iter().map(|j| j.constraint_rows()).sum()
    }

    /// Stacked velocity vector `(V_1, q̇_1, V_2, q̇_2, ...)`.
    pub fn velocity_vector(&self, state: &ChainState) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_velocity());
        for (i, ls) in state.links.iter().enumerate() {
            let o = self.offsets[i];
            x.rows_mut(o, 6).copy_from(&ls.twist.to_vec6());
            x.rows_mut(o + 6, ls.def.len()).copy_from(&ls.def.qdot);
        }
        x
    }

    fn set_velocity_vector(&self, state: &mut ChainState, x: &DVector<f64>) {
        for (i, ls) in state.links.iter_mut().enumerate() {
            let o = self.offsets[i];
            ls.twist = Twist::from_vec6(&x.fixed_rows::<6>(o).into_owned());
            let n = ls.def.len();
            ls.def.qdot.copy_from(&x.rows(o + 6, n));
        }
    }

    /// Joint coordinates from the current configuration.
    pub fn joint_angles(&self, state: &ChainState, j: usize) -> Vec<f64> {
        let js = &self.joints[j];
        let r_child = state.links[js.child].rotation();
        let r_rel = match js.parent {
            Some(p) => state.links[p].rotation().inverse() * r_child,
            None => r_child,
        };
        let m = r_rel.matrix();
        match &js.kind {
            JointKind::Revolute { axis } => vec![revolute_angle(&Vec3::from(*axis).normalize(), m)],
            JointKind::Universal { parent_axis, child_axis } => {
                let a1 = Vec3::from(*parent_axis).normalize();
                let a2 = Vec3::from(*child_axis).normalize();
                let ra2 = m * a2;
                let w = a1.cross(&a2);
                let psi = ra2.dot(&w).atan2(ra2.dot(&a2));
                let rest = axis_rotation(&a1, psi).inverse().matrix() * m;
                vec![psi, revolute_angle(&a2, &rest)]
            }
        }
    }

    /// Joint rates from the current twists.
    pub fn joint_rates(&self, state: &ChainState, j: usize) -> Vec<f64> {
        let rows = self.joint_rows(state, j);
        let js = &self.joints[j];
        let wc = state.links[js.child].twist.omega;
        let wp = js.parent.map_or_else(Vec3::zeros, |p| state.links[p].twist.omega);
        rows.axis_rates.iter().map(|(dp, dc, _)| dp.dot(&wp) + dc.dot(&wc)).collect()
    }

    fn rel_rotation(&self, state: &ChainState, js: &JointSpec) -> Mat3 {
        let rc = state.links[js.child].rotation();
        match js.parent {
            Some(p) => (rc.inverse() * state.links[p].rotation()).into_inner(),
            None => rc.inverse().into_inner(),
        }
    }

    fn joint_rows(&self, state: &ChainState, j: usize) -> JointRows {
        let js = &self.joints[j];
        let m = js.constraint_rows();
        let child = &state.links[js.child];
        let nc = self.links[js.child].n_modes();
        let rcp = self.rel_rotation(state, js);
        let wc = child.twist.omega;
        let (wp, np) = match js.parent {
            Some(p) => (state.links[p].twist.omega, self.links[p].n_modes()),
            None => (Vec3::zeros(), 0),
        };
        let mut parent_rows = DMatrix::zeros(m, if js.parent.is_some() { 6 + np } else { 0 });
        let mut child_rows = DMatrix::zeros(m, 6 + nc);
        let mut kappa = DVector::zeros(m);
        let mut position = DVector::zeros(m);

        // translational rows 0..3
        let rc = child.rotation();
        for k in 0..3 {
            child_rows[(k, 3 + k)] = -1.0;
        }
        match js.parent {
            Some(p) => {
                let link = &self.links[p];
                let ps = &state.links[p];
                let r_t = link.tip_position(&ps.def);
                let rdot_t = link.tip_deflection_rate(&ps.def);
                let u = ps.twist.v + wp.cross(&r_t) + rdot_t;
                parent_rows.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rcp * skew(&r_t)));
                parent_rows.fixed_view_mut::<3, 3>(0, 3).copy_from(&rcp);
                if np > 0 {
                    parent_rows.view_mut((0, 6), (3, np)).copy_from(&(rcp * &link.tip_phi));
                }
                let kt = rcp * (wp.cross(&rdot_t) + wp.cross(&u)) - wc.cross(&(rcp * u));
                kappa.fixed_rows_mut::<3>(0).copy_from(&kt);
                let gap = ps.p + ps.rotation() * r_t - child.p;
                position.fixed_rows_mut::<3>(0).copy_from(&(rc.inverse() * gap));
            }
            None => {
                position.fixed_rows_mut::<3>(0).copy_from(&(rc.inverse() * (js.base_point - child.p)));
            }
        }

        let w_rel = wc - rcp * wp;
        let carry = wc.cross(&(rcp * wp));
        let mut axis_rates = Vec::new();
        match &js.kind {
            JointKind::Revolute { axis } => {
                let a = Vec3::from(*axis).normalize();
                let (u, w) = perpendicular_pair(&a);
                let za = rcp * a;
                let perr = za.cross(&a);
                for (r, n) in [u, w].iter().enumerate() {
                    let row = 3 + r;
                    child_rows.fixed_view_mut::<1, 3>(row, 0).copy_from(&n.transpose());
                    if js.parent.is_some() {
                        parent_rows.fixed_view_mut::<1, 3>(row, 0).copy_from(&(-n.transpose() * rcp));
                    }
                    kappa[row] = n.dot(&carry);
                    position[row] = n.dot(&perr);
                }
                axis_rates.push((-(rcp.transpose() * a), a, a.dot(&carry)));
            }
            JointKind::Universal { parent_axis, child_axis } => {
                let a1 = Vec3::from(*parent_axis).normalize();
                let a2 = Vec3::from(*child_axis).normalize();
                let zp = rcp * a1;
                let zp_dot = -w_rel.cross(&zp);
                let n = a2.cross(&zp);
                let n_dot = a2.cross(&zp_dot);
                child_rows.fixed_view_mut::<1, 3>(3, 0).copy_from(&n.transpose());
                if js.parent.is_some() {
                    parent_rows.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-n.transpose() * rcp));
                }
                kappa[3] = n_dot.dot(&w_rel) + n.dot(&carry);
                position[3] = a2.dot(&zp);
                axis_rates.push((-(rcp.transpose() * zp), zp, zp_dot.dot(&w_rel) + zp.dot(&carry)));
                axis_rates.push((-(rcp.transpose() * a2), a2, a2.dot(&carry)));
            }
        }
        JointRows { parent: parent_rows, child: child_rows, kappa, position, axis_rates }
    }

    /// Projected twist-continuity residual per joint, `P [Ad V_T - V_B]` in child-frame components.
    pub fn constraint_residuals(&self, state: &ChainState) -> Vec<DVector<f64>> {
        let x = self.velocity_vector(state);
        (0..self.joints.len())
            .map(|j| {
                let rows = self.joint_rows(state, j);
                let js = &self.joints[j];
                let mut c = &rows.child * x.rows(self.offsets[js.child], rows.child.ncols());
                if let Some(p) = js.parent {
                    c += &rows.parent * x.rows(self.offsets[p], rows.parent.ncols());
                }
                c
            })
            .collect()
    }

    /// Largest constraint residual norm over all joints.
    pub fn max_constraint_residual(&self, state: &ChainState) -> f64 {
        self.constraint_residuals(state).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest position-level joint error.
    pub fn max_position_error(&self, state: &ChainState) -> f64 {
        (0..self.joints.len()).map(|j| self.joint_rows(state, j).position.norm()).fold(0.0, f64::max)
    }

    /// Global constraint Jacobian.
    fn constraint_jacobian(&self, state: &ChainState) -> (DMatrix<f64>, Vec<JointRows>) {
        let nc = self.n_constraints();
        let mut g = DMatrix::zeros(nc, self.n_velocity());
        let mut all = Vec::with_capacity(self.joints.len());
        let mut row = 0;
        for (j, js) in self.joints.iter().enumerate() {
            let rows = self.joint_rows(state, j);
            let m = rows.child.nrows();
            g.view_mut((row, self.offsets[js.child]), (m, rows.child.ncols())).copy_from(&rows.child);
            if let Some(p) = js.parent {
                g.view_mut((row, self.offsets[p]), (m, rows.parent.ncols())).copy_from(&rows.parent);
            }
            row += m;
            all.push(rows);
        }
        (g, all)
    }

    /// Unconstrained mass matrix and right-hand side (applied minus bias) for every link.
    fn link_blocks(&self, state: &ChainState, inputs: &ChainInputs) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_velocity();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = crate::exec::map_indexed(self.links.len(), |i| {
            link_equations(&self.links[i], &state.links[i], &inputs.tip_wrenches[i], &self.g, self.forcing)
        });
        for (i, (ai, bi)) in blocks.into_iter().enumerate() {
            let o = self.offsets[i];
            let k = ai.nrows();
            a.view_mut((o, o), (k, k)).copy_from(&ai);
            b.rows_mut(o, k).copy_from(&bi);
        }
        (a, b)
    }

    /// Solves for accelerations and joint multipliers at the given state.
    pub fn accelerations(&self, state: &ChainState, inputs: &ChainInputs) -> Result<Accelerations, DynamicsError> {
        let (mut a, mut b) = self.link_blocks(state, inputs);
        let (g, rows) = self.constraint_jacobian(state);
        // motor torques and rotor inertia on each free axis
        for (j, js) in self.joints.iter().enumerate() {
            for (k, (dp, dc, bias)) in rows[j].axis_rates.iter().enumerate() {
                let mut d = DVector::zeros(self.n_velocity());
                d.fixed_rows_mut::<3>(self.offsets[js.child]).copy_from(dc);
                if let Some(p) = js.parent {
                    d.fixed_rows_mut::<3>(self.offsets[p]).copy_from(dp);
                }
                let jm = js.motor_inertia[k];
                a += jm * &d * d.transpose();
                b += &d * (inputs.joint_torques[j][k] - jm * bias);
            }
        }
        let x = self.velocity_vector(state);
        let nc = g.nrows();
        let n = self.n_velocity();
        let (wb, zb) = (self.baumgarte.omega, self.baumgarte.zeta);
        let mut gamma = DVector::zeros(nc);
        let mut row = 0;
        let cvel = &g * &x;
        for r in &rows {
            let m = r.kappa.len();
            for k in 0..m {
                gamma[row + k] = -r.kappa[k] - 2.0 * zb * wb * cvel[row + k] - wb * wb * r.position[k];
            }
            row += m;
        }
        let mut kkt = DMatrix::zeros(n + nc, n + nc);
        kkt.view_mut((0, 0), (n, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, nc)).copy_from(&(-g.transpose()));
        kkt.view_mut((n, 0), (nc, n)).copy_from(&g);
        let mut rhs = DVector::zeros(n + nc);
        rhs.rows_mut(0, n).copy_from(&b);
        rhs.rows_mut(n, nc).copy_from(&gamma);
        let sol = kkt.lu().solve(&rhs).ok_or_else(|| DynamicsError::Singular {
            t: state.t,
            detail: format!("saddle system of size {} could not be factored", n + nc),
        })?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite(state.t));
        }
        let lambda = sol.rows(n, nc).into_owned();
        let gen_force = g.transpose() * &lambda;
        let mut twist_dot = Vec::with_capacity(self.links.len());
        let mut qddot = Vec::with_capacity(self.links.len());
        let mut per_link = Vec::with_capacity(self.links.len());
        for (i, l) in self.links.iter().enumerate() {
            let o = self.offsets[i];
            twist_dot.push(sol.fixed_rows::<6>(o).into_owned());
            qddot.push(sol.rows(o + 6, l.n_modes()).into_owned());
            per_link.push(-gen_force.fixed_rows::<6>(o).into_owned());
        }
        let mut joints = Vec::with_capacity(self.joints.len());
        let mut per_joint = Vec::with_capacity(self.joints.len());
        let mut row = 0;
        for (j, js) in self.joints.iter().enumerate() {
            let m = rows[j].kappa.len();
            let lam = lambda.rows(row, m);
            let child_part = -(rows[j].child.columns(0, 6).transpose() * lam);
            let parent_part = js.parent.map(|_| {
                let v = -(rows[j].parent.columns(0, 6).transpose() * lam);
                Vec6::from_iterator(v.iter().copied())
            });
            per_joint.push((parent_part, Vec6::from_iterator(child_part.iter().copied())));
            let wb = rows[j].child.columns(0, 6).transpose() * lam;
            let base_side = Wrench::from_vec6(&Vec6::from_iterator(wb.iter().copied()));
            let rpc = self.rel_rotation(state, js).transpose();
            let tip_side = Wrench::new(rpc * base_side.tau, rpc * base_side.force);
            joints.push(JointWrench { tip_side, base_side });
            row += m;
        }
        Ok(Accelerations { twist_dot, qddot, interaction: InteractionWrenches { joints, per_link, per_joint, multipliers: lambda } })
    }

    fn derivative(&self, state: &ChainState, inputs: &ChainInputs) -> Result<(Vec<StateRate>, Accelerations), DynamicsError> {
        let acc = self.accelerations(state, inputs)?;
        let rates = state
            .links
            .iter()
            .enumerate()
            .map(|(i, ls)| StateRate {
                theta: body_jacobian_inv(&ls.theta) * ls.twist.omega,
                p: ls.rotation() * ls.twist.v,
                twist: acc.twist_dot[i],
                q: ls.def.qdot.clone(),
                qdot: acc.qddot[i].clone(),
            })
            .collect();
        Ok((rates, acc))
    }

    fn advance(&self, base: &ChainState, rates: &[StateRate], h: f64) -> ChainState {
        let links = base
            .links
            .iter()
            .zip(rates)
            .map(|(ls, r)| LinkState {
                theta: ls.theta + r.theta * h,
                p: ls.p + r.p * h,
                twist: Twist::from_vec6(&(ls.twist.to_vec6() + r.twist * h)),
                def: DeformationState { q: &ls.def.q + &r.q * h, qdot: &ls.def.qdot + &r.qdot * h },
            })
            .collect();
        ChainState { t: base.t + h, links }
    }

    /// One classical RK4 step of size `dt` with inputs held constant.
    pub fn rk4_step(&self, state: &ChainState, inputs: &ChainInputs, dt: f64) -> Result<(ChainState, Accelerations), DynamicsError> {
        let (k1, acc) = self.derivative(state, inputs)?;
        let s2 = self.advance(state, &k1, dt / 2.0);
        let (k2, _) = self.derivative(&s2, inputs)?;
        let s3 = self.advance(state, &k2, dt / 2.0);
        let (k3, _) = self.derivative(&s3, inputs)?;
        let s4 = self.advance(state, &k3, dt);
        let (k4, _) = self.derivative(&s4, inputs)?;
        let combined: Vec<StateRate> = (0..k1.len())
            .map(|i| StateRate::combine(&k1[i], &k2[i], &k3[i], &k4[i]))
            .collect();
        let mut next = self.advance(state, &combined, dt);
        next.t = state.t + dt;
        if !next.links.iter().all(LinkState::is_finite) {
            return Err(DynamicsError::NonFinite(next.t));
        }
        Ok((next, acc))
    }

    /// Removes the constraint-violating part of the velocities in the mass metric.
    pub fn project_onto_constraints(&self, state: &mut ChainState) -> Result<(), DynamicsError> {
        let (g, _) = self.constraint_jacobian(state);
        let (a, _) = self.link_blocks(state, &ChainInputs::zeros(self));
        let sym = (&a + a.transpose()) * 0.5;
        let x = self.velocity_vector(state);
        let c = &g * &x;
        let chol = sym.cholesky().ok_or_else(|| DynamicsError::Singular {
            t: state.t,
            detail: "mass matrix not positive definite during projection".into(),
        })?;
        let ainv_gt = chol.solve(&g.transpose());
        let s = &g * &ainv_gt;
        let mu = s.lu().solve(&c).ok_or_else(|| DynamicsError::Singular {
            t: state.t,
            detail: "constraint Jacobian lost rank".into(),
        })?;
        let corrected = x - ainv_gt * mu;
        self.set_velocity_vector(state, &corrected);
        Ok(())
    }

    /// Advances `dt` with `substeps` RK4 sub-steps, then projects the velocities
    /// onto the constraints if enabled. Returns the accelerations at the start.
    pub fn solve_constrained_step(
        &self,
        state: &ChainState,
        inputs: &ChainInputs,
        dt: f64,
        substeps: usize,
    ) -> Result<(ChainState, Accelerations), DynamicsError> {
        let h = dt / substeps.max(1) as f64;
        let (mut s, first) = self.rk4_step(state, inputs, h)?;
        for _ in 1..substeps.max(1) {
            s = self.rk4_step(&s, inputs, h)?.0;
        }
        s.t = state.t + dt;
        if self.project_velocities {
            self.project_onto_constraints(&mut s)?;
        }
        Ok((s, first))
    }

    /// Fastest linearized modal frequency of the chain, used to pick the sub-step count.
    pub fn max_modal_frequency(&self) -> f64 {
        self.links
            .iter()
            .flat_map(|l| l.basis.eigenfrequencies_sq(&l.params))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Places links at the given joint coordinates with zero velocity and deformation.
    pub fn assemble(&self, joint_coords: &[Vec<f64>]) -> ChainState {
        let mut links: Vec<LinkState> = Vec::with_capacity(self.links.len());
        for (j, js) in self.joints.iter().enumerate() {
            let rel = js.relative_rotation(&joint_coords[j]);
            let (rot, p) = match js.parent {
                Some(par) => {
                    let ps: &LinkState = &links[par];
                    let rp = ps.rotation();
                    (rp * rel, ps.p + rp * self.links[par].tip_position(&ps.def))
                }
                None => (rel, js.base_point),
            };
            links.push(LinkState {
                theta: crate::screw_algebra::log_so3(&rot),
                p,
                twist: Twist::zero(),
                def: DeformationState::zeros(self.links[js.child].n_modes()),
            });
        }
        ChainState { t: 0.0, links }
    }

    /// Kinetic energy from the symmetric part of the mass matrix, including rotors.
    pub fn kinetic_energy(&self, state: &ChainState) -> f64 {
        let (mut a, _) = self.link_blocks(state, &ChainInputs::zeros(self));
        let (_, rows) = self.constraint_jacobian(state);
        for (j, js) in self.joints.iter().enumerate() {
            for (k, (dp, dc, _)) in rows[j].axis_rates.iter().enumerate() {
                let mut d = DVector::zeros(self.n_velocity());
                d.fixed_rows_mut::<3>(self.offsets[js.child]).copy_from(dc);
                if let Some(p) = js.parent {
                    d.fixed_rows_mut::<3>(self.offsets[p]).copy_from(dp);
                }
                a += js.motor_inertia[k] * &d * d.transpose();
            }
        }
        let x = self.velocity_vector(state);
        0.5 * x.dot(&(&a * &x))
    }

    /// Strain energy plus gravitational potential (with `g` as the support acceleration).
    pub fn potential_energy(&self, state: &ChainState) -> f64 {
        let mut e = 0.0;
        for (l, ls) in self.links.iter().zip(&state.links) {
            e += 0.5 * ls.def.q.dot(&(&l.modal_stiffness * &ls.def.q));
            let rot = ls.rotation();
            for (nd, s) in l.nodes.iter().zip(l.sample(&ls.def, &ls.twist)) {
                e += nd.w * l.rho_a() * self.g.dot(&(ls.p + rot * s.r_ib));
            }
        }
        e
    }

    pub fn link_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

impl LinkState {
    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.p.iter()).all(|v| v.is_finite())
            && self.twist.is_finite()
            && self.def.q.iter().chain(self.def.qdot.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
struct StateRate {
    theta: Vec3,
    p: Vec3,
    twist: Vec6,
    q: DVector<f64>,
    qdot: DVector<f64>,
}

impl StateRate {
    fn combine(k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let c = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
        Self {
            theta: (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta) / 6.0,
            p: (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p) / 6.0,
            twist: (k1.twist + 2.0 * k2.twist + 2.0 * k3.twist + k4.twist) / 6.0,
            q: k1.q.zip_zip_map(&k2.q, &k3.q, |a, b, cc| (a, b, cc)).zip_map(&k4.q, |(a, b, cc), d| c(a, b, cc, d)),
            qdot: k1
                .qdot
                .zip_zip_map(&k2.qdot, &k3.qdot, |a, b, cc| (a, b, cc))
                .zip_map(&k4.qdot, |(a, b, cc), d| c(a, b, cc, d)),
        }
    }
}

/// Mass block and right-hand side of one link's rigid and modal equations.
///
/// Rigid rows: `M V̇ + D(v̇_xi) + H = W_tip`. Modal rows: the Galerkin
/// projection of the deformation PDE with endpoint loads as point forces.
pub fn link_equations(
    link: &LinkModel,
    ls: &LinkState,
    tip_wrench: &Wrench,
    g: &Vec3,
    forcing: DeformationForcing,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = link.n_modes();
    let mut a = DMatrix::zeros(6 + n, 6 + n);
    let mut b = DVector::zeros(6 + n);
    let rho_a = link.rho_a();
    let twist = ls.twist;
    let w = twist.omega;
    let rot = ls.rotation();
    let gb = rot.inverse() * g;
    let samples = link.sample(&ls.def, &twist);
    let interior = forcing == DeformationForcing::Interior;
    let fi = if interior { 1.0 } else { 0.0 };

    let m = inertia_matrix(link);
    let mut tl = m.fixed_view::<3, 3>(0, 0).into_owned();
    let mut tr = m.fixed_view::<3, 3>(0, 3).into_owned();
    let mut bl = m.fixed_view::<3, 3>(3, 0).into_owned();
    let h = bias_h_from_samples(link, &samples, &rot, &twist, g);
    let mut top_bias = h.fixed_rows::<3>(0).into_owned();
    let mut bot_bias = h.fixed_rows::<3>(3).into_owned();
    // rigid rows on q̈: rhoA ∫ r̃_ib Φ
    let mut top_q = DMatrix::zeros(3, n);
    let mut modal_w = DMatrix::zeros(n, 3);
    let mut modal_rhs = DVector::zeros(n);
    for (nd, s) in link.nodes.iter().zip(&samples) {
        let rib = skew(&s.r_ib);
        let rxi = skew(&s.r);
        let wr = nd.w * rho_a;
        // D(v̇_xi) with v̇_xi = Φ q̈ - r̃_xi ω̇ + ω × ṙ_xi
        tl -= wr * rib * rxi;
        bl -= wr * rxi;
        if interior {
            // moment of the section inertia about the deformed position
            tl -= wr * rxi * skew(&nd.r_b);
            tr += wr * rxi;
        }
        let carry = w.cross(&s.rdot);
        top_bias += wr * s.r_ib.cross(&carry);
        bot_bias += wr * carry;
        let density = wr * (carry + w.cross(&s.v_xi) + fi * (w.cross(&s.v_b) + gb)) - nd.w * s.elastic;
        let rows_w = rxi + fi * skew(&nd.r_b);
        for (k, &ax) in link.axes.iter().enumerate() {
            let p = nd.phi[k];
            for r in 0..3 {
                top_q[(r, k)] += wr * p * rib[(r, ax)];
                modal_w[(k, r)] -= wr * p * rows_w[(ax, r)];
            }
            modal_rhs[k] -= p * density[ax];
        }
    }
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&tl);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&tr);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&bl);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&m.fixed_view::<3, 3>(3, 3));

    let r_t = link.tip_position(&ls.def);
    let applied_tau = tip_wrench.tau + r_t.cross(&tip_wrench.force);
    b.fixed_rows_mut::<3>(0).copy_from(&(applied_tau - top_bias));
    b.fixed_rows_mut::<3>(3).copy_from(&(tip_wrench.force - bot_bias));
    if n > 0 {
        a.view_mut((0, 6), (3, n)).copy_from(&top_q);
        a.view_mut((3, 6), (3, n)).copy_from(&link.modal_first_moment);
        a.view_mut((6, 0), (n, 3)).copy_from(&modal_w);
        if interior {
            a.view_mut((6, 3), (n, 3)).copy_from(&link.modal_first_moment.transpose());
        }
        a.view_mut((6, 6), (n, n)).copy_from(&link.modal_mass);
        // bending moments load the tip slope: τ_z on r_y', -τ_y on r_z'
        let mut q = link.tip_phi.transpose() * tip_wrench.force;
        for (k, &ax) in link.axes.iter().enumerate() {
            q[k] += link.tip_phi1[(ax, k)]
                * match ax {
                    1 => tip_wrench.tau.z,
                    2 => -tip_wrench.tau.y,
                    _ => 0.0,
                };
        }
        b.rows_mut(6, n).copy_from(&(modal_rhs + q));
    }
    (a, b)
}
