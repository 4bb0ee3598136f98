mod common;

use approx::assert_relative_eq;
use common::{random_state, two_link};
use flexsim::chain_dynamics::*;
use flexsim::flexible_link::*;
use flexsim::screw_algebra::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn link2_params() -> LinkParams {
    LinkParams::rectangular(7800.0, 2.1e11, 0.010, 0.050, 1.0, false)
}

fn link2() -> LinkModel {
    LinkModel::new(link2_params(), ModeCounts::default()).unwrap()
}

fn simpson(f: impl Fn(f64) -> Vec6, a: f64, c: f64, n: usize) -> Vec6 {
    let h = (c - a) / n as f64;
    let mut s = f(a) + f(c);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * (h / 3.0)
}

fn stack(top: Vec3, bot: Vec3) -> Vec6 {
    Vec6::new(top.x, top.y, top.z, bot.x, bot.y, bot.z)
}

fn random_link_state(link: &LinkModel, rng: &mut impl Rng) -> (DeformationState, Rotation, Twist) {
    let n = link.n_modes();
    let mut u = |a: f64| rng.random_range(-a..a);
    let def = DeformationState { q: DVector::from_fn(n, |_, _| u(1e-2)), qdot: DVector::from_fn(n, |_, _| u(1e-1)) };
    let rot = exp_so3(&Vec3::new(u(2.0), u(2.0), u(2.0)));
    let tw = Twist::new(Vec3::new(u(3.0), u(3.0), u(3.0)), Vec3::new(u(3.0), u(3.0), u(3.0)));
    (def, rot, tw)
}

/// Independent quadrature of the `H` and `H_c` integrands from the field values.
fn oracle_biases(link: &LinkModel, def: &DeformationState, rot: &Rotation, tw: &Twist, g: &Vec3) -> (Vec6, Vec6) {
    let p = link.params;
    let ra = p.rho_a();
    let k = stiffness_matrices(&p);
    let gb = rot.inverse() * g;
    let w = tw.omega;
    let fields = |x: f64| {
        let f = eval_deformation(&link.basis, def, x).unwrap();
        let rdot = eval_deformation_rate(&link.basis, def, x).unwrap();
        let r_ib = p.r_b(x) + f[0];
        let v_b = tw.v + w.cross(&p.r_b(x));
        let v_xi = rdot + w.cross(&f[0]);
        let elastic = k.iv1 * f[2] - k.iv2 * f[4];
        (r_ib, v_b, v_xi, elastic)
    };
    let h = simpson(
        |x| {
            let (r_ib, v_b, v_xi, _) = fields(x);
            let a = ra * (w.cross(&(v_b + v_xi)) + gb);
            stack(r_ib.cross(&a), a)
        },
        p.a,
        p.c,
        1000,
    );
    let hc = simpson(
        |x| {
            let (r_ib, v_b, _, el) = fields(x);
            let a = ra * (w.cross(&v_b) + gb) + el;
            stack(r_ib.cross(&a), a)
        },
        p.a,
        p.c,
        1000,
    );
    (h, hc)
}

#[test]
fn rigid_link_translational_block_is_mass_times_identity() {
    let l = LinkModel::new(LinkParams { rigid: true, ..link2_params() }, ModeCounts::default()).unwrap();
    let m = inertia_matrix(&l);
    assert_relative_eq!(m.fixed_view::<3, 3>(3, 3).into_owned(), Mat3::identity() * 3.9, max_relative = 1e-12);
}

#[test]
fn inertia_is_spd_and_linear_in_density() {
    let m = inertia_matrix(&link2());
    assert_relative_eq!(m, m.transpose(), epsilon = 0.0);
    assert!(m.symmetric_eigenvalues().min() > 0.0);
    let heavy = LinkModel::new(LinkParams { rho: 2.0 * 7800.0, ..link2_params() }, ModeCounts::default()).unwrap();
    assert_relative_eq!(inertia_matrix(&heavy), 2.0 * m, max_relative = 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let b = rng.random_range(0.002..0.05);
        let h = rng.random_range(0.002..0.1);
        let mut p = LinkParams::rectangular(rng.random_range(1e3..1e4), 7e10, b, h, rng.random_range(0.2..2.0), false);
        p.a = rng.random_range(0.0..0.5);
        p.c += p.a;
        p.offset_y = rng.random_range(-0.05..0.05);
        let l = LinkModel::new(p, ModeCounts::default()).unwrap();
        assert!(checked_inertia_matrix(&l, 0).is_ok());
    }
}

#[test]
fn bias_vanishes_at_rest_without_gravity() {
    let l = link2();
    let def = DeformationState::zeros(l.n_modes());
    let rot = exp_so3(&Vec3::new(0.1, 0.2, 0.3));
    assert_eq!(bias_hc(&l, &def, &rot, &Twist::zero(), &Vec3::zeros()), Vec6::zeros());
    assert_eq!(bias_h(&l, &def, &rot, &Twist::zero(), &Vec3::zeros()), Vec6::zeros());
}

#[test]
fn gravity_bias_closed_form() {
    let l = link2();
    let def = DeformationState::zeros(l.n_modes());
    let rot = exp_so3(&Vec3::new(0.4, -0.3, 1.0));
    let g = Vec3::new(0.0, 0.0, -9.81);
    let gb = rot.inverse() * g;
    let hc = bias_hc(&l, &def, &rot, &Twist::zero(), &g);
    let ra = l.rho_a();
    let integral_skew = skew(&Vec3::new(ra * 0.5, 0.0, 0.0));
    assert_relative_eq!(hc.fixed_rows::<3>(3).into_owned(), 3.9 * gb, max_relative = 1e-12);
    assert_relative_eq!(hc.fixed_rows::<3>(0).into_owned(), integral_skew * gb, epsilon = 1e-12);
    assert_relative_eq!(bias_h(&l, &def, &rot, &Twist::zero(), &g), hc, epsilon = 1e-12);
}

#[test]
fn first_mode_elastic_bias_matches_quadrature() {
    let l = link2();
    for idx in [0, 1, 4] {
        let mut def = DeformationState::zeros(l.n_modes());
        def.q[idx] = 1e-3;
        let rot = Rotation::identity();
        let (_, oracle) = oracle_biases(&l, &def, &rot, &Twist::zero(), &Vec3::zeros());
        let hc = bias_hc(&l, &def, &rot, &Twist::zero(), &Vec3::zeros());
        assert!((hc - oracle).norm() <= 1e-6 * oracle.norm(), "mode {idx}: {hc} vs {oracle}");
    }
}

#[test]
fn biases_match_quadrature_at_random_states() {
    let l = link2();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = Vec3::new(0.0, 0.0, 9.81);
    for _ in 0..20 {
        let (def, rot, tw) = random_link_state(&l, &mut rng);
        let (h, hc) = oracle_biases(&l, &def, &rot, &tw, &g);
        assert!((bias_h(&l, &def, &rot, &tw, &g) - h).norm() <= 1e-8 * h.norm());
        assert!((bias_hc(&l, &def, &rot, &tw, &g) - hc).norm() <= 1e-6 * hc.norm());
    }
}

#[test]
fn h_minus_hc_is_deformation_coriolis_and_elastic() {
    let l = link2();
    let p = l.params;
    let k = stiffness_matrices(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let (def, rot, tw) = random_link_state(&l, &mut rng);
        let g = Vec3::new(1.0, -2.0, 9.81);
        let diff = bias_h(&l, &def, &rot, &tw, &g) - bias_hc(&l, &def, &rot, &tw, &g);
        let oracle = simpson(
            |x| {
                let f = eval_deformation(&l.basis, &def, x).unwrap();
                let rdot = eval_deformation_rate(&l.basis, &def, x).unwrap();
                let r_ib = p.r_b(x) + f[0];
                let v_xi = rdot + tw.omega.cross(&f[0]);
                let a = p.rho_a() * tw.omega.cross(&v_xi) - (k.iv1 * f[2] - k.iv2 * f[4]);
                stack(r_ib.cross(&a), a)
            },
            p.a,
            p.c,
            1000,
        );
        assert!((diff - oracle).norm() <= 1e-6 * oracle.norm().max(1.0));
    }
}

#[test]
fn distributed_inertia_simple_fields() {
    let l = link2();
    let def = DeformationState::zeros(l.n_modes());
    let samples = l.sample(&def, &Twist::zero());
    let zero = vec![Vec3::zeros(); samples.len()];
    assert_eq!(distributed_inertia_d(&l, &samples, &zero), Vec6::zeros());
    let ones = vec![Vec3::new(1.0, 1.0, 1.0); samples.len()];
    let d = distributed_inertia_d(&l, &samples, &ones);
    assert_relative_eq!(d.fixed_rows::<3>(3).into_owned(), Vec3::new(3.9, 3.9, 3.9), max_relative = 1e-12);
    // rotational block: rhoA ∫ x e_x × (1,1,1) dx = rhoA l²/2 (0,-1,1)
    assert_relative_eq!(d.fixed_rows::<3>(0).into_owned(), Vec3::new(0.0, -1.95, 1.95), epsilon = 1e-12);
}

#[test]
fn controllable_form_equals_raw_form() {
    let l = link2();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let g = Vec3::new(0.0, 0.0, 9.81);
    for _ in 0..100 {
        let (def, rot, tw) = random_link_state(&l, &mut rng);
        let vdot = Vec6::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let samples = l.sample(&def, &tw);
        let sub = vxidot_substituted(&l, &samples, &tw.omega);
        let m = inertia_matrix(&l);
        let raw = m * vdot + distributed_inertia_d(&l, &samples, &sub) + bias_h(&l, &def, &rot, &tw, &g);
        let controllable = m * vdot + bias_hc(&l, &def, &rot, &tw, &g);
        assert!((raw - controllable).norm() <= 1e-8 * controllable.norm(), "{raw} vs {controllable}");
    }
}

#[test]
fn endpoint_wrench_map_cases() {
    let z = Wrench::zero();
    let d = Vec3::zeros();
    assert_eq!(endpoint_wrench_map(&z, &z, &d, &d), z);
    let wb = Wrench::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, -1.0, 2.0));
    let wt = Wrench::new(Vec3::new(-1.0, 0.5, 0.25), Vec3::new(1.0, 1.0, -1.0));
    let out = endpoint_wrench_map(&wb, &wt, &d, &d);
    assert_eq!(out.tau, wb.tau - wt.tau);
    assert_eq!(out.force, wb.force - wt.force);
    // Unit tip force along y with tip deflection delta along z.
    let delta = Vec3::new(0.0, 0.0, 0.04);
    let f = Wrench::new(Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0));
    let out = endpoint_wrench_map(&z, &f, &d, &delta);
    assert_relative_eq!(out.tau, Vec3::new(-0.04, 0.0, 0.0), epsilon = 1e-15);
    assert_relative_eq!(out.force, -f.force, epsilon = 0.0);
}

#[test]
fn strain_rhs_cases() {
    let p = link2_params();
    let l = link2();
    let def = DeformationState::zeros(l.n_modes());
    assert!(strain_pde_modal_rhs(&l, &def, &Vec3::zeros()).iter().all(|v| *v == 0.0));
    assert!(strain_pde_modal_rhs(&l, &def, &Vec3::new(1.0, -2.0, 3.0)).norm() == 0.0);
    let basis = make_clamped_free_basis(ModeCounts::default(), &p).unwrap();
    for m in basis.modes.iter().enumerate().filter(|(_, m)| m.axis != 0) {
        let k = m.0;
        let beta = m.1.wavenumber();
        let ei = if m.1.axis == 1 { p.ei_z() } else { p.ei_y() };
        let wk2 = ei / p.rho_a() * beta.powi(4);
        let mut d = DeformationState::zeros(l.n_modes());
        d.q[k] = 1e-3;
        let rhs = strain_pde_modal_rhs(&l, &d, &Vec3::zeros());
        assert_relative_eq!(rhs[k], -wk2 * 1e-3, max_relative = 1e-6);
        for (j, v) in rhs.iter().enumerate() {
            if j != k {
                assert!(v.abs() <= 1e-6 * wk2 * 1e-3, "mode {k} leaks into {j}: {v}");
            }
        }
    }
}

#[test]
fn tip_twist_cases() {
    let l = link2();
    let def = DeformationState::zeros(l.n_modes());
    assert_eq!(tip_twist(&l, &def, &Twist::zero()), Twist::zero());
    let w = Vec3::new(0.0, 0.0, 1.7);
    let t = tip_twist(&l, &def, &Twist::new(w, Vec3::zeros()));
    assert_relative_eq!(t.v, w.cross(&Vec3::new(1.0, 0.0, 0.0)), epsilon = 1e-15);
    let mut moving = DeformationState::zeros(l.n_modes());
    moving.qdot[2] = 0.3;
    let t = tip_twist(&l, &moving, &Twist::zero());
    let rdot = eval_deformation_rate(&l.basis, &moving, 1.0).unwrap();
    assert_relative_eq!(t.v, rdot, epsilon = 1e-15);
    assert_eq!(t.omega, Vec3::zeros());
}

#[test]
fn spinning_link_keeps_its_twist() {
    let l = LinkModel::new(LinkParams { rigid: true, ..link2_params() }, ModeCounts::none()).unwrap();
    let joint = JointSpec {
        parent: None,
        child: 0,
        kind: JointKind::Revolute { axis: [0.0, 0.0, 1.0] },
        base_point: Vec3::zeros(),
        motor_inertia: vec![0.5],
    };
    let chain = Chain::new(vec![l], vec![joint], Vec3::zeros()).unwrap();
    let mut s = chain.assemble(&[vec![0.3]]);
    let v0 = Twist::new(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros());
    s.links[0].twist = v0;
    let inputs = ChainInputs::zeros(&chain);
    for _ in 0..1000 {
        s = chain.solve_constrained_step(&s, &inputs, 1e-3, 1).unwrap().0;
    }
    assert!((s.links[0].twist.to_vec6() - v0.to_vec6()).norm() < 1e-9);
    assert_relative_eq!(chain.joint_angles(&s, 0)[0], 0.3 + 2.0, epsilon = 1e-9);
}

#[test]
fn two_link_chain_at_rest_stays_at_rest() {
    for forcing in [DeformationForcing::Interior, DeformationForcing::Strain] {
        let chain = two_link(forcing, [0.0; 3]);
        let s0 = chain.assemble(&[vec![0.5, 0.1], vec![0.4]]);
        let inputs = ChainInputs::zeros(&chain);
        let mut s = s0.clone();
        for _ in 0..200 {
            s = chain.solve_constrained_step(&s, &inputs, 1e-3, 5).unwrap().0;
        }
        for (a, b) in s.links.iter().zip(&s0.links) {
            assert!((a.theta - b.theta).norm() < 1e-12);
            assert!(a.twist.to_vec6().norm() < 1e-12);
            assert!(a.def.q.norm() < 1e-15);
        }
    }
}

#[test]
fn interaction_wrench_views_are_co_adjoint() {
    let chain = two_link(DeformationForcing::Interior, [0.0, 0.0, 9.81]);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let s = random_state(&chain, &mut rng, 5e-3, 1.0);
        let mut inputs = ChainInputs::zeros(&chain);
        inputs.joint_torques = vec![vec![rng.random_range(-50.0..50.0), 10.0], vec![rng.random_range(-20.0..20.0)]];
        let acc = chain.accelerations(&s, &inputs).unwrap();
        for (j, js) in chain.joints.iter().enumerate() {
            let rc = s.links[js.child].rotation();
            let rp = js.parent.map_or_else(Rotation::identity, |p| s.links[p].rotation());
            let to_child = AdjointTransform::new(rc.inverse() * rp, Vec3::zeros());
            let jw = acc.interaction.joints[j];
            let mapped = coadjoint_apply(&to_child, &jw.tip_side);
            let scale = jw.base_side.to_vec6().norm().max(1.0);
            assert!((mapped.to_vec6() - jw.base_side.to_vec6()).norm() <= 1e-9 * scale);
        }
    }
}

#[test]
fn passive_chain_conserves_energy() {
    let chain = two_link(DeformationForcing::Interior, [0.0, 0.0, 9.81]);
    let mut s = chain.assemble(&[vec![0.5, 0.2], vec![0.4]]);
    let inputs = ChainInputs::zeros(&chain);
    let energy = |s: &ChainState| chain.kinetic_energy(s) + chain.potential_energy(s);
    let scale = |s: &ChainState| chain.kinetic_energy(s) + chain.potential_energy(s).abs();
    let mut e_prev = energy(&s);
    for _ in 0..500 {
        s = chain.solve_constrained_step(&s, &inputs, 1e-3, 5).unwrap().0;
        let e = energy(&s);
        assert!((e - e_prev).abs() <= 1e-4 * scale(&s), "step energy change {}", e - e_prev);
        e_prev = e;
    }
    assert!(chain.max_constraint_residual(&s) < 1e-6);
}

#[test]
fn motor_power_balances_energy_change() {
    let chain = two_link(DeformationForcing::Interior, [0.0, 0.0, 9.81]);
    let mut s = chain.assemble(&[vec![0.5, 0.2], vec![0.4]]);
    let mut inputs = ChainInputs::zeros(&chain);
    inputs.joint_torques = vec![vec![20.0, -15.0], vec![5.0]];
    let energy = |s: &ChainState| chain.kinetic_energy(s) + chain.potential_energy(s);
    let power = |s: &ChainState| -> f64 {
        (0..chain.joints.len())
            .map(|j| chain.joint_rates(s, j).iter().zip(&inputs.joint_torques[j]).map(|(r, t)| r * t).sum::<f64>())
            .sum()
    };
    let dt = 1e-3;
    let (mut e_prev, mut p_prev) = (energy(&s), power(&s));
    for _ in 0..500 {
        s = chain.solve_constrained_step(&s, &inputs, dt, 5).unwrap().0;
        let (e, p) = (energy(&s), power(&s));
        let work = 0.5 * (p + p_prev) * dt;
        let scale = chain.kinetic_energy(&s) + chain.potential_energy(&s).abs();
        assert!((e - e_prev - work).abs() <= 1e-4 * scale, "balance error {}", e - e_prev - work);
        e_prev = e;
        p_prev = p;
    }
}

#[test]
fn singular_or_mismatched_chains_are_rejected() {
    let chain = two_link(DeformationForcing::Strain, [0.0; 3]);
    let mut joints = chain.joints.clone();
    joints[1].motor_inertia.push(1.0);
    assert!(Chain::new(chain.links.clone(), joints, Vec3::zeros()).is_err());
    let mut joints = chain.joints.clone();
    joints[0].parent = Some(1);
    assert!(Chain::new(chain.links.clone(), joints, Vec3::zeros()).is_err());
    assert!(Chain::new(chain.links.clone(), chain.joints[..1].to_vec(), Vec3::zeros()).is_err());
}
