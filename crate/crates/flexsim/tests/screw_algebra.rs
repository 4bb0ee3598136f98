use approx::assert_relative_eq;
use flexsim::screw_algebra::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

fn transform() -> impl Strategy<Value = AdjointTransform> {
    (vec3(3.0), vec3(2.0)).prop_map(|(th, r)| AdjointTransform::new(exp_so3(&th), r))
}

fn twist() -> impl Strategy<Value = Twist> {
    (vec3(5.0), vec3(5.0)).prop_map(|(w, v)| Twist::new(w, v))
}

fn wrench() -> impl Strategy<Value = Wrench> {
    (vec3(5.0), vec3(5.0)).prop_map(|(t, f)| Wrench::new(t, f))
}

fn mat_close(a: &Mat6, b: &Mat6, tol: f64) -> bool {
    (a - b).abs().max() <= tol
}

#[test]
fn skew_of_zero_is_zero() {
    assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
}

#[test]
fn exp_of_zero_is_identity() {
    assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
    assert_eq!(body_jacobian(&Vec3::zeros()), Mat3::identity());
}

#[test]
fn identity_transforms_leave_screws_unchanged() {
    let v = Twist::new(Vec3::new(1.0, -2.0, 0.5), Vec3::new(0.3, 0.1, -4.0));
    let w = Wrench::new(Vec3::new(-1.0, 2.0, 3.0), Vec3::new(7.0, 0.0, 1.0));
    let id = AdjointTransform::identity();
    assert_eq!(adjoint_apply(&id, &v), v);
    assert_eq!(coadjoint_apply(&id, &w), w);
}

#[test]
fn pure_rotation_coadjoint_rotates_each_block() {
    let rot = exp_so3(&Vec3::new(0.2, -0.7, 1.1));
    let w = Wrench::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-3.0, 0.5, 2.0));
    let out = coadjoint_apply(&AdjointTransform::new(rot, Vec3::zeros()), &w);
    assert_relative_eq!(out.tau, rot * w.tau, epsilon = 1e-14);
    assert_relative_eq!(out.force, rot * w.force, epsilon = 1e-14);
}

#[test]
fn zero_twist_has_zero_small_adjoint() {
    assert_eq!(small_adjoint(&Twist::zero()), Mat6::zeros());
}

#[test]
fn zero_shift_is_identity() {
    assert_eq!(point_shift(&Vec3::zeros()), Mat6::identity());
}

#[test]
fn pairing_of_unit_angular_screws_is_one() {
    let e = Vec3::x();
    assert_eq!(pairing(&Wrench::new(e, Vec3::zeros()), &Twist::new(e, Vec3::zeros())), 1.0);
    assert_eq!(pairing(&Wrench::new(e, Vec3::zeros()), &Twist::new(Vec3::zeros(), e)), 0.0);
}

#[test]
fn point_shift_matches_rigid_point_velocity() {
    // The shifted twist carries the velocity of the point at -r.
    let omega = Vec3::new(0.3, -1.2, 2.0);
    let r = Vec3::new(1.0, 0.4, -0.2);
    let shifted = point_shift(&r) * Twist::new(omega, Vec3::zeros()).to_vec6();
    let expected = omega.cross(&(-r));
    assert_relative_eq!(shifted.fixed_rows::<3>(3).into_owned(), expected, epsilon = 1e-14);
    assert_relative_eq!(shifted.fixed_rows::<3>(0).into_owned(), omega, epsilon = 0.0);
}

#[test]
fn jacobian_well_conditioned_below_pi() {
    let mut worst: f64 = 0.0;
    for i in 0..2000 {
        let s = i as f64 / 2000.0;
        let dir = Vec3::new((7.0 * s).sin(), (11.0 * s).cos(), (3.0 * s + 0.5).sin()).normalize();
        let j = body_jacobian(&(dir * (0.999 * PI * s)));
        let sv = j.singular_values();
        worst = worst.max(sv.max() / sv.min());
    }
    assert!(worst.is_finite() && worst < 1e3, "condition number {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn skew_is_cross_product_and_antisymmetric(a in vec3(10.0), b in vec3(10.0)) {
        let s = skew(&a);
        prop_assert!((s * b - a.cross(&b)).norm() <= 1e-12 * (1.0 + a.norm() * b.norm()));
        prop_assert_eq!(s + s.transpose(), Mat3::zeros());
    }

    #[test]
    fn exp_produces_rotations(th in vec3(10.0)) {
        let r = *exp_so3(&th).matrix();
        prop_assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-10);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        let back = exp_so3(&th) * exp_so3(&-th);
        prop_assert!((back.matrix() - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_difference(th in vec3(2.5), rate in vec3(1.0), t in -1.0..1.0f64) {
        // theta(t) = th + t * rate, evaluated at t; omega_body = (R^T dR/dt)^vee.
        let h = 1e-7;
        let r = exp_so3(&(th + rate * t));
        let rp = exp_so3(&(th + rate * (t + h)));
        let rm = exp_so3(&(th + rate * (t - h)));
        let dr = (rp.matrix() - rm.matrix()) / (2.0 * h);
        let omega_fd = unskew(&(r.matrix().transpose() * dr));
        let omega = body_jacobian(&(th + rate * t)) * rate;
        prop_assert!((omega - omega_fd).norm() < 1e-6, "{} vs {}", omega, omega_fd);
    }

    #[test]
    fn adjoint_composition(a in transform(), b in transform(), v in twist()) {
        let lhs = adjoint_apply(&a.compose(&b), &v).to_vec6();
        let rhs = adjoint_apply(&a, &adjoint_apply(&b, &v)).to_vec6();
        prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + v.to_vec6().norm()) * 10.0);
        prop_assert!(mat_close(&(a.matrix() * b.matrix()), &a.compose(&b).matrix(), 1e-12 * 10.0));
    }

    #[test]
    fn adjoint_matrix_block_form(a in transform(), v in twist()) {
        let r = *a.rot.matrix();
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&a.r) * r));
        prop_assert!((adjoint_apply(&a, &v).to_vec6() - m * v.to_vec6()).norm() < 1e-12 * 10.0);
    }

    #[test]
    fn coadjoint_is_inverse_transpose(a in transform()) {
        let inv_t = a.matrix().try_inverse().unwrap().transpose();
        prop_assert!(mat_close(&a.coadjoint_matrix(), &inv_t, 1e-11));
    }

    #[test]
    fn pairing_is_frame_invariant(a in transform(), w in wrench(), v in twist()) {
        let before = pairing(&w, &v);
        let after = pairing(&coadjoint_apply(&a, &w), &adjoint_apply(&a, &v));
        prop_assert!((before - after).abs() <= 1e-12 * (1.0 + w.to_vec6().norm() * v.to_vec6().norm()));
    }

    #[test]
    fn bracket_is_antisymmetric(v in twist(), w in twist()) {
        let vw = small_adjoint(&v) * w.to_vec6();
        let wv = small_adjoint(&w) * v.to_vec6();
        prop_assert!((vw + wv).norm() < 1e-12 * (1.0 + vw.norm()));
        let self_bracket = small_adjoint(&v) * v.to_vec6();
        prop_assert!(self_bracket.fixed_rows::<3>(0).norm() == 0.0);
    }

    #[test]
    fn bracket_satisfies_jacobi(u in twist(), v in twist(), w in twist()) {
        let br = |a: &Vec6, b: &Vec6| small_adjoint(&Twist::from_vec6(a)) * b;
        let (u, v, w) = (u.to_vec6(), v.to_vec6(), w.to_vec6());
        let j = br(&u, &br(&v, &w)) + br(&v, &br(&w, &u)) + br(&w, &br(&u, &v));
        prop_assert!(j.norm() < 1e-10);
    }

    #[test]
    fn point_shift_is_a_homomorphism(r1 in vec3(3.0), r2 in vec3(3.0)) {
        prop_assert!(mat_close(&(point_shift(&r1) * point_shift(&r2)), &point_shift(&(r1 + r2)), 1e-14));
        prop_assert!(mat_close(&(point_shift(&r1) * point_shift(&-r1)), &Mat6::identity(), 1e-14));
    }

    #[test]
    fn log_inverts_exp_below_pi(th in vec3(1.7)) {
        prop_assume!(th.norm() < 3.0);
        prop_assert!((log_so3(&exp_so3(&th)) - th).norm() < 1e-9);
    }
}
