#![allow(dead_code)]

use flexsim::chain_dynamics::{Chain, ChainState, DeformationForcing};
use flexsim::reference_gen::consistent_desired_twists;
use flexsim::sim::ScenarioConfig;
use nalgebra::DVector;
use rand::Rng;

pub const NOMINAL: &str = include_str!("../../../../presets/nominal.toml");
pub const ADAPTIVE: &str = include_str!("../../../../presets/adaptive.toml");
pub const PTC: &str = include_str!("../../../../presets/ptc.toml");
pub const PD: &str = include_str!("../../../../presets/pd.toml");
pub const COMPARE: &str = include_str!("../../../../presets/compare.toml");

pub fn preset(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(text).expect("preset parses")
}

/// The two-link arm of the presets with the given plant forcing and gravity.
pub fn two_link(forcing: DeformationForcing, g: [f64; 3]) -> Chain {
    let mut cfg = preset(NOMINAL);
    cfg.gravity = g;
    cfg.integration.forcing = forcing;
    cfg.build_chain().expect("chain builds")
}

/// Random joint angles and rates, random deformation on the last link, twists
/// consistent with the joints.
pub fn random_state(chain: &Chain, rng: &mut impl Rng, q_max: f64, rate_max: f64) -> ChainState {
    let coords: Vec<Vec<f64>> =
        chain.joints.iter().map(|j| (0..j.free_axes()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut s = chain.assemble(&coords);
    if let Some(last) = s.links.last_mut() {
        let n = last.def.len();
        last.def.q = DVector::from_fn(n, |_, _| rng.random_range(-q_max..q_max));
        last.def.qdot = DVector::from_fn(n, |_, _| rng.random_range(-10.0 * q_max..10.0 * q_max));
    }
    let rates: Vec<Vec<f64>> =
        chain.joints.iter().map(|j| (0..j.free_axes()).map(|_| rng.random_range(-rate_max..rate_max)).collect()).collect();
    let tw = consistent_desired_twists(chain, &s, &rates);
    for (ls, t) in s.links.iter_mut().zip(tw) {
        ls.twist = t;
    }
    s
}

use flexsim::chain_dynamics::{link_equations, LinkModel, LinkState};
use flexsim::screw_algebra::{body_jacobian_inv, Twist, Vec3, Vec6, Wrench};

/// Twist rate and modal accelerations of one free link under a body wrench at its origin.
pub fn free_link_accel(link: &LinkModel, ls: &LinkState, w: &Wrench, forcing: DeformationForcing) -> (Vec6, DVector<f64>) {
    let (a, mut b) = link_equations(link, ls, &Wrench::zero(), &Vec3::zeros(), forcing);
    for r in 0..6 {
        b[r] += w.to_vec6()[r];
    }
    let x = a.lu().solve(&b).expect("link equations solvable");
    (x.fixed_rows::<6>(0).into_owned(), x.rows(6, link.n_modes()).into_owned())
}

/// One RK4 step of a free link with the wrench law `control` held at its start value.
pub fn free_link_step(
    link: &LinkModel,
    ls: &LinkState,
    control: &Wrench,
    forcing: DeformationForcing,
    dt: f64,
) -> LinkState {
    let rate = |s: &LinkState| {
        let (vd, qdd) = free_link_accel(link, s, control, forcing);
        (body_jacobian_inv(&s.theta) * s.twist.omega, vd, s.def.qdot.clone(), qdd)
    };
    let shift = |s: &LinkState, k: &(Vec3, Vec6, DVector<f64>, DVector<f64>), h: f64| {
        let mut n = s.clone();
        n.theta += k.0 * h;
        n.twist = Twist::from_vec6(&(s.twist.to_vec6() + k.1 * h));
        n.def.q += &k.2 * h;
        n.def.qdot += &k.3 * h;
        n
    };
    let k1 = rate(ls);
    let k2 = rate(&shift(ls, &k1, dt / 2.0));
    let k3 = rate(&shift(ls, &k2, dt / 2.0));
    let k4 = rate(&shift(ls, &k3, dt));
    let avg = (
        (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) / 6.0,
        (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) / 6.0,
        (&k1.2 + 2.0 * &k2.2 + 2.0 * &k3.2 + &k4.2) / 6.0,
        (&k1.3 + 2.0 * &k2.3 + 2.0 * &k3.3 + &k4.3) / 6.0,
    );
    shift(ls, &avg, dt)
}

/// Least-squares slope of `ln v` against `t`, negated.
pub fn fitted_decay_rate(t: &[f64], v: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t.iter().zip(v).filter(|(_, v)| **v > 0.0).map(|(t, v)| (*t, v.ln())).collect();
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -num / den
}
