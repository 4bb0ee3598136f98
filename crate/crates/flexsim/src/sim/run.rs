//! The sampled control loop: reference, controller, actuation, plant step,
//! adaptation and monitors, with CSV persistence.

use super::config::{ConfigError, ScenarioConfig, StartMode};
use crate::adaptation::{
    active_columns, lumped_gamma, measure, regressor_v, regressor_xi, residuals, stack, true_params, AdaptState,
    ParamVector, N_PARAMS, PARAM_NAMES,
};
use crate::analysis::{
    adaptive_bound_constants, augmented_lyapunov, decay_envelope_check, decay_rate, elastic_energies, growth_ratio,
    lyapunov, power_residuals, BoundConstants, EnvelopeReport, OperatingEnvelope, StabilityRecord,
};
use crate::chain_dynamics::{inertia_matrix, Chain, ChainInputs, ChainState, DynamicsError};
use crate::control::{
    pd_joint, ptc, saturate_torques, slpc_adaptive, slpc_nominal, twist_error, wrench_to_actuation, ControlError,
    ControllerKind,
};
use crate::exec;
use crate::flexible_link::eval_deformation;
use crate::reference_gen::{
    consistent_desired_twists, corrected_joint_reference, initial_joint_coordinates, ReferenceGenerator, ReferenceSample,
};
use crate::screw_algebra::{Mat6, Vec3, Vec6, Wrench};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const LOG_SCHEMA: &str = "flexsim-log/1";
pub const DEFORMATION_SCHEMA: &str = "flexsim-deformation/1";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure at t = {t:.4} s: {reason}")]
    Numerical { t: f64, reason: String, summary: Box<RunSummary> },
    #[error("output error: {0}")]
    Io(String),
}

impl RunError {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunSummary {
    pub name: String,
    pub controller: String,
    pub completed: bool,
    pub samples: usize,
    pub t_end: f64,
    pub wall_time_s: f64,
    pub max_abs_torque: f64,
    pub saturated_samples: usize,
    pub max_twist_error: f64,
    /// RMS over all joint axes of `θ_d − θ` after the envelope start.
    pub rms_joint_error: f64,
    pub peak_tip_bending_y: f64,
    pub peak_tip_bending_z: f64,
    pub peak_tip_axial: f64,
    pub max_elastic_energy: f64,
    pub energy_growth_ratio: f64,
    pub max_constraint_residual: f64,
    pub max_abs_p_sum: f64,
    pub telescoping_violations: usize,
    pub envelope: Option<EnvelopeReport>,
    pub decay_rate: f64,
    pub pe_min_eigenvalue: Option<f64>,
    pub bound_constants: Vec<BoundConstants>,
    pub final_param_errors: Vec<Vec<f64>>,
}

/// In-memory series kept alongside the CSV files.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub t: Vec<f64>,
    pub joint_angles: Vec<Vec<f64>>,
    pub joint_reference: Vec<Vec<f64>>,
    pub torques: Vec<Vec<f64>>,
    pub twist_errors: Vec<Vec<Vec6>>,
    /// Tip deformation of every link.
    pub tip: Vec<Vec<Vec3>>,
    pub stability: Vec<StabilityRecord>,
    /// Relative estimate errors `(ŝ − s)/s` per link.
    pub param_errors: Vec<Vec<ParamVector>>,
    pub s_hat_in_bounds: Vec<bool>,
    /// Windowed Gramian minimum eigenvalue per link, once the window is full.
    pub pe_min: Vec<Vec<Option<f64>>>,
    pub constraint_residual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub controller: ControllerKind,
    pub summary: RunSummary,
    pub log: RunLog,
    pub dir: Option<PathBuf>,
}

struct Writers {
    log: csv::Writer<BufWriter<File>>,
    deformation: csv::Writer<BufWriter<File>>,
}

fn open_csv(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<File>>, RunError> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# schema: {schema}")?;
    Ok(csv::Writer::from_writer(f))
}

fn axis_labels(chain: &Chain) -> Vec<String> {
    chain
        .joints
        .iter()
        .enumerate()
        .flat_map(|(j, js)| (0..js.free_axes()).map(move |a| format!("j{j}a{a}")))
        .collect()
}

pub fn log_header(chain: &Chain) -> Vec<String> {
    let comps = ["wx", "wy", "wz", "vx", "vy", "vz"];
    let mut h = vec!["t".to_string()];
    let n = chain.links.len();
    for i in 0..n {
        h.extend(comps.iter().map(|c| format!("V{i}_{c}")));
    }
    for i in 0..n {
        h.extend(comps.iter().map(|c| format!("e{i}_{c}")));
    }
    let axes = axis_labels(chain);
    h.extend(axes.iter().map(|a| format!("q_{a}")));
    h.extend(axes.iter().map(|a| format!("qd_{a}")));
    h.extend(axes.iter().map(|a| format!("tau_{a}")));
    for i in 0..n {
        h.extend(["x", "y", "z"].iter().map(|c| format!("tip{i}_{c}")));
    }
    for i in 0..n {
        h.extend(PARAM_NAMES.iter().map(|p| format!("shat{i}_{p}")));
        h.extend(PARAM_NAMES.iter().map(|p| format!("serr{i}_{p}")));
    }
    for i in 0..n {
        h.push(format!("nu{i}"));
        h.push(format!("nua{i}"));
        h.push(format!("p{i}"));
        h.push(format!("E{i}"));
        h.push(format!("pe{i}"));
    }
    h.extend(["V", "Va", "psum", "constraint_residual", "saturated"].map(String::from));
    h
}

pub fn deformation_header() -> Vec<String> {
    ["t", "link", "xi", "rx", "ry", "rz"].map(String::from).to_vec()
}

struct Monitors {
    alpha: Vec<f64>,
    masses: Vec<Mat6>,
    gains: Vec<Mat6>,
}

/// Runs every controller the scenario asks for. Several controllers run in
/// parallel, each writing to `<out>/<controller>/`.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Vec<Result<RunOutput, RunError>> {
    let kinds = cfg.controllers();
    let nested = kinds.len() > 1;
    exec::map_indexed(kinds.len(), |k| {
        let dir = out.map(|o| if nested { o.join(kinds[k].name()) } else { o.to_path_buf() });
        run_controller(cfg, kinds[k], dir.as_deref())
    })
}

pub fn run_controller(cfg: &ScenarioConfig, kind: ControllerKind, out: Option<&Path>) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let chain = cfg.build_chain()?;
    let mut writers = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut log = open_csv(&dir.join("log.csv"), LOG_SCHEMA)?;
            log.write_record(log_header(&chain))?;
            let mut deformation = open_csv(&dir.join("deformation.csv"), DEFORMATION_SCHEMA)?;
            deformation.write_record(deformation_header())?;
            Some(Writers { log, deformation })
        }
        None => None,
    };
    let result = simulate(cfg, kind, &chain, writers.as_mut());
    if let Some(w) = writers.as_mut() {
        w.log.flush()?;
        w.deformation.flush()?;
    }
    let (summary, log, failure) = result?;
    if let Some(dir) = out {
        let text = toml::to_string(&summary).map_err(|e| RunError::Io(e.to_string()))?;
        std::fs::write(dir.join("summary.toml"), text)?;
    }
    if let Some((t, reason)) = failure {
        return Err(RunError::Numerical { t, reason, summary: Box::new(summary) });
    }
    Ok(RunOutput { controller: kind, summary, log, dir: out.map(Path::to_path_buf) })
}

type SimResult = Result<(RunSummary, RunLog, Option<(f64, String)>), RunError>;

fn simulate(cfg: &ScenarioConfig, kind: ControllerKind, chain: &Chain, mut writers: Option<&mut Writers>) -> SimResult {
    let started = Instant::now();
    let ig = &cfg.integration;
    let dt = ig.dt;
    let n_steps = (ig.t_f / dt).round() as usize;
    let n = chain.links.len();
    let mut spec = cfg.trajectory.clone();
    spec.t_f = ig.t_f;
    let mut reference = ReferenceGenerator::new(spec.clone(), dt);
    let mut state = chain.assemble(&initial_joint_coordinates(&spec, chain));
    if ig.start == StartMode::Reference {
        let (r0, _) = corrected_joint_reference(&spec, chain, &state, 0.0, None);
        let twists = consistent_desired_twists(chain, &state, &r0.qdot);
        for (ls, tw) in state.links.iter_mut().zip(twists) {
            ls.twist = tw;
        }
    }
    let g = chain.g;

    let gains: Vec<Mat6> = cfg.gains.twist.iter().map(|k| k.matrix()).collect();
    let masses: Vec<Mat6> = chain.links.iter().map(inertia_matrix).collect();
    let mon = Monitors { alpha: (0..n).map(|i| decay_rate(&gains[i], &masses[i])).collect(), masses, gains };

    let s_true: Vec<ParamVector> = chain.links.iter().map(true_params).collect();
    let adaptive = kind == ControllerKind::SlpcAdaptive;
    let acfg = &cfg.adaptation;
    let mut adapt: Vec<AdaptState> =
        s_true.iter().map(|s| AdaptState::new(s, &acfg.config, acfg.pe_window, dt)).collect();
    let active: Vec<Vec<usize>> = chain.links.iter().map(active_columns).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let env_start = cfg.monitors.envelope_start.unwrap_or(3.0 * spec.tau_blend);
    let def_every = ((cfg.output.deformation_interval / dt).round() as usize).max(1);
    let mut log = RunLog::default();
    let mut summary = RunSummary { name: cfg.name.clone(), controller: kind.name().into(), ..Default::default() };
    let mut failure = None;
    let mut sq_err = 0.0;
    let mut sq_count = 0usize;

    for k in 0..n_steps {
        let t = state.t;
        let rs = reference.sample(chain, &state);
        let errors: Vec<Vec6> = (0..n).map(|i| twist_error(&rs.twists[i], &state.links[i].twist)).collect();

        let torques = match control_torques(cfg, kind, chain, &state, &rs, &mon.gains, &adapt, &g) {
            Ok(t) => t,
            Err(e) => {
                failure = Some((t, e.to_string()));
                break;
            }
        };
        let (torques, saturated) = saturate_torques(&torques, cfg.gains.torque_limit);
        let inputs = ChainInputs { joint_torques: torques.clone(), tip_wrenches: vec![Wrench::zero(); n] };

        let step = chain.solve_constrained_step(&state, &inputs, dt, ig.substeps);
        let (next, acc) = match step {
            Ok(v) if v.0.links.iter().all(|l| l.is_finite()) => v,
            Ok(_) => {
                failure = Some((t, "state became non-finite".into()));
                break;
            }
            Err(e) => {
                failure = Some((t, e.to_string()));
                break;
            }
        };

        let pr = if cfg.monitors.power_residuals {
            let mut shadow = state.clone();
            for (ls, vd) in shadow.links.iter_mut().zip(&rs.twists) {
                ls.twist = *vd;
            }
            match chain.accelerations(&shadow, &inputs) {
                Ok(d) => {
                    let parents: Vec<Option<usize>> = chain.joints.iter().map(|j| j.parent).collect();
                    let children: Vec<usize> = chain.joints.iter().map(|j| j.child).collect();
                    Some(power_residuals(&acc.interaction, &d.interaction, &errors, &parents, &children))
                }
                Err(e) => {
                    failure = Some((t, format!("desired-trajectory constraint solve: {e}")));
                    break;
                }
            }
        } else {
            None
        };

        if adaptive {
            for i in 0..n {
                let link = &chain.links[i];
                let ls = &state.links[i];
                let mut m = measure(link, ls, &acc.twist_dot[i], &acc.qddot[i], &g, acfg.config.strain_source);
                if acfg.config.noise > 0.0 {
                    for c in m.dynamic.iter_mut() {
                        *c += acfg.config.noise * c.abs() * unit.sample(&mut rng);
                    }
                    for c in m.strain.iter_mut() {
                        *c += acfg.config.noise * c.abs() * unit.sample(&mut rng);
                    }
                }
                let yv = regressor_v(link, ls, &acc.twist_dot[i], &g);
                let yxi = regressor_xi(link, ls);
                let (ev, exi) = residuals(&yv, &yxi, &m, &adapt[i].s_hat);
                let gamma = lumped_gamma(&yv.y, &ev, &yxi.0, &exi);
                adapt[i].gramian.push(&stack(&yv.y, &yxi.0));
                adapt[i].update(&gamma, dt);
            }
        }

        let energy = elastic_energies(&chain.links, &state);
        let nu: Vec<f64> = (0..n).map(|i| lyapunov(&errors[i], &mon.masses[i])).collect();
        let nu_aug: Vec<f64> = (0..n)
            .map(|i| {
                if adaptive {
                    augmented_lyapunov(nu[i], &(s_true[i] - adapt[i].s_hat), &acfg.config.gains)
                } else {
                    nu[i]
                }
            })
            .collect();
        let pe: Vec<Option<f64>> =
            (0..n).map(|i| if adaptive { adapt[i].gramian.min_eigenvalue(&active[i]).value() } else { None }).collect();
        let record = StabilityRecord {
            v_total: nu.iter().sum(),
            v_aug_total: nu_aug.iter().sum(),
            nu,
            nu_aug,
            alpha: mon.alpha.clone(),
            p: pr.as_ref().map(|p| p.per_link.clone()).unwrap_or_default(),
            p_sum: pr.as_ref().map(|p| p.total).unwrap_or(0.0),
            pair_sums: pr.as_ref().map(|p| p.pair_sums.clone()).unwrap_or_default(),
            energy,
        };
        if let Some(p) = &pr {
            summary.max_abs_p_sum = summary.max_abs_p_sum.max(p.total.abs());
            if !p.telescopes(1e-6, 1e-9) {
                summary.telescoping_violations += 1;
            }
        }

        let angles: Vec<f64> = (0..chain.joints.len()).flat_map(|j| chain.joint_angles(&state, j)).collect();
        let q_ref = rs.joint.flat_q();
        if t >= env_start {
            for (a, b) in angles.iter().zip(&q_ref) {
                sq_err += (b - a).powi(2);
                sq_count += 1;
            }
        }
        let tips: Vec<Vec3> = chain.links.iter().zip(&state.links).map(|(l, s)| l.tip_deflection(&s.def)).collect();
        let flat_tau: Vec<f64> = torques.iter().flatten().copied().collect();
        let perr: Vec<ParamVector> =
            (0..n).map(|i| (adapt[i].s_hat - s_true[i]).component_div(&s_true[i])).collect();
        let residual = chain.max_constraint_residual(&state);

        if let Some(w) = writers.as_deref_mut() {
            let mut row: Vec<f64> = vec![t];
            for ls in &state.links {
                row.extend(ls.twist.to_vec6().iter());
            }
            for e in &errors {
                row.extend(e.iter());
            }
            row.extend(&angles);
            row.extend(&q_ref);
            row.extend(&flat_tau);
            for tip in &tips {
                row.extend(tip.iter());
            }
            for i in 0..n {
                row.extend(adapt[i].s_hat.iter());
                row.extend(perr[i].iter());
            }
            for i in 0..n {
                row.push(record.nu[i]);
                row.push(record.nu_aug[i]);
                row.push(record.p.get(i).copied().unwrap_or(0.0));
                row.push(record.energy[i]);
                row.push(pe[i].unwrap_or(f64::NAN));
            }
            row.extend([record.v_total, record.v_aug_total, record.p_sum, residual, f64::from(u8::from(saturated))]);
            if k % ig.decimation == 0 {
                w.log.write_record(row.iter().map(|x| format_float(*x)))?;
            }
            if k % def_every == 0 {
                write_deformation(&mut w.deformation, chain, &state, cfg.output.deformation_points)?;
            }
        }

        summary.max_abs_torque = summary.max_abs_torque.max(flat_tau.iter().fold(0.0, |a, x| a.max(x.abs())));
        summary.saturated_samples += usize::from(saturated);
        summary.max_twist_error = summary.max_twist_error.max(errors.iter().map(|e| e.amax()).fold(0.0, f64::max));
        for tip in &tips {
            summary.peak_tip_axial = summary.peak_tip_axial.max(tip.x.abs());
            summary.peak_tip_bending_y = summary.peak_tip_bending_y.max(tip.y.abs());
            summary.peak_tip_bending_z = summary.peak_tip_bending_z.max(tip.z.abs());
        }
        summary.max_constraint_residual = summary.max_constraint_residual.max(residual);

        log.t.push(t);
        log.joint_angles.push(angles);
        log.joint_reference.push(q_ref);
        log.torques.push(flat_tau);
        log.twist_errors.push(errors);
        log.tip.push(tips);
        log.stability.push(record);
        log.s_hat_in_bounds.push(adapt.iter().all(|a| (0..N_PARAMS).all(|k| a.s_hat[k] >= a.lower[k] && a.s_hat[k] <= a.upper[k])));
        log.param_errors.push(perr);
        log.pe_min.push(pe);
        log.constraint_residual.push(residual);

        state = next;
    }

    if failure.is_none() {
        summary.max_constraint_residual = summary.max_constraint_residual.max(chain.max_constraint_residual(&state));
    }
    finish_summary(cfg, kind, chain, &mon, &s_true, &adapt, &log, &mut summary, env_start, sq_err, sq_count);
    summary.completed = failure.is_none();
    summary.samples = log.t.len();
    summary.t_end = state.t;
    summary.wall_time_s = started.elapsed().as_secs_f64();
    Ok((summary, log, failure))
}

#[allow(clippy::too_many_arguments)]
fn finish_summary(
    cfg: &ScenarioConfig,
    kind: ControllerKind,
    chain: &Chain,
    mon: &Monitors,
    s_true: &[ParamVector],
    adapt: &[AdaptState],
    log: &RunLog,
    summary: &mut RunSummary,
    env_start: f64,
    sq_err: f64,
    sq_count: usize,
) {
    let adaptive = kind == ControllerKind::SlpcAdaptive;
    summary.rms_joint_error = if sq_count > 0 { (sq_err / sq_count as f64).sqrt() } else { 0.0 };
    let total_energy: Vec<f64> = log.stability.iter().map(|r| r.energy.iter().sum()).collect();
    summary.max_elastic_energy = total_energy.iter().copied().fold(0.0, f64::max);
    summary.energy_growth_ratio = growth_ratio(&total_energy);
    summary.decay_rate = mon.alpha.iter().copied().fold(f64::INFINITY, f64::min);
    if adaptive {
        let pe_min = log.pe_min.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
        summary.pe_min_eigenvalue = pe_min.is_finite().then_some(pe_min);
        summary.final_param_errors = adapt
            .iter()
            .zip(s_true)
            .map(|(a, s)| (a.s_hat - s).component_div(s).iter().copied().collect())
            .collect();
        if cfg.monitors.bound_samples > 0 {
            let vd_bound = log
                .t
                .iter()
                .enumerate()
                .map(|(k, _)| log.twist_errors[k].iter().map(|e| e.norm()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            let env = OperatingEnvelope { omega_max: 3.0, v_max: 3.0, q_max: 1e-2, qdot_max: 1.0 };
            summary.bound_constants = (0..chain.links.len())
                .map(|i| {
                    adaptive_bound_constants(
                        &chain.links[i],
                        &mon.gains[i],
                        &cfg.adaptation.config.gains,
                        vd_bound,
                        &s_true[i],
                        &adapt[i].lower,
                        &adapt[i].upper,
                        &env,
                        &chain.g,
                        cfg.monitors.bound_samples,
                        cfg.seed.wrapping_add(i as u64 * 1_000_003),
                        cfg.monitors.young_eps,
                    )
                })
                .collect();
        }
    }
    if !log.t.is_empty() {
        let (series, offset, rate) = if adaptive {
            let c_q: f64 = summary.bound_constants.iter().map(|b| b.c_q).sum();
            (log.stability.iter().map(|r| r.v_aug_total).collect::<Vec<_>>(), c_q, measured_mu(cfg, adapt, summary.decay_rate))
        } else {
            (log.stability.iter().map(|r| r.v_total).collect(), 0.0, summary.decay_rate)
        };
        summary.envelope = Some(decay_envelope_check(
            &log.t,
            &series,
            rate,
            offset,
            env_start,
            cfg.monitors.envelope_slack,
            cfg.monitors.envelope_floor,
        ));
    }
}

/// `μ = min_i min(α_i, β_i − ε)` with `β_i = 2 λ_min(ȲᵀȲ) λ_min(Λ⁻¹)` from the
/// window-averaged Gramian.
fn measured_mu(cfg: &ScenarioConfig, adapt: &[AdaptState], alpha: f64) -> f64 {
    let lam_inv_min = 1.0 / cfg.adaptation.config.gains.iter().copied().fold(0.0, f64::max);
    let beta = adapt
        .iter()
        .map(|a| {
            let g = a.gramian.integral() / cfg.adaptation.pe_window;
            2.0 * g.symmetric_eigenvalues().min().max(0.0) * lam_inv_min
        })
        .fold(f64::INFINITY, f64::min);
    alpha.min(beta - cfg.monitors.young_eps).max(0.0)
}

#[allow(clippy::too_many_arguments)]
fn control_torques(
    cfg: &ScenarioConfig,
    kind: ControllerKind,
    chain: &Chain,
    state: &ChainState,
    rs: &ReferenceSample,
    gains: &[Mat6],
    adapt: &[AdaptState],
    g: &Vec3,
) -> Result<Vec<Vec<f64>>, ControlError> {
    let n = chain.links.len();
    let wrenches: Vec<Wrench> = match kind {
        ControllerKind::Pd => {
            return Ok((0..chain.joints.len())
                .map(|j| {
                    let th = chain.joint_angles(state, j);
                    let rate = chain.joint_rates(state, j);
                    pd_joint(&rs.joint.q[j], &th, &rs.joint.qdot[j], &rate, &cfg.gains.pd[j])
                })
                .collect())
        }
        ControllerKind::Slpc => (0..n)
            .map(|i| slpc_nominal(&chain.links[i], &state.links[i], &rs.twists[i], &rs.twist_rates[i], &gains[i], g))
            .collect(),
        ControllerKind::SlpcAdaptive => (0..n)
            .map(|i| {
                slpc_adaptive(
                    &chain.links[i],
                    &state.links[i],
                    &rs.twists[i],
                    &rs.twist_rates[i],
                    &gains[i],
                    g,
                    &adapt[i].s_hat,
                )
            })
            .collect(),
        ControllerKind::Ptc => (0..n).map(|i| ptc(&rs.twists[i], &state.links[i].twist, &gains[i])).collect(),
    };
    Ok(wrench_to_actuation(chain, state, &wrenches)?.torques)
}

fn write_deformation(
    w: &mut csv::Writer<BufWriter<File>>,
    chain: &Chain,
    state: &ChainState,
    points: usize,
) -> Result<(), RunError> {
    for (i, (l, ls)) in chain.links.iter().zip(&state.links).enumerate() {
        if l.n_modes() == 0 {
            continue;
        }
        let (a, c) = (l.params.a, l.params.c);
        for p in 0..points {
            let xi = a + (c - a) * p as f64 / (points - 1) as f64;
            let r = eval_deformation(&l.basis, &ls.def, xi).map_err(|e| RunError::Io(e.to_string()))?[0];
            w.write_record([
                format_float(state.t),
                i.to_string(),
                format_float(xi),
                format_float(r.x),
                format_float(r.y),
                format_float(r.z),
            ])?;
        }
    }
    Ok(())
}

/// Shortest representation that round-trips, so reruns are bit-identical.
fn format_float(x: f64) -> String {
    format!("{x:?}")
}

impl From<ControlError> for RunError {
    fn from(e: ControlError) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<DynamicsError> for RunError {
    fn from(e: DynamicsError) -> Self {
        RunError::Io(e.to_string())
    }
}
