use clap::{Args, Parser, Subcommand, ValueEnum};
use flexsim::sim::{run_scenario, ConfigError, ScenarioConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "flexsim", version, about = "Flexible manipulator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV logs plus a summary.
    Run(Source),
    /// Check a scenario without running it.
    Validate(Source),
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML).
    config: Option<PathBuf>,
    /// Built-in scenario used instead of a file.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    /// Output directory, overriding the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Control period [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Final time [s].
    #[arg(long)]
    tf: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Nominal,
    Adaptive,
    Ptc,
    Pd,
    Compare,
}

impl Preset {
    fn text(self) -> &'static str {
        match self {
            Preset::Nominal => include_str!("../../../presets/nominal.toml"),
            Preset::Adaptive => include_str!("../../../presets/adaptive.toml"),
            Preset::Ptc => include_str!("../../../presets/ptc.toml"),
            Preset::Pd => include_str!("../../../presets/pd.toml"),
            Preset::Compare => include_str!("../../../presets/compare.toml"),
        }
    }
}

fn load(src: &Source) -> Result<ScenarioConfig, ConfigError> {
    let text = match (&src.config, src.preset) {
        (_, Some(p)) => p.text().to_string(),
        (Some(path), None) => {
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?
        }
        (None, None) => return Err(ConfigError::Invalid(vec!["give a scenario file or --preset".into()])),
    };
    let mut cfg: ScenarioConfig = toml::from_str(&text)?;
    if let Some(seed) = src.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = src.dt {
        cfg.integration.dt = dt;
    }
    if let Some(tf) = src.tf {
        cfg.integration.t_f = tf;
        cfg.trajectory.t_f = tf;
    }
    if let Some(out) = &src.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(src) => match load(&src) {
            Ok(cfg) => {
                println!("{}: OK", cfg.name);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
        Command::Run(src) => {
            let cfg = match load(&src) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let mut status = 0;
            for result in run_scenario(&cfg, Some(&cfg.output.dir)) {
                match result {
                    Ok(out) => {
                        let s = &out.summary;
                        println!(
                            "{} [{}]: {} samples in {:.1} s, max |tau| {:.2} N·m, rms joint error {:.3e} rad, peak tip bending y/z {:.3e}/{:.3e} m, written to {}",
                            s.name,
                            s.controller,
                            s.samples,
                            s.wall_time_s,
                            s.max_abs_torque,
                            s.rms_joint_error,
                            s.peak_tip_bending_y,
                            s.peak_tip_bending_z,
                            out.dir.as_deref().map(|d| d.display().to_string()).unwrap_or_default(),
                        );
                    }
                    Err(e) => {
                        eprintln!("{e}");
                        status = status.max(e.exit_code());
                    }
                }
            }
            finish(status)
        }
    }
}

fn finish(status: i32) -> ExitCode {
    ExitCode::from(u8::try_from(status).unwrap_or(1))
}
