//! Command-line surface: simulation runs, verification checks, and
//! convergence studies over TOML run configurations.
//!
//! Exit codes: 0 = pass/completion (inconclusive statistical verdicts are
//! completions, not crashes), 1 = decisive statistical failure, 2 = config
//! error, 3 = numerical abort (overflow or explosion guard).

use clap::{Parser, Subcommand, ValueEnum};
use latbranch::checks::{
    duality_check, generator_sweep, martingale_residual, theta_monotonicity, CheckSettings,
    EngineKind,
};
use latbranch::config::{reference_config, resolve, OutputFormat, ResolvedConfig, RunConfig};
use latbranch::diffusion::{moment_report, DiffusionEngine};
use latbranch::dual::{simulate_dual, total_dual_mass};
use latbranch::error::SimError;
use latbranch::field::Field;
use latbranch::generator::TestFunction;
use latbranch::output::{
    write_diffusion_csv, write_dual_csv, write_json, write_particle_csv, write_table_csv,
    OutputMeta,
};
use latbranch::particle::{init_particles, ParticleEngine};
use latbranch::runner::run_replicates_fallible;
use latbranch::stats::{Summary, Verdict};
use latbranch::studies::{
    diffusion_limit_study, domain_growth_study, dual_mass_growth_study, Budget,
};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "latbranch",
    version,
    about = "Monte Carlo engines and verification harness for self-regulating \
             multi-type branching random walks on finite lattices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; the built-in reference scenario when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replicates per Monte Carlo estimate (overrides the config).
    #[arg(long, global = true)]
    replicates: Option<u64>,

    /// Worker threads: 0 = all cores, 1 = sequential (overrides the config).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides config and LATBRANCH_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Artifact formats to write.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Exact Gillespie run of the particle system; trajectory CSV + summary.
    SimulateParticle,
    /// Euler–Maruyama run of the diffusion system; trajectory CSV + moments.
    SimulateDiffusion,
    /// Two-phase run of the dual process; trajectory CSV + FK statistics.
    SimulateDual,
    /// Randomized sweep of the closed-form generator identity.
    CheckGenerator,
    /// Two-sided Monte Carlo check of the exponential duality.
    CheckDuality,
    /// Martingale residuals for both engines over the configured functions.
    CheckMartingale,
    /// Particle-vs-diffusion moment gaps over a particle-mass grid.
    StudyDiffusionLimit,
    /// Origin statistics across growing torus sides.
    StudyDomainGrowth,
    /// Growth of the total dual mass with the domination coupling.
    StudyDualMass,
    /// Theta-monotonicity of the coexistence functional under coupling.
    StudyCoexistence,
}

fn main() {
    std::process::exit(run_cli());
}

fn run_cli() -> i32 {
    let cli = Cli::parse();

    let raw = match load_config(&cli) {
        Ok(raw) => raw,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let mut cfg = match resolve(raw) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.raw.run.seed = seed;
    }
    if let Some(reps) = cli.replicates {
        cfg.raw.run.replicates = reps;
    }
    if let Some(threads) = cli.threads {
        cfg.raw.run.threads = threads;
    }
    // Flag overrides participate in the hash like config entries.
    cfg.hash = latbranch::config::config_hash(&cfg.raw);

    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.raw.run.out.clone().map(PathBuf::from))
        .or_else(|| std::env::var("LATBRANCH_OUT").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output directory {out_dir:?}: {e}");
        return 2;
    }
    let format = match cli.format {
        Some(FormatArg::Csv) => OutputFormat::Csv,
        Some(FormatArg::Json) => OutputFormat::Json,
        Some(FormatArg::Both) => OutputFormat::Both,
        None => cfg.raw.run.format.unwrap_or(OutputFormat::Both),
    };

    match dispatch(&cli.command, &cfg, &out_dir, format) {
        Ok(verdict) => match verdict {
            Verdict::Fail => 1,
            Verdict::Pass | Verdict::Inconclusive => 0,
        },
        Err(SimError::Config(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e @ (SimError::ExplosionGuard { .. } | SimError::NonFinite { .. })) => {
            eprintln!("error: {e}");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {path:?}: {e}"))?;
            let parsed = toml::from_str(&text).map_err(|e| format!("config: {e}"))?;
            Ok(parsed)
        }
        None => match cli.command {
            // Simulation of arbitrary models can run on the minimal default;
            // checks and studies default to the documented reference scenario.
            Command::SimulateParticle | Command::SimulateDiffusion | Command::SimulateDual => {
                Ok(reference_config())
            }
            _ => Ok(reference_config()),
        },
    }
}

fn write_formats(
    format: OutputFormat,
    csv: impl FnOnce() -> std::io::Result<()>,
    json: impl FnOnce() -> std::io::Result<()>,
) -> Result<(), SimError> {
    match format {
        OutputFormat::Csv => csv()?,
        OutputFormat::Json => json()?,
        OutputFormat::Both => {
            csv()?;
            json()?;
        }
    }
    Ok(())
}

fn dispatch(
    command: &Command,
    cfg: &ResolvedConfig,
    out_dir: &std::path::Path,
    format: OutputFormat,
) -> Result<Verdict, SimError> {
    let meta = OutputMeta::from_config(cfg);
    let run = &cfg.raw.run;
    let settings = CheckSettings {
        t: run.horizon,
        dt: cfg.raw.engine.dt,
        replicates: run.replicates,
        seed: run.seed,
        threads: run.threads,
        fk_clip: cfg.raw.engine.fk_clip,
    };
    let budget = Budget {
        seconds: run.budget_seconds,
    };

    match command {
        Command::SimulateParticle => {
            let obs = cfg.observation_times();
            let eps = cfg.raw.engine.eps;
            let trajectories = run_replicates_fallible(
                run.replicates,
                run.threads,
                |rep| -> Result<_, SimError> {
                    let state = init_particles(&cfg.geo, &cfg.params, &cfg.x0, eps)?;
                    let mut eng =
                        ParticleEngine::new(&cfg.geo, &cfg.params, state, run.seed, rep);
                    eng.max_events = cfg.raw.engine.max_events;
                    if cfg.raw.engine.tau_leap {
                        eng.run_tau_leap(cfg.raw.engine.tau.unwrap(), run.horizon)?;
                        Ok(vec![latbranch::particle::ParticleSnapshot {
                            time: run.horizon,
                            counts: eng.state().counts.clone(),
                        }])
                    } else {
                        eng.run(run.horizon, &obs)
                    }
                },
            )?;

            #[derive(Serialize)]
            struct TimeRow {
                time: f64,
                total_mass: Summary,
                rho_weighted_mass: Summary,
            }
            #[derive(Serialize)]
            struct ParticleSummary {
                times: Vec<TimeRow>,
            }
            let times: Vec<TimeRow> = (0..trajectories[0].len())
                .map(|i| {
                    let totals: Vec<f64> = trajectories
                        .iter()
                        .map(|t| t[i].counts.total() as f64 * eps)
                        .collect();
                    let rho_mass: Vec<f64> = trajectories
                        .iter()
                        .map(|t| {
                            cfg.geo
                                .rho_norm(&t[i].counts.map(|c| c as f64 * eps), 1.0)
                        })
                        .collect();
                    TimeRow {
                        time: trajectories[0][i].time,
                        total_mass: Summary::from_slice(&totals),
                        rho_weighted_mass: Summary::from_slice(&rho_mass),
                    }
                })
                .collect();
            write_formats(
                format,
                || {
                    write_particle_csv(
                        &out_dir.join("particle_trajectories.csv"),
                        &meta,
                        eps,
                        &trajectories,
                    )
                },
                || {
                    write_json(
                        &out_dir.join("particle_summary.json"),
                        &meta,
                        &ParticleSummary { times },
                    )
                },
            )?;
            Ok(Verdict::Pass)
        }

        Command::SimulateDiffusion => {
            let obs = cfg.observation_times();
            let trajectories = run_replicates_fallible(
                run.replicates,
                run.threads,
                |rep| -> Result<_, SimError> {
                    let mut eng = DiffusionEngine::new(
                        &cfg.geo,
                        &cfg.params,
                        cfg.x0.clone(),
                        cfg.raw.engine.dt,
                        run.seed,
                        rep,
                    );
                    eng.run(run.horizon, &obs)
                },
            )?;
            let report = moment_report(&trajectories, &cfg.geo, &cfg.params, &[1, 2], &[1.0, 2.0])?;
            write_formats(
                format,
                || {
                    write_diffusion_csv(
                        &out_dir.join("diffusion_trajectories.csv"),
                        &meta,
                        &trajectories,
                    )
                },
                || write_json(&out_dir.join("diffusion_summary.json"), &meta, &report),
            )?;
            Ok(Verdict::Pass)
        }

        Command::SimulateDual => {
            let obs = cfg.observation_times();
            let results = run_replicates_fallible(
                run.replicates,
                run.threads,
                |rep| -> Result<_, SimError> {
                    simulate_dual(
                        &cfg.alpha0,
                        &cfg.kappa0,
                        &cfg.geo,
                        &cfg.params,
                        cfg.raw.engine.dt,
                        run.horizon,
                        &obs,
                        run.seed,
                        rep,
                    )
                },
            )?;

            #[derive(Serialize)]
            struct DualSummary {
                fk_integral: Summary,
                total_dual_mass_final: Summary,
                clamped_steps_total: u64,
            }
            let fks: Vec<f64> = results
                .iter()
                .map(|r| r.final_state.fk_integral)
                .collect();
            let masses: Vec<f64> = results
                .iter()
                .map(|r| total_dual_mass(&r.final_state.alpha))
                .collect();
            let summary = DualSummary {
                fk_integral: Summary::from_slice(&fks),
                total_dual_mass_final: Summary::from_slice(&masses),
                clamped_steps_total: results.iter().map(|r| r.clamp_count).sum(),
            };
            let snapshots: Vec<_> = results.into_iter().map(|r| r.snapshots).collect();
            write_formats(
                format,
                || {
                    write_dual_csv(
                        &out_dir.join("dual_trajectories.csv"),
                        &meta,
                        cfg.params.types,
                        &snapshots,
                    )
                },
                || write_json(&out_dir.join("dual_summary.json"), &meta, &summary),
            )?;
            Ok(Verdict::Pass)
        }

        Command::CheckGenerator => {
            let points = if run.replicates == 100 {
                10_000
            } else {
                run.replicates
            };
            let report = generator_sweep(points, run.seed, run.threads);
            write_json(&out_dir.join("generator_check.json"), &meta, &report)?;
            println!(
                "generator identity: max residual {:.3e} (tol {:.0e}), fd {:.3e} (tol {:.0e}) -> {}",
                report.max_residual,
                report.residual_tolerance,
                report.max_fd_rel,
                report.fd_tolerance,
                report.verdict
            );
            Ok(report.verdict)
        }

        Command::CheckDuality => {
            let report = duality_check(
                &cfg.geo,
                &cfg.params,
                &cfg.x0,
                &cfg.alpha0,
                &cfg.kappa0,
                &settings,
            )?;
            write_json(&out_dir.join("duality_check.json"), &meta, &report)?;
            println!(
                "duality: lhs {:.6} ± {:.6}, rhs {:.6} ± {:.6}, z {:+.2} -> {}",
                report.lhs.mean,
                report.lhs.se,
                report.rhs.mean,
                report.rhs.se,
                report.z,
                report.verdict
            );
            Ok(report.verdict)
        }

        Command::CheckMartingale => {
            let fns = default_test_functions(cfg);
            let mut reports = Vec::new();
            let mut verdict = Verdict::Pass;
            for engine in [EngineKind::Particle, EngineKind::Diffusion] {
                for (name, f) in &fns {
                    let rep = martingale_residual(
                        f,
                        engine,
                        &cfg.geo,
                        &cfg.params,
                        &cfg.x0,
                        cfg.raw.engine.eps,
                        0.01,
                        &settings,
                    )?;
                    println!(
                        "martingale {name} on {:?}: residual {:+.5} ± {:.5}, z {:+.2} -> {}",
                        engine, rep.residual.mean, rep.residual.se, rep.z, rep.verdict
                    );
                    if rep.verdict == Verdict::Fail {
                        verdict = Verdict::Fail;
                    } else if rep.verdict == Verdict::Inconclusive && verdict == Verdict::Pass {
                        verdict = Verdict::Inconclusive;
                    }
                    reports.push((name.clone(), rep));
                }
            }
            #[derive(Serialize)]
            struct Named {
                function: String,
                #[serde(flatten)]
                report: latbranch::checks::MartingaleReport,
            }
            let named: Vec<Named> = reports
                .into_iter()
                .map(|(function, report)| Named { function, report })
                .collect();
            write_json(&out_dir.join("martingale_check.json"), &meta, &named)?;
            Ok(verdict)
        }

        Command::StudyDiffusionLimit => {
            let eps_grid = cfg
                .raw
                .study
                .eps_grid
                .clone()
                .unwrap_or_else(|| vec![1.0, 0.25, 0.0625]);
            let study = diffusion_limit_study(
                &cfg.geo,
                &cfg.params,
                &cfg.x0,
                run.horizon,
                &eps_grid,
                cfg.raw.engine.dt,
                run.replicates,
                run.seed,
                run.threads,
                budget,
            )?;
            let rows: Vec<String> = study
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        r.eps,
                        r.particle_mean.mean,
                        r.particle_mean.se,
                        study.diffusion_mean.mean,
                        study.diffusion_mean.se,
                        r.gap,
                        r.gap_se
                    )
                })
                .collect();
            write_formats(
                format,
                || {
                    write_table_csv(
                        &out_dir.join("diffusion_limit.csv"),
                        &meta,
                        "eps,particle_mean,particle_se,diffusion_mean,diffusion_se,gap,gap_se",
                        &rows,
                    )
                },
                || write_json(&out_dir.join("diffusion_limit.json"), &meta, &study),
            )?;
            println!("diffusion limit: {}", study.verdict);
            Ok(study.verdict)
        }

        Command::StudyDomainGrowth => {
            let side_grid = cfg
                .raw
                .study
                .side_grid
                .clone()
                .unwrap_or_else(|| vec![3, 5, 9]);
            let steps: Vec<(Vec<i64>, f64)> = cfg
                .raw
                .geography
                .step
                .iter()
                .map(|s| (s.offset.clone(), s.prob))
                .collect();
            let rho = latbranch::geometry::RhoSpec {
                r: cfg.raw.geography.r,
                beta: latbranch::geometry::BetaSpec::Uniform,
                n_max: cfg.raw.geography.n_max,
                tail_tol: cfg.raw.geography.tail_tol,
            };
            let window = cfg.observation_times();
            let study = domain_growth_study(
                cfg.raw.geography.dim,
                &steps,
                &rho,
                &cfg.params,
                cfg.raw.initial.value.unwrap_or(1.0),
                cfg.raw.engine.eps,
                &window,
                &side_grid,
                run.replicates,
                run.seed,
                run.threads,
                budget,
            )?;
            let rows: Vec<String> = study
                .rows
                .iter()
                .map(|r| format!("{},{},{}", r.side, r.origin_stat.mean, r.origin_stat.se))
                .collect();
            write_formats(
                format,
                || {
                    write_table_csv(
                        &out_dir.join("domain_growth.csv"),
                        &meta,
                        "side,origin_mean,origin_se",
                        &rows,
                    )
                },
                || write_json(&out_dir.join("domain_growth.json"), &meta, &study),
            )?;
            println!("domain growth: {}", study.verdict);
            Ok(study.verdict)
        }

        Command::StudyDualMass => {
            let t_grid = cfg
                .raw
                .study
                .t_grid
                .clone()
                .unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
            let study = dual_mass_growth_study(
                &cfg.geo,
                &cfg.params,
                &cfg.alpha0,
                &cfg.kappa0,
                &t_grid,
                cfg.raw.engine.dt,
                run.replicates,
                run.seed,
                run.threads,
                budget,
            )?;
            let rows: Vec<String> = study
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{}",
                        r.t,
                        r.total_mass_median.median,
                        r.total_mass_median.lo,
                        r.total_mass_median.hi,
                        r.total_mass_mean.mean,
                        r.total_mass_mean.se
                    )
                })
                .collect();
            write_formats(
                format,
                || {
                    write_table_csv(
                        &out_dir.join("dual_mass.csv"),
                        &meta,
                        "t,median,median_lo,median_hi,mean,se",
                        &rows,
                    )
                },
                || write_json(&out_dir.join("dual_mass.json"), &meta, &study),
            )?;
            println!(
                "dual mass growth: {} (domination fraction {:.3})",
                study.verdict, study.domination_fraction
            );
            Ok(study.verdict)
        }

        Command::StudyCoexistence => {
            let theta_tilde = cfg.raw.study.theta_tilde.unwrap_or(0.5);
            let theta = cfg.raw.study.theta.unwrap_or(1.0);
            let report = theta_monotonicity(
                &cfg.geo,
                &cfg.params,
                theta_tilde,
                theta,
                cfg.geo.origin(),
                &settings,
            )?;
            write_json(&out_dir.join("coexistence.json"), &meta, &report)?;
            println!(
                "coexistence monotonicity: lhs {:.5}, scaled rhs {:.5}, diff {:+.5} ± {:.5} -> {}",
                report.lhs.mean,
                report.rhs_scaled.mean,
                report.diff.mean,
                report.diff.se,
                report.verdict
            );
            Ok(report.verdict)
        }
    }
}

/// The three documented exponential-monomial test functions, adapted to the
/// configured geography and type count.
fn default_test_functions(cfg: &ResolvedConfig) -> Vec<(String, TestFunction)> {
    let sites = cfg.geo.n_sites();
    let types = cfg.params.types;
    let origin = cfg.geo.origin();
    let mut fns = Vec::new();

    let mut mu = vec![0.0; sites];
    mu[origin] = 1.0;
    fns.push((
        "exp_origin".to_string(),
        TestFunction::separating(mu.clone(), Field::zeros(sites, types)).unwrap(),
    ));

    let mut kappa = Field::<u32>::zeros(sites, types);
    kappa.set(origin, 0, 1);
    fns.push((
        "first_moment_origin".to_string(),
        TestFunction::separating(mu.clone(), kappa).unwrap(),
    ));

    let mut kappa2 = Field::<u32>::zeros(sites, types);
    if types >= 2 {
        kappa2.set(origin, 0, 1);
        kappa2.set(origin, 1, 1);
    } else {
        kappa2.set(origin, 0, 2);
    }
    let mut mu2 = mu;
    if sites > 1 {
        mu2[1] = 0.5;
    }
    fns.push((
        "pair_moment_origin".to_string(),
        TestFunction::separating(mu2, kappa2).unwrap(),
    ));
    fns
}
