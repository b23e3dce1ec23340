use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use polycd::harness::battery::product_identity_battery;
use polycd::harness::compare::{analyze_problem, predicted_rate};
use polycd::harness::experiment::{run_experiment, run_saa_experiment, ExperimentSpec, SaaSpec};
use polycd::harness::{compare, generate_problem, CompareOptions, Problem};
use polycd::{solvers, Scaling, SolverConfig, Variant};

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "polycd", version, about = "Projected block coordinate descent over polyhedra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write its trace as CSV.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "cyclic")]
        variant: Variant,
        #[arg(long, default_value = "newton-block")]
        scaling: Scaling,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0.25)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predicted asymptotic rate at the reference solution.
    Rates {
        #[arg(long)]
        problem: PathBuf,
        /// Evaluate the scaling and Hessian at λ* (the only supported mode).
        #[arg(long, required = true)]
        at_solution: bool,
        #[arg(long)]
        variant: Variant,
        /// Newton–Taylor order; selects that scaling for the centralized map.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        pi: Option<Vec<f64>>,
        #[arg(long, default_value = "newton-block")]
        scaling: Scaling,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicted against empirical rates for several variants.
    Compare {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "cyclic,jacobi,random")]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value = "newton-block")]
        scaling: Scaling,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequential SAA study described by a JSON spec.
    Saa {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized check of the block product identity; fails on any miss.
    LemmaCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a problem file from a seeded family.
    Gen {
        #[arg(long)]
        family: String,
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment spec (problem source, config, trials, outputs).
    Experiment {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Solve {
            problem,
            variant,
            scaling,
            beta,
            sigma,
            seed,
            max_iters,
            tol,
            trace,
        } => {
            let p = Problem::load(&problem)?;
            let cfg = SolverConfig {
                beta,
                sigma,
                variant,
                scaling,
                seed,
                max_iters,
                stop_tol: tol,
                ..SolverConfig::default()
            };
            let t = solvers::run(&p.objective, &p.polyhedron, &p.start, &cfg)?;
            if let Some(path) = trace {
                t.save_csv(path)?;
            }
            let last = t.last();
            let summary = json!({
                "iterations": last.k,
                "converged": t.converged,
                "start_projected": t.start_projected,
                "f": last.f,
                "residual": last.residual,
                "lambda": last.lambda.as_slice(),
                "active_set": last.active_set.indices(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::Rates {
            problem,
            at_solution: _,
            variant,
            q,
            pi,
            scaling,
            out,
        } => {
            let p = Problem::load(&problem)?;
            let scaling = match q {
                Some(_) if variant != Variant::Centralized => {
                    return Err("--q applies to the centralized variant only".into())
                }
                Some(q) => Scaling::NewtonTaylor(q),
                None => scaling,
            };
            let cfg = SolverConfig {
                pi,
                ..SolverConfig::new(variant, scaling)
            };
            let sol = analyze_problem(&p)?;
            let (report, rm, _) = predicted_rate(&p.objective, &sol, &cfg)?;
            let doc = json!({
                "variant": variant,
                "scaling": cfg.scaling.to_string(),
                "solution": sol.lambda.as_slice(),
                "active_set": sol.active_set.indices(),
                "strict_complementarity": sol.strict_complementarity,
                "reduced_dim": rm.reduced_dim(),
                "rate": report,
            });
            write_json(&out, &doc)?;
            println!("{}", report.spectral_radius);
            Ok(true)
        }
        Command::Compare {
            problem,
            variants,
            trials,
            scaling,
            seed,
            out,
        } => {
            let p = Problem::load(&problem)?;
            let opts = CompareOptions {
                scaling,
                seed,
                trials,
                ..CompareOptions::default()
            };
            let configs: Vec<SolverConfig> = variants.iter().map(|&v| opts.config(v)).collect();
            let report = compare(&p, &configs, &opts)?;
            write_json(&out, &report)?;
            for v in &report.variants {
                // random variants are judged on the expected f-gap
                let (pred, emp) = if v.variant == Variant::Random {
                    (v.predicted_f_rate, v.empirical_f_rate)
                } else {
                    (v.predicted.spectral_radius, v.empirical_rate)
                };
                println!(
                    "{:<12} predicted {:.6}  empirical {}",
                    v.variant.to_string(),
                    pred,
                    emp.map_or("n/a".to_string(), |r| format!("{r:.6}"))
                );
            }
            Ok(true)
        }
        Command::Saa { spec, out } => {
            let spec = SaaSpec::load(&spec)?;
            let r = run_saa_experiment(&spec, &out)?;
            println!(
                "frobenius relative error {:.4}, pinned/free rms {}",
                r.diagnostics.frobenius_relative_error,
                r.pinned_to_free_rms.map_or("n/a".to_string(), |x| format!("{x:.3e}"))
            );
            Ok(true)
        }
        Command::LemmaCheck { trials, seed } => {
            let r = product_identity_battery(trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(r.passed())
        }
        Command::Gen {
            family,
            params,
            seed,
            out,
        } => {
            let params: serde_json::Value = serde_json::from_str(&params)?;
            let file = generate_problem(&family, &params, seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            file.save(&out)?;
            Ok(true)
        }
        Command::Experiment { spec } => {
            let base = spec.parent().map(Path::to_path_buf).unwrap_or_default();
            let s = ExperimentSpec::load(&spec)?;
            let r = run_experiment(&s, &base)?;
            println!(
                "predicted {:.6}  empirical {}",
                r.result.predicted.spectral_radius,
                r.result.empirical_rate.map_or("n/a".to_string(), |x| format!("{x:.6}"))
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
