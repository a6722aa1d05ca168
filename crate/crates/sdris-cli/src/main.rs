//! `sdris`: generate benchmark data, fit feature maps, sweep the tradeoff
//! parameter, and compare against linear baselines.
//!
//! All structured results are JSON with a `format_version` field and the
//! fully resolved configuration embedded; curves are CSV. Outputs are
//! written atomically (temp file + rename). Exit code is 0 only when every
//! requested computation converged.

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sdris::baselines::{cpca, opca, pca, reduce, SampleMatrix};
use sdris::datasets::{
    load_csv, save_csv, synth_conflicting, synth_nuisance_classes, write_atomic, NuisanceSpec,
    SynthSpec,
};
use sdris::dist::JointTable;
use sdris::eval::{
    model_select, reduce_by_expectation, Candidate, MetricKind, ReducedSet,
};
use sdris::maxent::SolverOptions;
use sdris::optimizer::{fit, sweep_lambda, FitOptions, Objective, SweepOptions};

const FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "sdris", version, about = "Sufficient dimensionality reduction with irrelevance statistics")]
struct Cli {
    /// Worker threads for restarts, sweep points, and splits (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FitFlags {
    /// Relevance table CSV.
    #[arg(long)]
    plus: PathBuf,
    /// Irrelevance table CSV.
    #[arg(long)]
    minus: PathBuf,
    /// Feature dimension.
    #[arg(short, long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inner maxent residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Outer gradient-ascent iteration cap.
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Gradient tolerance for outer convergence.
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    /// Number of starts (first is deterministic, rest random).
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

impl FitFlags {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_outer_iters: self.max_iters,
            grad_tol: self.grad_tol,
            restarts: self.restarts,
            seed: self.seed,
            solver: SolverOptions {
                tolerance: self.tol,
                ..SolverOptions::default()
            },
            ..FitOptions::default()
        }
    }

    fn config_json(&self) -> Value {
        json!({
            "plus": self.plus.display().to_string(),
            "minus": self.minus.display().to_string(),
            "d": self.d,
            "seed": self.seed,
            "tol": self.tol,
            "max_iters": self.max_iters,
            "grad_tol": self.grad_tol,
            "restarts": self.restarts,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark into a directory.
    Synth {
        /// Generator: "conflicting" or "nuisance".
        #[arg(long, default_value = "conflicting")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        nx: usize,
        #[arg(long, default_value_t = 16)]
        ny: usize,
        #[arg(long, default_value_t = 2.0)]
        strong: f64,
        #[arg(long, default_value_t = 1.0)]
        weak: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 12)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        signal_dims: usize,
        #[arg(long, default_value_t = 8)]
        nuisance_dims: usize,
        #[arg(long, default_value_t = 1.0)]
        signal_strength: f64,
        #[arg(long, default_value_t = 3.0)]
        nuisance_strength: f64,
    },
    /// Fit a feature map at a fixed λ.
    Fit {
        #[command(flatten)]
        flags: FitFlags,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep λ over a grid, tracing both warm-started branches.
    Sweep {
        #[command(flatten)]
        flags: FitFlags,
        /// Grid as comma-separated values or start:stop:count.
        #[arg(long)]
        lambda_grid: String,
        /// Output prefix; writes <out>.json and <out>.csv.
        #[arg(long)]
        out: PathBuf,
        /// Envelope jump threshold (default max(0.1·I[p⁺], 0.01)).
        #[arg(long)]
        jump_threshold: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        hysteresis_tol: f64,
    },
    /// Model-select per method over splits and report test precision.
    Eval {
        #[command(flatten)]
        flags: FitFlags,
        /// Class label per y, one per line.
        #[arg(long)]
        labels: PathBuf,
        /// Candidate dimensions.
        #[arg(long, default_value = "1,2")]
        d_list: String,
        /// Candidate λ values for sdris.
        #[arg(long, default_value = "0,0.5,1")]
        lambda_list: String,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        /// "euclidean" or "mahalanobis".
        #[arg(long, default_value = "mahalanobis")]
        metric: String,
        /// Comma-separated subset of sdris,pca,opca,cpca.
        #[arg(long, default_value = "sdris,pca,opca,cpca")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-dimension comparison CSV: method, d, mean index, stderr.
    Perdim {
        #[command(flatten)]
        flags: FitFlags,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "1,2")]
        d_list: String,
        #[arg(long, default_value = "0,0.5,1")]
        lambda_list: String,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value = "mahalanobis")]
        metric: String,
        #[arg(long, default_value = "sdris,pca,opca,cpca")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .expect("thread pool configured once");
    }
    let code = match run(cli.command) {
        Ok(converged) => {
            if converged {
                0
            } else {
                1
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<bool, String> {
    match command {
        Command::Synth {
            kind,
            seed,
            out,
            nx,
            ny,
            strong,
            weak,
            noise,
            classes,
            per_class,
            signal_dims,
            nuisance_dims,
            signal_strength,
            nuisance_strength,
        } => {
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            match kind.as_str() {
                "conflicting" => {
                    let spec = SynthSpec {
                        nx,
                        ny,
                        strong_amplitude: strong,
                        weak_amplitude: weak,
                        noise_level: noise,
                        seed,
                    };
                    let pair = synth_conflicting(&spec).map_err(|e| e.to_string())?;
                    save_csv(&out.join("plus.csv"), &pair.relevance).map_err(|e| e.to_string())?;
                    save_csv(&out.join("minus.csv"), &pair.irrelevance)
                        .map_err(|e| e.to_string())?;
                    let structures: String = std::iter::once("x,gradient,bump".to_string())
                        .chain((0..nx).map(|x| {
                            format!(
                                "{x},{},{}",
                                pair.gradient_vector[x], pair.bump_vector[x]
                            )
                        }))
                        .collect::<Vec<_>>()
                        .join("\n")
                        + "\n";
                    write_atomic(&out.join("structures.csv"), structures.as_bytes())
                        .map_err(|e| e.to_string())?;
                    let manifest = json!({
                        "format_version": FORMAT_VERSION,
                        "kind": "conflicting",
                        "spec": spec,
                    });
                    write_json(&out.join("manifest.json"), &manifest)?;
                }
                "nuisance" => {
                    let spec = NuisanceSpec {
                        n_classes: classes,
                        per_class,
                        signal_dims,
                        nuisance_dims,
                        signal_strength,
                        nuisance_strength,
                        seed,
                    };
                    let pair = synth_nuisance_classes(&spec).map_err(|e| e.to_string())?;
                    save_csv(&out.join("plus.csv"), &pair.relevance).map_err(|e| e.to_string())?;
                    save_csv(&out.join("minus.csv"), &pair.irrelevance)
                        .map_err(|e| e.to_string())?;
                    write_atomic(
                        &out.join("labels.txt"),
                        (pair.labels.join("\n") + "\n").as_bytes(),
                    )
                    .map_err(|e| e.to_string())?;
                    let manifest = json!({
                        "format_version": FORMAT_VERSION,
                        "kind": "nuisance",
                        "spec": spec,
                    });
                    write_json(&out.join("manifest.json"), &manifest)?;
                }
                other => return Err(format!("unknown synth kind {other:?}")),
            }
            Ok(true)
        }

        Command::Fit { flags, lambda, out } => {
            let started = Instant::now();
            let (plus, minus) = load_pair(&flags)?;
            let obj = Objective::new(lambda, plus, minus, flags.d).map_err(|e| e.to_string())?;
            let mut config = flags.config_json();
            config["lambda"] = json!(lambda);
            match fit(&obj, &flags.fit_options()) {
                Ok(result) => {
                    let doc = json!({
                        "format_version": FORMAT_VERSION,
                        "command": "fit",
                        "config": config,
                        "phi": matrix_rows(result.phi.values()),
                        "objective": result.objective_value,
                        "info_plus": result.info_plus,
                        "info_minus": result.info_minus,
                        "grad_norm": result.grad_norm,
                        "converged": result.converged,
                        "iterations": result.iterations,
                        "restart_index": result.restart_index,
                        "seed": result.seed,
                        "trace": result.trace,
                        "wall_time_secs": started.elapsed().as_secs_f64(),
                    });
                    write_json(&out, &doc)?;
                    Ok(result.converged)
                }
                Err(e) => {
                    let doc = json!({
                        "format_version": FORMAT_VERSION,
                        "command": "fit",
                        "config": config,
                        "error": e.to_string(),
                        "wall_time_secs": started.elapsed().as_secs_f64(),
                    });
                    write_json(&out, &doc)?;
                    Err(e.to_string())
                }
            }
        }

        Command::Sweep {
            flags,
            lambda_grid,
            out,
            jump_threshold,
            hysteresis_tol,
        } => {
            let started = Instant::now();
            let grid = parse_grid(&lambda_grid)?;
            let (plus, minus) = load_pair(&flags)?;
            let template = Objective::new(grid[0].max(0.0), plus, minus, flags.d)
                .map_err(|e| e.to_string())?;
            let opts = SweepOptions {
                fit: flags.fit_options(),
                jump_threshold,
                hysteresis_tol,
            };
            let sweep = sweep_lambda(&template, &grid, &opts).map_err(|e| e.to_string())?;

            let mut csv = String::from("lambda,branch,info_plus,info_minus,objective,converged\n");
            let branch_json = |branch: &[Result<sdris::optimizer::FitResult, String>],
                                   name: &str,
                                   csv: &mut String|
             -> Vec<Value> {
                branch
                    .iter()
                    .zip(grid.iter())
                    .map(|(r, &lambda)| match r {
                        Ok(f) => {
                            csv.push_str(&format!(
                                "{lambda},{name},{},{},{},{}\n",
                                f.info_plus,
                                f.info_minus.unwrap_or(f64::NAN),
                                f.objective_value,
                                f.converged
                            ));
                            json!({
                                "lambda": lambda,
                                "info_plus": f.info_plus,
                                "info_minus": f.info_minus,
                                "objective": f.objective_value,
                                "converged": f.converged,
                                "grad_norm": f.grad_norm,
                                "phi": matrix_rows(f.phi.values()),
                            })
                        }
                        Err(e) => json!({ "lambda": lambda, "error": e }),
                    })
                    .collect()
            };
            let up = branch_json(&sweep.up_branch, "up", &mut csv);
            let down = branch_json(&sweep.down_branch, "down", &mut csv);

            let all_converged = sweep
                .up_branch
                .iter()
                .chain(sweep.down_branch.iter())
                .all(|r| matches!(r, Ok(f) if f.converged));
            let mut config = flags.config_json();
            config["lambda_grid"] = json!(grid);
            config["jump_threshold"] = json!(jump_threshold);
            config["hysteresis_tol"] = json!(hysteresis_tol);
            let doc = json!({
                "format_version": FORMAT_VERSION,
                "command": "sweep",
                "config": config,
                "up": up,
                "down": down,
                "transitions": sweep.transitions,
                "hysteresis_intervals": sweep.hysteresis_intervals,
                "effective_jump_threshold": sweep.jump_threshold,
                "all_converged": all_converged,
                "wall_time_secs": started.elapsed().as_secs_f64(),
            });
            write_json(&out.with_extension("json"), &doc)?;
            write_atomic(&out.with_extension("csv"), csv.as_bytes())
                .map_err(|e| e.to_string())?;
            Ok(all_converged)
        }

        Command::Eval {
            flags,
            labels,
            d_list,
            lambda_list,
            splits,
            metric,
            methods,
            out,
        } => {
            let started = Instant::now();
            let summary = run_comparison(
                &flags,
                &labels,
                &d_list,
                &lambda_list,
                splits,
                &metric,
                &methods,
            )?;
            let mut config = flags.config_json();
            config["labels"] = json!(labels.display().to_string());
            config["d_list"] = json!(d_list);
            config["lambda_list"] = json!(lambda_list);
            config["splits"] = json!(splits);
            config["metric"] = json!(metric);
            config["methods"] = json!(methods);
            let doc = json!({
                "format_version": FORMAT_VERSION,
                "command": "eval",
                "config": config,
                "methods": summary,
                "wall_time_secs": started.elapsed().as_secs_f64(),
            });
            write_json(&out, &doc)?;
            Ok(true)
        }

        Command::Perdim {
            flags,
            labels,
            d_list,
            lambda_list,
            splits,
            metric,
            methods,
            out,
        } => {
            let ds = parse_list(&d_list)?;
            let mut csv = String::from("method,d,mean_index,stderr\n");
            for &d in &ds {
                let single = format!("{d}");
                let summary = run_comparison(
                    &flags,
                    &labels,
                    &single,
                    &lambda_list,
                    splits,
                    &metric,
                    &methods,
                )?;
                for m in &summary {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        m.method, d as usize, m.mean_test_index, m.sem_test_index
                    ));
                }
            }
            write_atomic(&out, csv.as_bytes()).map_err(|e| e.to_string())?;
            Ok(true)
        }
    }
}

fn load_pair(flags: &FitFlags) -> Result<(JointTable, JointTable), String> {
    let plus = load_csv(&flags.plus).map_err(|e| e.to_string())?;
    let minus = load_csv(&flags.minus).map_err(|e| e.to_string())?;
    Ok((plus, minus))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn write_json(path: &Path, doc: &Value) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| e.to_string())?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| e.to_string())
}

fn parse_list(spec: &str) -> Result<Vec<f64>, String> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}")))
        .collect()
}

/// "a,b,c" literal values, or "start:stop:count" for a uniform grid.
fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err("grid must be start:stop:count".into());
        }
        let start: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
        let stop: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
        let count: usize = parts[2].trim().parse().map_err(|e| format!("{e}"))?;
        if count < 1 || stop <= start {
            return Err("grid needs count >= 1 and stop > start".into());
        }
        (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count.max(2) - 1) as f64)
            .collect()
    } else {
        parse_list(spec)?
    };
    if grid.is_empty() {
        return Err("empty λ grid".into());
    }
    Ok(grid)
}

#[allow(clippy::too_many_arguments)]
fn run_comparison(
    flags: &FitFlags,
    labels_path: &Path,
    d_list: &str,
    lambda_list: &str,
    splits: usize,
    metric: &str,
    methods: &str,
) -> Result<Vec<sdris::eval::MethodSummary>, String> {
    let (plus, minus) = load_pair(flags)?;
    let labels: Vec<String> = std::fs::read_to_string(labels_path)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if labels.len() != plus.ny() {
        return Err(format!(
            "{} labels for {} columns",
            labels.len(),
            plus.ny()
        ));
    }
    let ds: Vec<usize> = parse_list(d_list)?.into_iter().map(|d| d as usize).collect();
    let lambdas = parse_list(lambda_list)?;
    let metric_kind = match metric {
        "euclidean" => MetricKind::Euclidean,
        "mahalanobis" => MetricKind::Mahalanobis,
        other => return Err(format!("unknown metric {other:?}")),
    };
    let wanted: Vec<&str> = methods.split(',').map(|m| m.trim()).collect();
    for m in &wanted {
        if !["sdris", "pca", "opca", "cpca"].contains(m) {
            return Err(format!("unknown method {m:?}"));
        }
    }

    // samples for the linear baselines: one row per y, the conditional p(x|y)
    let plus_samples =
        SampleMatrix::new(plus.conditionals_x_given_y().transpose()).map_err(|e| e.to_string())?;
    let minus_samples = SampleMatrix::new(minus.conditionals_x_given_y().transpose())
        .map_err(|e| e.to_string())?;

    let mut precomputed: Vec<(String, usize, f64, ReducedSet)> = Vec::new();
    for &d in &ds {
        if wanted.contains(&"sdris") {
            for &lambda in &lambdas {
                let obj = Objective::new(lambda, plus.clone(), minus.clone(), d)
                    .map_err(|e| e.to_string())?;
                let result = fit(&obj, &flags.fit_options()).map_err(|e| e.to_string())?;
                let set = reduce_by_expectation(&result.phi, &plus, labels.clone(), "sdris")
                    .map_err(|e| e.to_string())?;
                precomputed.push(("sdris".into(), d, lambda, set));
            }
        }
        let mut push_linear = |name: &str,
                               reducer: Result<sdris::baselines::LinearReducer, _>|
         -> Result<(), String> {
            let reducer = reducer.map_err(|e: sdris::baselines::BaselineError| e.to_string())?;
            let reduced = reduce(&reducer, &plus_samples).map_err(|e| e.to_string())?;
            let set = ReducedSet::new(reduced.rows().clone(), labels.clone(), name)
                .map_err(|e| e.to_string())?;
            precomputed.push((name.into(), d, 0.0, set));
            Ok(())
        };
        if wanted.contains(&"pca") {
            push_linear("pca", pca(&plus_samples, d))?;
        }
        if wanted.contains(&"opca") {
            push_linear(
                "opca",
                opca(&plus_samples, &minus_samples, d, sdris::baselines::DEFAULT_RIDGE),
            )?;
        }
        if wanted.contains(&"cpca") {
            push_linear("cpca", cpca(&plus_samples, &minus_samples, d, None))?;
        }
    }

    let candidates: Vec<Candidate> = precomputed
        .iter()
        .map(|(method, d, lambda, set)| Candidate {
            method: method.clone(),
            d: *d,
            lambda: *lambda,
            reduce: Box::new(move |idx: &[usize]| Ok(set.subset(idx))),
        })
        .collect();

    model_select(&candidates, &labels, metric_kind, splits, flags.seed).map_err(|e| e.to_string())
}
