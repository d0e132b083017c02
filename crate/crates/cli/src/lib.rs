//! The `snn` command line.
//!
//! Every subcommand prints a one-line summary. The full result goes to
//! `--output` when given and to stdout otherwise, as JSON or (where a table
//! exists) CSV; in the latter case the summary moves to stderr. Exit codes: 0 success or verification pass, 1 verification
//! fail, 2 usage or input error, 3 runtime failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use snn_core::jacobian::{jacobian_h, jacobian_j};
use snn_core::moments::{iterate_map, quadrature_oracle, solve_selu_params};
use snn_core::primitives::{selu, selu_derivative};
use snn_core::simulate::{propagate_moments_mc, WeightMode};
use snn_core::train::{blobs, ingest_csv_dataset, spiral, train_sgd, xor, TrainSpec};
use snn_core::verify::{
    self, DerivativeBounds, DomainBox, GridSpec, Interval, Refinement, RunOptions, VerificationReport,
};
use snn_core::{map_moments, Error, MomentPair, SeluParams, WeightMoments};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "snn", version, about = "Moment-map analysis and verification for SELU networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct GlobalArgs {
    /// JSON file with default values for any flag (keys use snake_case flag names).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the full result.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for grid scans [default: $SNN_WORKERS, else all cores].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// SELU scale; defaults to the solved (0, 1) fixed-point value.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// SELU negative-branch coefficient; defaults to the solved value.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for (lambda, alpha) with the given fixed point.
    SolveFixedPoint {
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Evaluate the moment map.
    Map {
        #[command(flatten)]
        point: PointArgs,
        /// Also evaluate by numerical integration.
        #[arg(long)]
        quadrature: bool,
        /// Iterate the map this many steps and report the trajectory.
        #[arg(long)]
        iterate: Option<usize>,
    },
    /// Jacobians J and H and the singular values of H.
    Jacobian {
        #[command(flatten)]
        point: PointArgs,
    },
    /// Grid check that the spectral norm of H stays below 1.
    VerifyContraction {
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Use the fine reference lattice spacing (about 3.4e9 points).
        #[arg(long)]
        fine_grid: bool,
        /// Numerically re-check the derivative bounds on an N-per-axis lattice.
        #[arg(long, value_name = "N")]
        recheck_bounds: Option<usize>,
        /// Write every lattice point and its S to this CSV file.
        #[arg(long)]
        csv_dump: Option<PathBuf>,
    },
    /// Grid check that the map sends the domain into the target box.
    VerifyDomain {
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Allowed overshoot of the target box.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Variance decreases on the large-variance domain.
    VerifyTheorem2 {
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Variance increases on a small-variance domain.
    VerifyTheorem3 {
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Which small-variance domain to start from.
        #[arg(long, value_enum)]
        region: Option<Region>,
    },
    /// Bound on the squared next-layer mean on the small-variance domain.
    VerifyMu2 {
        #[command(flatten)]
        domain: DomainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte-Carlo moment propagation through a deep random network.
    Simulate {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Per-unit weight sum for `--mode perturbed`.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<f64>,
        /// Per-unit squared weight sum for `--mode perturbed`.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Train a deep SELU classifier with SGD.
    Train {
        /// spiral, blobs, xor, or a path to a CSV file.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        label_column: Option<String>,
        /// Points of a synthetic dataset.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dropout_q: Option<f64>,
    },
    /// Displacement field of the map over a (mu, nu) grid, as CSV.
    VectorField {
        #[arg(long, allow_hyphen_values = true)]
        mu_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu_max: Option<f64>,
        #[arg(long)]
        nu_min: Option<f64>,
        #[arg(long)]
        nu_max: Option<f64>,
        #[arg(long)]
        mu_points: Option<usize>,
        #[arg(long)]
        nu_points: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Evaluate the activation or its derivative.
    Selu {
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long)]
        derivative: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Omega1,
    Omega2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Normalized,
    Perturbed,
    Lecun,
}

#[derive(Debug, Args, Clone)]
pub struct PointArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct DomainArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub mu_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub nu_min: Option<f64>,
    #[arg(long)]
    pub nu_max: Option<f64>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct GridArgs {
    /// Lattice points per axis (ignored when deltas are given).
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub delta_mu: Option<f64>,
    #[arg(long)]
    pub delta_omega: Option<f64>,
    #[arg(long)]
    pub delta_nu: Option<f64>,
    #[arg(long)]
    pub delta_tau: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Random interior points checked in addition to the lattice.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Skip the local refinement around the extremum.
    #[arg(long)]
    pub no_refine: bool,
}

/// Values from `--config`, keyed by flag name with `-` replaced by `_`.
#[derive(Debug, Default)]
struct Config(serde_json::Map<String, Value>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        match serde_json::from_str::<Value>(&text)? {
            Value::Object(map) => Ok(Self(map)),
            _ => Err(Error::Config(format!("{} must hold a JSON object", path.display()))),
        }
    }

    fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, Error> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {key:?}: {e}"))),
        }
    }

    /// Flag value, then config file, then `default`.
    fn pick<T: serde::de::DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Error> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn pick_opt<T: serde::de::DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Error> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

/// Output of one command: a summary line, an exit code and the payload.
struct Outcome {
    summary: String,
    code: i32,
    json: Value,
    csv: Option<Vec<u8>>,
}

impl Outcome {
    fn ok(summary: String, json: Value) -> Self {
        Self { summary, code: EXIT_OK, json, csv: None }
    }

    fn report(r: &VerificationReport) -> Result<Self, Error> {
        Ok(Self {
            summary: r.summary(),
            code: if r.verdict.passed() { EXIT_OK } else { EXIT_FAIL },
            json: serde_json::to_value(r)?,
            csv: None,
        })
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let config = match Config::load(cli.global.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let stdout = io::stdout();
    match execute(&cli, &config) {
        Ok(out) => match emit(&cli.global, &config, &out, &mut stdout.lock()) {
            Ok(()) => out.code,
            Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => out.code,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_RUNTIME
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Config(_) | Error::Shape(_) | Error::Parse { .. } | Error::EmptyDataset => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn emit(global: &GlobalArgs, config: &Config, out: &Outcome, stdout: &mut impl Write) -> Result<(), Error> {
    let format = config.pick_opt(global.format, "format")?;
    let output = config.pick_opt(global.output.clone(), "output")?;
    let body = match (format, &out.csv) {
        (Some(Format::Csv), Some(csv)) => csv.clone(),
        (Some(Format::Csv), None) => {
            return Err(Error::Config("this command has no CSV form; use --format json".into()));
        }
        (None, Some(csv)) if output.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv")) => csv.clone(),
        _ => {
            let mut s = serde_json::to_vec_pretty(&out.json)?;
            s.push(b'\n');
            s
        }
    };
    match output {
        Some(path) => {
            let mut f = BufWriter::new(File::create(&path)?);
            f.write_all(&body)?;
            f.flush()?;
            writeln!(stdout, "{}", out.summary)?;
        }
        None => {
            eprintln!("{}", out.summary);
            stdout.write_all(&body)?;
        }
    }
    Ok(())
}

fn selu_params(global: &GlobalArgs, config: &Config) -> Result<SeluParams, Error> {
    let std = SeluParams::standard();
    let lambda = config.pick(global.lambda, "lambda", std.lambda)?;
    let alpha = config.pick(global.alpha, "alpha", std.alpha)?;
    SeluParams::new(lambda, alpha)
}

fn workers(global: &GlobalArgs, config: &Config) -> Result<usize, Error> {
    let env = match std::env::var("SNN_WORKERS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Error::Config(format!("SNN_WORKERS={v:?} is not a count")))?),
        Err(_) => None,
    };
    let fallback = env.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let n = config.pick(global.workers, "workers", fallback)?;
    if n == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    Ok(n)
}

fn point(p: &PointArgs, config: &Config, default: [f64; 4]) -> Result<(MomentPair, WeightMoments), Error> {
    let mu = config.pick(p.mu, "mu", default[0])?;
    let omega = config.pick(p.omega, "omega", default[1])?;
    let nu = config.pick(p.nu, "nu", default[2])?;
    let tau = config.pick(p.tau, "tau", default[3])?;
    Ok((MomentPair::new(mu, nu), WeightMoments::new(omega, tau)))
}

fn domain(d: &DomainArgs, config: &Config, default: DomainBox) -> Result<DomainBox, Error> {
    let iv = |lo: Option<f64>, hi: Option<f64>, name: &str, def: Interval| -> Result<Interval, Error> {
        Interval::new(
            config.pick(lo, &format!("{name}_min"), def.min)?,
            config.pick(hi, &format!("{name}_max"), def.max)?,
        )
    };
    DomainBox::new(
        iv(d.mu_min, d.mu_max, "mu", default.mu)?,
        iv(d.omega_min, d.omega_max, "omega", default.omega)?,
        iv(d.nu_min, d.nu_max, "nu", default.nu)?,
        iv(d.tau_min, d.tau_max, "tau", default.tau)?,
    )
}

enum GridDefault {
    Points(usize),
    Spec(GridSpec),
}

fn grid(g: &GridArgs, config: &Config, domain: &DomainBox, default: GridDefault) -> Result<GridSpec, Error> {
    let deltas = [
        config.pick_opt(g.delta_mu, "delta_mu")?,
        config.pick_opt(g.delta_omega, "delta_omega")?,
        config.pick_opt(g.delta_nu, "delta_nu")?,
        config.pick_opt(g.delta_tau, "delta_tau")?,
    ];
    let points = config.pick_opt(g.points, "points")?;
    let base = match (points, default) {
        (Some(n), _) | (None, GridDefault::Points(n)) => GridSpec::with_points(domain, n)?,
        (None, GridDefault::Spec(s)) => s,
    };
    let d = base.deltas();
    GridSpec::new(
        deltas[0].unwrap_or(d[0]),
        deltas[1].unwrap_or(d[1]),
        deltas[2].unwrap_or(d[2]),
        deltas[3].unwrap_or(d[3]),
    )
}

fn run_options(r: &RunArgs, global: &GlobalArgs, config: &Config, default_samples: usize) -> Result<RunOptions, Error> {
    let samples = config.pick(r.samples, "samples", default_samples)?;
    let seed = config.pick(global.seed, "seed", 0)?;
    let no_refine = r.no_refine || config.get::<bool>("no_refine")?.unwrap_or(false);
    Ok(RunOptions {
        workers: workers(global, config)?,
        refine: (!no_refine).then_some(Refinement::DEFAULT),
        samples: (samples > 0).then_some((samples, seed)),
        recheck_bounds: None,
    })
}

fn execute(cli: &Cli, config: &Config) -> Result<Outcome, Error> {
    let g = &cli.global;
    let p = selu_params(g, config)?;
    match &cli.command {
        Command::SolveFixedPoint { mu, nu } => {
            let target = MomentPair::new(config.pick(*mu, "mu", 0.0)?, config.pick(*nu, "nu", 1.0)?);
            let s = solve_selu_params(target, WeightMoments::NORMALIZED)?;
            let r = map_moments(target, WeightMoments::NORMALIZED, s)?;
            let residual = (r.mu_next - target.mu).abs().max((r.nu_next - target.nu).abs());
            Ok(Outcome::ok(
                format!("lambda={} alpha={}", s.lambda, s.alpha),
                json!({ "target": target, "lambda": s.lambda, "alpha": s.alpha, "residual": residual }),
            ))
        }
        Command::Map { point: pt, quadrature, iterate } => {
            let (m, w) = point(pt, config, [0.0, 0.0, 1.0, 1.0])?;
            let r = map_moments(m, w, p)?;
            let mut out = json!({ "input": { "moments": m, "weights": w }, "params": p, "closed_form": r });
            let mut summary = format!("mu_next={} xi_next={} nu_next={}", r.mu_next, r.xi_next, r.nu_next);
            if *quadrature {
                let q = quadrature_oracle(m, w, p)?;
                let diff = (q.mu_next - r.mu_next).abs().max((q.xi_next - r.xi_next).abs());
                out["quadrature"] = serde_json::to_value(q)?;
                out["max_difference"] = json!(diff);
                summary.push_str(&format!(" quadrature_diff={diff:e}"));
            }
            if let Some(steps) = config.pick_opt(*iterate, "iterate")? {
                let t = iterate_map(m, w, p, steps, snn_core::moments::DEFAULT_ITERATION_TOLERANCE)?;
                summary.push_str(&format!(" limit=({}, {}) converged={}", t.last().mu, t.last().nu, t.converged));
                out["trajectory"] = serde_json::to_value(&t)?;
            }
            Ok(Outcome::ok(summary, out))
        }
        Command::Jacobian { point: pt } => {
            let (m, w) = point(pt, config, [0.0, 0.0, 1.0, 1.0])?;
            let j = jacobian_j(m, w, p)?;
            let h = jacobian_h(m, w, p)?;
            let s = h.singular_values();
            Ok(Outcome::ok(
                format!("H=[[{}, {}], [{}, {}]] S={}", h.j11, h.j12, h.j21, h.j22, s.s1),
                json!({ "j": j, "h": h, "singular_values": s, "spectral_norm": s.s1 }),
            ))
        }
        Command::VerifyContraction { domain: d, grid: gr, run, fine_grid, recheck_bounds, csv_dump } => {
            let dom = domain(d, config, DomainBox::CONTRACTION)?;
            let fine = *fine_grid || config.get::<bool>("fine_grid")?.unwrap_or(false);
            let default = if fine { GridDefault::Spec(GridSpec::FINE_CONTRACTION) } else { GridDefault::Points(40) };
            let grid = grid(gr, config, &dom, default)?;
            let mut opts = run_options(run, g, config, 0)?;
            opts.recheck_bounds = config.pick_opt(*recheck_bounds, "recheck_bounds")?;
            if let Some(path) = config.pick_opt(csv_dump.clone(), "csv_dump")? {
                verify::write_lattice_csv(&dom, &grid, p, BufWriter::new(File::create(path)?))?;
            }
            let r = verify::verify_contraction(&dom, &grid, &DerivativeBounds::CONTRACTION, p, &opts)?;
            Outcome::report(&r)
        }
        Command::VerifyDomain { domain: d, grid: gr, run, tolerance } => {
            let dom = domain(d, config, DomainBox::CONVERGENCE)?;
            let grid = grid(gr, config, &dom, GridDefault::Points(30))?;
            let opts = run_options(run, g, config, 0)?;
            let tol = config.pick(*tolerance, "tolerance", 1e-6)?;
            let r = verify::verify_domain_mapping(dom.mu, dom.nu, dom.omega, dom.tau, &grid, p, tol, &opts)?;
            Outcome::report(&r)
        }
        Command::VerifyTheorem2 { domain: d, grid: gr, run } => {
            let dom = domain(d, config, DomainBox::OMEGA_PLUS_PLUS)?;
            let grid = grid(gr, config, &dom, GridDefault::Points(20))?;
            let opts = run_options(run, g, config, 10_000)?;
            Outcome::report(&verify::verify_variance_decrease(&dom, &grid, p, &opts)?)
        }
        Command::VerifyTheorem3 { domain: d, grid: gr, run, region } => {
            let base = match config.pick(*region, "region", Region::Omega1)? {
                Region::Omega1 => DomainBox::OMEGA1_MINUS,
                Region::Omega2 => DomainBox::OMEGA2_MINUS,
            };
            let dom = domain(d, config, base)?;
            let grid = grid(gr, config, &dom, GridDefault::Points(20))?;
            let opts = run_options(run, g, config, 10_000)?;
            Outcome::report(&verify::verify_variance_increase(&dom, &grid, p, &opts)?)
        }
        Command::VerifyMu2 { domain: d, grid: gr, run } => {
            let dom = domain(d, config, DomainBox::OMEGA_MINUS)?;
            let grid = grid(gr, config, &dom, GridDefault::Spec(GridSpec::FINE_MU_SQUARED))?;
            let opts = run_options(run, g, config, 0)?;
            Outcome::report(&verify::verify_mu_squared_bound(&dom, &grid, p, &opts)?)
        }
        Command::Simulate { depth, width, samples, mode, omega, tau } => {
            let mode = match config.pick(*mode, "mode", ModeArg::Normalized)? {
                ModeArg::Normalized => WeightMode::Normalized,
                ModeArg::Lecun => WeightMode::Lecun,
                ModeArg::Perturbed => WeightMode::Perturbed {
                    omega: config.pick(*omega, "omega", 0.0)?,
                    tau: config.pick(*tau, "tau", 1.0)?,
                },
            };
            let t = propagate_moments_mc(
                config.pick(*depth, "depth", 32)?,
                config.pick(*width, "width", 256)?,
                config.pick(*samples, "samples", 10_000)?,
                mode,
                p,
                config.pick(g.seed, "seed", 0)?,
            )?;
            let l = t.last();
            let mut csv = Vec::new();
            t.write_csv(&mut csv)?;
            Ok(Outcome {
                summary: format!(
                    "layer {}: mean={} var={} max|z|={:.3}",
                    l.layer,
                    l.mean,
                    l.var,
                    if t.rows.len() > 1 { t.max_abs_z() } else { 0.0 }
                ),
                code: EXIT_OK,
                json: serde_json::to_value(&t)?,
                csv: Some(csv),
            })
        }
        Command::Train { dataset, label_column, points, depth, width, lr, epochs, batch_size, dropout_q } => {
            let seed = config.pick(g.seed, "seed", 0)?;
            let name = config.pick(dataset.clone(), "dataset", "spiral".to_string())?;
            let n = config.pick(*points, "points", 2000)?;
            let data = match name.as_str() {
                "spiral" => spiral(n, 0.2, seed)?,
                "blobs" => blobs(n, 3, 3.0, seed)?,
                "xor" => xor(n, seed)?,
                path => ingest_csv_dataset(Path::new(path), &config.pick(label_column.clone(), "label_column", "label".to_string())?)?,
            };
            let spec = TrainSpec {
                depth: config.pick(*depth, "depth", 16)?,
                width: config.pick(*width, "width", 128)?,
                params: p,
                lr: config.pick(*lr, "lr", 0.01)?,
                epochs: config.pick(*epochs, "epochs", 200)?,
                batch_size: config.pick(*batch_size, "batch_size", 32)?,
                dropout_q: config.pick(*dropout_q, "dropout_q", 1.0)?,
                seed,
            };
            let (_, h) = train_sgd(&spec, &data)?;
            let (lo, hi) = h.epochs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(e.grad_ratio), hi.max(e.grad_ratio)));
            let mut csv = Vec::new();
            h.write_csv(&mut csv)?;
            Ok(Outcome {
                summary: format!(
                    "loss {} -> {} over {} epochs, gradient ratio in [{lo:.4e}, {hi:.4e}]",
                    h.initial_loss(),
                    h.final_loss(),
                    spec.epochs
                ),
                code: EXIT_OK,
                json: json!({ "spec": spec, "history": h }),
                csv: Some(csv),
            })
        }
        Command::VectorField { mu_min, mu_max, nu_min, nu_max, mu_points, nu_points, omega, tau } => {
            let mu = Interval::new(config.pick(*mu_min, "mu_min", -0.1)?, config.pick(*mu_max, "mu_max", 0.1)?)?;
            let nu = Interval::new(config.pick(*nu_min, "nu_min", 0.8)?, config.pick(*nu_max, "nu_max", 1.5)?)?;
            let w = WeightMoments::new(config.pick(*omega, "omega", 0.0)?, config.pick(*tau, "tau", 1.0)?);
            let rows = vector_field(mu, nu, config.pick(*mu_points, "mu_points", 21)?, config.pick(*nu_points, "nu_points", 15)?, w, p)?;
            let mut csv = Vec::new();
            write_vector_field(&rows, &mut csv)?;
            Ok(Outcome {
                summary: format!("{} vector-field rows", rows.len()),
                code: EXIT_OK,
                json: serde_json::to_value(&rows)?,
                csv: Some(csv),
            })
        }
        Command::Selu { x, derivative } => {
            let v = if *derivative { selu_derivative(*x, p) } else { selu(*x, p) };
            let key = if *derivative { "selu_derivative" } else { "selu" };
            Ok(Outcome::ok(format!("{key}({x})={v}"), json!({ "x": x, key: v, "params": p })))
        }
    }
}

/// One row of the displacement field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub mu: f64,
    pub nu: f64,
    pub dmu: f64,
    pub dnu: f64,
}

/// `(mu~ - mu, nu~ - nu)` on an evenly spaced closed `(mu, nu)` grid.
pub fn vector_field(
    mu: Interval,
    nu: Interval,
    mu_points: usize,
    nu_points: usize,
    w: WeightMoments,
    p: SeluParams,
) -> Result<Vec<FieldRow>, Error> {
    if mu_points < 2 || nu_points < 2 {
        return Err(Error::Config("vector field needs at least 2 points per axis".into()));
    }
    let at = |i: Interval, k: usize, n: usize| if k + 1 == n { i.max } else { i.min + i.width() * k as f64 / (n - 1) as f64 };
    let mut rows = Vec::with_capacity(mu_points * nu_points);
    for a in 0..mu_points {
        for b in 0..nu_points {
            let m = MomentPair::new(at(mu, a, mu_points), at(nu, b, nu_points));
            let r = map_moments(m, w, p)?;
            rows.push(FieldRow { mu: m.mu, nu: m.nu, dmu: r.mu_next - m.mu, dnu: r.nu_next - m.nu });
        }
    }
    Ok(rows)
}

/// CSV with columns `mu,nu,dmu,dnu`.
pub fn write_vector_field<W: Write>(rows: &[FieldRow], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "nu", "dmu", "dnu"])?;
    for r in rows {
        w.serialize((r.mu, r.nu, r.dmu, r.dnu))?;
    }
    w.flush()?;
    Ok(())
}

