//! Command-line surface: `simulate | exact | green | heights | enumerate
//! | scaling`.
//!
//! Flags may also come from a flat `key = value` config file (`#`
//! comments, UTF-8); precedence is CLI > file > defaults. JSON goes to
//! `--output` or stdout; tables go to `--csv`. Exit codes: 0 success,
//! 1 input error, 2 numerical-tolerance failure. `SANDLAB_THREADS` caps
//! parallelism.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Result, SandlabError};
use crate::green::{
    asymptotic_params, gamma_bar, green_finite, GreenTable,
};
use crate::heights::{
    build_pair_source, c2_factor, displacements_for_p0, p00_c00, p0_closed_form,
    p0_determinantal, GValues, HeightSummary,
};
use crate::lattice::{Displacement, ModelParams};
use crate::montecarlo::{ball_displacements, run as run_chain, ChainConfig};
use crate::output::{emit_json, envelope, fmt_float, write_csv};
use crate::recurrence::{enumerate_allowed_count, enumerate_allowed_count_sequential};
use crate::scaling::{
    fit_c00_decay, scaling_function_check, xi_sweep_and_fit, SweepSpec,
};

#[derive(Debug, Parser)]
#[command(name = "sandlab", version, about = "Dissipative sandpile models on the torus")]
struct Cli {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSON output path (stdout when omitted).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// CSV output path for commands that emit tables.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary-state Monte Carlo sampling.
    Simulate(SimulateArgs),
    /// Exact spectral and counting report for one parameter set.
    Exact(LatticeArgs),
    /// Propagator tables (finite-L Fourier, Bessel integral, or tensor).
    Green(GreenArgs),
    /// Height-0 density and pair correlations.
    Heights(HeightsArgs),
    /// Brute-force enumeration of allowed configurations.
    Enumerate(EnumerateArgs),
    /// Correlation-length sweeps and scaling checks.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args, Clone)]
struct LatticeArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "L")]
    half_width: Option<i64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    m: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    lattice: LatticeArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long = "burn-in")]
    burn_in: Option<u64>,
    #[arg(long)]
    thinning: Option<u64>,
    /// Write a per-sample (step, topplings, waves) CSV time series.
    #[arg(long)]
    timeseries: bool,
}

#[derive(Debug, Args)]
struct GreenArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Dissipation rate for the infinite-volume methods.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    /// Lattice half-width (with --m) for the finite Fourier method.
    #[arg(long = "L")]
    half_width: Option<i64>,
    #[arg(long)]
    m: Option<u64>,
    /// Euclidean radius of the displacement ball to tabulate.
    #[arg(long)]
    radius: Option<f64>,
    /// bessel | tensor | fourier
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct HeightsArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    /// Largest diagonal index k for the C00 table (x = (k,...,k)).
    #[arg(long)]
    rmax: Option<i64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct EnumerateArgs {
    #[command(flatten)]
    lattice: LatticeArgs,
    /// Force the single-threaded scan (for timing runs).
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Geometric grid "a_max:a_min:log", e.g. 1e-1:1e-5:log.
    #[arg(long = "a-grid")]
    a_grid: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    /// κ values for the scaling-function table.
    #[arg(long)]
    kappa: Vec<f64>,
    /// Cross-check 2/ξ against the fitted decay of the exact C00 at --a.
    #[arg(long = "from-c00")]
    from_c00: bool,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

/// Flat key = value file; `#` starts a comment; keys are flag names
/// (dashes and underscores interchangeable).
#[derive(Debug, Default)]
struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut values = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(SandlabError::Config(format!(
                        "line {}: expected key = value, got {raw:?}",
                        lineno + 1
                    )));
                };
                values.insert(
                    key.trim().replace('-', "_").to_lowercase(),
                    value.trim().to_string(),
                );
            }
        }
        Ok(FileConfig { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(&key.replace('-', "_").to_lowercase()) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                SandlabError::Config(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }
}

/// CLI > config file > default.
fn resolve<T: FromStr>(cli: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T> {
    Ok(cli.or(file.get(key)?).unwrap_or(default))
}

fn resolve_required<T: FromStr>(cli: Option<T>, file: &FileConfig, key: &str) -> Result<T> {
    cli.or(file.get(key)?)
        .ok_or_else(|| SandlabError::Config(format!("missing required parameter --{key}")))
}

fn lattice_params(args: &LatticeArgs, file: &FileConfig) -> Result<ModelParams> {
    let dim = resolve(args.dim, file, "dim", 2)?;
    let l = resolve_required(args.half_width, file, "L")?;
    let n = resolve(args.n, file, "n", 1)?;
    let m = resolve(args.m, file, "m", 1)?;
    ModelParams::new(dim, l, n, m)
}

pub fn cli_main<I>(argv: I) -> i32
where
    I: IntoIterator,
    I::Item: Into<std::ffi::OsString> + Clone,
{
    if let Ok(threads) = std::env::var("SANDLAB_THREADS") {
        if let Ok(t) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build_global();
        }
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return 1;
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ SandlabError::ToleranceNotReached { .. }) => {
            eprintln!("numerical tolerance failure: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let output = cli.output.as_deref();
    let csv = cli.csv.as_deref();
    match cli.command {
        Command::Enumerate(args) => cmd_enumerate(args, &file, output),
        Command::Exact(args) => cmd_exact(args, &file, output),
        Command::Green(args) => cmd_green(args, &file, output, csv),
        Command::Heights(args) => cmd_heights(args, &file, output, csv),
        Command::Simulate(args) => cmd_simulate(args, &file, output, csv),
        Command::Scaling(args) => cmd_scaling(args, &file, output, csv),
    }
}

#[derive(Serialize)]
struct LatticeEcho {
    dim: usize,
    half_width: i64,
    n: u64,
    m: u64,
    sites: usize,
    threshold: u64,
    dissipation_rate: f64,
}

impl LatticeEcho {
    fn of(p: &ModelParams) -> Self {
        LatticeEcho {
            dim: p.dim(),
            half_width: p.half_width(),
            n: p.granularity(),
            m: p.dissipation(),
            sites: p.sites(),
            threshold: p.threshold(),
            dissipation_rate: p.dissipation_rate(),
        }
    }
}

fn cmd_enumerate(args: EnumerateArgs, file: &FileConfig, output: Option<&Path>) -> Result<()> {
    let p = lattice_params(&args.lattice, file)?;
    let report = if args.sequential {
        enumerate_allowed_count_sequential(&p)?
    } else {
        enumerate_allowed_count(&p)?
    };
    emit_json(&envelope("enumerate", LatticeEcho::of(&p), report), output)
}

fn cmd_exact(args: LatticeArgs, file: &FileConfig, output: Option<&Path>) -> Result<()> {
    let p = lattice_params(&args, file)?;
    let a = p.dissipation_rate();
    let ap = asymptotic_params(p.dim(), a);
    let log_count = p.recurrent_log_count();
    let result = json!({
        "log_det": p.log_det_delta(),
        "recurrent_log_count": log_count,
        "recurrent_count": if log_count < 63.0 * std::f64::consts::LN_2 {
            Some(log_count.exp().round() as u64)
        } else {
            None
        },
        "min_mode_eigenvalue": a * 2.0 * p.dim() as f64,
        "height_cap": p.height_cap(),
        "xi": ap.xi,
        "lambda": ap.lambda,
        "green_at_origin": green_finite(&p, &Displacement::zero(p.dim()))?,
    });
    emit_json(&envelope("exact", LatticeEcho::of(&p), result), output)
}

fn cmd_green(
    args: GreenArgs,
    file: &FileConfig,
    output: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let dim = resolve(args.dim, file, "dim", 2)?;
    let n = resolve(args.n, file, "n", 1)?;
    let radius = resolve(args.radius, file, "radius", 5.0)?;
    let tol = resolve(args.tol, file, "tol", 1e-10)?;
    let method = resolve(args.method.clone(), file, "method", "bessel".to_string())?;
    let ball = ball_displacements(dim, radius);

    let table = match method.as_str() {
        "bessel" => {
            let a = resolve_required(args.a, file, "a")?;
            GreenTable::build_infinite(dim, a, n, &ball, tol)?
        }
        "tensor" => {
            let a = resolve_required(args.a, file, "a")?;
            GreenTable::build_infinite_tensor(dim, a, n, &ball, tol)?
        }
        "fourier" => {
            let l = resolve_required(args.half_width, file, "L")?;
            let m = resolve_required(args.m, file, "m")?;
            let p = ModelParams::new(dim, l, n, m)?;
            GreenTable::build_finite(&p, &ball)?
        }
        other => {
            return Err(SandlabError::Config(format!(
                "unknown method {other:?} (bessel | tensor | fourier)"
            )))
        }
    };

    // one CSV row per lattice point of the ball; values come from the
    // canonical class, so sign flips and permutations agree exactly
    let mut rows = Vec::new();
    for x in &ball {
        let mut row: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
        row.push(fmt_float(table.value(x)?));
        row.push(fmt_float(table.est_abs_error(x)?));
        row.push(table.method().label());
        rows.push(row);
    }
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.extend(["value".to_string(), "est_abs_error".to_string(), "method".to_string()]);
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let params = json!({
        "dim": dim, "n": n, "radius": radius, "tol": tol, "method": method,
        "a": args.a.or(file.get::<f64>("a")?),
        "L": args.half_width.or(file.get::<i64>("L")?),
        "m": args.m.or(file.get::<u64>("m")?),
    });
    match csv {
        Some(path) => {
            write_csv(path, &header_refs, &rows)?;
            emit_json(
                &envelope("green", params, json!({"entries": rows.len(), "csv": path})),
                output,
            )
        }
        None => {
            // CSV is the primary product of this command; print it when no
            // file was requested
            crate::output::stdout_line(&header.join(","))?;
            for row in &rows {
                crate::output::stdout_line(&row.join(","))?;
            }
            Ok(())
        }
    }
}

fn cmd_heights(
    args: HeightsArgs,
    file: &FileConfig,
    output: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let dim = resolve(args.dim, file, "dim", 2)?;
    let a = resolve_required(args.a, file, "a")?;
    let n = resolve(args.n, file, "n", 1)?;
    let rmax = resolve(args.rmax, file, "rmax", 8)?;
    let tol = resolve(args.tol, file, "tol", 1e-10)?;

    let near = GreenTable::build_infinite(dim, a, n, &displacements_for_p0(dim), tol)?;
    let p0_det = p0_determinantal(&near)?;
    let gv = GValues::from_table(&near)?;
    let p0_closed = p0_closed_form(&gv, dim, a, n);
    let ap = asymptotic_params(dim, a);
    let c2 = c2_factor(&gv, dim, a, n)?;

    let ks: Vec<i64> = (2..=rmax.max(2)).collect();
    let xs: Vec<Displacement> = ks.iter().map(|&k| Displacement::diagonal(dim, k)).collect();
    let source = build_pair_source(dim, a, n, &xs, tol)?;
    let mut rows = Vec::new();
    let mut table_json = Vec::new();
    for (x, &k) in xs.iter().zip(&ks) {
        let pair = p00_c00(&source, x)?;
        let r = (k as f64) * (dim as f64).sqrt();
        rows.push(vec![
            fmt_float(r),
            fmt_float(pair.p00),
            fmt_float(pair.c00),
            (pair.reliable as u8).to_string(),
        ]);
        table_json.push(json!({
            "k": k, "r": r, "p00": pair.p00, "c00": pair.c00, "reliable": pair.reliable,
        }));
    }
    if let Some(path) = csv {
        write_csv(path, &["r", "P00", "C00", "reliable_flag"], &rows)?;
    }
    let summary = HeightSummary {
        p0_det,
        p0_closed,
        c2,
        xi: ap.xi,
        lambda: ap.lambda,
    };
    let params = json!({"dim": dim, "a": a, "n": n, "rmax": rmax, "tol": tol});
    emit_json(
        &envelope("heights", params, json!({"summary": summary, "table": table_json})),
        output,
    )
}

fn cmd_simulate(
    args: SimulateArgs,
    file: &FileConfig,
    output: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let p = Arc::new(lattice_params(&args.lattice, file)?);
    let seed = resolve(args.seed, file, "seed", 1)?;
    let samples = resolve(args.samples, file, "samples", 100_000)?;
    let mut cfg = ChainConfig::new(Arc::clone(&p), seed, samples);
    cfg.replicas = resolve(args.replicas, file, "replicas", 1)?;
    cfg.burn_in = resolve(args.burn_in, file, "burn-in", cfg.burn_in)?;
    cfg.thinning = resolve(args.thinning, file, "thinning", 1)?.max(1);
    cfg.capture_series = args.timeseries || file.get::<bool>("timeseries")?.unwrap_or(false);

    let est = run_chain(&cfg)?;
    if let Some(path) = csv {
        if cfg.capture_series {
            let rows: Vec<Vec<String>> = est
                .series
                .iter()
                .enumerate()
                .map(|(i, &(t, w))| vec![i.to_string(), t.to_string(), w.to_string()])
                .collect();
            write_csv(path, &["sample", "total_topplings", "waves"], &rows)?;
        }
    }
    let params = json!({
        "lattice": LatticeEcho::of(&p),
        "seed": seed,
        "samples": samples,
        "replicas": cfg.replicas,
        "burn_in": cfg.burn_in,
        "thinning": cfg.thinning,
    });
    let result = json!({
        "p_alpha": est.height_probabilities,
        "mean_topplings": est.mean_topplings,
        "mean_waves": est.mean_waves,
        "pair_table": est.pair_zero,
        "g_hat": est.propagator,
        "subunit_adjacent_pairs": est.subunit_adjacent_pairs,
        "allowed_checks": est.allowed_checks,
        "allowed_check_failures": est.allowed_check_failures,
    });
    emit_json(&envelope("simulate", params, result), output)
}

fn cmd_scaling(
    args: ScalingArgs,
    file: &FileConfig,
    output: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let dim = resolve(args.dim, file, "dim", 2)?;
    let tol = resolve(args.tol, file, "tol", 1e-10)?;

    if args.from_c00 || file.get::<bool>("from-c00")?.unwrap_or(false) {
        // consistency layer: decay rate of the exact C00 against 2/ξ
        let a = resolve_required(args.a, file, "a")?;
        let ap = asymptotic_params(dim, a);
        // window starts at r ≈ 3ξ where the prefactor corrections settle
        let k_lo = ((3.0 * ap.xi) / (dim as f64).sqrt()).ceil() as i64;
        let ks: Vec<i64> = (k_lo.max(2)..k_lo.max(2) + 10).collect();
        let (rate, prefactor) = fit_c00_decay(dim, a, &ks, tol)?;
        let params = json!({"dim": dim, "a": a, "tol": tol, "window_ks": ks});
        let result = json!({
            "c00_rate": rate,
            "two_over_xi": 2.0 / ap.xi,
            "rel_error": rate * ap.xi / 2.0 - 1.0,
            "prefactor_abs": prefactor,
            "xi": ap.xi,
        });
        return emit_json(&envelope("scaling", params, result), output);
    }

    let grid = resolve(
        args.a_grid.clone(),
        file,
        "a-grid",
        "1e-1:1e-5:log".to_string(),
    )?;
    let points = resolve(args.points, file, "points", 17)?;
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() != 3 || parts[2] != "log" {
        return Err(SandlabError::Config(format!(
            "a-grid must look like 1e-1:1e-5:log, got {grid:?}"
        )));
    }
    let a_max: f64 = parts[0]
        .parse()
        .map_err(|_| SandlabError::Config("bad a-grid upper bound".into()))?;
    let a_min: f64 = parts[1]
        .parse()
        .map_err(|_| SandlabError::Config("bad a-grid lower bound".into()))?;
    let spec = SweepSpec::log_grid(dim, a_max, a_min, points)?;
    let fit = xi_sweep_and_fit(&spec)?;

    let kappas = if args.kappa.is_empty() {
        vec![1.0, 2.0]
    } else {
        args.kappa.clone()
    };
    let gbar_single = gamma_bar(dim, false, 1e-7)?;
    let gbar_double = gamma_bar(dim, true, 1e-7)?;
    let check_as = [1e-2, 1e-3];
    let rows = scaling_function_check(dim, &kappas, &check_as, gbar_single, tol)?;
    if let Some(path) = csv {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    fmt_float(r.kappa_target),
                    fmt_float(r.a),
                    r.k.to_string(),
                    fmt_float(r.r),
                    fmt_float(r.kappa_actual),
                    fmt_float(r.ratio_g),
                    r.ratio_c.map(fmt_float).unwrap_or_default(),
                    (r.c00_reliable as u8).to_string(),
                ]
            })
            .collect();
        write_csv(
            path,
            &["kappa", "a", "k", "r", "kappa_actual", "ratio_g", "ratio_c", "c00_reliable"],
            &table,
        )?;
    }
    let params = json!({
        "dim": dim, "a_grid": grid, "points": points, "kappa": kappas, "tol": tol,
        "fit_window": spec.fit_window,
    });
    let result = json!({
        "nu_a": fit.nu_a,
        "prefactor": fit.prefactor,
        "r_squared": fit.r_squared,
        "residuals": fit.residuals,
        "gamma_bar": gbar_single,
        "gamma_bar_doubled_phase": gbar_double,
        "scaling_table": rows,
    });
    emit_json(&envelope("scaling", params, result), output)
}
