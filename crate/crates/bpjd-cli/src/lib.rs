//! Configuration handling, presets, the experiment driver, and report
//! writers behind the `bpjd` command line tool.
//!
//! A run is described by a flat `key = value` configuration (file,
//! preset, or `--set` overrides), executes the eigensolver on one or
//! more refinement levels plus an optional subdomain-scaling sweep on a
//! fixed fine mesh, and produces three artifacts in the output
//! directory: `report.json` (the full run report), `lambdas.csv` (final
//! eigenvalues per level), and `history.jsonl` (one line per outer
//! iteration). Reports are deterministic for a fixed configuration and
//! thread count, except for the recorded wall times.

use bpjd::coarse::DENSE_EIG_LIMIT;
use bpjd::diagnostics::{gap_report, reference_solve, reference_solve_iterative};
use bpjd::solver::{solve, IterationRecord, SolverConfig};
use bpjd::{
    assemble, build_coarse_mesh, build_coarse_spectral, build_decomposition,
    overlap_layers_for_ratio, refine_uniform, CoarseSpectral, Decomposition,
    DomainSpec, EigResult, Error, FeProblem, Result, SubspacePolicy,
};
use serde::{Serialize, Serializer};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// Full description of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    /// Domain name: box2d, lshape2d, box3d, or lshape3d.
    pub domain: String,
    /// Cells per axis of the coarse mesh.
    pub coarse_n: usize,
    /// Refinement levels to run, each relative to the coarse mesh.
    pub refine_levels: Vec<usize>,
    /// Target overlap width as a fraction of the coarse cell width.
    pub overlap_ratio: f64,
    /// Number of eigenpairs.
    pub s: usize,
    /// Stopping tolerance on the summed Ritz value change.
    pub tol: f64,
    /// Initialization depth (coarse mesh refined `tau` times).
    pub tau: usize,
    /// Outer iteration budget.
    pub max_outer: usize,
    /// Search subspace policy.
    #[serde(serialize_with = "serialize_policy")]
    pub subspace_policy: SubspacePolicy,
    /// Seed echoed into the report for reproducibility bookkeeping.
    pub seed: u64,
    /// Directory receiving report.json, lambdas.csv, and history.jsonl.
    pub output_dir: String,
    /// Compute a reference solution and a subspace-gap summary for the
    /// finest level.
    pub diagnostics: bool,
    /// Coarse mesh sizes for the subdomain-scaling sweep on the fine
    /// mesh of the largest refinement level (empty: no sweep).
    pub scalability_n: Vec<usize>,
}

fn serialize_policy<S: Serializer>(p: &SubspacePolicy, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(p.name())
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            domain: "box2d".to_string(),
            coarse_n: 4,
            refine_levels: vec![2],
            overlap_ratio: 0.25,
            s: 5,
            tol: 1e-8,
            tau: 1,
            max_outer: 100,
            subspace_policy: SubspacePolicy::Growing,
            seed: 42,
            output_dir: "out".to_string(),
            diagnostics: false,
            scalability_n: Vec::new(),
        }
    }
}

/// Parses an overlap ratio given either as a decimal or as a fraction
/// like `1/4`.
pub fn parse_ratio(value: &str) -> Result<f64> {
    let parse = |v: &str| -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("invalid number '{}'", v.trim())))
    };
    match value.split_once('/') {
        Some((num, den)) => {
            let d = parse(den)?;
            if d == 0.0 {
                return Err(Error::Config(format!("zero denominator in '{value}'")));
            }
            Ok(parse(num)? / d)
        }
        None => parse(value),
    }
}

fn parse_usize(value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("invalid integer '{value}'")))
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_usize(v.trim())).collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "invalid boolean '{other}' (expected true or false)"
        ))),
    }
}

/// Assigns one configuration key, reporting errors with their origin
/// (config file line or command line flag).
fn set_key(cfg: &mut RunConfig, key: &str, value: &str, origin: &str) -> Result<()> {
    let context = |e: Error| match e {
        Error::Config(msg) => Error::Config(format!("{origin}: {key}: {msg}")),
        other => other,
    };
    match key {
        "domain" => {
            DomainSpec::from_name(value).map_err(context)?;
            cfg.domain = value.to_string();
        }
        "coarse_n" => cfg.coarse_n = parse_usize(value).map_err(context)?,
        "refine_levels" => cfg.refine_levels = parse_usize_list(value).map_err(context)?,
        "overlap_ratio" => cfg.overlap_ratio = parse_ratio(value).map_err(context)?,
        "s" => cfg.s = parse_usize(value).map_err(context)?,
        "tol" => {
            cfg.tol = value
                .parse::<f64>()
                .map_err(|_| context(Error::Config(format!("invalid number '{value}'"))))?
        }
        "tau" => cfg.tau = parse_usize(value).map_err(context)?,
        "max_outer" => cfg.max_outer = parse_usize(value).map_err(context)?,
        "subspace_policy" => {
            cfg.subspace_policy = SubspacePolicy::from_name(value).map_err(context)?
        }
        "seed" => {
            cfg.seed = value
                .parse::<u64>()
                .map_err(|_| context(Error::Config(format!("invalid integer '{value}'"))))?
        }
        "output_dir" => cfg.output_dir = value.to_string(),
        "diagnostics" => cfg.diagnostics = parse_bool(value).map_err(context)?,
        "scalability_n" => cfg.scalability_n = parse_usize_list(value).map_err(context)?,
        other => {
            return Err(Error::Config(format!("{origin}: unknown key '{other}'")));
        }
    }
    Ok(())
}

/// Applies a flat `key = value` configuration file on top of a base
/// configuration. Lines starting with `#` or `;` are comments; keys may
/// not repeat.
pub fn parse_config_text(text: &str, mut cfg: RunConfig) -> Result<RunConfig> {
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let origin = format!("config line {}", idx + 1);
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{origin}: expected 'key = value', got '{line}'"
            )));
        };
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("{origin}: duplicate key '{key}'")));
        }
        set_key(&mut cfg, key, value.trim(), &origin)?;
    }
    Ok(cfg)
}

/// Applies `KEY=VALUE` command line overrides in order (later ones win).
pub fn apply_set_overrides(mut cfg: RunConfig, pairs: &[String]) -> Result<RunConfig> {
    for pair in pairs {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got '{pair}'"
            )));
        };
        set_key(&mut cfg, key.trim(), value.trim(), "--set")?;
    }
    Ok(cfg)
}

/// Refinement level at which a coarse mesh of size `coarse_n` reaches
/// the fine mesh of size `fine_n`.
pub fn level_for(fine_n: usize, coarse_n: usize) -> Result<usize> {
    if coarse_n == 0 || fine_n % coarse_n != 0 || !(fine_n / coarse_n).is_power_of_two() {
        return Err(Error::Config(format!(
            "coarse size {coarse_n} does not reach the fine mesh size \
             {fine_n} by uniform refinement"
        )));
    }
    Ok((fine_n / coarse_n).trailing_zeros() as usize)
}

/// Checks a resolved configuration for consistency without running it.
pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    let spec = DomainSpec::from_name(&cfg.domain)?;
    build_coarse_mesh(&spec, cfg.coarse_n)?;
    if cfg.s == 0 {
        return Err(Error::Config("s must be at least 1".to_string()));
    }
    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err(Error::Config(format!("tol must be positive, got {}", cfg.tol)));
    }
    if cfg.max_outer == 0 {
        return Err(Error::Config("max_outer must be at least 1".to_string()));
    }
    if !(cfg.overlap_ratio > 0.0 && cfg.overlap_ratio < 1.0) {
        return Err(Error::Config(format!(
            "overlap_ratio must lie strictly between 0 and 1, got {}",
            cfg.overlap_ratio
        )));
    }
    if cfg.refine_levels.is_empty() {
        return Err(Error::Config("refine_levels must not be empty".to_string()));
    }
    if let Some(&lev) = cfg.refine_levels.iter().find(|&&l| l > 12) {
        return Err(Error::Config(format!(
            "refinement level {lev} is out of range (max 12)"
        )));
    }
    let max_level = *cfg.refine_levels.iter().max().expect("non-empty");
    let fine_n = cfg.coarse_n << max_level;
    for &cn in &cfg.scalability_n {
        level_for(fine_n, cn)?;
        build_coarse_mesh(&spec, cn)?;
    }
    Ok(())
}

/// The built-in presets with one-line descriptions.
pub fn preset_names() -> &'static [(&'static str, &'static str)] {
    &[
        ("smoke", "small square-domain run exercising the full pipeline in seconds"),
        ("table1-desk", "square domain, 19 eigenpairs across three refinement levels"),
        ("table2-desk", "square domain, subdomain scaling on a fixed 64x64 fine mesh"),
        ("table3-desk", "L-shaped domain, 20 eigenpairs across two refinement levels"),
        ("table4-desk", "L-shaped domain, subdomain scaling on a fixed fine mesh"),
        ("table5-desk", "cube, 20 eigenpairs with coarse-level initialization"),
        ("table6-desk", "cube, 6 clustered eigenpairs across two refinement levels"),
        ("table7-desk", "L-shaped prism, 20 eigenpairs on 192 subdomains"),
        ("table8-desk", "larger L-shaped prism, 20 eigenpairs on 1536 subdomains"),
    ]
}

/// A preset configuration by name.
pub fn preset(name: &str) -> Option<RunConfig> {
    let base = RunConfig {
        output_dir: format!("out/{name}"),
        ..RunConfig::default()
    };
    let cfg = match name {
        "smoke" => base,
        "table1-desk" => RunConfig {
            domain: "box2d".to_string(),
            coarse_n: 16,
            refine_levels: vec![2, 3, 4],
            s: 19,
            ..base
        },
        "table2-desk" => RunConfig {
            domain: "box2d".to_string(),
            coarse_n: 16,
            refine_levels: vec![2],
            s: 1,
            scalability_n: vec![4, 8, 16],
            ..base
        },
        "table3-desk" => RunConfig {
            domain: "lshape2d".to_string(),
            coarse_n: 16,
            refine_levels: vec![2, 3],
            s: 20,
            ..base
        },
        "table4-desk" => RunConfig {
            domain: "lshape2d".to_string(),
            coarse_n: 16,
            refine_levels: vec![2],
            s: 20,
            scalability_n: vec![8, 16],
            ..base
        },
        "table5-desk" => RunConfig {
            domain: "box3d".to_string(),
            coarse_n: 8,
            refine_levels: vec![1],
            s: 20,
            overlap_ratio: 0.5,
            tau: 0,
            ..base
        },
        "table6-desk" => RunConfig {
            domain: "box3d".to_string(),
            coarse_n: 4,
            refine_levels: vec![1, 2],
            s: 6,
            overlap_ratio: 0.5,
            ..base
        },
        "table7-desk" => RunConfig {
            domain: "lshape3d".to_string(),
            coarse_n: 8,
            refine_levels: vec![1],
            s: 20,
            overlap_ratio: 0.5,
            tau: 0,
            ..base
        },
        "table8-desk" => RunConfig {
            domain: "lshape3d".to_string(),
            coarse_n: 16,
            refine_levels: vec![1],
            s: 20,
            overlap_ratio: 0.5,
            tau: 0,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}

/// Outcome of one solver run (a refinement level or a scaling point).
#[derive(Debug, Clone, Serialize)]
pub struct LevelRun {
    /// Coarse mesh size used for this run.
    pub coarse_n: usize,
    /// Refinement level relative to that coarse mesh.
    pub level: usize,
    /// Fine mesh cells per axis.
    pub fine_n: usize,
    /// Free unknowns of the fine problem.
    pub dof: usize,
    /// Number of subdomains.
    pub n_subdomains: usize,
    /// Chromatic bound on simultaneously overlapping subdomains.
    pub n_colors: usize,
    /// Overlap layers grown around each subdomain.
    pub overlap_layers: usize,
    /// Geometric overlap width.
    pub delta: f64,
    /// Coarse element diameter.
    pub h_coarse: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Whether the tolerance was met.
    pub converged: bool,
    /// Final summed Ritz value change.
    pub stop_value: f64,
    /// Final eigenvalues, ascending.
    pub lambdas: Vec<f64>,
    /// Coarse-pencil eigenvalues used by the preconditioner (s + 1).
    pub coarse_lambdas: Vec<f64>,
    /// Wall time of the solve in milliseconds.
    pub wall_ms: f64,
    /// Full iteration history (written to history.jsonl, not the report).
    #[serde(skip)]
    pub history: Vec<IterationRecord>,
}

/// Diagnostics summary for the finest level of a run.
#[derive(Debug, Clone, Serialize)]
pub struct GapSummary {
    /// Refinement level the summary refers to.
    pub level: usize,
    /// Reference flavor: "dense" or "iterative".
    pub reference: String,
    /// Mass-metric gap between the converged block and the reference.
    pub final_gap: f64,
    /// Per-pair eigenvalue errors against the reference.
    pub lambda_errors: Vec<f64>,
    /// Fitted per-iteration error reduction factor, when available.
    pub gamma_hat: Option<f64>,
    /// Coefficient of determination of the rate fit.
    pub r2: Option<f64>,
    /// Number of iterations entering the fit.
    pub fit_points: usize,
}

/// Everything a run produces, serialized to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// Preset the run started from, if any.
    pub preset: Option<String>,
    /// Resolved configuration.
    pub config: RunConfig,
    /// One entry per refinement level.
    pub levels: Vec<LevelRun>,
    /// One entry per subdomain-scaling point.
    pub scalability: Vec<LevelRun>,
    /// Diagnostics summary (with `diagnostics = true`).
    pub gap: Option<GapSummary>,
    /// Total wall time in milliseconds.
    pub total_ms: f64,
}

struct Artifacts {
    p: FeProblem,
    d: Decomposition,
    cs: CoarseSpectral,
    result: EigResult,
}

fn run_single(
    spec: &DomainSpec,
    cfg: &RunConfig,
    coarse_n: usize,
    level: usize,
) -> Result<(LevelRun, Artifacts)> {
    let coarse = build_coarse_mesh(spec, coarse_n)?;
    let mut fine = coarse.clone();
    for _ in 0..level {
        fine = refine_uniform(&fine);
    }
    let p = assemble(&Arc::new(fine))?;
    let layers = overlap_layers_for_ratio(&coarse, &p.mesh, cfg.overlap_ratio);
    let d = build_decomposition(&coarse, &p.mesh, layers)?;
    let cs = build_coarse_spectral(&p, &coarse, cfg.s)?;
    let scfg = SolverConfig {
        s: cfg.s,
        tol: cfg.tol,
        tau: cfg.tau,
        max_outer: cfg.max_outer,
        subspace_policy: cfg.subspace_policy,
        overlap_ratio: cfg.overlap_ratio,
        coarse_n,
        diagnostics: false,
    };
    let t = Instant::now();
    let result = solve(&p, &d, &cs, &scfg)?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    let run = LevelRun {
        coarse_n,
        level,
        fine_n: p.mesh.n_axis[0],
        dof: p.n_free,
        n_subdomains: d.n_sub,
        n_colors: d.n_colors,
        overlap_layers: layers,
        delta: d.delta,
        h_coarse: d.h_coarse,
        iterations: result.iterations,
        converged: result.converged,
        stop_value: result
            .history
            .last()
            .and_then(|r| r.sum_delta)
            .unwrap_or(0.0),
        lambdas: result.lambdas.clone(),
        coarse_lambdas: cs.eigvals.clone(),
        wall_ms,
        history: result.history.clone(),
    };
    Ok((run, Artifacts { p, d, cs, result }))
}

fn build_gap_summary(cfg: &RunConfig, level: usize, art: &Artifacts) -> Result<GapSummary> {
    let (flavor, reference) = if art.p.n_free <= DENSE_EIG_LIMIT {
        ("dense", reference_solve(&art.p, cfg.s)?)
    } else {
        (
            "iterative",
            reference_solve_iterative(&art.p, &art.d, &art.cs, cfg.s)?,
        )
    };
    let rep = gap_report(&art.p, &art.result, &reference, cfg.tol)?;
    Ok(GapSummary {
        level,
        reference: flavor.to_string(),
        final_gap: rep.final_gap,
        lambda_errors: rep.lambda_errors,
        gamma_hat: rep.rate.map(|r| r.gamma_hat),
        r2: rep.rate.map(|r| r.r2),
        fit_points: rep.rate.map(|r| r.n_points).unwrap_or(0),
    })
}

/// Runs the full experiment described by a configuration: every
/// refinement level, the optional subdomain-scaling sweep, and the
/// optional diagnostics summary on the finest level.
pub fn run_experiment(cfg: &RunConfig, preset_name: Option<&str>) -> Result<RunReport> {
    validate_config(cfg)?;
    let spec = DomainSpec::from_name(&cfg.domain)?;
    let t0 = Instant::now();
    let mut levels = Vec::new();
    let mut last: Option<(usize, Artifacts)> = None;
    for &lev in &cfg.refine_levels {
        let (run, art) = run_single(&spec, cfg, cfg.coarse_n, lev)?;
        levels.push(run);
        last = Some((lev, art));
    }
    let mut scalability = Vec::new();
    if !cfg.scalability_n.is_empty() {
        let max_level = *cfg.refine_levels.iter().max().expect("non-empty");
        let fine_n = cfg.coarse_n << max_level;
        for &cn in &cfg.scalability_n {
            let lev = level_for(fine_n, cn)?;
            let (run, _) = run_single(&spec, cfg, cn, lev)?;
            scalability.push(run);
        }
    }
    let gap = match (&last, cfg.diagnostics) {
        (Some((lev, art)), true) => Some(build_gap_summary(cfg, *lev, art)?),
        _ => None,
    };
    Ok(RunReport {
        preset: preset_name.map(|s| s.to_string()),
        config: cfg.clone(),
        levels,
        scalability,
        gap,
        total_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// Formats a number with ten significant digits, trimming trailing
/// zeros, like C's `%.10g`.
pub fn sig10(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |mut s: String| {
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        s
    };
    if (-4..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        let formatted = format!("{x:.9e}");
        let (mantissa, exponent) = formatted.split_once('e').expect("exponent present");
        format!("{}e{}", trim(mantissa.to_string()), exponent)
    }
}

/// Renders `lambdas.csv`: final eigenvalues of every refinement level.
pub fn lambdas_csv(report: &RunReport) -> String {
    let mut out = String::from("level,dof,i,lambda\n");
    for run in &report.levels {
        for (i, l) in run.lambdas.iter().enumerate() {
            writeln!(out, "{},{},{},{}", run.level, run.dof, i + 1, sig10(*l))
                .expect("string writes cannot fail");
        }
    }
    out
}

/// Renders `history.jsonl`: one JSON object per outer iteration of every
/// refinement level.
pub fn history_jsonl(report: &RunReport) -> String {
    let mut out = String::new();
    for run in &report.levels {
        for rec in &run.history {
            let line = serde_json::json!({
                "level": run.level,
                "k": rec.k,
                "lambdas": rec.lambdas,
                "sum_delta": rec.sum_delta,
                "wall_ms": rec.wall_ms,
                "res_bnorms": rec.res_bnorms,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

/// Writes `report.json`, `lambdas.csv`, and `history.jsonl` into the
/// directory, creating it if needed.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("lambdas.csv"), lambdas_csv(report))?;
    std::fs::write(dir.join("history.jsonl"), history_jsonl(report))?;
    Ok(())
}
