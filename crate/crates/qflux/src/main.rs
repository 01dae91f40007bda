//! Command line front end: solves, estimate sweeps, lemma verification,
//! rearrangement norms. Every CSV ends with `# seed=<n> version=<v>`;
//! exit code 0 means all asserted contracts passed, 1 means a contract
//! violation (details land in the JSON report), 2 means a usage error.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use qflux::config::{self, RunConfig};
use qflux::estimates::{self, RATIO_SENTINEL};
use qflux::grid::{GridDomain, ScalarField};
use qflux::matrix_lemma::{min_constant, MinBudget};
use qflux::rearrangement::{
    curvature_admissibility, lorentz_norm, marcinkiewicz_norm, weak_log_norm, BoundaryCurve,
    WeightedSamples,
};
use qflux::simplex_forms::{
    newton_chain_check, phi_determinant, phi_product, phi_symmetric, sample_simplex,
    SimplexPoint,
};
use qflux::solver::{self, BoundaryCondition, SolveError, SolveReport};
use qflux::structure::StructureFunction;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "qflux", version, about = "Quasilinear elliptic solver and verification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one problem from a config file; writes u.csv, flux.csv, report.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Global estimate report over a p sweep and a refinement ladder.
    VerifyEstimate {
        #[arg(long)]
        config: PathBuf,
        /// p values, e.g. p=1.5,2,3,4.5
        #[arg(long, default_value = "p=1.5,2,3,4.5")]
        sweep: String,
        #[arg(long, default_value_t = 3)]
        refine: usize,
    },
    /// Estimate the matrix-lemma constant C(n, theta) and compare with the envelope.
    VerifyMatrixLemma {
        #[arg(long, default_value = "-0.9,-0.5,0,1,3", allow_hyphen_values = true)]
        theta: String,
        #[arg(long, default_value = "2,3,4")]
        n: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        starts: usize,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Check the simplex form phi: triple agreement, nonnegativity, Newton chains.
    VerifySymmetricLemma {
        #[arg(long, default_value = "3")]
        n: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Test fixture: additive defect injected into the determinant form.
        #[arg(long, hide = true, default_value_t = 0.0, allow_hyphen_values = true)]
        phi_perturb: f64,
    },
    /// Rearrangement norms of weighted samples, or a curvature admissibility report.
    Norms {
        /// CSV of value,weight rows.
        #[arg(long, conflicts_with = "curve")]
        input: Option<PathBuf>,
        /// circle:r=1 | stadium:a=2,r=0.5 | spike:kappa0=1,delta=0.05,length=6
        #[arg(long)]
        curve: Option<String>,
        /// Norms to evaluate in --input mode.
        #[arg(long, default_value = "marcinkiewicz:q=2")]
        norm: String,
        /// Radii for the curvature report in --curve mode.
        #[arg(long, default_value = "1,0.5,0.25,0.125")]
        radii: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Flux-regular family u = |x|^beta: W^{1,2} flux norm vs discrete Hessian norm.
    Gallery {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 4)]
        refine: usize,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        h0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Local estimate sweep: seeded interior centers, two ball radii per center.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "p=1.5,2,3,4.5")]
        sweep: String,
        #[arg(long, default_value_t = 5)]
        centers: usize,
        #[arg(long, default_value = "0.125,0.25")]
        radii: String,
    },
}

enum Failure {
    Usage(String),
    Contract(String),
}

type CliResult = Result<(), Failure>;

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Contract(msg)) => {
            eprintln!("contract violation: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Solve { config } => cmd_solve(&config),
        Cmd::VerifyEstimate { config, sweep, refine } => cmd_verify_estimate(&config, &sweep, refine),
        Cmd::VerifyMatrixLemma { theta, n, seed, out, starts, iters, samples } => {
            cmd_verify_matrix(&theta, &n, seed, &out, MinBudget { starts, iters, samples })
        }
        Cmd::VerifySymmetricLemma { n, samples, seed, out, phi_perturb } => {
            cmd_verify_symmetric(&n, samples, seed, &out, phi_perturb)
        }
        Cmd::Norms { input, curve, norm, radii, seed, out } => {
            cmd_norms(input.as_deref(), curve.as_deref(), &norm, &radii, seed, &out)
        }
        Cmd::Gallery { beta, p, refine, h0, seed, out } => cmd_gallery(beta, p, refine, h0, seed, &out),
        Cmd::Sweep { config, sweep, centers, radii } => cmd_sweep(&config, &sweep, centers, &radii),
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String], seed: u64) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(usage)?;
    }
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    text.push_str(&format!("# seed={seed} version={VERSION}\n"));
    std::fs::write(path, text).map_err(usage)
}

fn write_json(path: &Path, value: &Value) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(usage)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(usage)?;
    text.push('\n');
    std::fs::write(path, text).map_err(usage)
}

/// Contract checks accumulated by the verify commands; serialized into the
/// JSON report with the failing metrics.
struct Checks {
    failures: Vec<Value>,
}

impl Checks {
    fn new() -> Self {
        Self { failures: Vec::new() }
    }

    fn require(&mut self, ok: bool, name: &str, metric: Value) {
        if !ok {
            self.failures.push(json!({ "check": name, "metric": metric }));
        }
    }

    fn finish(self, path: &Path, mut body: serde_json::Map<String, Value>, seed: u64) -> CliResult {
        let failed = !self.failures.is_empty();
        body.insert("status".into(), json!(if failed { "fail" } else { "pass" }));
        body.insert("failures".into(), Value::Array(self.failures));
        body.insert("seed".into(), json!(seed));
        body.insert("version".into(), json!(VERSION));
        write_json(path, &Value::Object(body))?;
        if failed {
            Err(Failure::Contract(format!("see {}", path.display())))
        } else {
            Ok(())
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("bad number '{t}' in list"))))
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("bad integer '{t}' in list"))))
        .collect()
}

/// `p=1.5,2,3` with an optional `p=` prefix.
fn parse_sweep(s: &str) -> Result<Vec<f64>, Failure> {
    let body = s.strip_prefix("p=").unwrap_or(s);
    let ps = parse_list(body)?;
    if ps.is_empty() {
        return Err(usage("empty sweep"));
    }
    Ok(ps)
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    config::parse_config(path).map_err(usage)
}

fn stage_json(rep: &SolveReport) -> Value {
    Value::Array(
        rep.stages
            .iter()
            .map(|s| {
                json!({
                    "epsilon": s.epsilon,
                    "newton_iterations": s.newton_iterations,
                    "grad_norm": s.grad_norm,
                    "energy": s.energy,
                })
            })
            .collect(),
    )
}

fn cmd_solve(config: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let sf = cfg.build_structure().map_err(usage)?;
    let dom = cfg.build_domain().map_err(usage)?;
    let f = cfg.build_rhs(&dom).map_err(usage)?;
    let opts = cfg.solve_options();
    let solved = match cfg.bc {
        BoundaryCondition::Dirichlet => solver::solve_dirichlet(&sf, &dom, &f, &opts),
        BoundaryCondition::Neumann => solver::solve_neumann(&sf, &dom, &f, &opts),
    };
    let (u, rep) = match solved {
        Ok(pair) => pair,
        Err(e @ SolveError::IncompatibleData { .. }) => return Err(usage(e)),
        Err(e @ (SolveError::InvalidSchedule | SolveError::DomainMismatch)) => return Err(usage(e)),
        Err(e) => {
            let report = json!({
                "status": "fail",
                "error": e.to_string(),
                "seed": cfg.seed,
                "version": VERSION,
            });
            write_json(&cfg.out.join("report.json"), &report)?;
            return Err(Failure::Contract(e.to_string()));
        }
    };
    let v = estimates::flux(&sf, &u);
    let mut urows = Vec::new();
    let mut vrows = Vec::new();
    for (i, j) in dom.in_domain_nodes() {
        let (x, y) = (dom.x(i), dom.y(j));
        urows.push(format!("{x},{y},{}", u.get(i, j)));
        let [vx, vy] = v.get(i, j);
        vrows.push(format!("{x},{y},{vx},{vy}"));
    }
    write_csv(&cfg.out.join("u.csv"), "x,y,u", &urows, cfg.seed)?;
    write_csv(&cfg.out.join("flux.csv"), "x,y,vx,vy", &vrows, cfg.seed)?;
    let report = json!({
        "status": "pass",
        "stages": stage_json(&rep),
        "iterations": rep.total_iterations(),
        "residual_l2": rep.residual_l2,
        "energy": rep.energy,
        "seed": cfg.seed,
        "version": VERSION,
    });
    write_json(&cfg.out.join("report.json"), &report)
}

struct EstimateRow {
    p: f64,
    h: f64,
    domain: &'static str,
    rep: estimates::EstimateReport,
}

fn solve_and_estimate(
    p: f64,
    cfg: &RunConfig,
    h: f64,
) -> Result<estimates::EstimateReport, String> {
    let sf = StructureFunction::power_law(p).map_err(|e| e.to_string())?;
    let spec = cfg.domain.with_h(h);
    let dom = spec.build().map_err(|e| e.to_string())?;
    let f = cfg.build_rhs(&dom).map_err(|e| e.to_string())?;
    let opts = cfg.solve_options();
    let (u, rep) = match cfg.bc {
        BoundaryCondition::Dirichlet => solver::solve_dirichlet(&sf, &dom, &f, &opts),
        BoundaryCondition::Neumann => solver::solve_neumann(&sf, &dom, &f, &opts),
    }
    .map_err(|e| format!("p={p} h={h}: {e}"))?;
    estimates::global_estimate(&sf, &u, &f, 10.0 * rep.residual_l2)
        .map_err(|e| format!("p={p} h={h}: {e}"))
}

fn cmd_verify_estimate(config: &Path, sweep: &str, refine: usize) -> CliResult {
    let cfg = load_config(config)?;
    let ps = parse_sweep(sweep)?;
    if refine == 0 {
        return Err(usage("refine must be at least 1"));
    }
    let h0 = cfg.domain.h();
    let tasks: Vec<(f64, f64)> = ps
        .iter()
        .flat_map(|&p| (0..refine).map(move |k| (p, h0 / (1 << k) as f64)))
        .collect();
    let results: Vec<Result<EstimateRow, String>> = tasks
        .par_iter()
        .map(|&(p, h)| {
            solve_and_estimate(p, &cfg, h).map(|rep| EstimateRow {
                p,
                h,
                domain: cfg.domain.name(),
                rep,
            })
        })
        .collect();
    let mut checks = Checks::new();
    let mut rows = Vec::new();
    let mut by_p: Vec<Vec<&EstimateRow>> = vec![Vec::new(); ps.len()];
    for (res, &(p, h)) in results.iter().zip(&tasks) {
        match res {
            Ok(row) => {
                let r = &row.rep;
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{}",
                    row.p,
                    row.h,
                    row.domain,
                    r.norm_f_l2,
                    r.norm_v_l2,
                    r.norm_grad_v_l2,
                    r.ratio_upper,
                    r.ratio_lower,
                    r.residual_l2
                ));
                checks.require(
                    r.ratio_upper >= 0.05 && r.ratio_upper <= 20.0,
                    "ratio_upper_band",
                    json!({ "p": row.p, "h": row.h, "ratio_upper": r.ratio_upper }),
                );
                checks.require(
                    r.lower_certified,
                    "structural_lower_bound",
                    json!({ "p": row.p, "h": row.h }),
                );
                by_p[ps.iter().position(|&q| q == row.p).unwrap()].push(row);
            }
            Err(msg) => {
                checks.require(false, "solve", json!({ "p": p, "h": h, "error": msg }));
            }
        }
    }
    for rows_p in &by_p {
        for pair in rows_p.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let drift = (a.rep.ratio_upper - b.rep.ratio_upper).abs() / b.rep.ratio_upper.abs();
            checks.require(
                drift <= 0.10,
                "ratio_cauchy_in_refinement",
                json!({ "p": a.p, "h_coarse": a.h, "h_fine": b.h, "drift": drift }),
            );
        }
    }
    write_csv(
        &cfg.out.join("estimates.csv"),
        "p,h,domain,norm_f_l2,norm_V_l2,norm_gradV_l2,ratio_upper,ratio_lower,residual",
        &rows,
        cfg.seed,
    )?;
    let mut body = serde_json::Map::new();
    body.insert("rows".into(), json!(rows.len()));
    checks.finish(&cfg.out.join("estimate_report.json"), body, cfg.seed)
}

fn cmd_verify_matrix(theta: &str, n: &str, seed: u64, out: &Path, budget: MinBudget) -> CliResult {
    let thetas = parse_list(theta)?;
    let ns = parse_usize_list(n)?;
    let combos: Vec<(f64, usize)> =
        thetas.iter().flat_map(|&t| ns.iter().map(move |&m| (t, m))).collect();
    let results: Vec<_> = combos
        .par_iter()
        .enumerate()
        .map(|(idx, &(t, m))| {
            let clock = Instant::now();
            let res = min_constant(t, m, budget, seed.wrapping_add(idx as u64));
            (res, clock.elapsed().as_secs_f64())
        })
        .collect();
    let mut checks = Checks::new();
    let mut rows = Vec::new();
    for (&(t, m), (res, wall)) in combos.iter().zip(&results) {
        let r = res.as_ref().map_err(|e| usage(e.to_string()))?;
        let gap = (r.value - r.upper_bound).abs();
        rows.push(format!(
            "{t},{m},{},{},{gap},{},{wall:.6}",
            r.value, r.upper_bound, r.evaluations
        ));
        if t == -1.0 {
            checks.require(
                r.value.abs() <= 1e-6 && r.boundary_theta,
                "boundary_theta_zero",
                json!({ "theta": t, "n": m, "value": r.value }),
            );
        } else {
            checks.require(
                r.value > 0.0,
                "constant_positive",
                json!({ "theta": t, "n": m, "value": r.value }),
            );
            checks.require(
                gap <= 1e-3,
                "envelope_gap",
                json!({ "theta": t, "n": m, "gap": gap }),
            );
        }
    }
    write_csv(
        &out.join("matrix_lemma.csv"),
        "theta,n,C_estimate,upper_bound,gap,evaluations,wall_time",
        &rows,
        seed,
    )?;
    let mut body = serde_json::Map::new();
    body.insert("combinations".into(), json!(combos.len()));
    checks.finish(&out.join("matrix_lemma_report.json"), body, seed)
}

fn cmd_verify_symmetric(n: &str, samples: usize, seed: u64, out: &Path, perturb: f64) -> CliResult {
    let ns = parse_usize_list(n)?;
    for &m in &ns {
        if !(2..=12).contains(&m) {
            return Err(usage(format!("n = {m} must lie in [2, 12]")));
        }
    }
    if samples == 0 {
        return Err(usage("samples must be positive"));
    }
    // Fixture hook: a nonzero perturbation models a defective determinant
    // expansion and must trip the contract checks.
    let det = |eta: &[f64]| phi_determinant(eta) + perturb * (1.0 + eta[0]);
    let mut checks = Checks::new();
    let mut rows = Vec::new();
    for (stream, &m) in ns.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64 + 1);
        let mut max_gap = 0.0f64;
        let mut min_phi = f64::INFINITY;
        let mut newton_violations = 0usize;
        let mut evaluations = 0usize;
        for _ in 0..samples {
            let eta = sample_simplex(m, &mut rng);
            let (d, p, s) = (det(&eta), phi_product(&eta), phi_symmetric(&eta));
            let gap = (d - p).abs().max((s - p).abs()) / (1.0 + p.abs());
            max_gap = max_gap.max(gap);
            min_phi = min_phi.min(d.min(p).min(s));
            evaluations += 1;
            let pt = SimplexPoint::new(eta).expect("simplex sample");
            for k in 1..m {
                let (lhs, r1, r2) = newton_chain_check(&pt, k).expect("k in range");
                let tol = 1e-12 * (1.0 + r2.abs());
                if lhs > r1 + tol || r1 > r2 + tol {
                    newton_violations += 1;
                }
            }
        }
        let mut vertex_gap = 0.0f64;
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            vertex_gap = vertex_gap.max(phi_product(&e).abs()).max(det(&e).abs());
        }
        let bary = SimplexPoint::new(vec![1.0 / (m as f64 + 1.0); m]).unwrap();
        let mut barycenter_gap = 0.0f64;
        for k in 1..m {
            let (lhs, r1, _) = newton_chain_check(&bary, k).unwrap();
            barycenter_gap = barycenter_gap.max((lhs - r1).abs());
        }
        let face_bary = SimplexPoint::new(vec![1.0 / m as f64; m]).unwrap();
        for k in 1..m {
            let (lhs, r1, r2) = newton_chain_check(&face_bary, k).unwrap();
            barycenter_gap = barycenter_gap.max((lhs - r1).abs()).max((r1 - r2).abs());
        }
        rows.push(format!(
            "{m},{samples},{min_phi},{max_gap},{vertex_gap},{newton_violations},{barycenter_gap},{evaluations}"
        ));
        checks.require(
            max_gap <= 1e-10,
            "triple_agreement",
            json!({ "n": m, "max_identity_gap": max_gap }),
        );
        checks.require(min_phi >= -1e-12, "nonnegativity", json!({ "n": m, "min_phi": min_phi }));
        checks.require(
            vertex_gap <= 1e-12,
            "vertex_zeros",
            json!({ "n": m, "vertex_gap": vertex_gap }),
        );
        checks.require(
            newton_violations == 0,
            "newton_chain",
            json!({ "n": m, "violations": newton_violations }),
        );
        checks.require(
            barycenter_gap <= 1e-12,
            "barycenter_equality",
            json!({ "n": m, "barycenter_gap": barycenter_gap }),
        );
    }
    write_csv(
        &out.join("symmetric_lemma.csv"),
        "n,samples,min_phi,max_identity_gap,vertex_gap,newton_violations,barycenter_gap,evaluations",
        &rows,
        seed,
    )?;
    let mut body = serde_json::Map::new();
    body.insert("n_values".into(), json!(ns));
    body.insert("samples".into(), json!(samples));
    checks.finish(&out.join("symmetric_lemma_report.json"), body, seed)
}

fn parse_kv_spec(value: &str) -> Result<(&str, Vec<(String, f64)>), String> {
    let (kind, rest) = value.split_once(':').unwrap_or((value, ""));
    let mut pairs = Vec::new();
    if !rest.is_empty() {
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected name=number, got '{part}'"))?;
            let num: f64 =
                v.trim().parse().map_err(|_| format!("bad number '{}'", v.trim()))?;
            pairs.push((k.trim().to_string(), num));
        }
    }
    Ok((kind.trim(), pairs))
}

fn field(pairs: &[(String, f64)], key: &str, what: &str) -> Result<f64, Failure> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|&(_, v)| v)
        .ok_or_else(|| usage(format!("{what} needs '{key}'")))
}

fn parse_curve(spec: &str) -> Result<BoundaryCurve, Failure> {
    let (kind, pairs) = parse_kv_spec(spec).map_err(usage)?;
    match kind {
        "circle" => Ok(BoundaryCurve::circle(field(&pairs, "r", "circle")?)),
        "stadium" => {
            Ok(BoundaryCurve::stadium(field(&pairs, "a", "stadium")?, field(&pairs, "r", "stadium")?))
        }
        "spike" => Ok(BoundaryCurve::log_spike(
            field(&pairs, "kappa0", "spike")?,
            field(&pairs, "delta", "spike")?,
            field(&pairs, "length", "spike")?,
        )),
        other => Err(usage(format!("unknown curve '{other}' (circle|stadium|spike)"))),
    }
}

fn load_samples(path: &Path) -> Result<WeightedSamples, Failure> {
    let text = std::fs::read_to_string(path).map_err(usage)?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let header = ln == 0 && line.split(',').any(|c| c.trim().parse::<f64>().is_err());
        if line.is_empty() || line.starts_with('#') || header {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 {
            return Err(usage(format!("{}: row {}: expected value,weight", path.display(), ln + 1)));
        }
        let v: f64 = cols[0].trim().parse().map_err(usage)?;
        let w: f64 = cols[1].trim().parse().map_err(usage)?;
        pairs.push((v, w));
    }
    WeightedSamples::new(pairs).map_err(usage)
}

fn cmd_norms(
    input: Option<&Path>,
    curve: Option<&str>,
    norm: &str,
    radii: &str,
    seed: u64,
    out: &Path,
) -> CliResult {
    match (input, curve) {
        (Some(path), None) => {
            let ws = load_samples(path)?;
            let mut rows = Vec::new();
            for spec in norm.split(';') {
                let spec = spec.trim();
                let (kind, pairs) = parse_kv_spec(spec).map_err(usage)?;
                let value = match kind {
                    "marcinkiewicz" => {
                        marcinkiewicz_norm(&ws, field(&pairs, "q", "marcinkiewicz")?)
                            .map_err(usage)?
                    }
                    "lorentz" => lorentz_norm(
                        &ws,
                        field(&pairs, "q", "lorentz")?,
                        field(&pairs, "sigma", "lorentz")?,
                    )
                    .map_err(usage)?,
                    "weaklog" => {
                        let c = field(&pairs, "c", "weaklog").ok();
                        weak_log_norm(&ws, c).map_err(usage)?
                    }
                    other => {
                        return Err(usage(format!(
                            "unknown norm '{other}' (marcinkiewicz|lorentz|weaklog)"
                        )))
                    }
                };
                rows.push(format!("{spec},{value}"));
            }
            write_csv(&out.join("norms.csv"), "norm,value", &rows, seed)
        }
        (None, Some(spec)) => {
            let curve = parse_curve(spec)?;
            let rs = parse_list(radii)?;
            let report = curvature_admissibility(&curve, &rs);
            let rows: Vec<String> = report
                .iter()
                .map(|r| format!("{},{},{}", r.r, r.sup_point_arclength, r.weak_log_norm))
                .collect();
            write_csv(
                &out.join("curvature.csv"),
                "r,sup_point_arclength,weak_log_norm",
                &rows,
                seed,
            )
        }
        _ => Err(usage("norms needs exactly one of --input or --curve")),
    }
}

fn cmd_gallery(beta: f64, p: f64, refine: usize, h0: f64, seed: u64, out: &Path) -> CliResult {
    if refine < 2 {
        return Err(usage("refine must be at least 2"));
    }
    if !(h0 > 0.0 && h0 < 0.5) {
        return Err(usage(format!("h0 = {h0} out of range")));
    }
    let domains: Vec<Arc<GridDomain>> = (0..refine)
        .map(|k| GridDomain::rectangle_at(-0.5, -0.5, 1.0, 1.0, h0 / (1 << k) as f64))
        .collect::<Result<_, _>>()
        .map_err(usage)?;
    let rep = estimates::gallery_counterexample(beta, p, &domains).map_err(usage)?;
    let rows: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{},{},{}", r.h, r.norm_v_w12, r.norm_hess_l2))
        .collect();
    write_csv(&out.join("gallery.csv"), "h,norm_V_w12,norm_hess_u_l2", &rows, seed)?;
    let report = json!({
        "status": "pass",
        "beta": rep.beta,
        "p": rep.p,
        "hess_exponent": rep.hess_exponent,
        "w22_fails": rep.w22_fails,
        "seed": seed,
        "version": VERSION,
    });
    write_json(&out.join("gallery_report.json"), &report)
}

/// Seeded centers whose guarded ball B_{2R} is compactly interior, drawn
/// by rejection from the shrunken bounding box; None when the domain
/// leaves no room.
fn feasible_centers(
    dom: &GridDomain,
    radius: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<[f64; 2]>> {
    let margin = 2.0 * radius + 2.0 * dom.spacing();
    let (x0, x1) = (dom.x(0) + margin, dom.x(dom.nx() - 1) - margin);
    let (y0, y1) = (dom.y(0) + margin, dom.y(dom.ny() - 1) - margin);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    let mut centers = Vec::with_capacity(count);
    for _ in 0..200 * count {
        if centers.len() == count {
            break;
        }
        let c = [rng.gen_range(x0..x1), rng.gen_range(y0..y1)];
        if estimates::ball_compactly_interior(dom, c, 2.0 * radius) {
            centers.push(c);
        }
    }
    (centers.len() == count).then_some(centers)
}

fn cmd_sweep(config: &Path, sweep: &str, centers: usize, radii: &str) -> CliResult {
    let cfg = load_config(config)?;
    let ps = parse_sweep(sweep)?;
    let rs = parse_list(radii)?;
    if centers == 0 {
        return Err(usage("centers must be positive"));
    }
    let dom = cfg.build_domain().map_err(usage)?;
    let f = cfg.build_rhs(&dom).map_err(usage)?;
    let opts = cfg.solve_options();
    let solves: Vec<Result<(StructureFunction, ScalarField), String>> = ps
        .par_iter()
        .map(|&p| {
            let sf = StructureFunction::power_law(p).map_err(|e| e.to_string())?;
            let (u, _) = match cfg.bc {
                BoundaryCondition::Dirichlet => solver::solve_dirichlet(&sf, &dom, &f, &opts),
                BoundaryCondition::Neumann => solver::solve_neumann(&sf, &dom, &f, &opts),
            }
            .map_err(|e| format!("p={p}: {e}"))?;
            Ok((sf, u))
        })
        .collect();
    let mut checks = Checks::new();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (pi, (res, &p)) in solves.iter().zip(&ps).enumerate() {
        let (sf, u) = match res {
            Ok(pair) => pair,
            Err(msg) => {
                checks.require(false, "solve", json!({ "p": p, "error": msg }));
                continue;
            }
        };
        for (ri, &radius) in rs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((pi * rs.len() + ri) as u64 + 1);
            let Some(points) = feasible_centers(&dom, radius, centers, &mut rng) else {
                skipped.push(json!({ "p": p, "radius": radius, "reason": "no interior center fits B_2R" }));
                continue;
            };
            for c in points {
                let (lhs, rhs, ratio) =
                    estimates::local_estimate(sf, u, &f, c, radius).map_err(usage)?;
                rows.push(format!(
                    "{p},{},{},{},{},{radius},{lhs},{rhs},{ratio}",
                    dom.spacing(),
                    cfg.domain.name(),
                    c[0],
                    c[1]
                ));
                checks.require(
                    ratio == RATIO_SENTINEL || ratio <= 20.0,
                    "local_ratio_bound",
                    json!({ "p": p, "center": c, "radius": radius, "ratio": ratio }),
                );
            }
        }
    }
    write_csv(
        &cfg.out.join("local_sweep.csv"),
        "p,h,domain,cx,cy,R,lhs,rhs,ratio",
        &rows,
        cfg.seed,
    )?;
    let mut body = serde_json::Map::new();
    body.insert("rows".into(), json!(rows.len()));
    body.insert("skipped".into(), Value::Array(skipped));
    checks.finish(&cfg.out.join("local_sweep_report.json"), body, cfg.seed)
}
