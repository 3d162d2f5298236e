//! Command-line front end: solves wars of attrition from JSON specs and
//! emits plot-ready JSON/CSV artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrition::closedform;
use attrition::interp::CurveInterp;
use attrition::model::{GameSpec, SocietySpec, ValueDistribution};
use attrition::shooting::{self, EquilibriumSolution, SolverOptions};
use attrition::verify::{self, Relation, VerificationReport};
use attrition::welfare;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "attrition",
    about = "Equilibrium solver for asymmetric wars of attrition over public-good provision"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the JSON game or society spec.
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Output directory for artifacts (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Relative integration tolerance (default 1e-9).
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,

    /// Absolute integration tolerance (default 1e-11).
    #[arg(long, default_value_t = 1e-11)]
    atol: f64,

    /// Integration horizon override (derived from the game when omitted).
    #[arg(long)]
    horizon: Option<f64>,

    /// RNG seed for simulation (default 0).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Monte Carlo trial count (default 1000000).
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,

    /// Samples per curve segment (default 600).
    #[arg(long, default_value_t = 600)]
    grid: usize,

    /// Sweep axis: param=lo:hi:steps, where param is c<i>, r<i>, or bound<i>.
    #[arg(long)]
    sweep: Option<String>,

    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium numerically and emit equilibrium.json + curves.csv.
    Solve,
    /// Solve, audit, and certify; emits report.json.
    Verify,
    /// Solve and compute welfare quantities; emits welfare.json.
    Welfare,
    /// Solve and run seeded Monte Carlo play; emits report.json.
    Simulate,
    /// Analytic LTD/U-LTD solution; emits equilibrium.json + curves.csv.
    Ltd,
    /// Solve across a parameter range; emits sweep.csv.
    Sweep,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug)]
enum RunError {
    Config(String),
    Solver(String),
    Io(String),
}

impl RunError {
    fn code(&self) -> u8 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Solver(_) => EXIT_SOLVER,
            RunError::Io(_) => EXIT_IO,
        }
    }
    fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Solver(m) | RunError::Io(m) => m,
        }
    }
}

fn io_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Io(e.to_string())
}

/// Input spec: either an explicit game or a grouped society.
#[derive(Deserialize)]
#[serde(untagged)]
enum InputSpec {
    Game(GameSpec),
    Society(SocietySpec),
}

#[derive(Serialize, Deserialize)]
struct Tolerances {
    rtol: f64,
    atol: f64,
    fp_tol: f64,
}

/// The solve/ltd artifact: the solution plus run metadata.
#[derive(Serialize, Deserialize)]
struct EquilibriumArtifact {
    tolerances: Tolerances,
    active_sets: Vec<Vec<usize>>,
    #[serde(flatten)]
    solution: EquilibriumSolution,
}

#[derive(Serialize)]
struct WelfareSummary {
    atom0: f64,
    never_mass: f64,
    mass_defect: f64,
    /// E[e^{-r t_m}] at player 0's rate.
    discount: f64,
    /// E[e^{-rho r t_m}] at the damped rate, rho = 1 - v_lo/c of player 0.
    discount_rho: f64,
    /// The maximal-bound constant, when the game has the U-LTD form.
    ultd_constant: Option<f64>,
    horizon: f64,
}

#[derive(Serialize)]
struct ErrorArtifact {
    kind: &'static str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind::*;
            let _ = e.print();
            return match e.kind() {
                DisplayHelp | DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            if let RunError::Solver(m) = &e {
                if let Some(out) = &cli.out {
                    let artifact = ErrorArtifact {
                        kind: "solver_failure",
                        message: m.clone(),
                    };
                    let _ = std::fs::create_dir_all(out);
                    let _ = std::fs::write(
                        out.join("error.json"),
                        serde_json::to_string_pretty(&artifact).unwrap(),
                    );
                }
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    let game = load_game(cli)?;
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| RunError::Config("--out is required".into()))?;
    std::fs::create_dir_all(out).map_err(io_err)?;

    let opts = SolverOptions {
        rtol: cli.rtol,
        atol: cli.atol,
        horizon: cli.horizon,
        samples_per_epoch: cli.grid,
        ..SolverOptions::default()
    };

    match cli.command {
        Command::Solve => {
            let eq = solve(&game, &opts)?;
            write_equilibrium(out, &game, &eq, &opts)?;
        }
        Command::Ltd => {
            let eq = closedform::ltd_equilibrium(&game, cli.grid)
                .map_err(|e| RunError::Solver(e.to_string()))?;
            write_equilibrium(out, &game, &eq, &opts)?;
        }
        Command::Verify => {
            let eq = solve(&game, &opts)?;
            let report = build_report(&game, &eq, cli.seed, None)?;
            write_json(out.join("report.json"), &report)?;
        }
        Command::Simulate => {
            let eq = solve(&game, &opts)?;
            let mc = verify::simulate(&eq, &game, cli.trials, cli.seed)
                .map_err(|e| RunError::Solver(e.to_string()))?;
            let report = build_report(&game, &eq, cli.seed, Some(mc))?;
            write_json(out.join("report.json"), &report)?;
        }
        Command::Welfare => {
            let eq = solve(&game, &opts)?;
            let dist = welfare::stopping_distribution(&eq, &game, None)
                .map_err(|e| RunError::Solver(e.to_string()))?;
            let p0 = &game.players[0];
            let rho = 1.0 - p0.dist.v_lo() / p0.c;
            let summary = WelfareSummary {
                atom0: dist.atom0,
                never_mass: dist.never_mass,
                mass_defect: dist.mass_defect(),
                discount: welfare::expected_discount_factor(&dist, p0.r),
                discount_rho: welfare::expected_discount_factor(&dist, rho * p0.r),
                ultd_constant: closedform::ultd_welfare_constant(&game).ok(),
                horizon: eq.horizon,
            };
            write_json(out.join("welfare.json"), &summary)?;
        }
        Command::Sweep => {
            let axis = cli
                .sweep
                .as_ref()
                .ok_or_else(|| RunError::Config("--sweep param=lo:hi:steps is required".into()))?;
            run_sweep(out, &game, axis, &opts)?;
        }
    }
    Ok(())
}

fn load_game(cli: &Cli) -> Result<GameSpec, RunError> {
    let path = cli
        .input
        .as_ref()
        .ok_or_else(|| RunError::Config("--input is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: InputSpec = serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("invalid spec: {e}")))?;
    let game = match spec {
        InputSpec::Game(g) => g,
        InputSpec::Society(s) => {
            s.validate()
                .map_err(|e| RunError::Config(e.to_string()))?;
            s.to_game()
        }
    };
    game.validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    Ok(game)
}

fn solve(game: &GameSpec, opts: &SolverOptions) -> Result<EquilibriumSolution, RunError> {
    shooting::solve_equilibrium(game, opts).map_err(|e| RunError::Solver(e.to_string()))
}

fn build_report(
    game: &GameSpec,
    eq: &EquilibriumSolution,
    seed: u64,
    mc: Option<verify::McEstimates>,
) -> Result<VerificationReport, RunError> {
    let lemma1 =
        verify::audit_lemma1(eq, game).map_err(|e| RunError::Solver(e.to_string()))?;
    let eps = verify::best_response_certificate(eq, game, 100, 200)
        .map_err(|e| RunError::Solver(e.to_string()))?;
    let mut comp = Vec::new();
    for a in 0..game.players.len() {
        for b in a + 1..game.players.len() {
            for rel in [Relation::Hazard, Relation::Cost, Relation::Rate] {
                let v = verify::comparative_statics_check(game, eq, (a, b), rel)
                    .map_err(|e| RunError::Solver(e.to_string()))?;
                if v.applicable {
                    comp.push(v);
                }
            }
        }
    }
    Ok(VerificationReport {
        seed,
        lemma1,
        best_response_eps: Some(eps),
        mc,
        comp_statics: comp,
    })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(io_err)?;
    std::fs::write(&path, text).map_err(io_err)
}

fn write_equilibrium(
    out: &Path,
    game: &GameSpec,
    eq: &EquilibriumSolution,
    opts: &SolverOptions,
) -> Result<(), RunError> {
    let artifact = EquilibriumArtifact {
        tolerances: Tolerances {
            rtol: opts.rtol,
            atol: opts.atol,
            fp_tol: opts.fp_tol,
        },
        active_sets: eq.active_sets(),
        solution: eq.clone(),
    };
    write_json(out.join("equilibrium.json"), &artifact)?;
    write_curves_csv(out, game, eq)
}

/// curves.csv: the union time grid with one curve column per player; cells
/// are empty while a player is still strictly waiting or after his samples
/// end.
fn write_curves_csv(out: &Path, game: &GameSpec, eq: &EquilibriumSolution) -> Result<(), RunError> {
    let n = game.players.len();
    let mut ts: Vec<f64> = eq
        .curves
        .iter()
        .flat_map(|c| c.ts.iter().copied())
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let interps: Vec<CurveInterp> = eq
        .curves
        .iter()
        .map(|c| CurveInterp::new(c.ts.clone(), c.values.clone()))
        .collect();

    let mut w = csv::Writer::from_path(out.join("curves.csv")).map_err(io_err)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("phi_{i}")));
    w.write_record(&header).map_err(io_err)?;
    for &t in &ts {
        let mut row = vec![format!("{t:.12e}")];
        for (i, c) in eq.curves.iter().enumerate() {
            if t < c.strict_wait - 1e-12 || t > interps[i].t_max() + 1e-12 {
                row.push(String::new());
            } else {
                row.push(format!("{:.12e}", interps[i].eval(t)));
            }
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Applies `name = value` to a copy of the game. Supported names: `c<i>`,
/// `r<i>`, `bound<i>` (1-based player index).
fn set_param(game: &GameSpec, name: &str, value: f64) -> Result<GameSpec, RunError> {
    let bad = || RunError::Config(format!("unknown sweep parameter '{name}'"));
    let (kind, idx) = name.split_at(
        name.find(|ch: char| ch.is_ascii_digit())
            .ok_or_else(bad)?,
    );
    let i: usize = idx.parse().map_err(|_| bad())?;
    if i == 0 || i > game.players.len() {
        return Err(RunError::Config(format!(
            "player index {i} out of range in '{name}'"
        )));
    }
    let mut g = game.clone();
    let p = &mut g.players[i - 1];
    match kind {
        "c" => p.c = value,
        "r" => p.r = value,
        "bound" => {
            p.dist = rebound(&p.dist, value)
                .map_err(|e| RunError::Config(format!("cannot set bound: {e}")))?;
        }
        _ => return Err(bad()),
    }
    Ok(g)
}

/// Moves a distribution's upper bound: re-truncates a lower truncation at the
/// new bound, or stretches a uniform's upper end.
fn rebound(
    dist: &ValueDistribution,
    bound: f64,
) -> Result<ValueDistribution, attrition::model::ModelError> {
    use attrition::model::DistKind;
    match &dist.kind {
        DistKind::LowerTruncated { base, .. } => {
            ValueDistribution::lower_truncated((**base).clone(), bound)
        }
        DistKind::Uniform { v_lo, .. } => Ok(ValueDistribution::uniform(*v_lo, bound)),
        DistKind::PiecewiseLinear { .. } => {
            ValueDistribution::lower_truncated(dist.clone(), bound)
        }
    }
}

fn run_sweep(
    out: &Path,
    game: &GameSpec,
    axis: &str,
    opts: &SolverOptions,
) -> Result<(), RunError> {
    use rayon::prelude::*;
    let parse = || -> Option<(String, f64, f64, usize)> {
        let (name, range) = axis.split_once('=')?;
        let mut it = range.split(':');
        let lo: f64 = it.next()?.parse().ok()?;
        let hi: f64 = it.next()?.parse().ok()?;
        let steps: usize = it.next()?.parse().ok()?;
        if it.next().is_some() || steps < 2 {
            return None;
        }
        Some((name.to_string(), lo, hi, steps))
    };
    let (name, lo, hi, steps) = parse().ok_or_else(|| {
        RunError::Config(format!(
            "invalid --sweep '{axis}': expected param=lo:hi:steps with steps >= 2"
        ))
    })?;

    let values: Vec<f64> = (0..steps)
        .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
        .collect();
    let rows: Vec<Result<Vec<String>, RunError>> = values
        .par_iter()
        .map(|&value| {
            let g = set_param(game, &name, value)?;
            let eq = solve(&g, opts)?;
            let dist = welfare::stopping_distribution(&eq, &g, None)
                .map_err(|e| RunError::Solver(e.to_string()))?;
            let p0 = &g.players[0];
            let rho = 1.0 - p0.dist.v_lo() / p0.c;
            let (u, prob) = eq
                .instant_exit
                .first()
                .map(|x| (format!("{:.12e}", x.threshold), format!("{:.12e}", x.prob)))
                .unwrap_or_default();
            Ok(vec![
                format!("{value:.12e}"),
                eq.divisions.len().to_string(),
                format!("{:.12e}", eq.divisions.last().map(|d| d.t).unwrap_or(0.0)),
                u,
                prob,
                format!("{:.12e}", welfare::expected_discount_factor(&dist, p0.r)),
                format!(
                    "{:.12e}",
                    welfare::expected_discount_factor(&dist, rho * p0.r)
                ),
            ])
        })
        .collect();

    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(io_err)?;
    w.write_record([
        name.as_str(),
        "divisions",
        "last_division",
        "u",
        "exit_prob",
        "welfare_r",
        "welfare_rho",
    ])
    .map_err(io_err)?;
    for row in rows {
        w.write_record(&row?).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
