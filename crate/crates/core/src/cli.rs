//! Command-line front end. [`run`] is the whole program minus process exit,
//! so it can be driven from tests.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure, 3 fixture
//! mismatch in the counterexample self-test.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ammo::KillSequence;
use crate::audit::{self, AuditError, AuditReport, Property, TimeGrid, Witness};
use crate::oracle::{self, OracleError};
use crate::policy::{PiecewisePolicy, PolicyInterval};
use crate::sim::{self, FirstEncounter, PolicySource, PolicyTable, SimError};
use crate::solver::{self, SolveError, ThresholdSet, ValueTable};

#[derive(Debug, Parser)]
#[command(
    name = "fighter",
    version,
    about = "Optimal missile allocation for the fighter problem"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Kill sequence: geometric `a(j) = 1 - q^j` or an explicit list.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SeqSource {
    #[arg(long)]
    pub q: Option<f64>,
    /// Comma separated `a(0),a(1),...`.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub seq: SeqSource,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub u: f64,
    #[arg(long)]
    pub n_max: usize,
    #[arg(long, default_value_t = 6.0)]
    pub t_max: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the recursion and export policies and value functions.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Sample N(n,t) on a uniform grid.
    Value {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Switch times t(n,j) of the invincible fighter.
    Thresholds {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Check structural properties of optimal policies.
    Audit {
        /// A, B, C, RANGE, INTERLACE, CONCAVE_N, TP2, LIMITS, ALL_IN.
        #[arg(long, value_delimiter = ',', required = true)]
        property: Vec<Property>,
        #[command(flatten)]
        model: ModelArgs,
        /// Audit every listed u instead of --u.
        #[arg(long, value_delimiter = ',')]
        u_grid: Vec<f64>,
        /// q values for ALL_IN (frail, t_max >= 50).
        #[arg(long, value_delimiter = ',')]
        q_grid: Vec<f64>,
        /// Missile count for ALL_IN; defaults to --n-max.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Reproduce the frail-fighter violation of monotonicity in n.
    Counterexample {
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        t_max: Option<f64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Monte Carlo estimate of expected kills under one or more policies.
    Simulate {
        #[command(flatten)]
        seq: SeqSource,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        u: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        /// optimal, all-in, const:K or table:FILE; repeat to compare.
        #[arg(long, default_value = "optimal")]
        policy: Vec<String>,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First encounter after an exponential wait (estimates N*).
        #[arg(long)]
        wait_first: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Compare the exact engine with the fixed-step oracle.
    OracleDiff {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// Maximum accepted |N_exact - N_grid|; exceeding it exits with 2.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Mismatch(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) | CliError::Mismatch(m) => m,
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::DegreeOverflow { .. } | SolveError::Representation(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::Solve(inner) => inner.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok((text, out, code)) => match emit(&text, out, stdout) {
            Ok(()) => code,
            Err(e) => {
                let _ = writeln!(stderr, "error: {}", e.message());
                e.code()
            }
        },
        Err((e, partial)) => {
            if let Some((text, out)) = partial {
                let _ = emit(&text, out, stdout);
            }
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

fn emit(text: &str, out: &OutputArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &out.output {
        Some(path) => std::fs::write(path, text).map_err(input),
        None => stdout.write_all(text.as_bytes()).map_err(input),
    }
}

type Partial<'a> = Option<(String, &'a OutputArgs)>;

fn execute(cmd: &Command) -> Result<(String, &OutputArgs, i32), (CliError, Partial<'_>)> {
    let plain = |r: Result<String, CliError>, out| r.map(|s| (s, out, 0)).map_err(|e| (e, None));
    match cmd {
        Command::Solve { model, out } => plain(cmd_solve(model, out.format), out),
        Command::Value { model, step, out } => plain(cmd_value(model, *step, out.format), out),
        Command::Thresholds { model, out } => plain(cmd_thresholds(model, out.format), out),
        Command::Audit {
            property,
            model,
            u_grid,
            q_grid,
            n,
            grid_step,
            out,
        } => plain(
            cmd_audit(property, model, u_grid, q_grid, *n, *grid_step, out.format),
            out,
        ),
        Command::Counterexample {
            q,
            u,
            n_max,
            t_max,
            out,
        } => {
            let report = counterexample(*q, *u, *n_max, *t_max).map_err(|e| (e, None))?;
            let text = render_counterexample(&report, out.format).map_err(|e| (e, None))?;
            if report.exploratory || report.reproduced {
                Ok((text, out, 0))
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                Err((
                    CliError::Mismatch(format!("fixture mismatch: {}", failed.join(", "))),
                    Some((text, out)),
                ))
            }
        }
        Command::Simulate {
            seq,
            u,
            n,
            t,
            policy,
            reps,
            seed,
            wait_first,
            out,
        } => plain(
            cmd_simulate(
                seq,
                *u,
                *n,
                *t,
                policy,
                *reps,
                *seed,
                *wait_first,
                out.format,
            ),
            out,
        ),
        Command::OracleDiff { model, h, tol, out } => {
            let report = oracle_diff(model, *h, *tol).map_err(|e| (e, None))?;
            let text = render_oracle_diff(&report, out.format).map_err(|e| (e, None))?;
            if report.within_tolerance {
                Ok((text, out, 0))
            } else {
                Err((
                    CliError::Numerical(format!(
                        "max |N_exact - N_grid| = {:e} exceeds {:e}",
                        report.max_abs_diff, report.tol
                    )),
                    Some((text, out)),
                ))
            }
        }
    }
}

fn build_sequence(src: &SeqSource, u: f64, j_max: usize) -> Result<KillSequence, CliError> {
    match (src.q, &src.a) {
        (Some(q), None) => KillSequence::geometric(q, j_max, u).map_err(input),
        (None, Some(a)) => KillSequence::parse_literal(a, u).map_err(input),
        _ => Err(CliError::Input(
            "exactly one of --q / --a is required".into(),
        )),
    }
}

fn solve_model(model: &ModelArgs) -> Result<ValueTable, CliError> {
    let seq = build_sequence(&model.seq, model.u, model.n_max)?;
    Ok(solver::solve(&seq, model.n_max, model.t_max)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Numerical(e.to_string()))
}

/// `K(n,t) = 5·1[0 <= t < 0.0690] + 4·1[...] + ...`
pub fn indicator_notation(n: usize, policy: &PiecewisePolicy) -> String {
    let terms: Vec<String> = policy
        .intervals()
        .iter()
        .enumerate()
        .map(|(i, iv)| {
            let close = if i + 1 == policy.intervals().len() {
                "]"
            } else {
                ")"
            };
            format!(
                "{}·1[{:.10} <= t {} {:.10}{}",
                iv.k,
                iv.t_lo,
                if close == "]" { "<=" } else { "<" },
                iv.t_hi,
                close
            )
        })
        .collect();
    format!("K({n},t) = {}", terms.join(" + "))
}

fn model_line(table: &ValueTable) -> String {
    let seq = table.sequence();
    let a = match seq.q() {
        Some(q) => format!("q={q}"),
        None => format!("a={:?}", &seq.probabilities()[..=table.n_max()]),
    };
    format!(
        "{a}, u={}, n_max={}, t_max={}",
        seq.u(),
        table.n_max(),
        table.t_max()
    )
}

fn cmd_solve(model: &ModelArgs, format: Format) -> Result<String, CliError> {
    let table = solve_model(model)?;
    match format {
        Format::Json => to_json(&table.export()),
        Format::Csv => Ok(table.policy_csv()),
        Format::Text => {
            let mut s = format!("# {}\n", model_line(&table));
            for n in 1..=table.n_max() {
                let _ = writeln!(s, "{}", indicator_notation(n, table.policy(n)));
                let _ = writeln!(
                    s,
                    "    N({n},{}) = {:.12}",
                    table.t_max(),
                    table.value_at(n, table.t_max())?
                );
            }
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub t: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub value: f64,
}

fn cmd_value(model: &ModelArgs, step: f64, format: Format) -> Result<String, CliError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Input(format!(
            "step must be positive, got {step}"
        )));
    }
    let table = solve_model(model)?;
    let times = TimeGrid::covering(&table, step).points();
    let mut rows = Vec::new();
    for n in 1..=table.n_max() {
        for &t in &times {
            rows.push(ValueRow {
                t,
                n,
                value: table.value_at(n, t)?,
            });
        }
    }
    match format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut s = String::from("t,n,N\n");
            for r in &rows {
                let _ = writeln!(s, "{},{},{}", r.t, r.n, r.value);
            }
            Ok(s)
        }
        Format::Text => {
            let mut s = format!("# {}\n{:>10}", model_line(&table), "t");
            for n in 1..=table.n_max() {
                let _ = write!(s, " {:>14}", format!("N({n},t)"));
            }
            s.push('\n');
            for (i, &t) in times.iter().enumerate() {
                let _ = write!(s, "{t:>10.4}");
                for n in 1..=table.n_max() {
                    let _ = write!(s, " {:>14.10}", rows[(n - 1) * times.len() + i].value);
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

fn cmd_thresholds(model: &ModelArgs, format: Format) -> Result<String, CliError> {
    let table = solve_model(model)?;
    let sets = (1..=table.n_max())
        .map(|n| table.thresholds(n))
        .collect::<Result<Vec<ThresholdSet>, _>>()?;
    let fmt_t = |t: Option<f64>| t.map_or_else(|| "inf".to_string(), |t| format!("{t}"));
    match format {
        Format::Json => to_json(&sets),
        Format::Csv => {
            let mut s = String::from("n,j,t\n");
            for set in &sets {
                for th in &set.thresholds {
                    let _ = writeln!(s, "{},{},{}", set.n, th.j, fmt_t(th.time));
                }
            }
            Ok(s)
        }
        Format::Text => {
            let mut s = format!(
                "# {}\n# t(n,j): rows n, columns j = 1..n-1\n",
                model_line(&table)
            );
            for set in &sets {
                let _ = write!(s, "n={:<3}", set.n);
                for j in 1..set.n {
                    let t = set
                        .thresholds
                        .iter()
                        .find(|th| th.j == j)
                        .and_then(|th| th.time);
                    let _ = write!(
                        s,
                        " {:>14}",
                        t.map_or("beyond t_max".into(), |t| format!("{t:.10}"))
                    );
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_audit(
    properties: &[Property],
    model: &ModelArgs,
    u_grid: &[f64],
    q_grid: &[f64],
    n: Option<usize>,
    grid_step: f64,
    format: Format,
) -> Result<String, CliError> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(CliError::Input(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let us: Vec<f64> = if u_grid.is_empty() {
        vec![model.u]
    } else {
        u_grid.to_vec()
    };
    let mut reports: Vec<AuditReport> = Vec::new();
    let needs_table = properties.iter().any(|p| *p != Property::AllIn);
    if needs_table {
        for &u in &us {
            let seq = build_sequence(&model.seq, u, model.n_max)?;
            let table = solver::solve(&seq, model.n_max, model.t_max)?;
            let grid = TimeGrid::covering(&table, grid_step);
            let mut range_interlace = None;
            for &p in properties {
                let report = match p {
                    Property::A => audit::audit_a(&table, Some(grid)),
                    Property::B => audit::audit_b(&table, Some(grid)),
                    Property::C => audit::audit_c(&table),
                    Property::Range | Property::Interlace => {
                        if range_interlace.is_none() {
                            range_interlace = Some(audit::audit_range_and_interlace(&table)?);
                        }
                        let ri = range_interlace.as_ref().expect("just computed");
                        if p == Property::Range {
                            ri.range.clone()
                        } else {
                            ri.interlace.clone()
                        }
                    }
                    Property::ConcaveN => audit::audit_concave_n(&table, grid)?,
                    Property::Tp2 => audit::audit_tp2(&table, grid)?,
                    Property::Limits => audit::audit_limits(&table)?,
                    Property::AllIn => continue,
                };
                reports.push(report);
            }
        }
    }
    if properties.contains(&Property::AllIn) {
        if q_grid.is_empty() {
            return Err(CliError::Input("ALL_IN needs --q-grid".into()));
        }
        let n = n.unwrap_or(model.n_max);
        let tables = q_grid
            .iter()
            .map(|&q| {
                let seq = KillSequence::geometric(q, n, 0.0).map_err(input)?;
                Ok(solver::solve(&seq, n, model.t_max)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        reports.push(audit::audit_all_in_regime(&tables, n)?);
    }
    match format {
        Format::Json => to_json(&reports),
        Format::Csv => {
            let mut s = String::from("property,u,q,n_max,t_max,verdict,guarantee,witnesses\n");
            for r in &reports {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.property,
                    r.params.u,
                    r.params.q.map_or(String::new(), |q| q.to_string()),
                    r.params.n_max,
                    r.params.t_max,
                    serde_plain(&r.verdict),
                    serde_plain(&r.guarantee),
                    r.witnesses.len()
                );
            }
            Ok(s)
        }
        Format::Text => Ok(reports.iter().map(|r| format!("{r}\n")).collect()),
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v)
        .unwrap_or_default()
        .trim_matches('"')
        .to_string()
}

/// Default counterexample parameters.
pub const CE_Q: f64 = 0.5;
pub const CE_U: f64 = 0.0;
pub const CE_N_MAX: usize = 5;
pub const CE_T_MAX: f64 = 6.0;
/// The violating interval starts near 2.69; below this the witness time
/// `t = 3` is out of reach.
pub const CE_T_MIN: f64 = 3.0;
/// Precision to which the final switch time is quoted.
pub const CE_ROOT_TOL: f64 = 1e-3;
pub const CE_ROOT: f64 = 2.694;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    pub q: f64,
    pub u: f64,
    pub n_max: usize,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDisplay {
    pub n: usize,
    pub intervals: Vec<PolicyInterval>,
    pub indicator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: f64,
    pub observed: Option<f64>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub params: CounterexampleParams,
    /// Any parameter differs from the defaults: no fixtures are checked.
    pub exploratory: bool,
    pub policies: Vec<PolicyDisplay>,
    /// Crossing of the 3- and 2-missile candidates at `n_max`.
    pub crossing_root: Option<f64>,
    pub violated: bool,
    pub witness: Option<Witness>,
    pub checks: Vec<Check>,
    pub reproduced: bool,
}

pub fn counterexample(
    q: Option<f64>,
    u: Option<f64>,
    n_max: Option<usize>,
    t_max: Option<f64>,
) -> Result<CounterexampleReport, CliError> {
    let exploratory = q.is_some_and(|v| v != CE_Q)
        || u.is_some_and(|v| v != CE_U)
        || n_max.is_some_and(|v| v != CE_N_MAX)
        || t_max.is_some_and(|v| v != CE_T_MAX);
    let params = CounterexampleParams {
        q: q.unwrap_or(CE_Q),
        u: u.unwrap_or(CE_U),
        n_max: n_max.unwrap_or(CE_N_MAX),
        t_max: t_max.unwrap_or(CE_T_MAX),
    };
    if !(params.t_max >= CE_T_MIN) {
        return Err(CliError::Input(format!(
            "t_max below counterexample region: {} < {CE_T_MIN}",
            params.t_max
        )));
    }
    if params.n_max < 3 {
        return Err(CliError::Input(format!(
            "n_max must be at least 3, got {}",
            params.n_max
        )));
    }
    let seq = KillSequence::geometric(params.q, params.n_max, params.u).map_err(input)?;
    let table = solver::solve(&seq, params.n_max, params.t_max)?;

    let policies = (2..=params.n_max)
        .map(|n| PolicyDisplay {
            n,
            intervals: table.policy(n).intervals().to_vec(),
            indicator: indicator_notation(n, table.policy(n)),
        })
        .collect();

    let top = params.n_max;
    let diff = table
        .candidate(top, 3)
        .sub(table.candidate(top, 2))
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let crossing_root = diff
        .find_root(0.0, params.t_max, table.options().root_tol)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let b = audit::audit_b(&table, Some(TimeGrid::new(0.0, params.t_max, 1.0)));
    let witness = b.witnesses.first().cloned();

    let mut checks = Vec::new();
    if !exploratory {
        let ln = f64::ln;
        let bp = |n: usize, i: usize| table.policy(n).breakpoints().get(i).copied();
        let mut check = |name: &str, expected: f64, observed: Option<f64>, tol: f64| {
            let pass = observed.is_some_and(|o| (o - expected).abs() <= tol);
            checks.push(Check {
                name: name.into(),
                expected,
                observed,
                tol,
                pass,
            });
        };
        check("K(3) switch = ln(3/2)", ln(1.5), bp(3, 0), 1e-6);
        check("K(4) switch = ln(7/6)", ln(7.0 / 6.0), bp(4, 0), 1e-6);
        check(
            "K(5) first switch = ln(15/14)",
            ln(15.0 / 14.0),
            bp(5, 0),
            1e-6,
        );
        check("K(5) second switch = ln(3/2)", ln(1.5), bp(5, 1), 1e-6);
        check("K(5) final switch = 2.694", CE_ROOT, bp(5, 2), CE_ROOT_TOL);
        check(
            "N_5(3,.) = N_5(2,.) crossing",
            CE_ROOT,
            crossing_root,
            CE_ROOT_TOL,
        );
        let k_at = |n| table.policy_at(n, 3.0).ok().map(|k| k as f64);
        check("K(4,3) = 3", 3.0, k_at(4), 0.0);
        check("K(5,3) = 2", 2.0, k_at(5), 0.0);
        let counts = [(3, 2), (4, 2), (5, 4)];
        for (n, count) in counts {
            let got = table.policy(n).intervals().len() as f64;
            check(
                &format!("K({n}) interval count"),
                count as f64,
                Some(got),
                0.0,
            );
        }
    }
    let reproduced = !exploratory && checks.iter().all(|c| c.pass) && !b.holds();
    Ok(CounterexampleReport {
        params,
        exploratory,
        policies,
        crossing_root,
        violated: !b.holds(),
        witness,
        checks,
        reproduced,
    })
}

fn render_counterexample(r: &CounterexampleReport, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => to_json(r),
        Format::Csv => {
            let mut s = String::from("n,t_lo,t_hi,k\n");
            for p in &r.policies {
                for iv in &p.intervals {
                    let _ = writeln!(s, "{},{},{},{}", p.n, iv.t_lo, iv.t_hi, iv.k);
                }
            }
            Ok(s)
        }
        Format::Text => {
            let p = &r.params;
            let mut s = format!(
                "# frail-fighter counterexample: q={}, u={}, n_max={}, t_max={}{}\n",
                p.q,
                p.u,
                p.n_max,
                p.t_max,
                if r.exploratory {
                    " [exploratory: no proven guarantee]"
                } else {
                    ""
                }
            );
            for d in &r.policies {
                let _ = writeln!(s, "{}", d.indicator);
            }
            match r.crossing_root {
                Some(t) => {
                    let _ = writeln!(s, "N_{0}(3,t) = N_{0}(2,t) at t = {t:.12}", p.n_max);
                }
                None => {
                    let _ = writeln!(
                        s,
                        "N_{0}(3,t) and N_{0}(2,t) do not cross on [0, {1}]",
                        p.n_max, p.t_max
                    );
                }
            }
            match &r.witness {
                Some(Witness::B {
                    n,
                    n_prime,
                    t,
                    t_lo,
                    t_hi,
                    k,
                    k_prime,
                }) => {
                    let _ = writeln!(
                        s,
                        "monotonicity in n violated: K({n},{t}) = {k} > K({n_prime},{t}) = {k_prime} on [{t_lo:.10}, {t_hi:.10})"
                    );
                }
                _ => {
                    let _ = writeln!(s, "monotonicity in n holds for these parameters");
                }
            }
            for c in &r.checks {
                let _ = writeln!(
                    s,
                    "{} {}: expected {} ± {:e}, observed {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.expected,
                    c.tol,
                    c.observed.map_or("none".into(), |o| o.to_string())
                );
            }
            if !r.exploratory {
                let _ = writeln!(
                    s,
                    "{}",
                    if r.reproduced {
                        "reproduced"
                    } else {
                        "MISMATCH"
                    }
                );
            }
            Ok(s)
        }
    }
}

fn parse_policy<'a>(spec: &str, table: &'a ValueTable) -> Result<PolicySource<'a>, CliError> {
    match spec {
        "optimal" => Ok(PolicySource::Optimal(table)),
        "all-in" => Ok(PolicySource::AllIn),
        _ => {
            if let Some(k) = spec.strip_prefix("const:") {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::Input(format!("bad policy {spec:?}")))?;
                if k == 0 {
                    return Err(CliError::Input("const:k needs k >= 1".into()));
                }
                Ok(PolicySource::Const(k))
            } else if let Some(path) = spec.strip_prefix("table:") {
                Ok(PolicySource::Table(PolicyTable::load(path.as_ref())?))
            } else {
                Err(CliError::Input(format!(
                    "unknown policy {spec:?}; expected optimal, all-in, const:K or table:FILE"
                )))
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    src: &SeqSource,
    u: f64,
    n: usize,
    t: f64,
    policies: &[String],
    reps: u64,
    seed: u64,
    wait_first: bool,
    format: Format,
) -> Result<String, CliError> {
    let seq = build_sequence(src, u, n)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(CliError::Input(format!(
            "t must be finite and non-negative, got {t}"
        )));
    }
    if n == 0 || n > seq.j_max() {
        return Err(CliError::Input(format!(
            "n = {n} outside 1..={}",
            seq.j_max()
        )));
    }
    // the optimal policy needs a table covering (n, t)
    let table = solver::solve(&seq, n, t.max(f64::MIN_POSITIVE))?;
    let sources = policies
        .iter()
        .map(|p| parse_policy(p, &table))
        .collect::<Result<Vec<_>, _>>()?;
    let first = if wait_first {
        FirstEncounter::AfterWait
    } else {
        FirstEncounter::Immediate
    };
    let mut estimates = sim::compare_policies(&seq, n, t, &sources, reps, seed, first)?;
    let labels = ranked_labels(&sources, policies, &estimates);
    for (est, spec) in estimates.iter_mut().zip(labels) {
        est.policy = spec;
    }
    match format {
        Format::Json => to_json(&estimates),
        Format::Csv => {
            let mut s = String::from("policy,mean_kills,std_error,reps,seed,rng\n");
            for e in &estimates {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    e.policy, e.mean_kills, e.std_error, e.reps, e.seed, e.rng
                );
            }
            Ok(s)
        }
        Format::Text => {
            let mut s = format!(
                "# n={n}, t={t}, u={u}, reps={reps}, seed={seed}, rng={}\n",
                sim::RNG_ID
            );
            for e in &estimates {
                let _ = writeln!(
                    s,
                    "{:<24} {:.6} ± {:.6}",
                    e.policy, e.mean_kills, e.std_error
                );
            }
            Ok(s)
        }
    }
}

/// Command-line spellings of the policies, in ranked order.
fn ranked_labels(
    sources: &[PolicySource],
    specs: &[String],
    ranked: &[sim::SimEstimate],
) -> Vec<String> {
    let mut used = vec![false; specs.len()];
    ranked
        .iter()
        .map(|est| {
            let i = (0..specs.len())
                .find(|&i| !used[i] && sources[i].label() == est.policy)
                .expect("every estimate comes from a source");
            used[i] = true;
            specs[i].clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiffN {
    pub n: usize,
    pub max_abs_diff: f64,
    pub at_t: f64,
}

/// Maximal run of grid nodes where the two engines choose different `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub n: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub k_exact: usize,
    pub k_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiffReport {
    pub h: f64,
    pub tol: f64,
    pub max_abs_diff: f64,
    pub within_tolerance: bool,
    pub per_n: Vec<OracleDiffN>,
    pub disagreements: Vec<Disagreement>,
}

pub fn oracle_diff(model: &ModelArgs, h: f64, tol: f64) -> Result<OracleDiffReport, CliError> {
    let table = solve_model(model)?;
    let grid = oracle::solve_grid(table.sequence(), model.n_max, model.t_max, h)?;
    let mut per_n = Vec::new();
    let mut disagreements: Vec<Disagreement> = Vec::new();
    for n in 1..=model.n_max {
        let mut worst = OracleDiffN {
            n,
            max_abs_diff: 0.0,
            at_t: 0.0,
        };
        let mut open: Option<Disagreement> = None;
        for (i, &t) in grid.times().iter().enumerate() {
            let d = (table.value_at(n, t)? - grid.values(n)[i]).abs();
            if d > worst.max_abs_diff {
                worst.max_abs_diff = d;
                worst.at_t = t;
            }
            let (ke, kg) = (table.policy_at(n, t)?, grid.policy(n)[i]);
            match &mut open {
                Some(run) if ke != kg && run.k_exact == ke && run.k_grid == kg => run.t_hi = t,
                _ => {
                    disagreements.extend(open.take());
                    if ke != kg {
                        open = Some(Disagreement {
                            n,
                            t_lo: t,
                            t_hi: t,
                            k_exact: ke,
                            k_grid: kg,
                        });
                    }
                }
            }
        }
        disagreements.extend(open);
        per_n.push(worst);
    }
    let max_abs_diff = per_n.iter().map(|p| p.max_abs_diff).fold(0.0, f64::max);
    Ok(OracleDiffReport {
        h: grid.step(),
        tol,
        max_abs_diff,
        within_tolerance: max_abs_diff <= tol,
        per_n,
        disagreements,
    })
}

fn render_oracle_diff(r: &OracleDiffReport, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => to_json(r),
        Format::Csv => {
            let mut s = String::from("n,max_abs_diff,at_t\n");
            for p in &r.per_n {
                let _ = writeln!(s, "{},{},{}", p.n, p.max_abs_diff, p.at_t);
            }
            Ok(s)
        }
        Format::Text => {
            let mut s = format!(
                "# h={}, max |N_exact - N_grid| = {:e} ({} {:e})\n",
                r.h,
                r.max_abs_diff,
                if r.within_tolerance { "<=" } else { ">" },
                r.tol
            );
            for p in &r.per_n {
                let _ = writeln!(
                    s,
                    "n={:<3} max |dN| = {:e} at t = {}",
                    p.n, p.max_abs_diff, p.at_t
                );
            }
            if r.disagreements.is_empty() {
                s.push_str("policies agree at every node\n");
            }
            for d in &r.disagreements {
                let _ = writeln!(
                    s,
                    "n={} policy differs on nodes [{}, {}]: exact {} vs grid {}",
                    d.n, d.t_lo, d.t_hi, d.k_exact, d.k_grid
                );
            }
            Ok(s)
        }
    }
}
