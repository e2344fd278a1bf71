//! `sis-synth` command line: parameter files, subcommands and CSV output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::curves::{self, synthesis_diagram};
use crate::error::{Error, Result};
use crate::flow::{self, ControlSchedule, Trajectory};
use crate::model::{derive, Branch, CostInput, DerivedModel, RawParameters};
use crate::pontryagin;
use crate::synthesis;
use crate::value;
use crate::verify::{self, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Optimal screening-at-entry synthesis for an SIS epidemic.
///
/// Every flag can also be set through an environment variable named
/// `SIS_SYNTH_<FLAG>`, e.g. `SIS_SYNTH_PARAMS`.
#[derive(Debug, Parser)]
#[command(name = "sis-synth", version)]
pub struct Cli {
    /// Parameter file (`key = value` lines).
    #[arg(long, global = true, env = "SIS_SYNTH_PARAMS")]
    pub params: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "SIS_SYNTH_OUT", default_value = ".")]
    pub out: PathBuf,
    /// Initial state.
    #[arg(long, global = true, env = "SIS_SYNTH_X0")]
    pub x0: Option<f64>,
    /// Initial time.
    #[arg(long, global = true, env = "SIS_SYNTH_T0")]
    pub t0: Option<f64>,
    /// State resolution (grid intervals, extremal count, DP size).
    #[arg(long, global = true, env = "SIS_SYNTH_NX")]
    pub nx: Option<usize>,
    /// Time resolution (grid intervals).
    #[arg(long, global = true, env = "SIS_SYNTH_NT")]
    pub nt: Option<usize>,
    /// Switch-time resolution of the brute-force oracle.
    #[arg(long, global = true, env = "SIS_SYNTH_NGRID")]
    pub ngrid: Option<usize>,
    /// Integration step.
    #[arg(long, global = true, env = "SIS_SYNTH_STEP")]
    pub step: Option<f64>,
    /// Brute-force gap tolerance for `verify`.
    #[arg(long, global = true, env = "SIS_SYNTH_TOL")]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Print the reduced constants and the regime.
    Derive,
    /// Optimal plan from (x0, t0); writes plan.csv.
    Plan,
    /// Region labels and switching curves; writes regions.csv and curves.csv.
    Curves,
    /// Value function, gradient and HJB residual on a grid; writes value.csv.
    Value,
    /// Backward extremal field; writes extremals.csv.
    Extremals,
    /// Run the acceptance suite; writes verify.csv.
    Verify,
    /// Integrate a user schedule; writes trajectory.csv.
    Simulate {
        /// Comma-separated `time:level` pairs, the first starting the schedule.
        #[arg(long, env = "SIS_SYNTH_SCHEDULE")]
        schedule: String,
    },
}

/// Parse a parameter file. Keys match the fields of [`RawParameters`];
/// either the three unit costs or `C` must be given, not both.
pub fn parse_params(text: &str) -> Result<RawParameters> {
    const KEYS: [&str; 12] = [
        "beta",
        "gamma",
        "mu",
        "p_I",
        "eta",
        "delta",
        "pi",
        "cost_detection",
        "cost_treatment",
        "cost_infected",
        "horizon",
        "C",
    ];
    let mut vals: [Option<f64>; 12] = [None; 12];
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
        let (key, val) = line.split_once('=').ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        let (key, val) = (key.trim(), val.trim());
        let k = KEYS.iter().position(|&k| k == key).ok_or_else(|| bad(format!("unknown key `{key}`")))?;
        if vals[k].is_some() {
            return Err(bad(format!("duplicate key `{key}`")));
        }
        let v: f64 = val.parse().map_err(|_| bad(format!("`{val}` is not a number")))?;
        vals[k] = Some(v);
    }
    let get = |k: usize| vals[k].ok_or_else(|| Error::Config(format!("missing key `{}`", KEYS[k])));
    let triple = [vals[7], vals[8], vals[9]];
    let cost = match (vals[11], triple.iter().any(Option::is_some)) {
        (Some(_), true) => return Err(Error::Config("`C` and the unit costs are mutually exclusive".into())),
        (Some(c), false) => CostInput::Rescaled(c),
        (None, _) => CostInput::Unit {
            detection: get(7)?,
            treatment: get(8)?,
            infected: get(9)?,
        },
    };
    Ok(RawParameters {
        beta: get(0)?,
        gamma: get(1)?,
        mu: get(2)?,
        p_i: get(3)?,
        eta: get(4)?,
        delta: get(5)?,
        pi: get(6)?,
        cost,
        horizon: get(10)?,
    })
}

pub fn load_params(path: &Path) -> Result<RawParameters> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_params(&text)
}

/// `time:level` pairs into a schedule ending at the horizon.
pub fn parse_schedule(model: &DerivedModel, spec: &str) -> Result<ControlSchedule> {
    let mut pairs = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Config(format!("schedule entry `{item}` is not `time:level`"));
        let (t, w) = item.split_once(':').ok_or_else(bad)?;
        let t: f64 = t.trim().parse().map_err(|_| bad())?;
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        pairs.push((t, w));
    }
    if pairs.is_empty() {
        return Err(Error::Config("empty schedule".into()));
    }
    if pairs.windows(2).any(|p| !(p[0].0 < p[1].0)) {
        return Err(Error::Config("schedule times must increase strictly".into()));
    }
    if let Some(&(t, _)) = pairs.iter().find(|p| p.0 >= model.horizon) {
        return Err(Error::Config(format!("schedule time {t} is not before the horizon {}", model.horizon)));
    }
    for &(_, w) in &pairs {
        model.check_level(w)?;
    }
    let mut bp: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    bp.push(model.horizon);
    let levels = pairs.iter().map(|p| p.1).collect();
    ControlSchedule::new(model, bp, levels)
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn derive_report(m: &DerivedModel) -> String {
    let mut s = String::new();
    let rows: [(&str, f64); 16] = [
        ("A", m.a),
        ("B", m.b),
        ("mu_I", m.mu_i),
        ("C", m.c),
        ("Delta", m.delta),
        ("r0_minus", m.r0_minus),
        ("r0_plus", m.r0_plus),
        ("rmu_plus", m.rmu_plus),
        ("x_bar_C", m.x_bar_c),
        ("r_bar_plus", m.r_bar_plus),
        ("xS_sup", m.xs_sup),
        ("xT_sup", m.xt_sup),
        ("R0", m.r0),
        ("horizon", m.horizon),
        ("mu_tangency", m.mu_tangency),
        ("v_junction", m.v_junction),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k} = {}", num(v));
    }
    let branch = match m.regime.branch {
        Branch::OneSwitch => "OneSwitchSynthesis",
        Branch::TwoSwitch => "TwoSwitchSynthesis",
    };
    let _ = writeln!(s, "regime = {branch}");
    let _ = writeln!(s, "sub_case = {:?}", m.regime.sub_case);
    let _ = writeln!(s, "placement = {:?}", m.regime.placement);
    let _ = writeln!(s, "has_first_switch = {}", m.has_first_switch());
    // exact comparisons decide the regime; the margins show how close a call was
    let _ = writeln!(s, "margin x_bar_C - r0_plus = {}", num(m.x_bar_c - m.r0_plus));
    let _ = writeln!(s, "margin x_bar_C - r_bar_plus = {}", num(m.x_bar_c - m.r_bar_plus));
    let _ = writeln!(s, "margin xS_sup = {}", num(m.xs_sup));
    let _ = writeln!(s, "margin xS_sup - 1 = {}", num(m.xs_sup - 1.0));
    s
}

fn trajectory_csv(tr: &Trajectory) -> String {
    let mut s = String::from("t,x,w,running_cost\n");
    for p in &tr.samples {
        let _ = writeln!(s, "{},{},{},{}", num(p.t), num(p.x), num(p.w), num(p.running_cost));
    }
    s
}

/// Stride so that a series of `n` nodes keeps about `keep` of them.
fn stride(n: f64, keep: f64) -> usize {
    (n / keep).ceil().max(1.0) as usize
}

struct Ctx<'a> {
    cli: &'a Cli,
    stdout: String,
}

impl Ctx<'_> {
    fn model(&self) -> Result<DerivedModel> {
        let path = self
            .cli
            .params
            .as_deref()
            .ok_or_else(|| Error::Config("--params is required for this command".into()))?;
        derive(&load_params(path)?)
    }

    fn emit(&self, name: &str, body: &str) -> Result<()> {
        write_atomic(&self.cli.out.join(name), body)
    }

    fn start(&self, m: &DerivedModel) -> Result<(f64, f64)> {
        let x0 = self.cli.x0.ok_or_else(|| Error::Config("--x0 is required".into()))?;
        let t0 = self.cli.t0.unwrap_or(0.0);
        if !(0.0..=m.horizon).contains(&t0) {
            return Err(Error::Config(format!("--t0 must lie in [0, {}]", m.horizon)));
        }
        Ok((x0, t0))
    }

    fn step(&self, default: f64) -> Result<f64> {
        match self.cli.step {
            Some(h) if !(h.is_finite() && h > 0.0) => Err(Error::Config(format!("--step must be > 0, got {h}"))),
            Some(h) => Ok(h),
            None => Ok(default),
        }
    }
}

fn grid(v: Option<usize>, default: usize, max: usize, flag: &str) -> Result<usize> {
    match v.unwrap_or(default) {
        n if n >= 1 && n <= max => Ok(n),
        n => Err(Error::Config(format!("--{flag} must lie in [1, {max}], got {n}"))),
    }
}

fn execute(ctx: &mut Ctx) -> Result<i32> {
    let cli = ctx.cli;
    match &cli.command {
        Command::Derive => {
            let m = ctx.model()?;
            ctx.stdout += &derive_report(&m);
            ctx.emit("derived.txt", &derive_report(&m))?;
        }
        Command::Plan => {
            let m = ctx.model()?;
            let (x0, t0) = ctx.start(&m)?;
            let p = synthesis::plan_with_step(&m, x0, t0, ctx.step(m.horizon / flow::DEFAULT_STEPS_PER_HORIZON)?)?;
            let w = value::value(&m, x0, t0)?;
            let out = &mut ctx.stdout;
            let _ = writeln!(out, "start = ({}, {})", num(x0), num(t0));
            let _ = writeln!(out, "region = {}", p.label);
            let _ = writeln!(out, "initial_level = {}", num(p.schedule.levels().first().copied().unwrap_or(0.0)));
            for s in &p.switches {
                let _ = writeln!(out, "switch t = {} x = {} level {} -> {}", num(s.t), num(s.x), num(s.from), num(s.to));
            }
            let _ = writeln!(out, "switches = {}", p.switches.len());
            let _ = writeln!(out, "value = {}", num(w));
            let _ = writeln!(out, "simulated_cost = {}", num(p.total_cost));
            ctx.emit("plan.csv", &trajectory_csv(&p.trajectory))?;
        }
        Command::Curves => {
            let m = ctx.model()?;
            let nx = grid(cli.nx, 200, 20_000, "nx")?;
            let nt = grid(cli.nt, 200, 20_000, "nt")?;
            let d = synthesis_diagram(&m, nx, nt, 1000);
            let mut regions = String::from("x,t,label,w\n");
            for (j, &t) in d.ts.iter().enumerate() {
                for (i, &x) in d.xs.iter().enumerate() {
                    let l = d.label(i, j);
                    let _ = writeln!(regions, "{},{},{},{}", num(x), num(t), l, num(l.control(&m)));
                }
            }
            let mut lines = String::from("curve,x,t\n");
            for c in &d.curves {
                for &(x, t) in &c.points {
                    let _ = writeln!(lines, "{},{},{}", c.name, num(x), num(t));
                }
            }
            ctx.emit("regions.csv", &regions)?;
            ctx.emit("curves.csv", &lines)?;
            let _ = writeln!(ctx.stdout, "wrote regions.csv ({} nodes) and curves.csv", d.labels.len());
        }
        Command::Value => {
            let m = ctx.model()?;
            let nx = grid(cli.nx, 100, 5000, "nx")?;
            let nt = grid(cli.nt, 100, 5000, "nt")?;
            let v = value::value_surface(&m, nx, nt)?;
            let mut s = String::from("x,t,W,label,dW_dx,dW_dt,hjb_residual\n");
            let n = v.xs.len();
            for (j, &t) in v.ts.iter().enumerate() {
                for (i, &x) in v.xs.iter().enumerate() {
                    let k = j * n + i;
                    let g = v.gradients[k];
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        num(x),
                        num(t),
                        num(v.values[k]),
                        v.labels[k],
                        opt(g.map(|g| g.0)),
                        opt(g.map(|g| g.1)),
                        opt(v.residuals[k])
                    );
                }
            }
            ctx.emit("value.csv", &s)?;
            let worst = v.residuals.iter().flatten().fold(0.0f64, |a, r| a.max(r.abs()));
            let _ = writeln!(ctx.stdout, "wrote value.csv; max |HJB residual| = {}", num(worst));
        }
        Command::Extremals => {
            let m = ctx.model()?;
            let n = grid(cli.nx, 50, 10_000, "nx")?;
            let step = ctx.step(m.horizon / 1e4)?;
            let finals = curves::linspace(0.0, 1.0, n);
            let keep = stride(m.horizon / step, 500.0);
            let field = pontryagin::extremal_field(&m, &finals, step, keep)?;
            let mut s = String::from("x_T,t,x,lambda,w\n");
            let mut drift = 0.0f64;
            for e in &field {
                drift = drift.max(e.max_hamiltonian_drift);
                for p in &e.samples {
                    let _ = writeln!(s, "{},{},{},{},{}", num(e.final_state), num(p.t), num(p.x), num(p.lambda), num(p.w));
                }
            }
            ctx.emit("extremals.csv", &s)?;
            let _ = writeln!(ctx.stdout, "wrote extremals.csv ({} extremals); max |H - x_T| = {}", field.len(), num(drift));
        }
        Command::Verify => {
            let mut settings = match &cli.params {
                Some(p) => {
                    let m = derive(&load_params(p)?)?;
                    let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("params").to_string();
                    Settings::for_model(&name, m)
                }
                None => Settings::default(),
            };
            if let Some(n) = cli.ngrid {
                settings.n_grid = grid(Some(n), n, 100_000, "ngrid")?.max(2);
            }
            if let Some(n) = cli.nx {
                if n < 128 {
                    return Err(Error::Config(format!("--nx for verify must be >= 128, got {n}")));
                }
                settings.dp_n = n;
            }
            if let Some(t) = cli.tol {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::Config(format!("--tol must be > 0, got {t}")));
                }
                settings.gap_tolerance = t;
            }
            let outcomes = verify::run_all(&settings);
            let mut csv = String::from("criterion,title,passed,elapsed_s,detail\n");
            for o in &outcomes {
                let _ = writeln!(ctx.stdout, "{}", o.line());
                let _ = writeln!(
                    csv,
                    "{},{},{},{},\"{}\"",
                    o.id,
                    o.title,
                    o.passed,
                    num(o.elapsed.as_secs_f64()),
                    o.detail.replace('"', "'")
                );
                for (name, body) in &o.artifacts {
                    ctx.emit(name, body)?;
                }
            }
            ctx.emit("verify.csv", &csv)?;
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Simulate { schedule } => {
            let m = ctx.model()?;
            let sched = parse_schedule(&m, schedule)?;
            let x0 = cli.x0.ok_or_else(|| Error::Config("--x0 is required".into()))?;
            let tr = flow::simulate_with_step(&m, &sched, x0, ctx.step(m.horizon / flow::DEFAULT_STEPS_PER_HORIZON)?)?;
            ctx.emit("trajectory.csv", &trajectory_csv(&tr))?;
            let _ = writeln!(
                ctx.stdout,
                "final_state = {}\ncost = {}\nswitches = {}",
                num(tr.final_state().unwrap_or(x0)),
                num(tr.cost),
                tr.switch_events.len()
            );
        }
    }
    Ok(EXIT_OK)
}

/// Run with explicit arguments; returns the exit code and what would go to
/// stdout and stderr.
pub fn run_with<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        // --help and --version arrive as errors that belong on stdout
        Err(e) if !e.use_stderr() => return (EXIT_OK, e.to_string(), String::new()),
        Err(e) => return (EXIT_CONFIG, String::new(), e.to_string()),
    };
    let mut ctx = Ctx {
        cli: &cli,
        stdout: String::new(),
    };
    match execute(&mut ctx) {
        Ok(code) => (code, ctx.stdout, String::new()),
        Err(e @ Error::InternalConsistency(_)) => (EXIT_INTERNAL, ctx.stdout, format!("error: {e}\n")),
        Err(e) => (EXIT_CONFIG, ctx.stdout, format!("error: {e}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P_TWO: &str = "\
# two-switch reference
beta = 0.5
gamma = 0.1
mu = 0.1
p_I = 0.3
eta = 0
delta = 0
pi = 1
C = 2   # rescaled
horizon = 50
";

    #[test]
    fn parses_reference_file() {
        let raw = parse_params(P_TWO).unwrap();
        assert_eq!(raw.cost, CostInput::Rescaled(2.0));
        let m = derive(&raw).unwrap();
        assert!((m.x_bar_c - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_files() {
        let typo = P_TWO.replace("gamma", "gama");
        assert!(matches!(parse_params(&typo), Err(Error::Config(_))));
        let missing = P_TWO.replace("horizon = 50", "");
        assert!(matches!(parse_params(&missing), Err(Error::Config(_))));
        let both = format!("{P_TWO}cost_detection = 1\n");
        assert!(matches!(parse_params(&both), Err(Error::Config(_))));
        let dup = format!("{P_TWO}mu = 0.1\n");
        assert!(matches!(parse_params(&dup), Err(Error::Config(_))));
        let junk = P_TWO.replace("mu = 0.1", "mu = fast");
        assert!(matches!(parse_params(&junk), Err(Error::Config(_))));
        let partial = P_TWO.replace("C = 2   # rescaled", "cost_detection = 1\ncost_treatment = 1");
        assert!(matches!(parse_params(&partial), Err(Error::Config(_))));
    }

    #[test]
    fn unit_costs_accepted() {
        let unit = P_TWO.replace(
            "C = 2   # rescaled",
            "cost_detection = 1\ncost_treatment = 2\ncost_infected = 10",
        );
        let raw = parse_params(&unit).unwrap();
        assert!(matches!(raw.cost, CostInput::Unit { .. }));
    }

    #[test]
    fn schedule_spec() {
        let m = derive(&parse_params(P_TWO).unwrap()).unwrap();
        let s = parse_schedule(&m, "0:0.03, 10:0").unwrap();
        assert_eq!(s.breakpoints(), &[0.0, 10.0, 50.0]);
        assert!(parse_schedule(&m, "").is_err());
        assert!(parse_schedule(&m, "10:0,5:0").is_err());
        assert!(parse_schedule(&m, "0:0.5").is_err());
        assert!(parse_schedule(&m, "0:0,50:0").is_err());
        assert!(parse_schedule(&m, "zero").is_err());
    }

    #[test]
    fn numbers_carry_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.5), "-2.5000000000000000e0");
    }
}
