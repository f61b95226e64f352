//! Configuration file, subcommands and report writing.
//!
//! The configuration is a plain `key = value` file with `[section]` headers.
//! Every key has a default (see [`RunConfig::default`] and the README); an
//! unknown section or key is an error. `#` starts a comment.
//!
//! Exit codes: 0 pass, 1 check failure, 2 usage or configuration error,
//! 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::fields::snapshot::Snapshot;
use crate::fields::{Geometry, Grid, ScalarField};
use crate::mhd::{MhdConfig, MhdSolver, PrimitiveState, MAX_CFL};
use crate::mms::{self, MhdMmsSettings, MmsStudy, ObmMmsSettings};
use crate::obm::{default_potential, LimitModel, ObmConfig, ObmDiagnostics, ObmSolver, ObmState, WallProfile};
use crate::relent::{self, ProfileKind, Profiles, StudyConfig};
use crate::thermo::{self, DefaultStructural, Gas, GasParams, ReferenceState, TamperedEntropy};
use crate::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Observed MMS orders must land in this interval.
pub const MMS_ORDER_RANGE: (f64, f64) = (1.8, 2.2);

#[derive(Debug, Parser)]
#[command(name = "obmhd", version, about = "Low-Mach MHD and its Oberbeck-Boussinesq limit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file; defaults are used for anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized profiles (overrides every `seed` key).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress the human-readable report on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Gibbs relation, stability and structural identities of the EOS.
    ThermoCheck,
    /// Integrate the limit system; writes `obm.csv` and snapshots.
    RunObm,
    /// Integrate the primitive system; writes `mhd.csv` and snapshots.
    RunMhd,
    /// ε-sweep of the relative energy; writes `study.csv` and `study_summary.txt`.
    Converge,
    /// Manufactured-solution refinement for both solvers; writes `mms.csv`.
    Mms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileChoice {
    Zero,
    Smooth,
    Random,
}

impl ProfileChoice {
    fn parse(v: &str) -> Result<Self> {
        match v {
            "zero" => Ok(ProfileChoice::Zero),
            "smooth" => Ok(ProfileChoice::Smooth),
            "random" => Ok(ProfileChoice::Random),
            _ => Err(Error::Config(format!("unknown profile {v:?} (zero | smooth | random)"))),
        }
    }
}

/// Initial-data selector shared by `[obm]`, `[mhd]` and `[study]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSection {
    pub profile: ProfileChoice,
    pub theta_amp: f64,
    pub b_amp: f64,
    pub u_amp: f64,
    pub seed: u64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { profile: ProfileChoice::Smooth, theta_amp: 1.0, b_amp: 1.0, u_amp: 0.0, seed: 0 }
    }
}

impl ProfileSection {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "profile" => self.profile = ProfileChoice::parse(v)?,
            "theta_amp" => self.theta_amp = num(key, v)?,
            "b_amp" => self.b_amp = num(key, v)?,
            "u_amp" => self.u_amp = num(key, v)?,
            "seed" => self.seed = int(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn profiles(&self) -> Profiles {
        let kind = match self.profile {
            ProfileChoice::Random => ProfileKind::Random { seed: self.seed },
            _ => ProfileKind::Smooth,
        };
        match self.profile {
            ProfileChoice::Zero => Profiles { kind, ..Profiles::zero() },
            _ => Profiles { kind, theta_amp: self.theta_amp, b_amp: self.b_amp, u_amp: self.u_amp },
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if [self.theta_amp, self.b_amp, self.u_amp].iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("[{what}] amplitudes must be finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoSection {
    pub gas: GasParams,
    pub reference: ReferenceState,
    /// Fault injection: relative error in the slope of the molecular entropy.
    pub entropy_slope_defect: f64,
}

impl Default for ThermoSection {
    fn default() -> Self {
        ThermoSection { gas: GasParams::default(), reference: ReferenceState::default(), entropy_slope_defect: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSection {
    pub geometry: Geometry,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { geometry: Geometry::Strip2, n1: 64, n2: 1, n3: 65 }
    }
}

impl GridSection {
    pub fn grid(&self) -> Result<Grid> {
        match self.geometry {
            Geometry::Strip2 => Grid::strip2(self.n1, self.n3),
            Geometry::Strip3 => Grid::strip3(self.n1, self.n2, self.n3),
            Geometry::Torus2 => Grid::torus2(self.n1, self.n2),
        }
        .map_err(|e| Error::Config(format!("[grid] {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObmSection {
    /// 0 picks `dt ≈ h3/4`, rounded so that `t_end` is hit.
    pub dt: f64,
    pub t_end: f64,
    pub model: LimitModel,
    pub gravity: bool,
    pub theta_bottom: f64,
    pub theta_top: f64,
    pub init: ProfileSection,
}

impl Default for ObmSection {
    fn default() -> Self {
        ObmSection {
            dt: 0.0,
            t_end: 0.25,
            model: LimitModel::Literal,
            gravity: true,
            theta_bottom: 0.0,
            theta_top: 0.0,
            init: ProfileSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhdSection {
    pub eps: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub gravity: bool,
    /// Steps between CSV rows (the last step is always written).
    pub sample_every: usize,
    pub init: ProfileSection,
}

impl Default for MhdSection {
    fn default() -> Self {
        MhdSection { eps: 0.1, cfl: 0.35, t_end: 0.25, gravity: true, sample_every: 10, init: ProfileSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySection {
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    pub cadence: usize,
    pub cfl: f64,
    pub gravity: bool,
    pub model: LimitModel,
    pub obm_dt_factor: f64,
    pub monitor_ceiling: f64,
    pub parallel: bool,
    pub init: ProfileSection,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            eps_list: vec![0.2, 0.1, 0.05],
            t_end: 0.25,
            cadence: 10,
            cfl: 0.35,
            gravity: true,
            model: LimitModel::Consistent,
            obm_dt_factor: 0.25,
            monitor_ceiling: 1e3,
            parallel: true,
            init: ProfileSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), snapshots: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub thermo: ThermoSection,
    pub grid: GridSection,
    pub obm: ObmSection,
    pub mhd: MhdSection,
    pub study: StudySection,
    pub output: OutputSection,
}

fn num(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected true or false, got {v:?}")))
}

fn model(key: &str, v: &str) -> Result<LimitModel> {
    match v {
        "literal" => Ok(LimitModel::Literal),
        "consistent" => Ok(LimitModel::Consistent),
        _ => Err(Error::Config(format!("{key}: expected literal or consistent, got {v:?}"))),
    }
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("line {}: {m}", no + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| at("unterminated section header".into()))?.trim();
                if !["thermo", "grid", "obm", "mhd", "study", "output"].contains(&name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| at("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| at(format!("key {key:?} outside any section")))?;
            let known = cfg.set(sec, key, value).map_err(|e| at(e.to_string()))?;
            if !known {
                return Err(at(format!("unknown key {key:?} in [{sec}]")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<bool> {
        match section {
            "thermo" => {
                let (g, r) = (&mut self.thermo.gas, &mut self.thermo.reference);
                let slot = match key {
                    "p_inf" => &mut g.p_inf,
                    "a" => &mut g.a,
                    "s0" => &mut g.s0,
                    "mu_low" => &mut g.mu_low,
                    "mu_high" => &mut g.mu_high,
                    "eta_high" => &mut g.eta_high,
                    "kappa_low" => &mut g.kappa_low,
                    "kappa_high" => &mut g.kappa_high,
                    "beta" => &mut g.beta,
                    "zeta_low" => &mut g.zeta_low,
                    "zeta_high" => &mut g.zeta_high,
                    "rho_bar" => &mut r.rho_bar,
                    "theta_bar" => &mut r.theta_bar,
                    "b_bar" => &mut r.b_bar,
                    "entropy_slope_defect" => &mut self.thermo.entropy_slope_defect,
                    _ => return Ok(false),
                };
                *slot = num(key, v)?;
            }
            "grid" => match key {
                "geometry" => {
                    self.grid.geometry = match v {
                        "strip2" => Geometry::Strip2,
                        "strip3" => Geometry::Strip3,
                        "torus2" => Geometry::Torus2,
                        _ => return Err(Error::Config(format!("geometry: unknown {v:?}"))),
                    }
                }
                "n1" => self.grid.n1 = int(key, v)?,
                "n2" => self.grid.n2 = int(key, v)?,
                "n3" => self.grid.n3 = int(key, v)?,
                _ => return Ok(false),
            },
            "obm" => {
                let o = &mut self.obm;
                match key {
                    "dt" => o.dt = num(key, v)?,
                    "t_end" => o.t_end = num(key, v)?,
                    "model" => o.model = model(key, v)?,
                    "gravity" => o.gravity = flag(key, v)?,
                    "theta_bottom" => o.theta_bottom = num(key, v)?,
                    "theta_top" => o.theta_top = num(key, v)?,
                    _ => return o.init.set(key, v),
                }
            }
            "mhd" => {
                let m = &mut self.mhd;
                match key {
                    "eps" => m.eps = num(key, v)?,
                    "cfl" => m.cfl = num(key, v)?,
                    "t_end" => m.t_end = num(key, v)?,
                    "gravity" => m.gravity = flag(key, v)?,
                    "sample_every" => m.sample_every = int(key, v)?,
                    _ => return m.init.set(key, v),
                }
            }
            "study" => {
                let s = &mut self.study;
                match key {
                    "eps_list" => {
                        s.eps_list = v
                            .split(',')
                            .map(|e| num(key, e.trim()))
                            .collect::<Result<Vec<_>>>()?
                    }
                    "t_end" => s.t_end = num(key, v)?,
                    "cadence" => s.cadence = int(key, v)?,
                    "cfl" => s.cfl = num(key, v)?,
                    "gravity" => s.gravity = flag(key, v)?,
                    "model" => s.model = model(key, v)?,
                    "obm_dt_factor" => s.obm_dt_factor = num(key, v)?,
                    "monitor_ceiling" => s.monitor_ceiling = num(key, v)?,
                    "parallel" => s.parallel = flag(key, v)?,
                    _ => return s.init.set(key, v),
                }
            }
            "output" => match key {
                "dir" => self.output.dir = PathBuf::from(v),
                "snapshots" => self.output.snapshots = flag(key, v)?,
                _ => return Ok(false),
            },
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Checks every numeric parameter against the preconditions of the
    /// modules it feeds.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.thermo.gas.validate()?;
        self.thermo.reference.validate()?;
        if !self.thermo.entropy_slope_defect.is_finite() {
            return bad("entropy_slope_defect must be finite".into());
        }
        self.grid.grid()?;
        let o = &self.obm;
        if !(o.dt >= 0.0 && o.dt.is_finite()) || !(o.t_end > 0.0 && o.t_end.is_finite()) {
            return bad("[obm] needs dt >= 0 and t_end > 0".into());
        }
        if !o.theta_bottom.is_finite() || !o.theta_top.is_finite() {
            return bad("[obm] wall temperatures must be finite".into());
        }
        o.init.validate("obm")?;
        let m = &self.mhd;
        if !(m.eps > 0.0 && m.eps <= 1.0) {
            return bad(format!("[mhd] eps must lie in (0, 1], got {}", m.eps));
        }
        if !(m.cfl > 0.0 && m.cfl <= MAX_CFL) {
            return bad(format!("[mhd] cfl must lie in (0, {MAX_CFL}], got {}", m.cfl));
        }
        if !(m.t_end > 0.0 && m.t_end.is_finite()) || m.sample_every == 0 {
            return bad("[mhd] needs t_end > 0 and sample_every >= 1".into());
        }
        m.init.validate("mhd")?;
        let s = &self.study;
        if !(s.cfl > 0.0 && s.cfl <= MAX_CFL) {
            return bad(format!("[study] cfl must lie in (0, {MAX_CFL}], got {}", s.cfl));
        }
        if !(s.monitor_ceiling > 0.0) {
            return bad("[study] monitor_ceiling must be positive".into());
        }
        s.init.validate("study")?;
        self.study_config()?.validate()
    }

    pub fn gas(&self) -> Result<Gas> {
        let p = self.thermo.gas;
        if self.thermo.entropy_slope_defect == 0.0 {
            Gas::new(p)
        } else {
            let inner = DefaultStructural { p_inf: p.p_inf, s0: p.s0 };
            Gas::with_structural(p, Arc::new(TamperedEntropy { inner, defect: self.thermo.entropy_slope_defect }))
        }
    }

    fn strip2(&self, what: &str) -> Result<Grid> {
        let grid = self.grid.grid()?;
        if grid.geometry != Geometry::Strip2 {
            return Err(Error::Config(format!("{what} needs [grid] geometry = strip2")));
        }
        Ok(grid)
    }

    pub fn obm_config(&self) -> Result<ObmConfig> {
        let grid = self.grid.grid()?;
        if !grid.geometry.is_strip() {
            return Err(Error::Config("run-obm needs a strip geometry".into()));
        }
        let o = &self.obm;
        let dt = if o.dt > 0.0 {
            o.dt
        } else {
            o.t_end / (o.t_end / (0.25 * grid.h3())).ceil().max(1.0)
        };
        let mut c = ObmConfig::new(self.gas()?, self.thermo.reference, grid, dt, o.t_end);
        if !o.gravity {
            c.g = ScalarField::zeros(grid);
        }
        c.theta_b = WallProfile::uniform(&grid, o.theta_bottom, o.theta_top);
        c.model = o.model;
        Ok(c)
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        let s = &self.study;
        let grid = self.grid.grid()?;
        let mut c = StudyConfig::new(self.gas()?, self.thermo.reference, grid, s.eps_list.clone());
        c.t_end = s.t_end;
        c.cadence = s.cadence;
        c.cfl = s.cfl;
        c.profiles = s.init.profiles();
        c.gravity = s.gravity;
        c.model = s.model;
        c.obm_dt_factor = s.obm_dt_factor;
        c.monitor_ceiling = s.monitor_ceiling;
        c.parallel = s.parallel;
        Ok(c)
    }

    /// Applies `--seed` and `--out`.
    pub fn override_with(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(seed) = seed {
            for init in [&mut self.obm.init, &mut self.mhd.init, &mut self.study.init] {
                init.seed = seed;
            }
        }
        if let Some(out) = out {
            self.output.dir = out.to_path_buf();
        }
    }
}

/// What a command produced: its exit status and the human-readable report.
#[derive(Debug)]
pub struct Outcome {
    pub status: i32,
    pub report: String,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let quiet = cli.quiet;
    match execute(&cli) {
        Ok(o) => {
            if !quiet {
                print!("{}", o.report);
            }
            o.status
        }
        Err(e) => {
            eprintln!("obmhd: {e}");
            exit_code(&e)
        }
    }
}

/// Loads the configuration named on the command line and runs the command.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.override_with(cli.seed, cli.out.as_deref());
    cfg.validate()?;
    run_command(cli.command, &cfg)
}

pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    if cmd != Command::ThermoCheck {
        fs::create_dir_all(&cfg.output.dir)?;
    }
    match cmd {
        Command::ThermoCheck => cmd_thermo_check(cfg),
        Command::RunObm => cmd_run_obm(cfg),
        Command::RunMhd => cmd_run_mhd(cfg),
        Command::Converge => cmd_converge(cfg),
        Command::Mms => cmd_mms(cfg),
    }
}

pub fn cmd_thermo_check(cfg: &RunConfig) -> Result<Outcome> {
    let gas = cfg.gas()?;
    let checks = thermo::consistency_suite(&gas, &cfg.thermo.reference, 100, cfg.study.init.seed)?;
    let mut report = String::new();
    let _ = writeln!(report, "{:<32} {:>12} {:>10}  status", "check", "value", "tolerance");
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        let _ = writeln!(report, "{:<32} {:>12.3e} {:>10.1e}  {status}", c.name, c.value, c.tolerance);
    }
    let ok = checks.iter().all(|c| c.passed());
    let _ = writeln!(report, "{}", if ok { "all checks passed" } else { "thermodynamic consistency check failed" });
    Ok(Outcome { status: if ok { EXIT_PASS } else { EXIT_CHECK }, report })
}

fn obm_snapshot(solver: &ObmSolver, s: &ObmState) -> Result<Snapshot> {
    let grid = solver.config().grid;
    let mut snap = Snapshot::new(grid);
    snap.push("theta1", &s.theta1)?;
    snap.push("b1", &s.b1.broadcast(&grid)?)?;
    let u = s.u.broadcast(&grid)?;
    snap.push("u1", &u.component(0))?;
    snap.push("u2", &u.component(1))?;
    Ok(snap)
}

fn mhd_snapshot(s: &PrimitiveState) -> Result<Snapshot> {
    let mut snap = Snapshot::new(*s.grid());
    snap.push("rho", &s.rho)?;
    snap.push("theta", &s.theta)?;
    for (k, name) in ["u1", "u2", "u3"].iter().enumerate() {
        snap.push(name, &s.u.component(k))?;
    }
    for (k, name) in ["b1", "b2", "b3"].iter().enumerate() {
        snap.push(name, &s.b.component(k))?;
    }
    Ok(snap)
}

pub fn cmd_run_obm(cfg: &RunConfig) -> Result<Outcome> {
    let solver = ObmSolver::new(cfg.obm_config()?)?;
    let (u, theta1, b1) = cfg.obm.init.profiles().fields(&solver);
    let init = solver.initial_state(u, theta1, b1)?;
    let dir = &cfg.output.dir;
    if cfg.output.snapshots {
        obm_snapshot(&solver, &init)?.save(&dir.join("obm_initial.obmq"))?;
    }
    let mut rows = Vec::new();
    let mut last: Option<ObmDiagnostics> = None;
    let result = solver.run(init, |_, d| {
        rows.push(d.csv_row());
        last = Some(*d);
    });
    write_csv(&dir.join("obm.csv"), ObmDiagnostics::CSV_HEADER, &rows)?;
    let fin = result?;
    if cfg.output.snapshots {
        obm_snapshot(&solver, &fin)?.save(&dir.join("obm_final.obmq"))?;
    }
    let d = last.expect("run observes the initial state");
    let mut report = String::new();
    let _ = writeln!(report, "run-obm: {} steps of dt = {:.4e} to t = {:.4}", rows.len() - 1, solver.config().dt, fin.t);
    let _ = writeln!(
        report,
        "  mean ϑ¹ = {:.6e}, χ = {:.6e}, kinetic = {:.6e}, magnetic = {:.6e}, max div U = {:.2e}",
        d.mean_theta1, d.chi, d.kinetic, d.magnetic, d.max_div_u
    );
    let _ = writeln!(report, "  wrote {}", dir.join("obm.csv").display());
    Ok(Outcome { status: EXIT_PASS, report })
}

pub fn cmd_run_mhd(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.strip2("run-mhd")?;
    let m = &cfg.mhd;
    let gas = cfg.gas()?;
    let g = if m.gravity { default_potential(&grid) } else { ScalarField::zeros(grid) };
    let mut ocfg = ObmConfig::new(gas.clone(), cfg.thermo.reference, grid, 1.0, m.t_end);
    ocfg.g = g.clone();
    let (prim, _) = relent::well_prepared_data(&m.init.profiles(), m.eps, &ObmSolver::new(ocfg)?)?;

    let mut mcfg = MhdConfig::new(gas, cfg.thermo.reference, grid, m.eps, m.t_end);
    mcfg.g = g;
    mcfg.cfl = m.cfl;
    let solver = MhdSolver::new(mcfg)?;
    let dir = &cfg.output.dir;
    if cfg.output.snapshots {
        mhd_snapshot(&prim)?.save(&dir.join("mhd_initial.obmq"))?;
    }
    let (dt, steps) = solver.run_dt(&prim);
    let mut rows = Vec::new();
    let mut diag_err = None;
    let run = solver.run(prim, |s, k| {
        if k % m.sample_every == 0 || k == steps {
            match solver.diagnostics(s) {
                Ok(d) => rows.push(d.csv_row()),
                Err(e) => {
                    diag_err.get_or_insert(e);
                }
            }
        }
    });
    write_csv(&dir.join("mhd.csv"), crate::mhd::MhdDiagnostics::CSV_HEADER, &rows)?;
    if let Some(e) = run.failure.or(diag_err) {
        return Err(e);
    }
    if cfg.output.snapshots {
        mhd_snapshot(&run.state)?.save(&dir.join("mhd_final.obmq"))?;
    }
    let d = solver.diagnostics(&run.state)?;
    let mut report = String::new();
    let _ = writeln!(report, "run-mhd: ε = {}, {} steps of dt = {:.4e} to t = {:.4}", m.eps, run.steps, dt, run.state.t);
    let _ = writeln!(
        report,
        "  mass = {:.12e}, energy = {:.6e}, max div B = {:.2e}, min ρ = {:.6}, min θ = {:.6}",
        d.mass, d.energy, d.max_div_b, d.min_rho, d.min_theta
    );
    let _ = writeln!(report, "  wrote {}", dir.join("mhd.csv").display());
    Ok(Outcome { status: EXIT_PASS, report })
}

pub fn cmd_converge(cfg: &RunConfig) -> Result<Outcome> {
    cfg.strip2("converge")?;
    let study = relent::convergence_study(&cfg.study_config()?)?;
    let dir = &cfg.output.dir;
    write_csv(&dir.join("study.csv"), relent::StudyReport::CSV_HEADER, &study.csv_rows())?;
    let mut report = study.summary();
    let checks = [
        ("sup E strictly decreasing", study.energy_decreasing()),
        ("deviations decreasing", study.deviations_decreasing()),
        ("uniform bounds", study.monitors_bounded()),
    ];
    for (name, ok) in checks {
        let _ = writeln!(report, "{name}: {}", if ok { "yes" } else { "NO" });
    }
    fs::write(dir.join("study_summary.txt"), &report)?;
    if let Some(e) = study.runs.iter().find_map(|r| r.failure.as_ref()) {
        let _ = writeln!(report, "numerical failure: {e}");
        return Ok(Outcome { status: EXIT_NUMERICAL, report });
    }
    let ok = checks.iter().all(|c| c.1);
    Ok(Outcome { status: if ok { EXIT_PASS } else { EXIT_CHECK }, report })
}

/// Whether every observed order lies in [`MMS_ORDER_RANGE`].
pub fn mms_orders_ok(study: &MmsStudy) -> bool {
    let (lo, hi) = MMS_ORDER_RANGE;
    study.orders.iter().all(|&p| (lo..=hi).contains(&p))
}

pub fn cmd_mms(cfg: &RunConfig) -> Result<Outcome> {
    let gas = cfg.gas()?;
    let rf = cfg.thermo.reference;
    let (obm, mhd) = std::thread::scope(|s| {
        let o = s.spawn(|| mms::obm_study(&gas, &rf, &ObmMmsSettings::default()));
        let m = mms::mhd_study(&gas, &rf, &MhdMmsSettings::default());
        (o.join().expect("MMS worker panicked"), m)
    });
    let (obm, mhd) = (obm?, mhd?);
    let rows: Vec<String> = obm.csv_rows().into_iter().chain(mhd.csv_rows()).collect();
    let dir = &cfg.output.dir;
    write_csv(&dir.join("mms.csv"), MmsStudy::CSV_HEADER, &rows)?;
    let mut report = String::new();
    let mut ok = true;
    for st in [&obm, &mhd] {
        let pass = mms_orders_ok(st);
        ok &= pass;
        let orders: Vec<String> = st.orders.iter().map(|p| format!("{p:.3}")).collect();
        let _ = writeln!(
            report,
            "{:<4} errors {} orders [{}] horizontal change {:.2e}  {}",
            st.solver,
            st.levels.iter().map(|l| format!("{:.3e}", l.error)).collect::<Vec<_>>().join(" "),
            orders.join(", "),
            st.horizontal_change(),
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(Outcome { status: if ok { EXIT_PASS } else { EXIT_CHECK }, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_sections_and_comments() {
        let cfg = RunConfig::parse(
            "# comment\n[thermo]\na = 0.5\n[grid]\nn1 = 32 # trailing\nn3 = 33\n[study]\neps_list = 0.4, 0.2\nmodel = literal\n",
        )
        .unwrap();
        assert_eq!(cfg.thermo.gas.a, 0.5);
        assert_eq!((cfg.grid.n1, cfg.grid.n3), (32, 33));
        assert_eq!(cfg.study.eps_list, vec![0.4, 0.2]);
        assert_eq!(cfg.study.model, LimitModel::Literal);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("[grid]\nn4 = 3\n").is_err());
        assert!(RunConfig::parse("[grids]\n").is_err());
        assert!(RunConfig::parse("n1 = 3\n").is_err());
        assert!(RunConfig::parse("[thermo]\na = -1\n").is_err());
        assert!(RunConfig::parse("[mhd]\ncfl = 0.9\n").is_err());
        assert!(RunConfig::parse("[study]\neps_list = 0.1, 0.2\n").is_err());
        assert!(RunConfig::parse("[obm]\nmodel = other\n").is_err());
    }

    #[test]
    fn seed_override_reaches_every_profile() {
        let mut cfg = RunConfig::default();
        cfg.override_with(Some(9), Some(Path::new("x")));
        assert_eq!([cfg.obm.init.seed, cfg.mhd.init.seed, cfg.study.init.seed], [9, 9, 9]);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
    }
}
