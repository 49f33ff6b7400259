//! `nvgrav` command-line front end.
//!
//! Every subcommand resolves a full parameter set (built-in operating point,
//! then `--config`, then flags), computes, and writes its data files plus a
//! `<file>.meta.json` sidecar holding the resolved configuration.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nvgrav_core::classical::{self, PhaseMethod};
use nvgrav_core::dd::{self, CoherenceEnvelope, DriveSpec, OUNoise};
use nvgrav_core::model::units::parse_duration;
use nvgrav_core::noise::{self, AxisSpec, FluctuationConstraint, PhaseBudget, Scale};
use nvgrav_core::quantum::{self, HybridModel, RamseyConfig};
use nvgrav_core::SystemParams;

pub const DEFAULT_SEED: u64 = 20_240_917;
/// Largest |r| accepted by `ramsey` without `--allow-large-r`.
pub const DESK_R_LIMIT: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "nvgrav", version, about = "Spin-oscillator gravimeter toolkit")]
pub struct Cli {
    /// TOML parameter file applied on top of the built-in operating point
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "nvgrav-out")]
    pub out: PathBuf,
    /// Master seed for Monte-Carlo runs
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads (default: all cores); never changes the results
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interferometer phase shift from the classical action
    Phase(PhaseArgs),
    /// Truncated-Fock Ramsey fringe simulation
    Ramsey(RamseyArgs),
    /// Visibility or precision heatmap
    Map(MapArgs),
    /// Free decay against continuous dynamical decoupling
    Dd(DdArgs),
    /// Recompute the quoted figures and grade them
    Report(ReportArgs),
}

/// Accepts a plain number (SI units) or a duration with an `s`, `ms`, `us`
/// or `ns` suffix.
pub fn parse_quantity(text: &str) -> std::result::Result<f64, String> {
    text.trim()
        .parse::<f64>()
        .ok()
        .or_else(|| parse_duration(text))
        .ok_or_else(|| format!("cannot parse `{text}` as a number or duration"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Closed,
    Quadrature,
    Echo,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhaseArgs {
    /// Field gradient B_g (T/m)
    #[arg(long)]
    pub gradient: Option<f64>,
    /// Interferometer time; sets ω_z = 2π/t0
    #[arg(long, value_parser = parse_quantity)]
    pub t0: Option<f64>,
    /// Gravitational acceleration (m/s²)
    #[arg(long, allow_negative_numbers = true)]
    pub gravity: Option<f64>,
    /// Particle mass (kg)
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    /// Also write phase.csv
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RamseyArgs {
    /// Desk-scale coupling λ/ħω_z
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Desk-scale gravity offset Δλ/ħω_z
    #[arg(long, allow_negative_numbers = true)]
    pub rg: Option<f64>,
    /// Use the couplings of the physical parameters
    #[arg(long)]
    pub physical: bool,
    /// Accept |r| above the desk-scale limit
    #[arg(long)]
    pub allow_large_r: bool,
    /// Free evolution time, one trap period; sets ω_z = 2π/t0
    #[arg(long, value_parser = parse_quantity)]
    pub t0: Option<f64>,
    /// Spin coherence time (`inf` disables dephasing)
    #[arg(long, value_parser = parse_quantity)]
    pub t2: Option<f64>,
    /// Mechanical quality factor (`inf` disables damping)
    #[arg(long)]
    pub q: Option<f64>,
    /// Initial thermal occupation
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Bath occupation of the damping channel
    #[arg(long)]
    pub bath_nbar: Option<f64>,
    /// Fock cutoff
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Readout phases over [0, 2π)
    #[arg(long)]
    pub points: Option<usize>,
    /// Drop all dissipators
    #[arg(long)]
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Visibility,
    Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleArg {
    Linear,
    Log,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Linear => Scale::Linear,
            ScaleArg::Log => Scale::Log,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MapArgs {
    #[arg(value_enum)]
    pub kind: MapKind,
    /// x axis: Q (visibility) or t0 in seconds (precision)
    #[arg(long, value_parser = parse_quantity)]
    pub x_min: Option<f64>,
    #[arg(long, value_parser = parse_quantity)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub x_points: Option<usize>,
    #[arg(long, value_enum)]
    pub x_scale: Option<ScaleArg>,
    /// y axis: T2 in seconds (visibility) or B_g in T/m (precision)
    #[arg(long, value_parser = parse_quantity)]
    pub y_min: Option<f64>,
    #[arg(long, value_parser = parse_quantity)]
    pub y_max: Option<f64>,
    #[arg(long)]
    pub y_points: Option<usize>,
    #[arg(long, value_enum)]
    pub y_scale: Option<ScaleArg>,
    /// Coupling λ/ħω_z of the visibility map
    #[arg(long, default_value_t = 90.0)]
    pub r: f64,
    /// Interferometer time of the visibility map (default: one trap period)
    #[arg(long, value_parser = parse_quantity)]
    pub t0: Option<f64>,
    /// Fixed phase resolution of the precision map (rad)
    #[arg(long, default_value_t = noise::DEFAULT_PHASE_RESOLUTION)]
    pub sigma_phi: f64,
    /// Derive the phase resolution from projection noise instead
    #[arg(long)]
    pub projection: bool,
    /// Integration time for `--projection`
    #[arg(long, value_parser = parse_quantity, default_value = "1s")]
    pub duration: f64,
    /// Fringe visibility for `--projection`
    #[arg(long, default_value_t = 1.0)]
    pub visibility: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DdArgs {
    /// Field-noise amplitude σ/2π (Hz)
    #[arg(long, default_value_t = 1e4)]
    pub sigma_hz: f64,
    /// Field-noise correlation time
    #[arg(long, value_parser = parse_quantity, default_value = "10us")]
    pub tau_c: f64,
    /// Drive Rabi frequency Ω1/2π (MHz)
    #[arg(long, default_value_t = 1.0)]
    pub rabi_mhz: f64,
    /// Phase-modulation frequency Ω2/2π (kHz)
    #[arg(long, default_value_t = 10.0)]
    pub modulation_khz: f64,
    /// Relative rms drive-amplitude noise
    #[arg(long, default_value_t = 1e-3)]
    pub drive_noise: f64,
    /// Correlation time of the drive-amplitude noise
    #[arg(long, value_parser = parse_quantity, default_value = "1ms")]
    pub drive_tau: f64,
    /// Trajectories of the driven run
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    /// Trajectories of the free run
    #[arg(long, default_value_t = 4000)]
    pub free_trajectories: usize,
    #[arg(long, value_parser = parse_quantity, default_value = "150us")]
    pub free_duration: f64,
    #[arg(long, value_parser = parse_quantity, default_value = "2ms")]
    pub dd_duration: f64,
    /// Envelope sample points
    #[arg(long, default_value_t = 61)]
    pub points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Relative PASS tolerance applied to every item
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Fully resolved inputs shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SystemParams,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Built-in operating point (B_g = 10⁶ T/m, t0 = 2 ms, g = 9.8 m/s²,
    /// m = 10⁻¹⁶ kg), overlaid with the `--config` file when given.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let base = noise::headline_params();
        let params = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                base.overlay_toml(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => base,
        };
        if cli.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        Ok(Self {
            params,
            out: cli.out.clone(),
            seed: cli.seed,
            workers: cli.workers,
        })
    }
}

fn checked(p: SystemParams) -> Result<SystemParams> {
    let report = p.validate();
    if !report.is_valid() {
        bail!("invalid configuration:\n  {}", report.violations.join("\n  "));
    }
    Ok(p)
}

#[derive(Serialize)]
struct Sidecar<'a, O: Serialize, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    file: &'a str,
    fingerprint: String,
    seed: u64,
    config: &'a SystemParams,
    config_toml: String,
    options: &'a O,
    summary: &'a S,
}

/// Writes `name` and its sidecar into the output directory.
fn emit<O: Serialize, S: Serialize>(
    cfg: &RunConfig,
    params: &SystemParams,
    command: &str,
    name: &str,
    data: &str,
    options: &O,
    summary: &S,
) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(name);
    fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
    let meta = Sidecar {
        tool: "nvgrav",
        version: env!("CARGO_PKG_VERSION"),
        command,
        file: name,
        fingerprint: params.fingerprint(),
        seed: cfg.seed,
        config: params,
        config_toml: params.to_toml_string(),
        options,
        summary,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    let meta_path = sidecar_path(&path);
    fs::write(&meta_path, json).with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(path)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn sci(x: f64) -> String {
    format!("{x:.14e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub delta_phi_closed: Option<f64>,
    pub delta_phi_quadrature: Option<f64>,
    /// Relative change of the quadrature phase when its step is halved.
    pub quadrature_change: Option<f64>,
    /// Two-period rotation + flip protocol.
    pub delta_phi_echo: Option<f64>,
    pub delta_phi_echo_alternate: Option<f64>,
    pub delta_z: f64,
    pub z0: f64,
    pub branch_offset: f64,
    pub r: f64,
    pub r_g: f64,
    pub t0: f64,
}

impl fmt::Display for PhaseSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.delta_phi_closed {
            writeln!(f, "delta_phi (closed form) = {v:.6e} rad")?;
        }
        if let Some(v) = self.delta_phi_quadrature {
            let change = self.quadrature_change.unwrap_or(f64::NAN);
            writeln!(f, "delta_phi (quadrature)  = {v:.6e} rad  (step-halving change {change:.1e})")?;
        }
        if let Some(v) = self.delta_phi_echo {
            writeln!(f, "delta_phi (echo, 2 t0)  = {v:.6e} rad")?;
        }
        if let Some(v) = self.delta_phi_echo_alternate {
            writeln!(f, "delta_phi (echo, gravity reversed) = {v:.6e} rad")?;
        }
        writeln!(f, "t0 = {:.6e} s", self.t0)?;
        writeln!(f, "delta_z = {:.6e} m", self.delta_z)?;
        writeln!(f, "z0 = {:.6e} m", self.z0)?;
        writeln!(f, "branch offset = {:.6e} m", self.branch_offset)?;
        writeln!(f, "r = {:.6e}", self.r)?;
        write!(f, "r_g = {:.6e}", self.r_g)
    }
}

pub fn cmd_phase(cfg: &RunConfig, args: &PhaseArgs) -> Result<PhaseSummary> {
    let mut p = cfg.params;
    if let Some(g) = args.gradient {
        p.coupling.gradient = g;
    }
    if let Some(t0) = args.t0 {
        p.oscillator.omega_z = 2.0 * PI / t0;
    }
    if let Some(g) = args.gravity {
        p.constants.gravity = g;
    }
    if let Some(m) = args.mass {
        p.oscillator.mass = m;
    }
    let p = checked(p)?;
    let t0 = p.oscillator.period();
    let want = |m: MethodArg| args.method == m || args.method == MethodArg::All;

    let closed = want(MethodArg::Closed)
        .then(|| classical::phase_shift(&p, t0, PhaseMethod::ClosedForm))
        .transpose()?;
    let quad = want(MethodArg::Quadrature)
        .then(|| classical::phase_shift(&p, t0, PhaseMethod::Quadrature))
        .transpose()?;
    let echo = want(MethodArg::Echo)
        .then(|| classical::echo_phase(&p, true, true))
        .transpose()?;

    let eq = classical::equilibrium(&p);
    let d = p.derived();
    let summary = PhaseSummary {
        delta_phi_closed: closed.map(|r| r.delta_phi),
        delta_phi_quadrature: quad.map(|r| r.delta_phi),
        quadrature_change: quad.and_then(|r| r.quadrature_change),
        delta_phi_echo: echo.map(|e| e.result.delta_phi),
        delta_phi_echo_alternate: echo.map(|e| e.alternate),
        delta_z: eq.delta_z,
        z0: eq.z0,
        branch_offset: classical::branch_offset(&p),
        r: d.r,
        r_g: d.r_g,
        t0,
    };

    if args.csv {
        let mut csv = String::from("method,delta_phi,action_plus,action_minus\n");
        let rows = [
            ("closed_form", closed),
            ("quadrature", quad),
            ("echo", echo.map(|e| e.result)),
        ];
        for (name, res) in rows {
            if let Some(r) = res {
                csv.push_str(&format!("{name},{},{},{}\n", sci(r.delta_phi), sci(r.action_plus), sci(r.action_minus)));
            }
        }
        emit(cfg, &p, "phase", "phase.csv", &csv, args, &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct RamseySummary {
    pub r: f64,
    pub r_g: f64,
    pub n_cut: usize,
    pub evolution_time: f64,
    /// Fitted Δφ in [0, 2π).
    pub fitted_phase: f64,
    /// 16 r r_g ω_z t0 reduced to [0, 2π).
    pub expected_phase: f64,
    pub phase_error: f64,
    pub visibility: f64,
    /// exp(−(2π/Q)(2r)²)·exp(−t0/T2) for the active dissipators.
    pub visibility_heuristic: f64,
    pub fit_residual: f64,
    pub warnings: Vec<String>,
}

impl fmt::Display for RamseySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "r = {:.6e}, r_g = {:.6e}, N_cut = {}", self.r, self.r_g, self.n_cut)?;
        writeln!(f, "fitted delta_phi mod 2pi = {:.9} rad", self.fitted_phase)?;
        writeln!(f, "expected delta_phi mod 2pi = {:.9} rad (difference {:.3e})", self.expected_phase, self.phase_error)?;
        writeln!(f, "visibility = {:.6}", self.visibility)?;
        writeln!(f, "heuristic visibility = {:.6}", self.visibility_heuristic)?;
        write!(f, "fit residual = {:.3e}", self.fit_residual)
    }
}

pub fn cmd_ramsey(cfg: &RunConfig, args: &RamseyArgs) -> Result<RamseySummary> {
    let mut p = cfg.params;
    let mut warnings = Vec::new();
    if let Some(r) = args.r {
        p.sequence.desk_r = r;
    }
    if let Some(rg) = args.rg {
        p.sequence.desk_rg = rg;
    }
    if args.physical {
        p.sequence.physical_coupling = true;
    }
    if let Some(t0) = args.t0 {
        p.oscillator.omega_z = 2.0 * PI / t0;
    }
    if let Some(t2) = args.t2 {
        p.spin.t2 = t2;
        if p.spin.t1 < t2 / 2.0 {
            p.spin.t1 = t2 / 2.0;
            warnings.push(format!("T1 raised to T2/2 = {:e} s", p.spin.t1));
        }
    }
    if let Some(q) = args.q {
        p.oscillator.quality_factor = q;
    }
    if let Some(n) = args.nbar {
        p.sequence.initial_nbar = n;
    }
    if let Some(n) = args.bath_nbar {
        p.sequence.bath_nbar = n;
    }
    if let Some(n) = args.cutoff {
        p.sequence.fock_cutoff = n;
    }
    if let Some(n) = args.points {
        p.sequence.phase_points = n;
    }
    let p = checked(p)?;

    let model = HybridModel::for_params(&p);
    if model.r.abs() > DESK_R_LIMIT {
        if !args.allow_large_r {
            bail!(
                "r = {:.3e} exceeds the desk-scale limit {DESK_R_LIMIT}; pass --allow-large-r to run anyway",
                model.r
            );
        }
        let n = model.suggested_cutoff(p.sequence.initial_nbar);
        warnings.push(format!(
            "r = {:.3e} needs a Fock cutoff of about {n}; each of the 9 spin blocks holds {n}x{n} complex entries",
            model.r
        ));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut rc = RamseyConfig::from_params(&p);
    if args.closed {
        rc = rc.closed();
    }
    let fringe = quantum::ramsey_run(&rc, &quantum::phase_grid(p.sequence.phase_points))?;

    let t0 = rc.evolution_time;
    let expected = model.closed_form_phase(t0 / model.period()).rem_euclid(2.0 * PI);
    let q = rc
        .dissipators
        .motional
        .map_or(f64::INFINITY, |m| model.omega_z / m.rate);
    let t2 = rc.dissipators.dephasing_t2.unwrap_or(f64::INFINITY);
    let summary = RamseySummary {
        r: model.r,
        r_g: model.r_g,
        n_cut: rc.n_cut,
        evolution_time: t0,
        fitted_phase: fringe.fitted_phase,
        expected_phase: expected,
        phase_error: quantum::angle_difference(fringe.fitted_phase, expected),
        visibility: fringe.visibility,
        visibility_heuristic: quantum::visibility_analytic(q, t2, t0, model.r),
        fit_residual: fringe.residual,
        warnings,
    };

    let mut csv = String::from("phi,p0\n");
    for (phi, p0) in fringe.phases.iter().zip(&fringe.populations) {
        csv.push_str(&format!("{},{}\n", sci(*phi), sci(*p0)));
    }
    emit(cfg, &p, "ramsey", "fringe.csv", &csv, args, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct MapSummary {
    pub kind: MapKind,
    pub cells: usize,
    pub feasible_cells: usize,
    /// Precision map: feasible cell with the smallest Δg/g.
    pub best: Option<noise::BestCell>,
    /// Visibility map: smallest feasible Q and T2 on the grid.
    pub min_feasible_q: Option<f64>,
    pub min_feasible_t2: Option<f64>,
    pub phase_uncertainty: Option<f64>,
}

impl fmt::Display for MapSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} feasible of {} cells", self.feasible_cells, self.cells)?;
        match self.kind {
            MapKind::Precision => match self.best {
                Some(b) => write!(
                    f,
                    "\nbest feasible: delta_g/g = {:.6e} at t0 = {:.6e} s, B_g = {:.6e} T/m",
                    b.relative_precision, b.t0, b.gradient
                ),
                None => write!(f, "\nno feasible cell"),
            },
            MapKind::Visibility => match (self.min_feasible_q, self.min_feasible_t2) {
                (Some(q), Some(t2)) => write!(f, "\nV >= 1/e needs Q >= {q:.6e} and T2 >= {t2:.6e} s on this grid"),
                _ => write!(f, "\nno feasible cell"),
            },
        }
    }
}

fn axis(default: AxisSpec, min: Option<f64>, max: Option<f64>, points: Option<usize>, scale: Option<ScaleArg>) -> Result<AxisSpec> {
    Ok(AxisSpec::new(
        &default.name,
        &default.unit,
        min.unwrap_or(default.min),
        max.unwrap_or(default.max),
        points.unwrap_or(default.points),
        scale.map_or(default.scale, Scale::from),
    )?)
}

pub fn cmd_map(cfg: &RunConfig, args: &MapArgs) -> Result<MapSummary> {
    let p = checked(cfg.params)?;
    let (dx, dy) = match args.kind {
        MapKind::Visibility => noise::default_visibility_axes(),
        MapKind::Precision => noise::default_precision_axes(),
    };
    let x = axis(dx, args.x_min, args.x_max, args.x_points, args.x_scale)?;
    let y = axis(dy, args.y_min, args.y_max, args.y_points, args.y_scale)?;
    match args.kind {
        MapKind::Visibility => {
            let t0 = args.t0.unwrap_or(p.oscillator.period());
            let map = noise::visibility_map(x, y, t0, args.r)?;
            let g = &map.grid;
            let (xs, ys) = (g.x.values(), g.y.values());
            let mut min_q: Option<f64> = None;
            let mut min_t2: Option<f64> = None;
            for (iy, &t2) in ys.iter().enumerate() {
                for (ix, &q) in xs.iter().enumerate() {
                    if g.is_feasible(ix, iy) {
                        min_q = Some(min_q.map_or(q, |m| m.min(q)));
                        min_t2 = Some(min_t2.map_or(t2, |m| m.min(t2)));
                    }
                }
            }
            let summary = MapSummary {
                kind: args.kind,
                cells: g.values.len(),
                feasible_cells: g.feasible.iter().filter(|&&f| f).count(),
                best: None,
                min_feasible_q: min_q,
                min_feasible_t2: min_t2,
                phase_uncertainty: None,
            };
            emit(cfg, &p, "map", "visibility_map.csv", &g.to_csv(), args, &summary)?;
            let mut contour = String::from("t2,q_threshold\n");
            for c in &map.contour {
                contour.push_str(&format!("{},{}\n", sci(c.t2), sci(c.q_threshold.unwrap_or(f64::INFINITY))));
            }
            emit(cfg, &p, "map", "visibility_contour.csv", &contour, args, &summary)?;
            Ok(summary)
        }
        MapKind::Precision => {
            let budget = if args.projection {
                PhaseBudget::Projection {
                    resonators: p.environment.resonator_count,
                    rate: p.environment.repetition_rate,
                    duration: args.duration,
                    visibility: args.visibility,
                }
            } else {
                PhaseBudget::Fixed(args.sigma_phi)
            };
            let constraint = FluctuationConstraint {
                temperature: p.oscillator.temperature,
                mass: p.oscillator.mass,
                ..FluctuationConstraint::default()
            };
            let map = noise::precision_map(&p.constants, x, y, budget, constraint)?;
            let g = &map.grid;
            let summary = MapSummary {
                kind: args.kind,
                cells: g.values.len(),
                feasible_cells: g.feasible.iter().filter(|&&f| f).count(),
                best: map.best_feasible,
                min_feasible_q: None,
                min_feasible_t2: None,
                phase_uncertainty: Some(map.phase_uncertainty),
            };
            emit(cfg, &p, "map", "precision_map.csv", &g.to_csv(), args, &summary)?;
            Ok(summary)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DdSummary {
    pub t2_star: f64,
    pub t2_star_stderr: f64,
    pub t2_star_exponent: u32,
    /// 1/(σ²τ_c).
    pub t2_star_motional_narrowing: f64,
    pub t2: f64,
    pub t2_stderr: f64,
    pub t2_exponent: u32,
    /// T2/T2*, absent when either time is unresolved.
    pub ratio: Option<f64>,
    pub warnings: Vec<String>,
}

impl fmt::Display for DdSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "T2* (free) = {:.6e} s +/- {:.2e} (p = {}, motional narrowing {:.6e} s)",
            self.t2_star, self.t2_star_stderr, self.t2_star_exponent, self.t2_star_motional_narrowing
        )?;
        writeln!(f, "T2 (driven) = {:.6e} s +/- {:.2e} (p = {})", self.t2, self.t2_stderr, self.t2_exponent)?;
        match self.ratio {
            Some(r) => write!(f, "ratio T2/T2* = {r:.4}"),
            None => write!(f, "ratio T2/T2* = undefined"),
        }
    }
}

pub fn cmd_dd(cfg: &RunConfig, args: &DdArgs) -> Result<DdSummary> {
    let p = checked(cfg.params)?;
    let sigma = 2.0 * PI * args.sigma_hz;
    let noise = OUNoise::new(sigma, args.tau_c, cfg.seed);
    let drive = DriveSpec {
        rabi: 2.0 * PI * 1e6 * args.rabi_mhz,
        modulation: 2.0 * PI * 1e3 * args.modulation_khz,
        carrier: p.constants.zero_field_splitting,
        amplitude_noise: args.drive_noise,
        amplitude_tau: args.drive_tau,
    };
    let free = dd::free_decay(&noise, args.free_duration, args.free_trajectories, args.points)?;
    let driven = dd::decoupled_decay(&noise, &drive, args.dd_duration, args.trajectories, args.points)?;
    let resolved = driven.t2().is_finite() && free.t2().is_finite();
    let ratio = driven.t2() / free.t2();
    let mut warnings = free.warnings.clone();
    warnings.extend(driven.warnings.iter().cloned());
    let summary = DdSummary {
        t2_star: free.t2(),
        t2_star_stderr: free.fit.stderr,
        t2_star_exponent: free.fit.best.exponent,
        t2_star_motional_narrowing: dd::motional_narrowing_t2(sigma, args.tau_c),
        t2: driven.t2(),
        t2_stderr: driven.fit.stderr,
        t2_exponent: driven.fit.best.exponent,
        ratio: resolved.then_some(ratio),
        warnings,
    };
    write_envelope(cfg, &p, "dd_free.csv", &free, args, &summary)?;
    write_envelope(cfg, &p, "dd_decoupled.csv", &driven, args, &summary)?;
    Ok(summary)
}

fn write_envelope(
    cfg: &RunConfig,
    p: &SystemParams,
    name: &str,
    env: &CoherenceEnvelope,
    args: &DdArgs,
    summary: &DdSummary,
) -> Result<PathBuf> {
    emit(cfg, p, "dd", name, &env.to_csv(), args, summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub report: noise::ConsistencyReport,
    pub text: String,
}

impl fmt::Display for ReportSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text.trim_end())
    }
}

pub fn cmd_report(cfg: &RunConfig, args: &ReportArgs) -> Result<ReportSummary> {
    let p = checked(cfg.params)?;
    if let Some(t) = args.tolerance {
        if !(t > 0.0) {
            bail!("--tolerance must be positive");
        }
    }
    let report = noise::consistency_report(&p, args.tolerance);
    let text = report.render();
    let summary = ReportSummary { report, text };
    emit(cfg, &p, "report", "report.txt", &summary.text, args, &summary.report)?;
    Ok(summary)
}

fn dispatch(cfg: &RunConfig, command: &Command) -> Result<String> {
    Ok(match command {
        Command::Phase(a) => cmd_phase(cfg, a)?.to_string(),
        Command::Ramsey(a) => cmd_ramsey(cfg, a)?.to_string(),
        Command::Map(a) => cmd_map(cfg, a)?.to_string(),
        Command::Dd(a) => {
            let s = cmd_dd(cfg, a)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            s.to_string()
        }
        Command::Report(a) => cmd_report(cfg, a)?.to_string(),
    })
}

/// Resolves the configuration and runs the subcommand on a pool of
/// `--workers` threads, printing its summary.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli)?;
    let text = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| dispatch(&cfg, &cli.command))?,
        None => dispatch(&cfg, &cli.command)?,
    };
    println!("{text}");
    Ok(())
}
