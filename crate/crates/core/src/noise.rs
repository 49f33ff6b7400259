//! Decoherence rates, systematics, parameter maps and the precision budget.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::classical;
use crate::error::{invalid, Result};
use crate::model::{CouplingParams, EnvironmentParams, OscillatorParams, PhysicalConstants, SystemParams};
use crate::quantum::visibility_analytic;

/// Magnetic fluctuation limit 2π·10 MHz (rad/s).
pub const FLUCTUATION_LIMIT: f64 = 2.0 * PI * 1e7;
/// Typical NV linewidth (Hz).
pub const NV_LINEWIDTH_HZ: f64 = 1e7;
/// Phase resolution assumed when no shot-noise model is used (rad).
pub const DEFAULT_PHASE_RESOLUTION: f64 = 10e-3;

/// Gas-collision damping rate γ_g (rad/s), from γ_g/2 = (8/π)·P/(v R ρ).
pub fn gas_damping(env: &EnvironmentParams, osc: &OscillatorParams) -> f64 {
    2.0 * (8.0 / PI) * env.pressure / (env.gas_speed * osc.radius * osc.density)
}

/// Same rate with the prefactor read as 8π.
pub fn gas_damping_8pi(env: &EnvironmentParams, osc: &OscillatorParams) -> f64 {
    2.0 * (8.0 * PI) * env.pressure / (env.gas_speed * osc.radius * osc.density)
}

/// γ_sc/ω_z = (16π³/15)·[(ε−1)/(ε+2)]·R³/λ0³.
pub fn photon_scattering(env: &EnvironmentParams, osc: &OscillatorParams) -> f64 {
    let eps = osc.permittivity;
    (16.0 * PI.powi(3) / 15.0) * ((eps - 1.0) / (eps + 2.0)) * (osc.radius / env.trap_wavelength).powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoherenceRate {
    /// γ_sc·(2r)².
    pub two_r: f64,
    /// γ_sc·r².
    pub r_squared: f64,
}

/// Maximum motional decoherence rate for separation ratio `r`.
pub fn max_decoherence(gamma_sc: f64, r: f64) -> DecoherenceRate {
    DecoherenceRate {
        two_r: gamma_sc * (2.0 * r).powi(2),
        r_squared: gamma_sc * r * r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MagneticFluctuation {
    pub tesla: f64,
    /// g_NV μ_B Δ / ħ (rad/s).
    pub angular_frequency: f64,
}

impl MagneticFluctuation {
    pub fn feasible(&self) -> bool {
        self.angular_frequency < FLUCTUATION_LIMIT
    }
}

/// Field seen by the spin through the thermal rms motion,
/// Δ = B_g √(k_B T / m ω_z²).
pub fn magnetic_fluctuation(
    constants: &PhysicalConstants,
    coupling: &CouplingParams,
    osc: &OscillatorParams,
) -> MagneticFluctuation {
    let rms = (constants.k_b * osc.temperature / osc.mass).sqrt() / osc.omega_z;
    let tesla = coupling.gradient * rms;
    MagneticFluctuation {
        tesla,
        angular_frequency: constants.zeeman_rate() * tesla,
    }
}

/// Doppler shift δf = f0 Δz ω_z / c (Hz) for oscillation amplitude `amplitude`.
pub fn doppler_shift(constants: &PhysicalConstants, env: &EnvironmentParams, osc: &OscillatorParams, amplitude: f64) -> f64 {
    env.microwave_frequency * amplitude * osc.omega_z / constants.c
}

/// v1 = √(2 k_B T / m).
pub fn rms_velocity(constants: &PhysicalConstants, osc: &OscillatorParams) -> f64 {
    (2.0 * constants.k_b * osc.temperature / osc.mass).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotNoise {
    pub points: f64,
    /// σ_φ = 1/(V√N) (rad).
    pub phase_uncertainty: f64,
    /// Δg/g = σ_φ/Δφ.
    pub relative_precision: f64,
}

/// Projection-noise budget for `resonators` devices repeating at `rate`
/// for `duration` seconds.
pub fn shot_noise(resonators: f64, rate: f64, duration: f64, visibility: f64, delta_phi: f64) -> ShotNoise {
    let points = resonators * rate * duration;
    let phase_uncertainty = if visibility > 0.0 {
        1.0 / (visibility * points.sqrt())
    } else {
        f64::INFINITY
    };
    ShotNoise {
        points,
        phase_uncertainty,
        relative_precision: phase_uncertainty / delta_phi.abs(),
    }
}

/// How the phase resolution entering Δg/g is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PhaseBudget {
    /// Fixed phase resolution (rad).
    Fixed(f64),
    /// σ_φ = 1/(V√N) with N = M·f_rep·duration.
    Projection {
        resonators: f64,
        rate: f64,
        duration: f64,
        visibility: f64,
    },
}

impl PhaseBudget {
    pub fn phase_uncertainty(&self) -> f64 {
        match *self {
            PhaseBudget::Fixed(sigma) => sigma,
            PhaseBudget::Projection {
                resonators,
                rate,
                duration,
                visibility,
            } => shot_noise(resonators, rate, duration, visibility, 1.0).phase_uncertainty,
        }
    }
}

impl Default for PhaseBudget {
    fn default() -> Self {
        PhaseBudget::Fixed(DEFAULT_PHASE_RESOLUTION)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    /// Δ below 2π·10 MHz.
    pub magnetic: bool,
    /// δf below 1% of the NV linewidth.
    pub doppler: bool,
    /// Γ (literal convention) below ω_z.
    pub decoherence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBudget {
    pub gamma_g: f64,
    pub gamma_g_8pi: f64,
    pub gamma_sc: f64,
    pub gamma_max: DecoherenceRate,
    pub magnetic_fluctuation: MagneticFluctuation,
    /// Doppler shift for the branch oscillation amplitude (Hz).
    pub doppler_shift: f64,
    pub rms_velocity: f64,
    pub visibility: f64,
    pub shot_noise: ShotNoise,
    pub feasibility: Feasibility,
}

/// Every rate for one parameter set; the shot-noise entry integrates for
/// `duration` seconds at the analytic visibility.
pub fn noise_budget(p: &SystemParams, duration: f64) -> NoiseBudget {
    let o = &p.oscillator;
    let w = o.omega_z;
    let gamma_sc = photon_scattering(&p.environment, o) * w;
    let gamma_max = max_decoherence(gamma_sc, p.coupling_ratio());
    let fluctuation = magnetic_fluctuation(&p.constants, &p.coupling, o);
    let amplitude = classical::branch_offset(p).abs();
    let doppler = doppler_shift(&p.constants, &p.environment, o, amplitude);
    let visibility = visibility_analytic(o.quality_factor, p.spin.t2, o.period(), p.coupling_ratio());
    let shot = shot_noise(
        p.environment.resonator_count,
        p.environment.repetition_rate,
        duration,
        visibility,
        classical::phase_closed_form(p),
    );
    NoiseBudget {
        gamma_g: gas_damping(&p.environment, o),
        gamma_g_8pi: gas_damping_8pi(&p.environment, o),
        gamma_sc,
        gamma_max,
        magnetic_fluctuation: fluctuation,
        doppler_shift: doppler,
        rms_velocity: rms_velocity(&p.constants, o),
        visibility,
        shot_noise: shot,
        feasibility: Feasibility {
            magnetic: fluctuation.feasible(),
            doppler: doppler < 0.01 * NV_LINEWIDTH_HZ,
            decoherence: gamma_max.two_r < w,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisSpec {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub scale: Scale,
}

impl AxisSpec {
    pub fn new(name: &str, unit: &str, min: f64, max: f64, points: usize, scale: Scale) -> Result<Self> {
        let axis = Self {
            name: name.to_string(),
            unit: unit.to_string(),
            min,
            max,
            points,
            scale,
        };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(invalid("axis", format!("{} needs at least one point", self.name)));
        }
        let ordered = if self.points == 1 { self.min <= self.max } else { self.min < self.max };
        if !(self.min.is_finite() && self.max.is_finite() && ordered) {
            return Err(invalid("axis", format!("{} range must be finite and increasing", self.name)));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(invalid("axis", format!("{} log range must be positive", self.name)));
        }
        Ok(())
    }

    /// Grid points; a single-point axis sits at `min`.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                let u = k as f64 / last;
                match self.scale {
                    Scale::Linear => self.min + (self.max - self.min) * u,
                    Scale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * u).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridValue {
    Visibility,
    RelativePrecision,
}

/// Values on an x/y grid, stored row by row (y outer, x inner).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapGrid {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub semantic: GridValue,
    pub values: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl HeatmapGrid {
    fn evaluate(x: AxisSpec, y: AxisSpec, semantic: GridValue, cell: impl Fn(f64, f64) -> (f64, bool) + Sync) -> Result<Self> {
        x.validate()?;
        y.validate()?;
        let xs = x.values();
        let ys = y.values();
        let nx = xs.len();
        let cells: Vec<(f64, bool)> = (0..nx * ys.len())
            .into_par_iter()
            .map(|k| cell(xs[k % nx], ys[k / nx]))
            .collect();
        let (values, feasible) = cells.into_iter().unzip();
        Ok(Self {
            x,
            y,
            semantic,
            values,
            feasible,
        })
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.x.points + ix]
    }

    pub fn is_feasible(&self, ix: usize, iy: usize) -> bool {
        self.feasible[iy * self.x.points + ix]
    }

    /// CSV with columns `x,y,value,feasible`.
    pub fn to_csv(&self) -> String {
        let xs = self.x.values();
        let ys = self.y.values();
        let mut out = String::from("x,y,value,feasible\n");
        for (iy, y) in ys.iter().enumerate() {
            for (ix, x) in xs.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:.14e},{:.14e},{:.14e},{}",
                    x,
                    y,
                    self.value(ix, iy),
                    u8::from(self.is_feasible(ix, iy))
                );
            }
        }
        out
    }
}

/// Point on the V = 1/e boundary: for T2 > t0 the threshold quality factor is
/// Q* = 2π(2r)² / (1 − t0/T2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourPoint {
    pub t2: f64,
    pub q_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisibilityMap {
    pub grid: HeatmapGrid,
    pub contour: Vec<ContourPoint>,
    pub t0: f64,
    pub r: f64,
}

pub fn visibility_threshold_q(t2: f64, t0: f64, r: f64) -> Option<f64> {
    (t2 > t0).then(|| 2.0 * PI * (2.0 * r).powi(2) / (1.0 - t0 / t2))
}

/// Visibility over (x = Q, y = T2 in seconds); cells with V ≥ 1/e are feasible.
pub fn visibility_map(q_axis: AxisSpec, t2_axis: AxisSpec, t0: f64, r: f64) -> Result<VisibilityMap> {
    let threshold = (-1.0f64).exp();
    let grid = HeatmapGrid::evaluate(q_axis, t2_axis, GridValue::Visibility, |q, t2| {
        let v = visibility_analytic(q, t2, t0, r);
        (v, v >= threshold)
    })?;
    let contour = grid
        .y
        .values()
        .into_iter()
        .map(|t2| ContourPoint {
            t2,
            q_threshold: visibility_threshold_q(t2, t0, r),
        })
        .collect();
    Ok(VisibilityMap { grid, contour, t0, r })
}

pub fn default_visibility_axes() -> (AxisSpec, AxisSpec) {
    (
        AxisSpec::new("quality_factor", "1", 1e3, 1e8, 101, Scale::Log).expect("valid axis"),
        AxisSpec::new("t2", "s", 1e-4, 1e-1, 101, Scale::Log).expect("valid axis"),
    )
}

/// Fluctuation limit applied to the precision map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluctuationConstraint {
    /// Maximum Δ (rad/s).
    pub limit: f64,
    pub temperature: f64,
    pub mass: f64,
}

impl Default for FluctuationConstraint {
    fn default() -> Self {
        Self {
            limit: FLUCTUATION_LIMIT,
            temperature: 1e-4,
            mass: 1e-16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestCell {
    pub t0: f64,
    pub gradient: f64,
    pub relative_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionMap {
    pub grid: HeatmapGrid,
    pub phase_uncertainty: f64,
    pub best_feasible: Option<BestCell>,
}

/// Δg/g = σ_φ π² ħ / (g_NV μ_B B_g g t0³).
pub fn relative_precision(constants: &PhysicalConstants, gradient: f64, t0: f64, phase_uncertainty: f64) -> f64 {
    phase_uncertainty * PI * PI * constants.hbar
        / (constants.g_nv * constants.mu_b * gradient * constants.gravity * t0.powi(3))
}

/// Thermal field fluctuation for gradient `gradient` with trap frequency 2π/t0.
pub fn fluctuation_at(constants: &PhysicalConstants, constraint: &FluctuationConstraint, gradient: f64, t0: f64) -> MagneticFluctuation {
    let osc = OscillatorParams {
        mass: constraint.mass,
        omega_z: 2.0 * PI / t0,
        temperature: constraint.temperature,
        ..OscillatorParams::default()
    };
    let coupling = CouplingParams {
        gradient,
        ..CouplingParams::default()
    };
    magnetic_fluctuation(constants, &coupling, &osc)
}

/// Δg/g over (x = t0 in seconds, y = B_g in T/m); the trap frequency of each
/// cell is 2π/t0.
pub fn precision_map(
    constants: &PhysicalConstants,
    t0_axis: AxisSpec,
    gradient_axis: AxisSpec,
    budget: PhaseBudget,
    constraint: FluctuationConstraint,
) -> Result<PrecisionMap> {
    let sigma = budget.phase_uncertainty();
    let grid = HeatmapGrid::evaluate(t0_axis, gradient_axis, GridValue::RelativePrecision, |t0, bg| {
        let value = relative_precision(constants, bg, t0, sigma);
        let fl = fluctuation_at(constants, &constraint, bg, t0);
        (value, fl.angular_frequency < constraint.limit)
    })?;
    let xs = grid.x.values();
    let ys = grid.y.values();
    let mut best: Option<BestCell> = None;
    for (iy, &bg) in ys.iter().enumerate() {
        for (ix, &t0) in xs.iter().enumerate() {
            if !grid.is_feasible(ix, iy) {
                continue;
            }
            let v = grid.value(ix, iy);
            if best.is_none_or(|b| v < b.relative_precision) {
                best = Some(BestCell {
                    t0,
                    gradient: bg,
                    relative_precision: v,
                });
            }
        }
    }
    Ok(PrecisionMap {
        grid,
        phase_uncertainty: sigma,
        best_feasible: best,
    })
}

pub fn default_precision_axes() -> (AxisSpec, AxisSpec) {
    (
        AxisSpec::new("t0", "s", 0.1e-3, 2e-3, 100, Scale::Linear).expect("valid axis"),
        AxisSpec::new("gradient", "T/m", 1e4, 1e7, 100, Scale::Log).expect("valid axis"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    OrderOfMagnitude,
    Mismatch,
    Unresolvable,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::OrderOfMagnitude => "ORDER",
            Verdict::Mismatch => "MISMATCH",
            Verdict::Unresolvable => "UNRESOLVABLE",
        }
    }

    /// PASS within `tolerance` relative, ORDER within a factor of 3.
    pub fn grade(quoted: f64, recomputed: f64, tolerance: f64) -> Self {
        let rel = ((recomputed - quoted) / quoted).abs();
        let ratio = (recomputed / quoted).abs();
        if rel <= tolerance {
            Verdict::Pass
        } else if ratio.is_finite() && ratio > 0.0 && ratio.max(1.0 / ratio) <= 3.0 {
            Verdict::OrderOfMagnitude
        } else {
            Verdict::Mismatch
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportItem {
    pub name: String,
    pub quantity: String,
    pub quoted: f64,
    pub recomputed: Option<f64>,
    pub unit: String,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub convention: String,
    /// Raised for known ambiguities, regardless of verdict.
    pub flagged: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub items: Vec<ReportItem>,
}

struct Entry<'a> {
    name: &'a str,
    quantity: &'a str,
    quoted: f64,
    recomputed: f64,
    unit: &'a str,
    tolerance: f64,
    convention: String,
    flagged: bool,
    note: String,
}

impl Entry<'_> {
    fn finish(self, tolerance: Option<f64>) -> ReportItem {
        let tol = tolerance.unwrap_or(self.tolerance);
        ReportItem {
            name: self.name.into(),
            quantity: self.quantity.into(),
            quoted: self.quoted,
            recomputed: Some(self.recomputed),
            unit: self.unit.into(),
            tolerance: tol,
            verdict: Verdict::grade(self.quoted, self.recomputed, tol),
            convention: self.convention,
            flagged: self.flagged,
            note: self.note,
        }
    }
}

/// Operating point of the headline numbers: B_g = 10⁶ T/m, t0 = 2 ms,
/// g = 9.8 m/s², m = 10⁻¹⁶ kg.
pub fn headline_params() -> SystemParams {
    let mut p = SystemParams::default();
    p.constants.gravity = 9.8;
    p.coupling.gradient = 1e6;
    p.oscillator.omega_z = 2.0 * PI / 2e-3;
    p.oscillator.mass = 1e-16;
    p
}

/// Recomputes every quoted figure from `p` (normally [`headline_params`]).
/// `tolerance` overrides the per-item PASS tolerance.
pub fn consistency_report(p: &SystemParams, tolerance: Option<f64>) -> ConsistencyReport {
    let c = &p.constants;
    let o = &p.oscillator;
    let env = &p.environment;
    let r = p.coupling_ratio();
    let mut items = Vec::new();

    let dphi = classical::phase_closed_form(p);
    items.push(
        Entry {
            name: "phase_shift",
            quantity: "Δφ at B_g = 1e6 T/m, t0 = 2 ms",
            quoted: 1.4e9,
            recomputed: dphi,
            unit: "rad",
            tolerance: 0.01,
            convention: "16λΔλt0/(ħ²ω_z)".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    let rewrite = classical::phase_from_displacement(p);
    items.push(
        Entry {
            name: "phase_identity",
            quantity: "16πmgΔz/(ħω_z) against the closed form",
            quoted: dphi,
            recomputed: rewrite,
            unit: "rad",
            tolerance: 1e-9,
            convention: "Δz = g_NV μ_B B_g/(2mω_z²)".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    items.push(
        Entry {
            name: "coupling_ratio",
            quantity: "λ/ħω_z",
            quoted: 90.0,
            recomputed: r,
            unit: "1",
            tolerance: 0.05,
            convention: "λ = g_NV μ_B B_g x_zpf/2, x_zpf = √(ħ/2mω_z)".into(),
            flagged: true,
            note: "quoted value not reproduced from the stated parameters".into(),
        }
        .finish(tolerance),
    );

    let amplitude = classical::branch_offset(p);
    items.push(
        Entry {
            name: "oscillation_amplitude",
            quantity: "branch oscillation amplitude",
            quoted: 50e-9,
            recomputed: amplitude,
            unit: "m",
            tolerance: 0.1,
            convention: "2g_NV μ_B B_g/(mω_z²)".into(),
            flagged: false,
            note: format!("equilibrium shift Δz = {:.3e} m", classical::equilibrium(p).delta_z),
        }
        .finish(tolerance),
    );

    let sc = photon_scattering(env, o);
    items.push(
        Entry {
            name: "photon_scattering",
            quantity: "γ_sc/ω_z",
            quoted: 3.8e-5,
            recomputed: sc,
            unit: "1",
            tolerance: 0.02,
            convention: "ε = 1.5, R = 200 nm, λ0 = 10 μm".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    let gas_osc = OscillatorParams {
        omega_z: 2.0 * PI * 500.0,
        ..*o
    };
    let gg = gas_damping(env, &gas_osc) / gas_osc.omega_z;
    let gg_alt = gas_damping_8pi(env, &gas_osc) / gas_osc.omega_z;
    items.push(
        Entry {
            name: "gas_damping",
            quantity: "γ_g/ω_z",
            quoted: 4e-10,
            recomputed: gg,
            unit: "1",
            tolerance: 0.1,
            convention: "γ_g/2 = (8/π)P/(vRρ)".into(),
            flagged: true,
            note: format!("8π prefactor gives {gg_alt:.3e}"),
        }
        .finish(tolerance),
    );

    let gamma = max_decoherence(sc, 90.0);
    let gamma_own = max_decoherence(sc, r);
    items.push(
        Entry {
            name: "max_decoherence",
            quantity: "Γ/ω_z at r = 90",
            quoted: 0.3,
            recomputed: gamma.two_r,
            unit: "1",
            tolerance: 0.05,
            convention: "γ_sc(2r)²".into(),
            flagged: true,
            note: format!(
                "γ_sc r² gives {:.3e}; with the recomputed r the values are {:.3e} and {:.3e}",
                gamma.r_squared, gamma_own.two_r, gamma_own.r_squared
            ),
        }
        .finish(tolerance),
    );

    items.push(
        Entry {
            name: "contrast",
            quantity: "visibility at t0 = T2",
            quoted: 0.36,
            recomputed: (-1.0f64).exp(),
            unit: "1",
            tolerance: 0.05,
            convention: "exp(−t0/T2)".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    let q_needed = 2.0 * PI * (2.0 * 90.0f64).powi(2);
    items.push(
        Entry {
            name: "quality_factor_guidance",
            quantity: "smallest Q reaching V = 1/e at r = 90, T2 → ∞",
            quoted: 1e5,
            recomputed: q_needed,
            unit: "1",
            tolerance: 0.05,
            convention: "exp(−(2π/Q)(2r)²)".into(),
            flagged: false,
            note: "quoted as a lower bound".into(),
        }
        .finish(tolerance),
    );

    let doppler_osc = OscillatorParams {
        omega_z: 2.0 * PI * 1e3,
        ..*o
    };
    let df = doppler_shift(c, env, &doppler_osc, 100e-9);
    items.push(
        Entry {
            name: "doppler_shift",
            quantity: "δf at Δz = 100 nm, ω_z = 2π·1 kHz",
            quoted: 6e-3,
            recomputed: df,
            unit: "Hz",
            tolerance: 0.05,
            convention: "f0 Δz ω_z / c".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    let v_osc = OscillatorParams {
        temperature: 1e-3,
        mass: 1e-16,
        ..*o
    };
    items.push(
        Entry {
            name: "rms_velocity",
            quantity: "v1 at T = 1 mK, m = 1e-16 kg",
            quoted: 2e-3,
            recomputed: rms_velocity(c, &v_osc),
            unit: "m/s",
            tolerance: 0.05,
            convention: "√(2k_BT/m)".into(),
            flagged: true,
            note: "quoted value not reproduced".into(),
        }
        .finish(tolerance),
    );

    let mut b2 = *p;
    b2.oscillator.omega_z = 2.0 * PI * 1e3;
    b2.oscillator.mass = 1e-16;
    b2.coupling.second_gradient = 1.7e5;
    let shift = classical::second_order_frequency_shift(&b2).0;
    items.push(
        Entry {
            name: "second_gradient_threshold",
            quantity: "Δω/ω at B″ = 1.7e5 T/m², ω_z = 2π·1 kHz",
            quoted: 1e-10,
            recomputed: shift,
            unit: "1",
            tolerance: 0.2,
            convention: "g_NV μ_B B″/(8mω_z²)".into(),
            flagged: false,
            note: String::new(),
        }
        .finish(tolerance),
    );

    let shot = shot_noise(env.resonator_count, env.repetition_rate, 1.0, 1.0, dphi);
    let seconds_for_1e5 = 1e5 / (env.resonator_count * env.repetition_rate);
    let mut item = Entry {
        name: "shot_noise_time",
        quantity: "time to collect 1e5 points (M = 100, 1 kHz)",
        quoted: 2.0,
        recomputed: seconds_for_1e5,
        unit: "s",
        tolerance: 0.05,
        convention: "N = M f_rep T".into(),
        flagged: false,
        note: format!(
            "quoted as an upper bound; σ_φ = {:.3e} rad and Δg/g = {:.3e} after 1 s at V = 1",
            shot.phase_uncertainty, shot.relative_precision
        ),
    }
    .finish(tolerance);
    if seconds_for_1e5 <= 2.0 {
        item.verdict = Verdict::Pass;
    }
    items.push(item);

    let (t0_axis, bg_axis) = default_precision_axes();
    let best = precision_map(c, t0_axis, bg_axis, PhaseBudget::default(), FluctuationConstraint::default())
        .ok()
        .and_then(|m| m.best_feasible);
    let best_value = best.map_or(f64::INFINITY, |b| b.relative_precision);
    let mut item = Entry {
        name: "best_precision",
        quantity: "best feasible Δg/g, σ_φ = 10 mrad, Δ < 2π·10 MHz",
        quoted: 1e-10,
        recomputed: best_value,
        unit: "1",
        tolerance: 0.1,
        convention: "ω_z = 2π/t0, T = 0.1 mK, m = 1e-16 kg".into(),
        flagged: false,
        note: best.map_or_else(String::new, |b| {
            format!("at t0 = {:.3e} s, B_g = {:.3e} T/m; quoted as attainable", b.t0, b.gradient)
        }),
    }
    .finish(tolerance);
    if best_value <= 1e-10 {
        item.verdict = Verdict::Pass;
    }
    items.push(item);

    items.push(ReportItem {
        name: "magnetic_drift".into(),
        quantity: "gradient accuracy e^{−t/t_drift}".into(),
        quoted: 1e8,
        recomputed: None,
        unit: "1".into(),
        tolerance: tolerance.unwrap_or(0.0),
        verdict: Verdict::Unresolvable,
        convention: "none".into(),
        flagged: true,
        note: "an exponential of a negative argument cannot reach 1e8".into(),
    });

    ConsistencyReport { items }
}

impl ConsistencyReport {
    pub fn item(&self, name: &str) -> Option<&ReportItem> {
        self.items.iter().find(|i| i.name == name)
    }

    /// One line per quoted number.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for i in &self.items {
            let recomputed = i.recomputed.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
            let _ = write!(
                out,
                "{:<26} {:<13} quoted={:.6e} recomputed={} unit={} [{}]{} {}",
                i.name,
                i.verdict.label(),
                i.quoted,
                recomputed,
                i.unit,
                i.convention,
                if i.flagged { " FLAGGED" } else { "" },
                i.quantity,
            );
            if !i.note.is_empty() {
                let _ = write!(out, "; {}", i.note);
            }
            out.push('\n');
        }
        out
    }
}
