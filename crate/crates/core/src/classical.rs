//! Classical branch trajectories, action integrals and the interferometer
//! phase, including the second-gradient echo protocol.
//!
//! Coordinates: `z` points along gravity and is measured from the trap
//! centre, so the gravitational sag is `z0 = g/ω_z²`. The phase is
//! `Δφ = (S₊ − S₋)/ħ` with the action of each spin branch evaluated along its
//! classical path.
//!
//! The spin force used for the branch paths is the one carried by the
//! coupling term of the hybrid Hamiltonian, `2λ(c + c†)`, i.e. an
//! acceleration `2λ/(m·x_zpf) = 2 g_NV μ_B B_g / m`. With it the action
//! difference over one period equals the closed form
//! `16 λ Δλ t0 / (ħ² ω_z)`. [`spin_acceleration`] reports the smaller
//! `g_NV μ_B B_g / 2m` that defines `Δz`, which enters the rewritten phase
//! `16π m g Δz / (ħ ω_z)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemParams;

/// Panels used by the composite Simpson rule over one mechanical period.
pub const QUADRATURE_PANELS: usize = 10_000;

const PERIOD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMethod {
    ClosedForm,
    Quadrature,
    Echo,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub branch: Branch,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// g + (branch spin acceleration) (m/s²).
    pub effective_acceleration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseResult {
    /// Phase shift (rad).
    pub delta_phi: f64,
    pub method: PhaseMethod,
    /// Branch actions in units of ħ.
    pub action_plus: f64,
    pub action_minus: f64,
    /// Relative change of Δφ when the quadrature step is halved.
    pub quadrature_change: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    /// Gravitational sag g/ω_z² (m).
    pub z0: f64,
    /// Spin-dependent displacement |g_±|/ω_z² (m).
    pub delta_z: f64,
}

/// Echo-protocol phase over two periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EchoPhase {
    /// Phase with the rotation reversing gravity in the trap frame while the
    /// gradient co-rotates, so the gravity phase of both periods adds up.
    pub result: PhaseResult,
    /// Same protocol with gravity and gradient geometry both reversed; the
    /// gravity phase of the second period then cancels the first.
    pub alternate: f64,
}

/// Spin-dependent acceleration pair (g₊, g₋) = ±g_NV μ_B B_g / 2m.
pub fn spin_acceleration(p: &SystemParams) -> (f64, f64) {
    let c = &p.constants;
    let g = c.g_nv * c.mu_b * p.coupling.gradient / (2.0 * p.oscillator.mass);
    (g, -g)
}

/// Acceleration of the branch paths, from the Hamiltonian coupling term.
pub fn coupling_acceleration(p: &SystemParams) -> f64 {
    let c = &p.constants;
    2.0 * c.g_nv * c.mu_b * p.coupling.gradient / p.oscillator.mass
}

pub fn equilibrium(p: &SystemParams) -> Equilibrium {
    let w2 = p.oscillator.omega_z.powi(2);
    Equilibrium {
        z0: p.constants.gravity / w2,
        delta_z: spin_acceleration(p).0.abs() / w2,
    }
}

/// Amplitude of the branch oscillation around z0, `a/ω_z²` with the coupling
/// acceleration.
pub fn branch_offset(p: &SystemParams) -> f64 {
    coupling_acceleration(p) / p.oscillator.omega_z.powi(2)
}

/// Analytic branch path z(t) = z0 ± A(1 − cos ω_z t) sampled uniformly over
/// one period.
pub fn trajectory(branch: Branch, p: &SystemParams, n_samples: usize) -> Result<Trajectory> {
    if n_samples < 2 {
        return Err(crate::error::invalid("n_samples", "need at least two samples"));
    }
    let w = p.oscillator.omega_z;
    let t0 = p.oscillator.period();
    let z0 = equilibrium(p).z0;
    let amp = branch.sign() * branch_offset(p);
    let h = t0 / (n_samples - 1) as f64;
    let times: Vec<f64> = (0..n_samples).map(|k| k as f64 * h).collect();
    let positions = times.iter().map(|&t| z0 + amp * (1.0 - (w * t).cos())).collect();
    let velocities = times.iter().map(|&t| amp * w * (w * t).sin()).collect();
    Ok(Trajectory {
        branch,
        times,
        positions,
        velocities,
        effective_acceleration: p.constants.gravity + branch.sign() * coupling_acceleration(p),
    })
}

/// Numerically integrated branch path (adaptive Dormand–Prince 5(4)) at the
/// same sample times as [`trajectory`]. Used as an independent check of the
/// analytic form.
pub fn integrate_trajectory(
    branch: Branch,
    p: &SystemParams,
    n_samples: usize,
    rtol: f64,
) -> Result<Trajectory> {
    let analytic = trajectory(branch, p, n_samples)?;
    let w = p.oscillator.omega_z;
    let z0 = equilibrium(p).z0;
    let a = branch.sign() * coupling_acceleration(p);
    let scale = (a / (w * w)).abs().max(f64::MIN_POSITIVE);
    // integrate the offset u = z − z0: u'' = −ω² u + a
    let rhs = |_t: f64, y: [f64; 2]| [y[1], -w * w * y[0] + a];
    let mut y = [0.0, 0.0];
    let mut t = 0.0;
    let mut positions = Vec::with_capacity(n_samples);
    let mut velocities = Vec::with_capacity(n_samples);
    positions.push(z0);
    velocities.push(0.0);
    let atol = [rtol * scale, rtol * scale * w];
    let mut h = analytic.times[1] / 4.0;
    for &target in &analytic.times[1..] {
        while t < target {
            let step = h.min(target - t);
            let (y_new, err) = dopri_step(&rhs, t, y, step);
            let norm = (0..2)
                .map(|i| err[i] / (atol[i] + rtol * y[i].abs().max(y_new[i].abs())))
                .fold(0.0_f64, |m, e| m.max(e.abs()));
            if norm <= 1.0 {
                t += step;
                y = y_new;
            }
            let factor = if norm == 0.0 { 5.0 } else { 0.9 * norm.powf(-0.2) };
            h = step * factor.clamp(0.2, 5.0);
        }
        positions.push(z0 + y[0]);
        velocities.push(y[1]);
    }
    Ok(Trajectory {
        positions,
        velocities,
        ..analytic
    })
}

fn dopri_step<F: Fn(f64, [f64; 2]) -> [f64; 2]>(
    f: &F,
    t: f64,
    y: [f64; 2],
    h: f64,
) -> ([f64; 2], [f64; 2]) {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut k = [[0.0; 2]; 7];
    for s in 0..7 {
        let mut ys = y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for i in 0..2 {
                ys[i] += h * A[s][j] * kj[i];
            }
        }
        k[s] = f(t + C[s] * h, ys);
    }
    let mut y5 = y;
    let mut err = [0.0; 2];
    for s in 0..7 {
        for i in 0..2 {
            y5[i] += h * B5[s] * k[s][i];
            err[i] += h * (B5[s] - B4[s]) * k[s][i];
        }
    }
    (y5, err)
}

/// Composite Simpson rule over uniformly spaced samples (odd count).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number (>= 3) of samples");
    let mut odd = 0.0;
    let mut even = 0.0;
    for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
        if k % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (values[0] + values[n - 1] + 4.0 * odd + 2.0 * even)
}

fn lagrangian(m: f64, w: f64, g_eff: f64, z: f64, v: f64) -> f64 {
    0.5 * m * (v * v - w * w * z * z) + m * g_eff * z
}

/// Action of a sampled one-period trajectory, S = ∫ [½m(ż² − ω²z²) + m g_eff z] dt,
/// in units of ħ.
pub fn action(traj: &Trajectory, p: &SystemParams) -> Result<f64> {
    let t0 = p.oscillator.period();
    let start = traj.times[0];
    let end = *traj.times.last().unwrap_or(&0.0);
    if start.abs() > PERIOD_TOLERANCE * t0 || ((end - t0) / t0).abs() > PERIOD_TOLERANCE {
        return Err(Error::TimeSpan {
            start,
            end,
            expected: t0,
        });
    }
    if traj.times.len() % 2 == 0 || traj.times.len() < 3 {
        return Err(crate::error::invalid(
            "trajectory",
            "Simpson quadrature needs an odd number of samples",
        ));
    }
    let m = p.oscillator.mass;
    let w = p.oscillator.omega_z;
    let integrand: Vec<f64> = traj
        .positions
        .iter()
        .zip(&traj.velocities)
        .map(|(&z, &v)| lagrangian(m, w, traj.effective_acceleration, z, v))
        .collect();
    let h = t0 / (traj.times.len() - 1) as f64;
    Ok(simpson(&integrand, h) / p.constants.hbar)
}

fn check_period(p: &SystemParams, t0: f64) -> Result<()> {
    let period = p.oscillator.period();
    if !(((t0 - period) / period).abs() <= PERIOD_TOLERANCE) {
        return Err(Error::PeriodMismatch { t0, period });
    }
    Ok(())
}

/// Δφ = 16 λ Δλ t0 / (ħ² ω_z).
pub fn phase_closed_form(p: &SystemParams) -> f64 {
    let hbar = p.constants.hbar;
    16.0 * p.lambda() * p.delta_lambda() * p.oscillator.period() / (hbar * hbar * p.oscillator.omega_z)
}

/// Δφ = g_NV μ_B B_g g t0³ / (π² ħ).
pub fn phase_cubic_form(p: &SystemParams, t0: f64) -> f64 {
    let c = &p.constants;
    c.g_nv * c.mu_b * p.coupling.gradient * c.gravity * t0.powi(3) / (PI * PI * c.hbar)
}

/// Δφ = 16π m g Δz / (ħ ω_z).
pub fn phase_from_displacement(p: &SystemParams) -> f64 {
    let c = &p.constants;
    16.0 * PI * p.oscillator.mass * c.gravity * equilibrium(p).delta_z / (c.hbar * p.oscillator.omega_z)
}

fn closed_form_action(p: &SystemParams, branch: Branch) -> f64 {
    let m = p.oscillator.mass;
    let w = p.oscillator.omega_z;
    let g_eff = p.constants.gravity + branch.sign() * coupling_acceleration(p);
    0.5 * m * g_eff * g_eff * p.oscillator.period() / (w * w) / p.constants.hbar
}

fn quadrature_phase(p: &SystemParams, panels: usize) -> Result<(f64, f64)> {
    let plus = action(&trajectory(Branch::Plus, p, panels + 1)?, p)?;
    let minus = action(&trajectory(Branch::Minus, p, panels + 1)?, p)?;
    Ok((plus, minus))
}

/// Interferometer phase over one period, `t0` must equal 2π/ω_z.
pub fn phase_shift(p: &SystemParams, t0: f64, method: PhaseMethod) -> Result<PhaseResult> {
    check_period(p, t0)?;
    match method {
        PhaseMethod::ClosedForm => Ok(PhaseResult {
            delta_phi: phase_closed_form(p),
            method,
            action_plus: closed_form_action(p, Branch::Plus),
            action_minus: closed_form_action(p, Branch::Minus),
            quadrature_change: None,
        }),
        PhaseMethod::Quadrature => {
            let (plus, minus) = quadrature_phase(p, QUADRATURE_PANELS)?;
            let (plus2, minus2) = quadrature_phase(p, 2 * QUADRATURE_PANELS)?;
            let coarse = plus - minus;
            let fine = plus2 - minus2;
            let change = if fine == 0.0 { 0.0 } else { ((fine - coarse) / fine).abs() };
            Ok(PhaseResult {
                delta_phi: coarse,
                method,
                action_plus: plus,
                action_minus: minus,
                quadrature_change: Some(change),
            })
        }
        PhaseMethod::Echo => Ok(echo_phase(p, true, true)?.result),
    }
}

/// Relative trap-frequency shift (Δω₊/ω, Δω₋/ω) = ±g_NV μ_B B″ / (8 m ω_z²).
pub fn second_order_frequency_shift(p: &SystemParams) -> (f64, f64) {
    let c = &p.constants;
    let o = &p.oscillator;
    let eps = c.g_nv * c.mu_b * p.coupling.second_gradient / (8.0 * o.mass * o.omega_z.powi(2));
    (eps, -eps)
}

struct Segment {
    action: f64,
    z: f64,
    v: f64,
}

/// Action (units of ħ) of a harmonic segment with trap frequency `w`,
/// starting from (z_i, v_i), evaluated by Simpson quadrature.
fn segment(p: &SystemParams, w: f64, g_eff: f64, z_i: f64, v_i: f64, duration: f64, panels: usize) -> Segment {
    let m = p.oscillator.mass;
    let z_eq = g_eff / (w * w);
    let path = |t: f64| {
        let (s, c) = (w * t).sin_cos();
        let z = z_eq + (z_i - z_eq) * c + v_i / w * s;
        let v = -(z_i - z_eq) * w * s + v_i * c;
        (z, v)
    };
    let h = duration / panels as f64;
    let integrand: Vec<f64> = (0..=panels)
        .map(|k| {
            let (z, v) = path(k as f64 * h);
            lagrangian(m, w, g_eff, z, v)
        })
        .collect();
    let (z, v) = path(duration);
    Segment {
        action: simpson(&integrand, h) / p.constants.hbar,
        z,
        v,
    }
}

/// Phase accumulated over 2t0 with the second-gradient frequency shift
/// ω_± = ω_z(1 ± ε).
///
/// With `with_rotation` the trap axis is rotated by 180° together with a
/// spin π-flip at t0 (both instantaneous). Without it the branches simply
/// evolve for two periods.
pub fn echo_phase(p: &SystemParams, with_rotation: bool, with_second_gradient: bool) -> Result<EchoPhase> {
    let w = p.oscillator.omega_z;
    let t0 = p.oscillator.period();
    let g = p.constants.gravity;
    let a = coupling_acceleration(p);
    let z0 = equilibrium(p).z0;
    let eps = if with_second_gradient {
        second_order_frequency_shift(p).0
    } else {
        0.0
    };
    let n = QUADRATURE_PANELS;

    let branch = |s: f64| -> (f64, f64) {
        let first = w * (1.0 + s * eps);
        if with_rotation {
            let seg1 = segment(p, first, g + s * a, z0, 0.0, t0, n);
            // after the flip the B″ term changes sign; in mirrored coordinates
            // the particle keeps its position and velocity
            let second = w * (1.0 - s * eps);
            let seg2 = segment(p, second, g + s * a, seg1.z, seg1.v, t0, n);
            let seg2_alt = segment(p, second, g - s * a, seg1.z, seg1.v, t0, n);
            (seg1.action + seg2.action, seg1.action + seg2_alt.action)
        } else {
            let seg = segment(p, first, g + s * a, z0, 0.0, 2.0 * t0, 2 * n);
            (seg.action, seg.action)
        }
    };
    let (plus, plus_alt) = branch(1.0);
    let (minus, minus_alt) = branch(-1.0);
    Ok(EchoPhase {
        result: PhaseResult {
            delta_phi: plus - minus,
            method: PhaseMethod::Echo,
            action_plus: plus,
            action_minus: minus,
            quadrature_change: None,
        },
        alternate: plus_alt - minus_alt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn spin_acceleration_values() {
        let p = params();
        let (gp, gm) = spin_acceleration(&p);
        // 2 μ_B 1e6 / (2e-16)
        assert!(rel(gp, 9.274_010_078_3e-2) < 1e-12);
        assert_eq!(gp, -gm);

        let mut q = p;
        q.coupling.gradient = 0.0;
        assert_eq!(spin_acceleration(&q), (0.0, -0.0));
        q.coupling.gradient = 2e6;
        assert!(rel(spin_acceleration(&q).0, 2.0 * gp) < 1e-15);
    }

    #[test]
    fn equilibrium_values() {
        let p = params();
        let eq = equilibrium(&p);
        let w2 = (2.0 * PI * 500.0_f64).powi(2);
        assert!(rel(eq.z0, 9.80665 / w2) < 1e-14);
        assert!((eq.z0 - 9.93e-7).abs() < 0.01e-7);
        assert!((eq.delta_z - 9.4e-9).abs() < 0.05e-9);
        // branch separation 4Δz is a few tens of nm
        assert!(4.0 * eq.delta_z > 10e-9 && 4.0 * eq.delta_z < 100e-9);
        let mut q = p;
        q.coupling.gradient = 0.0;
        assert_eq!(equilibrium(&q).delta_z, 0.0);
    }

    #[test]
    fn trajectory_endpoints() {
        let p = params();
        let z0 = equilibrium(&p).z0;
        let amp = branch_offset(&p);
        for branch in [Branch::Plus, Branch::Minus] {
            let tr = trajectory(branch, &p, 101).unwrap();
            assert_eq!(tr.positions[0], z0);
            assert_eq!(tr.velocities[0], 0.0);
            let mid = tr.positions[50];
            assert!(((mid - z0) - branch.sign() * 2.0 * amp).abs() < 1e-12 * amp);
            let last = *tr.positions.last().unwrap();
            assert!((last - z0).abs() < 1e-12 * amp);
        }
        assert!(trajectory(Branch::Plus, &p, 1).is_err());
    }

    #[test]
    fn numeric_integration_matches_analytic() {
        let p = params();
        let amp = branch_offset(&p);
        for branch in [Branch::Plus, Branch::Minus] {
            let analytic = trajectory(branch, &p, 257).unwrap();
            let numeric = integrate_trajectory(branch, &p, 257, 1e-12).unwrap();
            let worst = analytic
                .positions
                .iter()
                .zip(&numeric.positions)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-9 * amp, "worst {worst:e} vs amp {amp:e}");
        }
    }

    #[test]
    fn null_path_has_zero_action() {
        let mut p = params();
        p.coupling.gradient = 0.0;
        p.constants.gravity = 0.0;
        let tr = trajectory(Branch::Plus, &p, 1001).unwrap();
        assert_eq!(action(&tr, &p).unwrap(), 0.0);
    }

    #[test]
    fn action_rejects_wrong_span() {
        let p = params();
        let mut tr = trajectory(Branch::Plus, &p, 101).unwrap();
        for t in tr.times.iter_mut() {
            *t *= 0.5;
        }
        assert!(matches!(action(&tr, &p), Err(Error::TimeSpan { .. })));
    }

    #[test]
    fn action_converges_under_step_halving() {
        let p = params();
        let coarse = action(&trajectory(Branch::Plus, &p, QUADRATURE_PANELS + 1).unwrap(), &p).unwrap();
        let fine = action(&trajectory(Branch::Plus, &p, 2 * QUADRATURE_PANELS + 1).unwrap(), &p).unwrap();
        assert!(rel(coarse, fine) <= 1e-8);
    }

    #[test]
    fn headline_phase() {
        let mut p = params();
        p.constants.gravity = 9.8;
        let t0 = p.oscillator.period();
        assert!((t0 - 2e-3).abs() < 1e-15);
        let res = phase_shift(&p, t0, PhaseMethod::ClosedForm).unwrap();
        assert!(rel(res.delta_phi, 1.4e9) < 0.01, "{}", res.delta_phi);
        assert!(rel(res.delta_phi, phase_cubic_form(&p, t0)) < 1e-12);
        assert!(rel(res.delta_phi, phase_from_displacement(&p)) < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let p = params();
        let t0 = p.oscillator.period();
        let closed = phase_shift(&p, t0, PhaseMethod::ClosedForm).unwrap();
        let quad = phase_shift(&p, t0, PhaseMethod::Quadrature).unwrap();
        assert!(rel(quad.delta_phi, closed.delta_phi) <= 1e-6);
        assert!(quad.quadrature_change.unwrap() <= 1e-8);
    }

    #[test]
    fn zero_gravity_zero_phase() {
        let mut p = params();
        p.constants.gravity = 0.0;
        let t0 = p.oscillator.period();
        assert_eq!(phase_shift(&p, t0, PhaseMethod::ClosedForm).unwrap().delta_phi, 0.0);
        let quad = phase_shift(&p, t0, PhaseMethod::Quadrature).unwrap();
        assert!(quad.delta_phi.abs() <= 1e-9 * quad.action_plus.abs());
    }

    #[test]
    fn period_is_enforced() {
        let p = params();
        assert!(matches!(
            phase_shift(&p, 1e-3, PhaseMethod::ClosedForm),
            Err(Error::PeriodMismatch { .. })
        ));
    }

    #[test]
    fn frequency_shift_threshold() {
        let mut p = params();
        p.coupling.second_gradient = 1.7e5;
        p.oscillator.omega_z = 2.0 * PI * 1000.0;
        let (plus, minus) = second_order_frequency_shift(&p);
        assert!(rel(plus, 1e-10) < 0.2, "{plus:e}");
        assert_eq!(plus, -minus);
        p.coupling.second_gradient = 0.0;
        assert_eq!(second_order_frequency_shift(&p).0, 0.0);
    }

    #[test]
    fn echo_without_second_gradient_doubles() {
        let p = params();
        let single = phase_shift(&p, p.oscillator.period(), PhaseMethod::Quadrature)
            .unwrap()
            .delta_phi;
        for rotation in [true, false] {
            let echo = echo_phase(&p, rotation, false).unwrap();
            assert!(rel(echo.result.delta_phi, 2.0 * single) < 1e-9);
        }
        // the alternate bookkeeping cancels the gravity phase
        let echo = echo_phase(&p, true, false).unwrap();
        assert!(echo.alternate.abs() < 1e-9 * single);
    }

    #[test]
    fn echo_suppresses_second_gradient_phase() {
        let mut p = params();
        // ε = 1e-6
        let c = p.constants;
        p.coupling.second_gradient =
            1e-6 * 8.0 * p.oscillator.mass * p.oscillator.omega_z.powi(2) / (c.g_nv * c.mu_b);
        assert!(rel(second_order_frequency_shift(&p).0, 1e-6) < 1e-12);
        let residue = |rotation: bool| {
            let with = echo_phase(&p, rotation, true).unwrap().result.delta_phi;
            let without = echo_phase(&p, rotation, false).unwrap().result.delta_phi;
            (with - without).abs()
        };
        let plain = residue(false);
        let echoed = residue(true);
        assert!(plain > 0.0);
        assert!(echoed * 1e3 <= plain, "echo {echoed:e} plain {plain:e}");
    }
}
