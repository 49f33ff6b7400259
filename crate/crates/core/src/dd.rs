//! Monte-Carlo dephasing of a two-level spin under Ornstein–Uhlenbeck field
//! noise, free and under a continuous, phase-modulated decoupling drive.
//!
//! The field noise δB(t) is expressed as a detuning in rad/s,
//! `H = ½(ω0 + δB(t)) σ_z`, so that slow-noise motional narrowing gives
//! T2* = 1/(σ² τ_c).
//!
//! The drive `[Ω1 + δΩ1(t)] σ_x cos(ω0 t + φ(t))` with
//! `φ(t) = (2Ω2/Ω1) sin(Ω1 t)` is treated in the frame rotating at ω0 under
//! the rotating-wave approximation:
//! `H = ½ δB σ_z + ½ (Ω1 + δΩ1)(cos φ σ_x + sin φ σ_y)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub const MIN_TRAJECTORIES: usize = 100;
const JACKKNIFE_BLOCKS: usize = 10;

/// Stationary Ornstein–Uhlenbeck process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OUNoise {
    /// Stationary standard deviation σ (rad/s).
    pub sigma: f64,
    /// Correlation time τ_c (s).
    pub tau_c: f64,
    pub seed: u64,
    /// Sampling step (s).
    pub dt: f64,
}

impl OUNoise {
    /// Noise sampled at τ_c/20.
    pub fn new(sigma: f64, tau_c: f64, seed: u64) -> Self {
        Self {
            sigma,
            tau_c,
            seed,
            dt: tau_c / 20.0,
        }
    }

    pub fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "noise amplitude must be finite and non-negative"));
        }
        if !(self.tau_c > 0.0) {
            return Err(invalid("tau_c", "correlation time must be positive"));
        }
        if !(self.dt > 0.0) || self.dt > self.tau_c / 10.0 * (1.0 + 1e-12) {
            return Err(Error::NoiseStep {
                dt: self.dt,
                tau_c: self.tau_c,
            });
        }
        Ok(())
    }

    /// Sample stream for one trajectory; independent of any other index.
    pub fn stream(&self, trajectory: u64) -> Result<OUStream> {
        self.check()?;
        OUStream::new(self.sigma, self.tau_c, self.dt, self.seed, trajectory)
    }

    /// δB at t = k·dt for k = 0..=⌈duration/dt⌉.
    pub fn generate(&self, duration: f64, trajectory: u64) -> Result<Vec<f64>> {
        let mut stream = self.stream(trajectory)?;
        let steps = (duration / self.dt).ceil() as usize;
        Ok((0..=steps).map(|_| stream.next_value()).collect())
    }
}

/// Exact OU update x' = x e^{−dt/τ} + σ √(1 − e^{−2dt/τ}) ξ.
#[derive(Debug, Clone)]
pub struct OUStream {
    rng: ChaCha8Rng,
    decay: f64,
    kick: f64,
    current: f64,
    started: bool,
}

impl OUStream {
    fn new(sigma: f64, tau_c: f64, dt: f64, seed: u64, trajectory: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory);
        let decay = (-dt / tau_c).exp();
        let kick = sigma * (-(-2.0 * dt / tau_c).exp_m1()).sqrt();
        let first: f64 = rng.sample(StandardNormal);
        Ok(Self {
            rng,
            decay,
            kick,
            current: sigma * first,
            started: false,
        })
    }

    /// Returns x(0) first, then successive steps.
    pub fn next_value(&mut self) -> f64 {
        if self.started {
            let xi: f64 = self.rng.sample(StandardNormal);
            self.current = self.current * self.decay + self.kick * xi;
        }
        self.started = true;
        self.current
    }
}

/// Trace for the default trajectory index.
pub fn generate_noise(spec: &OUNoise, duration: f64) -> Result<Vec<f64>> {
    spec.generate(duration, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriveSpec {
    /// Ω1 (rad/s).
    pub rabi: f64,
    /// Ω2 (rad/s); zero disables the phase modulation.
    pub modulation: f64,
    /// ω0 (rad/s).
    pub carrier: f64,
    /// Relative rms amplitude noise δΩ1/Ω1.
    pub amplitude_noise: f64,
    /// Correlation time of δΩ1 (s).
    pub amplitude_tau: f64,
}

impl Default for DriveSpec {
    fn default() -> Self {
        Self {
            rabi: 2.0 * PI * 1e6,
            modulation: 2.0 * PI * 1e4,
            carrier: 2.0 * PI * 2.88e9,
            amplitude_noise: 1e-3,
            amplitude_tau: 1e-3,
        }
    }
}

impl DriveSpec {
    /// φ(t) = (2Ω2/Ω1) sin(Ω1 t).
    pub fn phase(&self, t: f64) -> f64 {
        2.0 * self.modulation / self.rabi * (self.rabi * t).sin()
    }

    /// Fails outside the rotating-wave regime; returns warnings for a weak
    /// Ω2 ≤ Ω1/10 ≤ ω0/1000 hierarchy.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.rabi > 0.0 && self.carrier > 0.0) {
            return Err(invalid("rabi", "drive and carrier frequencies must be positive"));
        }
        if self.rabi > self.carrier / 100.0 {
            return Err(invalid("rabi", "rotating-wave approximation needs Ω1 ≤ ω0/100"));
        }
        if !(self.modulation >= 0.0 && self.amplitude_noise >= 0.0 && self.amplitude_tau > 0.0) {
            return Err(invalid("modulation", "Ω2, δΩ1 and its correlation time must be non-negative"));
        }
        let mut warnings = Vec::new();
        if self.modulation > self.rabi / 10.0 {
            warnings.push(format!("Ω2 = {:.3e} exceeds Ω1/10", self.modulation));
        }
        if self.rabi / 10.0 > self.carrier / 1000.0 {
            warnings.push(format!("Ω1/10 = {:.3e} exceeds ω0/1000", self.rabi / 10.0));
        }
        Ok(warnings)
    }

    /// Integration step min(τ_c, 2π/Ω1)/20, no coarser than the noise step.
    pub fn step(&self, noise: &OUNoise) -> f64 {
        (noise.tau_c.min(2.0 * PI / self.rabi) / 20.0).min(noise.dt)
    }
}

/// Fit of `ln C = a − (t/T2)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub exponent: u32,
    /// `f64::INFINITY` when no decay is resolved.
    pub t2: f64,
    /// RMS residual in ln C.
    pub residual: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct T2Fit {
    /// Selected by the smaller residual.
    pub best: ExponentFit,
    pub alternative: ExponentFit,
    /// Jackknife standard error of `best.t2` over trajectory blocks.
    pub stderr: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceEnvelope {
    pub times: Vec<f64>,
    /// |⟨σ₊⟩| normalised so that the initial value is 1.
    pub coherence: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trajectories: usize,
    pub fit: T2Fit,
    pub warnings: Vec<String>,
}

impl CoherenceEnvelope {
    pub fn t2(&self) -> f64 {
        self.fit.best.t2
    }

    /// CSV with columns `t,coherence,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,coherence,stderr\n");
        for ((t, c), e) in self.times.iter().zip(&self.coherence).zip(&self.stderr) {
            out.push_str(&format!("{t:.14e},{c:.14e},{e:.14e}\n"));
        }
        out
    }
}

/// Per-block sums of the complex coherence at each sample time.
struct Accumulator {
    blocks: Vec<Vec<Complex64>>,
    counts: Vec<usize>,
    squares: Vec<f64>,
}

impl Accumulator {
    fn collect(per_traj: Vec<Vec<Complex64>>, points: usize) -> Self {
        let n = per_traj.len();
        let nb = JACKKNIFE_BLOCKS.min(n);
        let mut blocks = vec![vec![Complex64::new(0.0, 0.0); points]; nb];
        let mut counts = vec![0; nb];
        let mut squares = vec![0.0; points];
        for (k, z) in per_traj.iter().enumerate() {
            let b = k * nb / n;
            counts[b] += 1;
            for (i, v) in z.iter().enumerate() {
                blocks[b][i] += v;
                squares[i] += v.norm_sqr();
            }
        }
        Self { blocks, counts, squares }
    }

    fn total(&self) -> (Vec<Complex64>, usize) {
        let points = self.squares.len();
        let mut sum = vec![Complex64::new(0.0, 0.0); points];
        for b in &self.blocks {
            for (s, v) in sum.iter_mut().zip(b) {
                *s += v;
            }
        }
        (sum, self.counts.iter().sum())
    }

    fn without(&self, skip: usize) -> Vec<f64> {
        let (sum, n) = self.total();
        let m = (n - self.counts[skip]) as f64;
        sum.iter()
            .zip(&self.blocks[skip])
            .map(|(s, b)| ((s - b) / m).norm())
            .collect()
    }
}

fn fit_exponent(
    times: &[f64],
    coherence: &[f64],
    trajectories: usize,
    t_min: f64,
    p: u32,
) -> Option<(ExponentFit, usize)> {
    let floor = noise_floor(trajectories);
    let eps = 1.0 / trajectories as f64;
    // (x, ln C, w) with w ≈ 1/var(ln C) for a Gaussian phase spread
    let pts: Vec<(f64, f64, f64)> = times
        .iter()
        .zip(coherence)
        .filter(|(&t, &c)| c >= floor && t >= t_min)
        .map(|(&t, &c)| (t.powi(p as i32), c.ln(), c * c / ((1.0 - c * c).powi(2) + eps)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let sw: f64 = pts.iter().map(|q| q.2).sum();
    let mx = pts.iter().map(|q| q.2 * q.0).sum::<f64>() / sw;
    let my = pts.iter().map(|q| q.2 * q.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|q| q.2 * (q.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|q| q.2 * (q.0 - mx) * (q.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|q| q.2 * (q.1 - intercept - slope * q.0).powi(2))
        .sum::<f64>()
        / sw)
        .sqrt();
    let t2 = if slope < 0.0 {
        (-1.0 / slope).powf(1.0 / p as f64)
    } else {
        f64::INFINITY
    };
    Some((
        ExponentFit {
            exponent: p,
            t2,
            residual,
            intercept,
        },
        pts.len(),
    ))
}

/// Fits `ln C = a − (t/T2)^p` for p = 1 and 2 on points with t ≥ `t_min`
/// and C ≥ max(0.05, 3/√n), weighting each point by the inverse variance
/// of ln C, and keeps the exponent with the smaller residual.
pub fn fit_t2(
    times: &[f64],
    coherence: &[f64],
    trajectories: usize,
    t_min: f64,
) -> Result<(ExponentFit, ExponentFit, usize)> {
    let one = fit_exponent(times, coherence, trajectories, t_min, 1);
    let two = fit_exponent(times, coherence, trajectories, t_min, 2);
    match (one, two) {
        (Some((a, n)), Some((b, _))) => {
            if a.residual <= b.residual {
                Ok((a, b, n))
            } else {
                Ok((b, a, n))
            }
        }
        _ => Err(Error::FitFailed(
            "fewer than three envelope points above the noise floor".into(),
        )),
    }
}

fn noise_floor(trajectories: usize) -> f64 {
    (3.0 / (trajectories as f64).sqrt()).max(0.05)
}

fn envelope_from(
    times: Vec<f64>,
    per_traj: Vec<Vec<Complex64>>,
    t_min: f64,
    warnings: Vec<String>,
) -> Result<CoherenceEnvelope> {
    let points = times.len();
    let acc = Accumulator::collect(per_traj, points);
    let (sum, n) = acc.total();
    let nf = n as f64;
    let coherence: Vec<f64> = sum.iter().map(|s| (s / nf).norm()).collect();
    let stderr: Vec<f64> = sum
        .iter()
        .zip(&acc.squares)
        .map(|(s, &sq)| {
            let var = (sq / nf - (s / nf).norm_sqr()).max(0.0);
            (var / (nf - 1.0)).sqrt()
        })
        .collect();
    let floor = noise_floor(n);
    let usable = times
        .iter()
        .zip(&coherence)
        .filter(|(&t, &c)| t >= t_min && c >= floor)
        .count();
    let t_min = if usable >= 5 { t_min } else { 0.0 };
    let (best, alternative, points_used) = fit_t2(&times, &coherence, n, t_min)?;
    let nb = acc.blocks.len();
    let jack: Vec<f64> = (0..nb)
        .map(|b| {
            let c = acc.without(b);
            fit_exponent(&times, &c, n, t_min, best.exponent).map_or(f64::NAN, |f| f.0.t2)
        })
        .collect();
    let fit_stderr = if jack.iter().all(|t| t.is_finite()) && best.t2.is_finite() {
        let mean = jack.iter().sum::<f64>() / nb as f64;
        ((nb as f64 - 1.0) / nb as f64 * jack.iter().map(|t| (t - mean).powi(2)).sum::<f64>()).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(CoherenceEnvelope {
        times,
        coherence,
        stderr,
        trajectories: n,
        fit: T2Fit {
            best,
            alternative,
            stderr: fit_stderr,
            points_used,
        },
        warnings,
    })
}

fn check_run(duration: f64, n_traj: usize, points: usize) -> Result<()> {
    if n_traj < MIN_TRAJECTORIES {
        return Err(invalid(
            "trajectories",
            format!("need at least {MIN_TRAJECTORIES} trajectories, got {n_traj}"),
        ));
    }
    if !(duration > 0.0) {
        return Err(invalid("duration", "must be positive"));
    }
    if points < 4 {
        return Err(invalid("points", "need at least 4 envelope points"));
    }
    Ok(())
}

/// Sample indices of `points` envelope times on a grid of `steps` steps.
fn sample_indices(steps: usize, points: usize) -> Vec<usize> {
    (0..points).map(|i| (i * steps) / (points - 1)).collect()
}

/// Free induction decay: each trajectory accumulates φ = ∫δB dt
/// (trapezoidal) and contributes e^{−iφ}. The fit starts at t = 2τ_c, past
/// the initial quadratic decay, when at least five points remain there.
pub fn free_decay(noise: &OUNoise, duration: f64, n_traj: usize, points: usize) -> Result<CoherenceEnvelope> {
    check_run(duration, n_traj, points)?;
    noise.stream(0)?;
    let steps = (duration / noise.dt).round().max(1.0) as usize;
    let dt = duration / steps as f64;
    let samples = sample_indices(steps, points);
    let per_traj: Vec<Vec<Complex64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|k| {
            let mut stream = OUStream::new(noise.sigma, noise.tau_c, dt, noise.seed, 2 * k)
                .expect("validated noise");
            let mut out = Vec::with_capacity(points);
            let mut phase = 0.0;
            let mut prev = stream.next_value();
            let mut next_sample = 0;
            for step in 0..=steps {
                if step > 0 {
                    let x = stream.next_value();
                    phase += 0.5 * (prev + x) * dt;
                    prev = x;
                }
                while next_sample < points && samples[next_sample] == step {
                    out.push(Complex64::from_polar(1.0, -phase));
                    next_sample += 1;
                }
            }
            out
        })
        .collect();
    let times = samples.iter().map(|&i| i as f64 * dt).collect();
    envelope_from(times, per_traj, 2.0 * noise.tau_c, Vec::new())
}

/// SU(2) element `[[a, −b̄], [b, ā]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Su2 {
    a: Complex64,
    b: Complex64,
}

impl Su2 {
    const IDENTITY: Su2 = Su2 {
        a: Complex64 { re: 1.0, im: 0.0 },
        b: Complex64 { re: 0.0, im: 0.0 },
    };

    /// exp(−(i/2) v·σ).
    fn exp(v: [f64; 3]) -> Self {
        let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if theta == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * theta).sin_cos();
        let k = s / theta;
        Su2 {
            a: Complex64::new(c, -k * v[2]),
            b: Complex64::new(k * v[1], -k * v[0]),
        }
    }

    /// self · rhs
    fn mul(self, rhs: Su2) -> Su2 {
        Su2 {
            a: self.a * rhs.a - self.b.conj() * rhs.b,
            b: self.b * rhs.a + self.a.conj() * rhs.b,
        }
    }

    fn inverse(self) -> Su2 {
        Su2 {
            a: self.a.conj(),
            b: -self.b,
        }
    }

    /// 2ψ↑ψ↓* after acting on |+y⟩ = (|↑⟩ + i|↓⟩)/√2.
    fn probe_coherence(self) -> Complex64 {
        let up = (self.a - Complex64::i() * self.b.conj()) * std::f64::consts::FRAC_1_SQRT_2;
        let down = (self.b + Complex64::i() * self.a.conj()) * std::f64::consts::FRAC_1_SQRT_2;
        // relative to the noiseless value 2·(1/√2)(−i/√2) = −i
        2.0 * up * down.conj() * Complex64::i()
    }
}

/// Field vector h with H = ½ h·σ.
fn field(drive: &DriveSpec, t: f64, detuning: f64, amplitude: f64) -> [f64; 3] {
    let (s, c) = drive.phase(t).sin_cos();
    [amplitude * c, amplitude * s, detuning]
}

const GAUSS: f64 = 0.288_675_134_594_812_9; // √3/6

/// One fourth-order Magnus step with two Gauss points.
fn magnus_step(h1: [f64; 3], h2: [f64; 3], dt: f64) -> Su2 {
    let cross = [
        h2[1] * h1[2] - h2[2] * h1[1],
        h2[2] * h1[0] - h2[0] * h1[2],
        h2[0] * h1[1] - h2[1] * h1[0],
    ];
    let k = 3f64.sqrt() / 12.0 * dt * dt;
    Su2::exp([
        0.5 * dt * (h1[0] + h2[0]) + k * cross[0],
        0.5 * dt * (h1[1] + h2[1]) + k * cross[1],
        0.5 * dt * (h1[2] + h2[2]) + k * cross[2],
    ])
}

/// Propagates one trajectory; `detuning(k)` and `amplitude(k)` give the
/// noise at grid point k, linearly interpolated to the Gauss nodes.
fn propagate(
    drive: &DriveSpec,
    steps: usize,
    dt: f64,
    samples: &[usize],
    mut detuning: impl FnMut() -> f64,
    mut amplitude: impl FnMut() -> f64,
) -> Vec<Su2> {
    let mut u = Su2::IDENTITY;
    let mut out = Vec::with_capacity(samples.len());
    let mut next_sample = 0;
    let (mut d0, mut a0) = (detuning(), amplitude());
    while next_sample < samples.len() && samples[next_sample] == 0 {
        out.push(u);
        next_sample += 1;
    }
    for step in 0..steps {
        let (d1, a1) = (detuning(), amplitude());
        let t = step as f64 * dt;
        let (ta, tb) = (0.5 - GAUSS, 0.5 + GAUSS);
        let h1 = field(drive, t + ta * dt, d0 + (d1 - d0) * ta, drive.rabi + a0 + (a1 - a0) * ta);
        let h2 = field(drive, t + tb * dt, d0 + (d1 - d0) * tb, drive.rabi + a0 + (a1 - a0) * tb);
        u = magnus_step(h1, h2, dt).mul(u);
        (d0, a0) = (d1, a1);
        while next_sample < samples.len() && samples[next_sample] == step + 1 {
            out.push(u);
            next_sample += 1;
        }
    }
    out
}

/// Coherence under the decoupling drive, measured in the frame of the
/// noiseless driven evolution U0: each trajectory contributes the
/// coherence of `U0†U |+y⟩`.
pub fn decoupled_decay(
    noise: &OUNoise,
    drive: &DriveSpec,
    duration: f64,
    n_traj: usize,
    points: usize,
) -> Result<CoherenceEnvelope> {
    check_run(duration, n_traj, points)?;
    let warnings = drive.validate()?;
    noise.stream(0)?;
    let dt_target = drive.step(noise);
    let steps = (duration / dt_target).ceil() as usize;
    let dt = duration / steps as f64;
    let samples = sample_indices(steps, points);
    let reference: Vec<Su2> = propagate(drive, steps, dt, &samples, || 0.0, || 0.0)
        .into_iter()
        .map(Su2::inverse)
        .collect();
    let drive_sigma = drive.amplitude_noise * drive.rabi;
    let per_traj: Vec<Vec<Complex64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|k| {
            let mut field_noise =
                OUStream::new(noise.sigma, noise.tau_c, dt, noise.seed, 2 * k).expect("validated noise");
            let mut drive_noise = OUStream::new(drive_sigma, drive.amplitude_tau, dt, noise.seed, 2 * k + 1)
                .expect("validated drive noise");
            let us = propagate(
                drive,
                steps,
                dt,
                &samples,
                || field_noise.next_value(),
                || drive_noise.next_value(),
            );
            us.iter()
                .zip(&reference)
                .map(|(u, r)| r.mul(*u).probe_coherence())
                .collect()
        })
        .collect();
    let times = samples.iter().map(|&i| i as f64 * dt).collect();
    envelope_from(times, per_traj, 0.0, warnings)
}

/// T2* = 1/(σ² τ_c) in the motional-narrowing limit.
pub fn motional_narrowing_t2(sigma: f64, tau_c: f64) -> f64 {
    1.0 / (sigma * sigma * tau_c)
}

/// Exact OU free-decay envelope exp(−σ²τ_c²(t/τ_c − 1 + e^{−t/τ_c})).
pub fn free_decay_exact(sigma: f64, tau_c: f64, t: f64) -> f64 {
    let x = t / tau_c;
    (-(sigma * tau_c).powi(2) * (x - 1.0 + (-x).exp())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_noise() -> OUNoise {
        OUNoise::new(2.0 * PI * 1e4, 10e-6, 7)
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let n = OUNoise::new(0.0, 1e-5, 1);
        assert!(generate_noise(&n, 1e-4).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn same_seed_same_trace() {
        let n = default_noise();
        let a = n.generate(1e-4, 3).unwrap();
        let b = n.generate(1e-4, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, n.generate(1e-4, 4).unwrap());
    }

    #[test]
    fn coarse_step_rejected() {
        let n = default_noise().with_dt(2e-6);
        assert!(matches!(generate_noise(&n, 1e-4), Err(Error::NoiseStep { .. })));
    }

    #[test]
    fn stationary_variance_and_correlation() {
        let n = default_noise();
        let traces: Vec<Vec<f64>> = (0..1000).map(|k| n.generate(10.0 * n.tau_c, k).unwrap()).collect();
        let len = traces[0].len();
        let s2 = n.sigma * n.sigma;
        let var = traces.iter().map(|t| t[0] * t[0]).sum::<f64>() / traces.len() as f64;
        assert!(((var - s2) / s2).abs() < 0.05, "variance ratio {}", var / s2);
        // ρ(lag) averaged over all start times, then ln ρ = −lag·dt/τ through the origin
        let rho = |lag: usize| {
            let mut c = 0.0;
            let mut count = 0.0;
            for t in &traces {
                for i in 0..len - lag {
                    c += t[i] * t[i + lag];
                    count += 1.0;
                }
            }
            c / count / s2
        };
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for lag in 1..=20 {
            let x = lag as f64 * n.dt;
            sxy += x * rho(lag).ln();
            sxx += x * x;
        }
        let tau = -sxx / sxy;
        assert!(((tau - n.tau_c) / n.tau_c).abs() < 0.1, "tau {tau}");
    }

    #[test]
    fn su2_exponential_and_product() {
        let u = Su2::exp([0.3, -1.1, 0.7]);
        let det = u.a.norm_sqr() + u.b.norm_sqr();
        assert!((det - 1.0).abs() < 1e-14);
        let w = u.mul(u.inverse());
        assert!((w.a - 1.0).norm() < 1e-14 && w.b.norm() < 1e-14);
        // rotations about a fixed axis compose additively
        let v = Su2::exp([0.2, 0.4, -0.1]).mul(Su2::exp([0.4, 0.8, -0.2]));
        let direct = Su2::exp([0.6, 1.2, -0.3]);
        assert!((v.a - direct.a).norm() < 1e-14 && (v.b - direct.b).norm() < 1e-14);
        assert!((Su2::IDENTITY.probe_coherence() - 1.0).norm() < 1e-15);
    }

    #[test]
    fn magnus_matches_fine_steps() {
        let drive = DriveSpec {
            modulation: 2.0 * PI * 1e5,
            ..DriveSpec::default()
        };
        let run = |steps: usize| {
            let dt = 2e-6 / steps as f64;
            let mut k = 0usize;
            let us = propagate(
                &drive,
                steps,
                dt,
                &[steps],
                || {
                    let v = 2.0 * PI * 3e5 * (k as f64 / steps as f64);
                    k += 1;
                    v
                },
                || 0.0,
            );
            us[0]
        };
        let coarse = run(400);
        let fine = run(3200);
        let err = (coarse.a - fine.a).norm() + (coarse.b - fine.b).norm();
        assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn fit_recovers_exponentials() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 1e-6).collect();
        let c: Vec<f64> = times.iter().map(|t| (-t / 20e-6).exp()).collect();
        let (best, _, _) = fit_t2(&times, &c, 1000, 0.0).unwrap();
        assert_eq!(best.exponent, 1);
        assert!((best.t2 - 20e-6).abs() < 1e-12);
        let g: Vec<f64> = times.iter().map(|t| (-(t / 30e-6).powi(2)).exp()).collect();
        let (best, _, _) = fit_t2(&times, &g, 1000, 0.0).unwrap();
        assert_eq!(best.exponent, 2);
        assert!((best.t2 - 30e-6).abs() < 1e-12);
        let flat = vec![1.0; 50];
        assert!(fit_t2(&times, &flat, 1000, 0.0).unwrap().0.t2.is_infinite());
    }

    #[test]
    fn noiseless_free_decay_stays_coherent() {
        let n = OUNoise::new(0.0, 1e-5, 1);
        let env = free_decay(&n, 1e-4, 100, 11).unwrap();
        assert!(env.coherence.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert!(env.t2().is_infinite());
        assert!(free_decay(&n, 1e-4, 10, 11).is_err());
    }

    #[test]
    fn free_decay_matches_motional_narrowing() {
        let n = default_noise();
        let env = free_decay(&n, 150e-6, 4000, 61).unwrap();
        assert_eq!(env.coherence[0], 1.0);
        let bound = 1.0 + 3.0 / (4000f64).sqrt();
        assert!(env.coherence.iter().all(|&c| (0.0..=bound).contains(&c)));
        let oracle = motional_narrowing_t2(n.sigma, n.tau_c);
        assert!(((env.t2() - oracle) / oracle).abs() < 0.2, "{} vs {oracle}: {:?}", env.t2(), env.fit);
        // envelope follows the exact Gaussian-phase result
        for (t, c) in env.times.iter().zip(&env.coherence).step_by(10) {
            assert!((c - free_decay_exact(n.sigma, n.tau_c, *t)).abs() < 0.05);
        }
    }

    #[test]
    fn doubling_sigma_quarters_t2_star() {
        let base = OUNoise::new(2.0 * PI * 1e4, 1e-6, 11);
        let doubled = OUNoise {
            sigma: 2.0 * base.sigma,
            ..base
        };
        let t1 = free_decay(&base, 1.5e-3, 1000, 61).unwrap();
        let t2 = free_decay(&doubled, 0.4e-3, 1000, 61).unwrap();
        let ratio = t1.t2() / t2.t2();
        let err = 4.0 * ((t1.fit.stderr / t1.t2()).powi(2) + (t2.fit.stderr / t2.t2()).powi(2)).sqrt();
        assert!((ratio - 4.0).abs() <= 3.0 * err.max(0.04 * 4.0), "ratio {ratio}, err {err}");
    }

    #[test]
    fn noiseless_drive_keeps_coherence() {
        let n = OUNoise::new(0.0, 1e-5, 1);
        let drive = DriveSpec {
            amplitude_noise: 0.0,
            ..DriveSpec::default()
        };
        let env = decoupled_decay(&n, &drive, 50e-6, 100, 6).unwrap();
        assert!(env.coherence.iter().all(|&c| (c - 1.0).abs() < 1e-9), "{:?}", env.coherence);
    }

    #[test]
    fn drive_validation() {
        let bad = DriveSpec {
            rabi: 2.0 * PI * 1e8,
            ..DriveSpec::default()
        };
        assert!(bad.validate().is_err());
        let loose = DriveSpec {
            modulation: 2.0 * PI * 5e5,
            ..DriveSpec::default()
        };
        assert_eq!(loose.validate().unwrap().len(), 1);
        assert!(DriveSpec::default().validate().unwrap().is_empty());
    }
}
