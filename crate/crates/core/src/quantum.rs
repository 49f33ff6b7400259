//! Ramsey sequence on the spin-1 ⊗ truncated-Fock space.
//!
//! The Hamiltonian (in rad/s) is
//! `H/ħ = D S_z² + ω_z c†c − 2ω_z (r S_z − r_g)(c + c†)` with `r = λ/ħω_z`
//! and `r_g = Δλ/ħω_z`. It is block diagonal in `S_z`, and the motional and
//! dephasing dissipators used here never mix spin blocks, so the density
//! matrix is stored as a 3×3 array of Fock-space blocks that evolve
//! independently.
//!
//! Spin ordering is `[|+1⟩, |0⟩, |−1⟩]`.
//!
//! Physical couplings (r of several hundred) need Fock spaces far beyond
//! desk scale; the simulator is meant for r ≲ 2, where it validates the
//! closed-form phase that is then used at full scale.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::SystemParams;

pub const SPIN_VALUES: [f64; 3] = [1.0, 0.0, -1.0];
pub const PLUS: usize = 0;
pub const ZERO: usize = 1;
pub const MINUS: usize = 2;

const ADEQUACY_LIMIT: f64 = 1e-6;
const CHECKPOINTS: usize = 16;
const RK4_TOLERANCE: f64 = 1e-8;
const MAX_DOUBLINGS: usize = 10;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO_C: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Couplings of the hybrid Hamiltonian in dimensionless form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridModel {
    /// ω_z (rad/s).
    pub omega_z: f64,
    /// D (rad/s).
    pub zero_field: f64,
    /// λ/ħω_z.
    pub r: f64,
    /// Δλ/ħω_z.
    pub r_g: f64,
}

impl HybridModel {
    /// Couplings derived from the physical parameters.
    pub fn physical(p: &SystemParams) -> Self {
        Self {
            omega_z: p.oscillator.omega_z,
            zero_field: p.constants.zero_field_splitting,
            r: p.coupling_ratio(),
            r_g: p.gravity_ratio(),
        }
    }

    pub fn desk_scale(omega_z: f64, r: f64, r_g: f64) -> Self {
        Self {
            omega_z,
            zero_field: 2.0 * PI * 2.88e9,
            r,
            r_g,
        }
    }

    /// Physical or desk-scale couplings, as selected in the sequence settings.
    pub fn for_params(p: &SystemParams) -> Self {
        if p.sequence.physical_coupling {
            Self::physical(p)
        } else {
            Self {
                zero_field: p.constants.zero_field_splitting,
                ..Self::desk_scale(p.oscillator.omega_z, p.sequence.desk_r, p.sequence.desk_rg)
            }
        }
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_z
    }

    /// Linear drive on the mode in spin block `s` (rad/s).
    fn drive(&self, s: f64) -> f64 {
        -2.0 * self.omega_z * (self.r * s - self.r_g)
    }

    /// Relative phase between |−1⟩ and |+1⟩ after `periods` full periods,
    /// 16 r r_g ω_z t.
    pub fn closed_form_phase(&self, periods: f64) -> f64 {
        16.0 * self.r * self.r_g * self.omega_z * periods * self.period()
    }

    /// A cutoff that comfortably holds the largest coherent excursion
    /// 4(|r| + |r_g|) plus an initial thermal occupation.
    pub fn suggested_cutoff(&self, nbar: f64) -> usize {
        let alpha = 4.0 * (self.r.abs() + self.r_g.abs());
        let mean = alpha * alpha + nbar;
        let spread = (alpha * alpha * (2.0 * nbar + 1.0) + nbar * (nbar + 1.0)).sqrt();
        (mean + 8.0 * spread + 16.0 * (nbar + 1.0)).ceil() as usize
    }
}

/// Tridiagonal Fock-space block of H/ħ for spin value `s`, without the D term.
fn block_hamiltonian(model: &HybridModel, s: f64, n_cut: usize) -> DMatrix<f64> {
    let dim = n_cut + 1;
    let f = model.drive(s);
    let mut h = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        h[(n, n)] = model.omega_z * n as f64;
        if n + 1 < dim {
            let x = f * ((n + 1) as f64).sqrt();
            h[(n, n + 1)] = x;
            h[(n + 1, n)] = x;
        }
    }
    h
}

/// Full Hamiltonian H/ħ (rad/s) on the 3(N_cut+1)-dimensional hybrid space.
pub fn build_hamiltonian(model: &HybridModel, n_cut: usize) -> Result<DMatrix<Complex64>> {
    if n_cut < 4 {
        return Err(invalid("n_cut", "Fock cutoff must be at least 4"));
    }
    let dim = n_cut + 1;
    let mut h = DMatrix::from_element(3 * dim, 3 * dim, ZERO_C);
    for (b, &s) in SPIN_VALUES.iter().enumerate() {
        let block = block_hamiltonian(model, s, n_cut);
        for m in 0..dim {
            for n in 0..dim {
                let mut v = block[(m, n)];
                if m == n {
                    v += model.zero_field * s * s;
                }
                h[(b * dim + m, b * dim + n)] = Complex64::new(v, 0.0);
            }
        }
    }
    Ok(h)
}

/// Thermal (Boltzmann) Fock-space density matrix with mean occupation `nbar`.
pub fn thermal_state(nbar: f64, n_cut: usize) -> Result<DMatrix<Complex64>> {
    if !(nbar >= 0.0) {
        return Err(invalid("nbar", "thermal occupation must be non-negative"));
    }
    let q = nbar / (nbar + 1.0);
    if q.powi(n_cut as i32) > 1e-8 {
        return Err(invalid(
            "n_cut",
            format!("cutoff {n_cut} too small for thermal occupation {nbar}"),
        ));
    }
    let dim = n_cut + 1;
    let weights: Vec<f64> = (0..dim).map(|n| q.powi(n as i32)).collect();
    let norm: f64 = weights.iter().sum();
    let mut rho = DMatrix::from_element(dim, dim, ZERO_C);
    for (n, w) in weights.iter().enumerate() {
        rho[(n, n)] = Complex64::new(w / norm, 0.0);
    }
    Ok(rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    /// `blocks[3 * i + j] = ⟨s_i| ρ |s_j⟩`, each (N_cut+1)×(N_cut+1).
    blocks: Vec<DMatrix<Complex64>>,
    n_cut: usize,
    /// Time stamp (s).
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateDiagnostics {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub top_population: f64,
}

impl HybridState {
    /// Product state ρ_spin ⊗ ρ_mode.
    pub fn product(spin: &Matrix3<Complex64>, mode: &DMatrix<Complex64>) -> Self {
        let n_cut = mode.nrows() - 1;
        let blocks = (0..9).map(|k| mode * spin[(k / 3, k % 3)]).collect();
        Self {
            blocks,
            n_cut,
            time: 0.0,
        }
    }

    /// |s⟩⟨s| ⊗ ρ_mode for a spin basis index.
    pub fn spin_basis(index: usize, mode: &DMatrix<Complex64>) -> Self {
        let mut spin = Matrix3::zeros();
        spin[(index, index)] = Complex64::new(1.0, 0.0);
        Self::product(&spin, mode)
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<Complex64> {
        &self.blocks[3 * i + j]
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = self.n_cut + 1;
        let mut rho = DMatrix::from_element(3 * dim, 3 * dim, ZERO_C);
        for i in 0..3 {
            for j in 0..3 {
                rho.view_mut((i * dim, j * dim), (dim, dim)).copy_from(self.block(i, j));
            }
        }
        rho
    }

    pub fn from_dense(rho: &DMatrix<Complex64>, time: f64) -> Self {
        let dim = rho.nrows() / 3;
        let blocks = (0..9)
            .map(|k| rho.view(((k / 3) * dim, (k % 3) * dim), (dim, dim)).into_owned())
            .collect();
        Self {
            blocks,
            n_cut: dim - 1,
            time,
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..3).map(|i| self.block(i, i).trace()).sum()
    }

    /// Spin density matrix with the mode traced out.
    pub fn reduced_spin(&self) -> Matrix3<Complex64> {
        Matrix3::from_fn(|i, j| self.block(i, j).trace())
    }

    /// Population of each Fock level summed over spin.
    pub fn fock_populations(&self) -> Vec<f64> {
        (0..=self.n_cut)
            .map(|n| (0..3).map(|i| self.block(i, i)[(n, n)].re).sum())
            .collect()
    }

    fn top_population(&self) -> f64 {
        let n = self.n_cut;
        (0..3)
            .map(|i| {
                let b = self.block(i, i);
                b[(n, n)].re + b[(n - 1, n - 1)].re
            })
            .sum()
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        let rho = self.to_dense();
        let herm = max_norm(&(&rho - rho.adjoint()));
        let eig = SymmetricEigen::new((&rho + rho.adjoint()) * Complex64::new(0.5, 0.0));
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        StateDiagnostics {
            trace_error: (self.trace() - Complex64::new(1.0, 0.0)).norm(),
            hermiticity_error: herm,
            min_eigenvalue,
            top_population: self.top_population(),
        }
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-8) and positivity (−1e-8).
    pub fn check(&self) -> Result<StateDiagnostics> {
        let d = self.diagnostics();
        if d.hermiticity_error > 1e-10 {
            return Err(Error::StateCheck(format!("not Hermitian: {:e}", d.hermiticity_error)));
        }
        if d.trace_error > 1e-8 {
            return Err(Error::StateCheck(format!("trace drifted by {:e}", d.trace_error)));
        }
        if d.min_eigenvalue < -1e-8 {
            return Err(Error::StateCheck(format!("negative eigenvalue {:e}", d.min_eigenvalue)));
        }
        Ok(d)
    }
}

/// Microwave pulse coupling |0⟩ symmetrically to |±1⟩.
///
/// The drive couples |0⟩ to the bright state `(|+1⟩ + e^{−iφ}|−1⟩)/√2` at
/// rate √2·Ω. With this sign of φ a superposition `|+1⟩ + e^{iΔφ}|−1⟩` read
/// out by a π/2 pulse gives `P0 = cos²((Δφ + φ)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseSpec {
    /// Rabi frequency Ω (rad/s).
    pub rabi: f64,
    /// Duration (s).
    pub duration: f64,
    /// Relative phase φ (rad).
    pub phase: f64,
}

impl PulseSpec {
    pub fn half_pi(rabi: f64, phase: f64) -> Self {
        Self {
            rabi,
            duration: PI / (2.0 * 2f64.sqrt() * rabi),
            phase,
        }
    }

    pub fn pi(rabi: f64, phase: f64) -> Self {
        Self {
            rabi,
            duration: PI / (2f64.sqrt() * rabi),
            phase,
        }
    }

    /// Generator H_mw/ħ on the spin space (rad/s).
    pub fn hamiltonian(&self) -> Matrix3<Complex64> {
        let mut h = Matrix3::zeros();
        let om = Complex64::new(self.rabi, 0.0);
        let e = Complex64::from_polar(1.0, -self.phase);
        h[(PLUS, ZERO)] = om;
        h[(MINUS, ZERO)] = om * e;
        h[(ZERO, PLUS)] = om;
        h[(ZERO, MINUS)] = om * e.conj();
        h
    }

    /// exp(−i H_mw t_p) in closed form.
    pub fn unitary(&self) -> Matrix3<Complex64> {
        let theta = 2f64.sqrt() * self.rabi * self.duration;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bright = nalgebra::Vector3::new(
            Complex64::new(s, 0.0),
            ZERO_C,
            Complex64::from_polar(s, -self.phase),
        );
        let zero = nalgebra::Vector3::new(ZERO_C, Complex64::new(1.0, 0.0), ZERO_C);
        let pb = bright * bright.adjoint();
        let pz = zero * zero.adjoint();
        let swap = bright * zero.adjoint() + zero * bright.adjoint();
        Matrix3::identity() - (pb + pz) * Complex64::new(1.0 - theta.cos(), 0.0) - swap * (I * theta.sin())
    }
}

/// Applies an instantaneous pulse (identity on the mode).
pub fn apply_pulse(state: &HybridState, pulse: &PulseSpec) -> HybridState {
    let u = pulse.unitary();
    let dim = state.n_cut + 1;
    let mut blocks = vec![DMatrix::from_element(dim, dim, ZERO_C); 9];
    for i in 0..3 {
        for j in 0..3 {
            let out = &mut blocks[3 * i + j];
            for k in 0..3 {
                for l in 0..3 {
                    let c = u[(i, k)] * u[(j, l)].conj();
                    if c != ZERO_C {
                        *out += state.block(k, l) * c;
                    }
                }
            }
        }
    }
    HybridState {
        blocks,
        n_cut: state.n_cut,
        time: state.time + pulse.duration,
    }
}

/// Applies a pulse to a 3×3 spin density matrix.
pub fn apply_pulse_spin(rho: &Matrix3<Complex64>, pulse: &PulseSpec) -> Matrix3<Complex64> {
    let u = pulse.unitary();
    u * rho * u.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionalDamping {
    /// Amplitude damping rate γ = ω_z/Q (1/s).
    pub rate: f64,
    /// Thermal occupation of the bath.
    pub bath_nbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Dissipators {
    pub motional: Option<MotionalDamping>,
    /// Spin coherence time T2 (s); the |+1⟩⟨−1| coherence decays as exp(−t/T2).
    pub dephasing_t2: Option<f64>,
}

impl Dissipators {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_params(p: &SystemParams) -> Self {
        let q = p.oscillator.quality_factor;
        let motional = (q.is_finite()).then(|| MotionalDamping {
            rate: p.oscillator.omega_z / q,
            bath_nbar: p.sequence.bath_nbar,
        });
        let dephasing_t2 = p.spin.t2.is_finite().then_some(p.spin.t2);
        Self {
            motional,
            dephasing_t2,
        }
    }
}

/// Scalar factor multiplying block (i, j): the D S_z² phase and the S_z
/// dephasing both act as a number on each block.
fn block_scalar(model: &HybridModel, dissipators: &Dissipators, i: usize, j: usize, t: f64) -> Complex64 {
    let (si, sj) = (SPIN_VALUES[i], SPIN_VALUES[j]);
    let phase = -model.zero_field * (si * si - sj * sj) * t;
    let decay = match dissipators.dephasing_t2 {
        // rate 1/(2T2) on D[S_z] gives −(s_i − s_j)²/(4 T2)
        Some(t2) => -(si - sj).powi(2) / (4.0 * t2) * t,
        None => 0.0,
    };
    Complex64::from_polar(decay.exp(), phase)
}

/// Evolves the state for `duration` seconds.
///
/// Closed dynamics use the exact propagator of each spin block; with
/// motional damping the blocks are integrated by fixed-step RK4, doubling
/// the step count until the reduced spin matrix changes by at most 1e-8.
/// Fails if the top two Fock levels ever hold more than 1e-6 population.
pub fn evolve(
    state: &HybridState,
    model: &HybridModel,
    duration: f64,
    dissipators: &Dissipators,
) -> Result<HybridState> {
    if !(duration > 0.0) {
        return Err(invalid("duration", "must be positive"));
    }
    if state.n_cut < 4 {
        return Err(invalid("n_cut", "Fock cutoff must be at least 4"));
    }
    let check_top = |pop: f64, t: f64| -> Result<()> {
        if pop > ADEQUACY_LIMIT {
            let nbar = state.fock_mean();
            Err(Error::CutoffInadequate {
                n_cut: state.n_cut,
                population: pop,
                time: t,
                suggested: model.suggested_cutoff(nbar).max(2 * state.n_cut),
            })
        } else {
            Ok(())
        }
    };
    check_top(state.top_population(), state.time)?;

    let mut out = match dissipators.motional {
        None => evolve_closed(state, model, duration, &check_top)?,
        Some(damping) => evolve_lindblad(state, model, duration, damping, &check_top)?,
    };
    for i in 0..3 {
        for j in 0..3 {
            let c = block_scalar(model, dissipators, i, j, duration);
            out.blocks[3 * i + j] *= c;
        }
    }
    out.time = state.time + duration;
    Ok(out)
}

impl HybridState {
    fn fock_mean(&self) -> f64 {
        self.fock_populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    fn nonzero(&self, i: usize, j: usize) -> bool {
        self.block(i, j).iter().any(|z| *z != ZERO_C)
    }
}

struct BlockPropagator {
    vectors: DMatrix<f64>,
    energies: Vec<f64>,
}

impl BlockPropagator {
    fn new(model: &HybridModel, s: f64, n_cut: usize) -> Self {
        let eig = SymmetricEigen::new(block_hamiltonian(model, s, n_cut));
        Self {
            vectors: eig.eigenvectors,
            energies: eig.eigenvalues.iter().cloned().collect(),
        }
    }

    fn unitary(&self, t: f64) -> DMatrix<Complex64> {
        let dim = self.energies.len();
        let v = self.vectors.map(|x| Complex64::new(x, 0.0));
        let mut scaled = v.clone();
        for (k, e) in self.energies.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, -e * t);
            for m in 0..dim {
                scaled[(m, k)] *= ph;
            }
        }
        scaled * v.transpose()
    }
}

fn evolve_closed(
    state: &HybridState,
    model: &HybridModel,
    duration: f64,
    check_top: &dyn Fn(f64, f64) -> Result<()>,
) -> Result<HybridState> {
    let n = state.n_cut;
    let props: Vec<BlockPropagator> = SPIN_VALUES
        .iter()
        .map(|&s| BlockPropagator::new(model, s, n))
        .collect();
    // cutoff adequacy at intermediate times, from the top rows of U ρ U†
    for k in 1..CHECKPOINTS {
        let t = duration * k as f64 / CHECKPOINTS as f64;
        let mut pop = 0.0;
        for i in 0..3 {
            if !state.nonzero(i, i) {
                continue;
            }
            let u = props[i].unitary(t);
            let rho = state.block(i, i);
            for row in [n - 1, n] {
                let ur = u.row(row);
                pop += (ur * rho * ur.adjoint())[(0, 0)].re;
            }
        }
        check_top(pop, state.time + t)?;
    }
    let us: Vec<DMatrix<Complex64>> = props.iter().map(|p| p.unitary(duration)).collect();
    let mut blocks = state.blocks.clone();
    for i in 0..3 {
        for j in 0..3 {
            if state.nonzero(i, j) {
                blocks[3 * i + j] = &us[i] * state.block(i, j) * us[j].adjoint();
            }
        }
    }
    let out = HybridState {
        blocks,
        n_cut: n,
        time: state.time + duration,
    };
    check_top(out.top_population(), out.time)?;
    Ok(out)
}

/// Right-hand side of the block master equation for block (i, j) without the
/// scalar D/dephasing part. Column-major storage, `dim × dim`.
struct BlockRhs {
    dim: usize,
    omega: f64,
    fi: f64,
    fj: f64,
    down: f64,
    up: f64,
    sqrt: Vec<f64>,
}

impl BlockRhs {
    fn new(model: &HybridModel, i: usize, j: usize, damping: MotionalDamping, dim: usize) -> Self {
        Self {
            dim,
            omega: model.omega_z,
            fi: model.drive(SPIN_VALUES[i]),
            fj: model.drive(SPIN_VALUES[j]),
            down: damping.rate * (damping.bath_nbar + 1.0),
            up: damping.rate * damping.bath_nbar,
            sqrt: (0..=dim).map(|k| (k as f64).sqrt()).collect(),
        }
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let d = self.dim;
        let at = |m: usize, n: usize| x[n * d + m];
        let sq = &self.sqrt;
        for n in 0..d {
            for m in 0..d {
                let xmn = at(m, n);
                // H_i X − X H_j
                let mut hx = Complex64::new(self.omega * (m as f64 - n as f64), 0.0) * xmn;
                let mut col = ZERO_C;
                if m > 0 {
                    col += at(m - 1, n) * sq[m];
                }
                if m + 1 < d {
                    col += at(m + 1, n) * sq[m + 1];
                }
                let mut row = ZERO_C;
                if n > 0 {
                    row += at(m, n - 1) * sq[n];
                }
                if n + 1 < d {
                    row += at(m, n + 1) * sq[n + 1];
                }
                hx += col * self.fi - row * self.fj;
                let mut v = -I * hx;
                // γ(n̄+1) D[c] + γ n̄ D[c†]
                let (mf, nf) = (m as f64, n as f64);
                if self.down != 0.0 {
                    let mut jump = ZERO_C;
                    if m + 1 < d && n + 1 < d {
                        jump = at(m + 1, n + 1) * (sq[m + 1] * sq[n + 1]);
                    }
                    v += (jump - xmn * (0.5 * (mf + nf))) * self.down;
                }
                if self.up != 0.0 {
                    let mut jump = ZERO_C;
                    if m > 0 && n > 0 {
                        jump = at(m - 1, n - 1) * (sq[m] * sq[n]);
                    }
                    v += (jump - xmn * (0.5 * (mf + nf + 2.0))) * self.up;
                }
                out[n * d + m] = v;
            }
        }
    }
}

fn rk4_block(rhs: &BlockRhs, x0: &[Complex64], dt: f64, steps: usize, checkpoints: &mut dyn FnMut(usize, &[Complex64])) -> Vec<Complex64> {
    let len = x0.len();
    let mut x = x0.to_vec();
    let mut k1 = vec![ZERO_C; len];
    let mut k2 = vec![ZERO_C; len];
    let mut k3 = vec![ZERO_C; len];
    let mut k4 = vec![ZERO_C; len];
    let mut tmp = vec![ZERO_C; len];
    let half = Complex64::new(0.5 * dt, 0.0);
    let full = Complex64::new(dt, 0.0);
    let sixth = Complex64::new(dt / 6.0, 0.0);
    for step in 1..=steps {
        rhs.apply(&x, &mut k1);
        for q in 0..len {
            tmp[q] = x[q] + half * k1[q];
        }
        rhs.apply(&tmp, &mut k2);
        for q in 0..len {
            tmp[q] = x[q] + half * k2[q];
        }
        rhs.apply(&tmp, &mut k3);
        for q in 0..len {
            tmp[q] = x[q] + full * k3[q];
        }
        rhs.apply(&tmp, &mut k4);
        for q in 0..len {
            x[q] += sixth * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }
        checkpoints(step, &x);
    }
    x
}

fn evolve_lindblad(
    state: &HybridState,
    model: &HybridModel,
    duration: f64,
    damping: MotionalDamping,
    check_top: &dyn Fn(f64, f64) -> Result<()>,
) -> Result<HybridState> {
    let dim = state.n_cut + 1;
    let n = state.n_cut;
    // spectral radius of the block generator
    let fmax = SPIN_VALUES
        .iter()
        .map(|&s| model.drive(s).abs())
        .fold(0.0, f64::max);
    let radius = model.omega_z * n as f64
        + 4.0 * fmax * (dim as f64).sqrt()
        + damping.rate * (2.0 * damping.bath_nbar + 1.0) * dim as f64;
    let mut steps = ((duration * radius / 1.0).ceil() as usize).max(CHECKPOINTS);
    steps = steps.div_ceil(CHECKPOINTS) * CHECKPOINTS;

    // upper triangle of non-empty blocks; the rest follow by adjoint
    let pairs: Vec<(usize, usize)> = (0..3)
        .flat_map(|i| (i..3).map(move |j| (i, j)))
        .filter(|&(i, j)| state.nonzero(i, j))
        .collect();

    let run = |steps: usize| -> Result<Vec<(usize, usize, Vec<Complex64>)>> {
        let dt = duration / steps as f64;
        let every = steps / CHECKPOINTS;
        let results: Vec<(usize, usize, Vec<Complex64>, Vec<f64>)> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let rhs = BlockRhs::new(model, i, j, damping, dim);
                let mut tops = Vec::new();
                let x = rk4_block(&rhs, state.block(i, j).as_slice(), dt, steps, &mut |step, x| {
                    if i == j && step % every == 0 {
                        tops.push(x[n * dim + n].re + x[(n - 1) * dim + n - 1].re);
                    }
                });
                (i, j, x, tops)
            })
            .collect();
        for c in 0..CHECKPOINTS {
            let pop: f64 = results.iter().filter_map(|r| r.3.get(c)).sum();
            check_top(pop, state.time + duration * (c + 1) as f64 / CHECKPOINTS as f64)?;
        }
        Ok(results.into_iter().map(|(i, j, x, _)| (i, j, x)).collect())
    };
    let traces = |res: &[(usize, usize, Vec<Complex64>)]| -> Vec<Complex64> {
        res.iter()
            .map(|(_, _, x)| (0..dim).map(|m| x[m * dim + m]).sum())
            .collect()
    };

    let mut current = run(steps)?;
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        steps *= 2;
        let next = run(steps)?;
        let change = traces(&current)
            .iter()
            .zip(traces(&next))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        current = next;
        if change <= RK4_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::StateCheck(format!(
            "RK4 did not converge to {RK4_TOLERANCE:e} within {steps} steps"
        )));
    }
    let mut blocks = vec![DMatrix::from_element(dim, dim, ZERO_C); 9];
    for (i, j, x) in current {
        let m = DMatrix::from_vec(dim, dim, x);
        if i != j {
            blocks[3 * j + i] = m.adjoint();
        }
        blocks[3 * i + j] = m;
    }
    Ok(HybridState {
        blocks,
        n_cut: n,
        time: state.time + duration,
    })
}

/// Sampled fringe and its fit `P0(φ) = ½[1 + V cos(Δφ + φ)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fringe {
    pub phases: Vec<f64>,
    pub populations: Vec<f64>,
    /// Fitted Δφ in [0, 2π).
    pub fitted_phase: f64,
    pub visibility: f64,
    /// RMS residual of the fit.
    pub residual: f64,
}

/// Least-squares fit of `½[1 + V cos(Δφ + φ)]`.
///
/// Writing the model as `½ + A cos φ + B sin φ` with `A = (V/2) cos Δφ` and
/// `B = −(V/2) sin Δφ` makes the problem linear; the first discrete Fourier
/// component provides the same estimate on a uniform grid.
pub fn fit_fringe(phases: &[f64], populations: &[f64]) -> Result<(f64, f64, f64)> {
    if phases.len() != populations.len() || phases.len() < 3 {
        return Err(Error::FitFailed("need at least three (φ, P0) samples".into()));
    }
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&phi, &p) in phases.iter().zip(populations) {
        let (s, c) = phi.sin_cos();
        let y = p - 0.5;
        scc += c * c;
        sss += s * s;
        scs += c * s;
        syc += y * c;
        sys += y * s;
    }
    let det = scc * sss - scs * scs;
    if det.abs() <= 1e-12 * (scc * sss).max(f64::MIN_POSITIVE) {
        return Err(Error::FitFailed("phase grid does not resolve cos/sin components".into()));
    }
    let a = (syc * sss - sys * scs) / det;
    let b = (sys * scc - syc * scs) / det;
    let visibility = 2.0 * a.hypot(b);
    let phase = (-b).atan2(a).rem_euclid(2.0 * PI);
    let residual = (phases
        .iter()
        .zip(populations)
        .map(|(&phi, &p)| {
            let model = 0.5 + a * phi.cos() + b * phi.sin();
            (p - model).powi(2)
        })
        .sum::<f64>()
        / phases.len() as f64)
        .sqrt();
    Ok((phase, visibility, residual))
}

/// Uniform grid of `n` readout phases over [0, 2π).
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RamseyConfig {
    pub model: HybridModel,
    pub n_cut: usize,
    pub initial_nbar: f64,
    /// Free evolution between the pulses (s).
    pub evolution_time: f64,
    pub rabi: f64,
    pub dissipators: Dissipators,
}

impl RamseyConfig {
    /// One-period Ramsey run described by the parameter set.
    pub fn from_params(p: &SystemParams) -> Self {
        let model = HybridModel::for_params(p);
        Self {
            model,
            n_cut: p.sequence.fock_cutoff,
            initial_nbar: p.sequence.initial_nbar,
            evolution_time: model.period(),
            rabi: p.spin.rabi,
            dissipators: Dissipators::from_params(p),
        }
    }

    pub fn closed(mut self) -> Self {
        self.dissipators = Dissipators::none();
        self
    }
}

/// State after the first π/2 pulse and the free evolution.
pub fn ramsey_state(cfg: &RamseyConfig) -> Result<HybridState> {
    let mode = thermal_state(cfg.initial_nbar, cfg.n_cut)?;
    let start = HybridState::spin_basis(ZERO, &mode);
    let split = apply_pulse(&start, &PulseSpec::half_pi(cfg.rabi, 0.0));
    let evolved = evolve(&split, &cfg.model, cfg.evolution_time, &cfg.dissipators)?;
    evolved.check()?;
    Ok(evolved)
}

/// π/2 – evolve – π/2(φ) sequence scanned over `phases`.
pub fn ramsey_run(cfg: &RamseyConfig, phases: &[f64]) -> Result<Fringe> {
    if phases.len() < 8 {
        return Err(invalid("phases", "need at least 8 readout phases"));
    }
    let evolved = ramsey_state(cfg)?;
    let spin = evolved.reduced_spin();
    let populations: Vec<f64> = phases
        .par_iter()
        .map(|&phi| apply_pulse_spin(&spin, &PulseSpec::half_pi(cfg.rabi, phi))[(ZERO, ZERO)].re)
        .collect();
    let (fitted_phase, visibility, residual) = fit_fringe(phases, &populations)?;
    Ok(Fringe {
        phases: phases.to_vec(),
        populations,
        fitted_phase,
        visibility,
        residual,
    })
}

/// Heuristic visibility exp(−(2π/Q)(2r)²)·exp(−t0/T2).
pub fn visibility_analytic(q: f64, t2: f64, t0: f64, r: f64) -> f64 {
    (-(2.0 * PI / q) * (2.0 * r).powi(2)).exp() * (-t0 / t2).exp()
}

/// Largest entry modulus.
pub fn max_norm(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Signed distance between two angles, in (−π, π].
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Scaling-and-squaring Taylor exponential, independent of the closed
    /// form used by `PulseSpec::unitary`.
    fn expm(a: &Matrix3<Complex64>) -> Matrix3<Complex64> {
        let norm = a.iter().map(|z| z.norm()).sum::<f64>();
        let squarings = (norm.log2().ceil().max(0.0) as u32) + 4;
        let scaled = a / c(2f64.powi(squarings as i32));
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..30 {
            term = term * scaled / c(k as f64);
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn decoupled_spectrum() {
        let model = HybridModel::desk_scale(1.0, 0.0, 0.0);
        let h = build_hamiltonian(&model, 6).unwrap();
        assert_eq!(h.nrows(), 21);
        let eig = SymmetricEigen::new(h.clone());
        let mut got: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = model.zero_field;
        let mut want: Vec<f64> = (0..7)
            .flat_map(|n| [n as f64, n as f64 + d, n as f64 + d])
            .collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6 * w.abs().max(1.0), "{g} vs {w}");
        }
        assert!(build_hamiltonian(&model, 3).is_err());
    }

    #[test]
    fn hamiltonian_is_hermitian_and_block_diagonal() {
        let model = HybridModel::desk_scale(2.0, 0.7, 0.2);
        let h = build_hamiltonian(&model, 10).unwrap();
        assert!(max_norm(&(&h - h.adjoint())) < 1e-15);
        let dim = 11;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(max_norm(&h.view((i * dim, j * dim), (dim, dim)).into_owned()), 0.0);
                }
            }
        }
    }

    #[test]
    fn displaced_ground_states() {
        let model = HybridModel::desk_scale(1.0, 0.6, 0.3);
        let n_cut = 60;
        for (idx, &s) in SPIN_VALUES.iter().enumerate() {
            let eig = SymmetricEigen::new(block_hamiltonian(&model, s, n_cut));
            let (k, e0) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, &e)| if e < acc.1 { (k, e) } else { acc });
            // completing the square: −(2(r s − r_g))² ω
            let want = -4.0 * (model.r * s - model.r_g).powi(2);
            assert!((e0 - want).abs() < 1e-10, "block {idx}: {e0} vs {want}");
            let v = eig.eigenvectors.column(k);
            let x: f64 = (0..n_cut).map(|n| 2.0 * v[n] * v[n + 1] * ((n + 1) as f64).sqrt()).sum();
            assert!((x - 4.0 * (model.r * s - model.r_g)).abs() < 1e-9, "block {idx}: ⟨c+c†⟩ = {x}");
        }
    }

    #[test]
    fn half_pi_pulse_splits_equally() {
        let vac = thermal_state(0.0, 4).unwrap();
        let start = HybridState::spin_basis(ZERO, &vac);
        let out = apply_pulse(&start, &PulseSpec::half_pi(1e6, 0.0));
        let spin = out.reduced_spin();
        assert!((spin[(PLUS, PLUS)].re - 0.5).abs() < 1e-14);
        assert!(spin[(ZERO, ZERO)].re.abs() < 1e-14);
        assert!((spin[(MINUS, MINUS)].re - 0.5).abs() < 1e-14);
        // coherent superposition with equal amplitudes
        assert!((spin[(PLUS, MINUS)].norm() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn back_to_back_half_pi_pulses_return_to_zero() {
        let mut spin = Matrix3::zeros();
        spin[(ZERO, ZERO)] = c(1.0);
        let p = PulseSpec::half_pi(2.0, 0.0);
        let rho = apply_pulse_spin(&apply_pulse_spin(&spin, &p), &p);
        // P0 = cos²(0/2) = 1 (the second pulse completes a π rotation of |0⟩ → −|0⟩)
        assert!((rho[(ZERO, ZERO)].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pulse_unitary_matches_matrix_exponential() {
        for phase in [0.0, 0.3, -2.1] {
            for pulse in [PulseSpec::half_pi(3.0, phase), PulseSpec::pi(3.0, phase)] {
                let oracle = expm(&(pulse.hamiltonian() * (-I * pulse.duration)));
                let diff = (pulse.unitary() - oracle).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "{diff:e}");
            }
        }
    }

    #[test]
    fn pi_pulse_swaps_plus_and_minus() {
        let p = PulseSpec::pi(1.0, 0.0);
        let u = p.unitary();
        assert!((u[(MINUS, PLUS)].norm() - 1.0).abs() < 1e-12);
        assert!((u[(PLUS, MINUS)].norm() - 1.0).abs() < 1e-12);
        assert!(u[(PLUS, PLUS)].norm() < 1e-12);
    }

    #[test]
    fn thermal_state_properties() {
        let vac = thermal_state(0.0, 8).unwrap();
        assert_eq!(vac[(0, 0)], c(1.0));
        assert_eq!(vac.trace(), c(1.0));
        let th = thermal_state(2.0, 64).unwrap();
        // geometric series: Σ n q^n (1−q) with q = 2/3
        let q: f64 = 2.0 / 3.0;
        let oracle: f64 = (0..2000).map(|n| n as f64 * q.powi(n) * (1.0 - q)).sum();
        let mean: f64 = (0..=64).map(|n| n as f64 * th[(n, n)].re).sum();
        assert!((oracle - 2.0).abs() < 1e-9);
        assert!((mean - 2.0).abs() < 1e-6, "{mean}");
        assert!((th.trace().re - 1.0).abs() < 1e-14);
        assert!(thermal_state(2.0, 16).is_err());
        assert!(thermal_state(-1.0, 16).is_err());
    }

    #[test]
    fn decoupled_evolution_only_adds_known_phases() {
        let model = HybridModel::desk_scale(2.0 * PI * 10.0, 0.0, 0.0);
        let vac = thermal_state(0.0, 8).unwrap();
        let start = apply_pulse(&HybridState::spin_basis(ZERO, &vac), &PulseSpec::pi(1e6, 0.0));
        let start = apply_pulse(&start, &PulseSpec::half_pi(1e6, 0.0));
        let t = 0.0123;
        let out = evolve(&start, &model, t, &Dissipators::none()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (si, sj) = (SPIN_VALUES[i], SPIN_VALUES[j]);
                let ph = Complex64::from_polar(1.0, -model.zero_field * (si * si - sj * sj) * t);
                let want = start.block(i, j) * ph;
                assert!(max_norm(&(out.block(i, j) - want)) < 1e-9);
            }
        }
    }

    #[test]
    fn dephasing_decays_coherence_exponentially() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 0.3, 0.05);
        let vac = thermal_state(0.0, 24).unwrap();
        let start = apply_pulse(&HybridState::spin_basis(ZERO, &vac), &PulseSpec::half_pi(1e7, 0.0));
        let t2 = 1.5e-3;
        let d = Dissipators {
            motional: None,
            dephasing_t2: Some(t2),
        };
        let t = model.period();
        let free = evolve(&start, &model, t, &Dissipators::none()).unwrap();
        let damped = evolve(&start, &model, t, &d).unwrap();
        let ratio = damped.reduced_spin()[(PLUS, MINUS)].norm() / free.reduced_spin()[(PLUS, MINUS)].norm();
        assert!(((ratio - (-t / t2).exp()) / (-t / t2).exp()).abs() < 1e-4);
    }

    #[test]
    fn closed_ramsey_phase_matches_closed_form() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 0.5, 0.1);
        let cfg = RamseyConfig {
            model,
            n_cut: 48,
            initial_nbar: 0.0,
            evolution_time: model.period(),
            rabi: 2.0 * PI * 1e7,
            dissipators: Dissipators::none(),
        };
        let fringe = ramsey_run(&cfg, &phase_grid(16)).unwrap();
        let want = model.closed_form_phase(1.0);
        assert!(angle_difference(fringe.fitted_phase, want).abs() < 1e-3);
        assert!(fringe.visibility > 0.999);
        assert!(fringe.residual < 1e-3);
    }

    #[test]
    fn no_gravity_no_phase() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 0.7, 0.0);
        let cfg = RamseyConfig {
            model,
            n_cut: 48,
            initial_nbar: 0.0,
            evolution_time: model.period(),
            rabi: 2.0 * PI * 1e7,
            dissipators: Dissipators::none(),
        };
        let fringe = ramsey_run(&cfg, &phase_grid(12)).unwrap();
        assert!(angle_difference(fringe.fitted_phase, 0.0).abs() < 1e-8);
    }

    #[test]
    fn cutoff_inadequacy_is_reported() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 2.0, 0.1);
        let cfg = RamseyConfig {
            model,
            n_cut: 16,
            initial_nbar: 0.0,
            evolution_time: model.period(),
            rabi: 2.0 * PI * 1e7,
            dissipators: Dissipators::none(),
        };
        match ramsey_run(&cfg, &phase_grid(8)) {
            Err(Error::CutoffInadequate { suggested, .. }) => assert!(suggested > 16),
            other => panic!("expected cutoff failure, got {other:?}"),
        }
    }

    #[test]
    fn fit_recovers_synthetic_fringe() {
        let phases = phase_grid(10);
        let pops: Vec<f64> = phases.iter().map(|p| 0.5 * (1.0 + 0.8 * (1.3 + p).cos())).collect();
        let (phase, v, res) = fit_fringe(&phases, &pops).unwrap();
        assert!((phase - 1.3).abs() < 1e-12);
        assert!((v - 0.8).abs() < 1e-12);
        assert!(res < 1e-12);
        assert!(fit_fringe(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn visibility_formula_limits() {
        assert_eq!(visibility_analytic(f64::INFINITY, f64::INFINITY, 2e-3, 90.0), 1.0);
        let v = visibility_analytic(1e5, 2e-3, 2e-3, 90.0);
        let want = (-(2.0 * PI / 1e5) * 180.0_f64.powi(2)).exp() * (-1.0_f64).exp();
        assert!((v - want).abs() < 1e-15);
        assert!(visibility_analytic(1e4, 2e-3, 2e-3, 1.0) < visibility_analytic(1e5, 2e-3, 2e-3, 1.0));
        assert!(visibility_analytic(1e5, 1e-3, 2e-3, 1.0) < visibility_analytic(1e5, 2e-3, 2e-3, 1.0));
    }

    fn lindblad_cfg(r: f64, q: f64, bath: f64, n_cut: usize) -> RamseyConfig {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, r, 0.1);
        RamseyConfig {
            model,
            n_cut,
            initial_nbar: 0.0,
            evolution_time: model.period(),
            rabi: 2.0 * PI * 1e7,
            dissipators: Dissipators {
                motional: Some(MotionalDamping {
                    rate: model.omega_z / q,
                    bath_nbar: bath,
                }),
                dephasing_t2: None,
            },
        }
    }

    #[test]
    fn amplitude_damping_matches_coherent_state_decay() {
        // branches |α±(t)⟩ with |α+ − α−|² = 32 r² (1 − cos ωt); the
        // coherence decays as exp(−(γ/2)∫|Δα|²dt) = exp(−32π r²/Q) per period
        let (r, q) = (0.5, 1e3);
        let fringe = ramsey_run(&lindblad_cfg(r, q, 0.0, 36), &phase_grid(16)).unwrap();
        let oracle = (-32.0 * PI * r * r / q).exp();
        assert!((fringe.visibility - oracle).abs() < 1e-4, "{} vs {oracle}", fringe.visibility);
        let want = lindblad_cfg(r, q, 0.0, 36).model.closed_form_phase(1.0);
        assert!(angle_difference(fringe.fitted_phase, want).abs() < 1e-3);
    }

    #[test]
    fn thermal_bath_keeps_state_physical() {
        let cfg = lindblad_cfg(0.3, 1e3, 0.5, 40);
        let state = ramsey_state(&cfg).unwrap();
        let d = state.check().unwrap();
        assert!(d.trace_error < 1e-9);
        assert!(d.min_eigenvalue > -1e-9);
        // heating raises the mean phonon number above the closed value
        let closed = ramsey_state(&cfg.closed()).unwrap();
        assert!(state.fock_mean() > closed.fock_mean());
    }

    #[test]
    fn cutoff_doubling_is_converged() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 1.0, 0.1);
        let run = |n_cut| {
            let cfg = RamseyConfig {
                model,
                n_cut,
                initial_nbar: 0.5,
                evolution_time: model.period(),
                rabi: 2.0 * PI * 1e7,
                dissipators: Dissipators::none(),
            };
            ramsey_run(&cfg, &phase_grid(16)).unwrap()
        };
        let (a, b) = (run(64), run(128));
        assert!(angle_difference(a.fitted_phase, b.fitted_phase).abs() <= 1e-6);
        assert!((a.visibility - b.visibility).abs() <= 1e-6);
    }

    #[test]
    fn fringe_phase_ignores_initial_temperature() {
        let model = HybridModel::desk_scale(2.0 * PI * 500.0, 0.5, 0.1);
        let phases: Vec<f64> = [0.0, 0.5, 2.0]
            .iter()
            .map(|&nbar| {
                let cfg = RamseyConfig {
                    model,
                    n_cut: 96,
                    initial_nbar: nbar,
                    evolution_time: model.period(),
                    rabi: 2.0 * PI * 1e7,
                    dissipators: Dissipators::none(),
                };
                ramsey_run(&cfg, &phase_grid(16)).unwrap().fitted_phase
            })
            .collect();
        assert!(angle_difference(phases[0], phases[1]).abs() < 1e-6);
        assert!(angle_difference(phases[0], phases[2]).abs() < 1e-6);
    }
}
