//! Benchmark dynamical systems and their closed-form solutions.
//!
//! Four systems are supported: the linear Hamiltonian saddle, the harmonic
//! oscillator, a two degree-of-freedom proton-transfer model (symmetric double
//! well coupled quadratically to a harmonic bath mode) and the Duffing
//! oscillator, optionally forced by additive white noise.
//!
//! Phase-space coordinates are packed as `[q_1 .. q_n, p_1 .. p_n]`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest number of degrees of freedom among the supported systems.
pub const MAX_DOF: usize = 2;
/// Storage size of a phase-space vector.
pub const MAX_DIM: usize = 2 * MAX_DOF;

/// Value returned by the closed-form descriptors once the hyperbolic terms
/// overflow.
pub const ESCAPED_LD: f64 = f64::MAX;

/// A point `(q, p)` of phase space with a time stamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    coords: [f64; MAX_DIM],
    dof: usize,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: &[f64], p: &[f64], t: f64) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        let dof = q.len();
        if dof == 0 || dof > MAX_DOF {
            return Err(invalid("dof", format!("must be 1..={MAX_DOF}, got {dof}")));
        }
        let mut coords = [0.0; MAX_DIM];
        coords[..dof].copy_from_slice(q);
        coords[dof..2 * dof].copy_from_slice(p);
        let state = Self { coords, dof, t };
        if !state.is_finite() {
            return Err(Error::Contract("phase state has non-finite components".into()));
        }
        Ok(state)
    }

    /// One degree-of-freedom state at `t = 0`.
    pub fn planar(q: f64, p: f64) -> Self {
        Self {
            coords: [q, p, 0.0, 0.0],
            dof: 1,
            t: 0.0,
        }
    }

    /// Two degree-of-freedom state `(x, y, p_x, p_y)` at `t = 0`.
    pub fn spatial(x: f64, y: f64, px: f64, py: f64) -> Self {
        Self {
            coords: [x, y, px, py],
            dof: 2,
            t: 0.0,
        }
    }

    pub(crate) fn from_raw(coords: [f64; MAX_DIM], dof: usize, t: f64) -> Self {
        Self { coords, dof, t }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Phase-space dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.dof
    }

    pub fn q(&self) -> &[f64] {
        &self.coords[..self.dof]
    }

    pub fn p(&self) -> &[f64] {
        &self.coords[self.dof..2 * self.dof]
    }

    /// All `2n` coordinates, configuration first.
    pub fn coords(&self) -> &[f64] {
        &self.coords[..2 * self.dof]
    }

    pub(crate) fn raw(&self) -> &[f64; MAX_DIM] {
        &self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.coords().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// One of the benchmark systems together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `H = λ (p² − q²) / 2`.
    Saddle { lambda: f64 },
    /// `H = p² / 2m + m ω² q² / 2`.
    Harmonic { m: f64, omega: f64 },
    /// Double well in `y` (barrier height `barrier`, wells at `±well`) coupled
    /// to a harmonic bath mode `x` through `coupling · y²`.
    ProtonTransfer {
        m: f64,
        barrier: f64,
        well: f64,
        omega: f64,
        coupling: f64,
    },
    /// `dX = Y dt`, `dY = (X − X³) dt + σ dW`.
    Duffing { sigma: f64 },
}

impl SystemSpec {
    /// Proton-transfer model with `m = 1, V‡ = 1/4, y_w = √2/2, ω = 1, c = 1/2`.
    pub fn proton_transfer_default() -> Self {
        SystemSpec::ProtonTransfer {
            m: 1.0,
            barrier: 0.25,
            well: std::f64::consts::FRAC_1_SQRT_2,
            omega: 1.0,
            coupling: 0.5,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            SystemSpec::ProtonTransfer { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, SystemSpec::Duffing { sigma } if *sigma > 0.0)
    }

    pub fn noise_strength(&self) -> f64 {
        match self {
            SystemSpec::Duffing { sigma } => *sigma,
            _ => 0.0,
        }
    }

    /// Mass attached to momentum `i` (unit for systems without one).
    pub fn mass(&self) -> f64 {
        match self {
            SystemSpec::Harmonic { m, .. } | SystemSpec::ProtonTransfer { m, .. } => *m,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and > 0, got {v}")))
            }
        }
        match *self {
            SystemSpec::Saddle { lambda } => positive("lambda", lambda),
            SystemSpec::Harmonic { m, omega } => {
                positive("m", m)?;
                positive("omega", omega)
            }
            SystemSpec::ProtonTransfer {
                m,
                barrier,
                well,
                omega,
                coupling,
            } => {
                positive("m", m)?;
                positive("barrier", barrier)?;
                positive("well", well)?;
                positive("omega", omega)?;
                if coupling.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("coupling", "must be finite"))
                }
            }
            SystemSpec::Duffing { sigma } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")))
                }
            }
        }
    }

    fn check_dof(&self, dof: usize) -> Result<()> {
        if dof == self.dof() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: dof,
            })
        }
    }

    /// Phase velocity `(∂H/∂p, −∂H/∂q)`; for Duffing the drift `(y, x − x³)`.
    pub fn vector_field(&self, x: &PhaseState) -> Result<Vec<f64>> {
        self.check_dof(x.dof())?;
        let rates = self.rates(x.raw());
        Ok(rates[..x.dim()].to_vec())
    }

    /// Unchecked vector field on packed coordinates.
    #[inline]
    pub(crate) fn rates(&self, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        match *self {
            SystemSpec::Saddle { lambda } => [lambda * x[1], lambda * x[0], 0.0, 0.0],
            SystemSpec::Harmonic { m, omega } => [x[1] / m, -m * omega * omega * x[0], 0.0, 0.0],
            SystemSpec::ProtonTransfer {
                m,
                barrier,
                well,
                omega,
                coupling,
            } => {
                let (qx, qy, px, py) = (x[0], x[1], x[2], x[3]);
                let w2 = well * well;
                let mw2 = m * omega * omega;
                let linear = 2.0 * barrier / w2 + coupling * qx;
                let cubic = 2.0 * barrier / (w2 * w2) + coupling * coupling / mw2;
                [
                    px / m,
                    py / m,
                    -mw2 * qx + coupling * qy * qy,
                    2.0 * qy * (linear - cubic * qy * qy),
                ]
            }
            SystemSpec::Duffing { .. } => [x[1], x[0] - x[0] * x[0] * x[0], 0.0, 0.0],
        }
    }

    /// Kinetic energy. The saddle uses `λ p² / 2` so that `2T = p q̇`.
    pub fn kinetic_energy(&self, p: &[f64]) -> Result<f64> {
        self.check_dof(p.len())?;
        let sq: f64 = p.iter().map(|v| v * v).sum();
        Ok(match *self {
            SystemSpec::Saddle { lambda } => 0.5 * lambda * sq,
            SystemSpec::Harmonic { m, .. } | SystemSpec::ProtonTransfer { m, .. } => sq / (2.0 * m),
            SystemSpec::Duffing { .. } => 0.5 * sq,
        })
    }

    pub fn potential_energy(&self, q: &[f64]) -> Result<f64> {
        self.check_dof(q.len())?;
        Ok(match *self {
            SystemSpec::Saddle { lambda } => -0.5 * lambda * q[0] * q[0],
            SystemSpec::Harmonic { m, omega } => 0.5 * m * omega * omega * q[0] * q[0],
            SystemSpec::ProtonTransfer {
                m,
                barrier,
                well,
                omega,
                coupling,
            } => {
                let (qx, qy) = (q[0], q[1]);
                let w2 = well * well;
                let mw2 = m * omega * omega;
                let shifted = qx - coupling * qy * qy / mw2;
                barrier / (w2 * w2) * qy * qy * (qy * qy - 2.0 * w2) + 0.5 * mw2 * shifted * shifted
            }
            SystemSpec::Duffing { .. } => {
                let x2 = q[0] * q[0];
                -0.5 * x2 + 0.25 * x2 * x2
            }
        })
    }

    /// `T(p) + V(q)`; for Duffing the function conserved when `σ = 0`.
    pub fn total_energy(&self, x: &PhaseState) -> Result<f64> {
        Ok(self.kinetic_energy(x.p())? + self.potential_energy(x.q())?)
    }

    /// Action integrand `p · q̇`, twice the kinetic energy along solutions.
    #[inline]
    pub(crate) fn action_rate(&self, x: &[f64; MAX_DIM], dof: usize) -> f64 {
        let v = self.rates(x);
        (0..dof).map(|i| x[dof + i] * v[i]).sum()
    }

    /// Jacobian of the vector field by central differences with step
    /// `1e-6 · max(1, |x_i|)`.
    pub fn jacobian(&self, x: &PhaseState) -> Result<DMatrix<f64>> {
        self.check_dof(x.dof())?;
        let dim = x.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let h = 1e-6 * x.raw()[col].abs().max(1.0);
            let mut plus = *x.raw();
            let mut minus = *x.raw();
            plus[col] += h;
            minus[col] -= h;
            let fp = self.rates(&plus);
            let fm = self.rates(&minus);
            for row in 0..dim {
                jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        Ok(jac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    /// Exactly one pair of real eigenvalues `±λ`, centres otherwise.
    Index1Saddle,
    Center,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: PhaseState,
    pub kind: EquilibriumKind,
    pub eigenvalues: Vec<Complex<f64>>,
}

/// Eigenvalues of the finite-difference Jacobian, sorted by real then
/// imaginary part.
pub fn linearised_eigenvalues(sys: &SystemSpec, x: &PhaseState) -> Result<Vec<Complex<f64>>> {
    let jac = sys.jacobian(x)?;
    let mut eig: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(eig)
}

fn classify(eigenvalues: &[Complex<f64>]) -> EquilibriumKind {
    let scale = eigenvalues.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let tol = 1e-6 * scale;
    let real = eigenvalues.iter().filter(|z| z.im.abs() <= tol && z.re.abs() > tol).count();
    let imaginary = eigenvalues.iter().filter(|z| z.re.abs() <= tol && z.im.abs() > tol).count();
    if real == 2 && imaginary + real == eigenvalues.len() {
        EquilibriumKind::Index1Saddle
    } else if imaginary == eigenvalues.len() {
        EquilibriumKind::Center
    } else {
        EquilibriumKind::Other
    }
}

/// Saddle eigenvalues of the proton-transfer model from the closed form
/// `±(2/y_w)√(V‡/m)` and `±iω`.
pub fn proton_transfer_saddle_eigenvalues(sys: &SystemSpec) -> Result<[Complex<f64>; 4]> {
    match *sys {
        SystemSpec::ProtonTransfer {
            m,
            barrier,
            well,
            omega,
            ..
        } => {
            let lam = 2.0 / well * (barrier / m).sqrt();
            Ok([
                Complex::new(-lam, 0.0),
                Complex::new(0.0, -omega),
                Complex::new(0.0, omega),
                Complex::new(lam, 0.0),
            ])
        }
        _ => Err(invalid("system", "expected the proton-transfer model")),
    }
}

/// The saddle at the origin and the two well-bottom centres.
pub fn proton_transfer_equilibria(sys: &SystemSpec) -> Result<Vec<Equilibrium>> {
    sys.validate()?;
    let SystemSpec::ProtonTransfer {
        m,
        well,
        omega,
        coupling,
        ..
    } = *sys
    else {
        return Err(invalid("system", "expected the proton-transfer model"));
    };
    let xc = coupling * well * well / (m * omega * omega);
    let states = [
        PhaseState::spatial(0.0, 0.0, 0.0, 0.0),
        PhaseState::spatial(xc, well, 0.0, 0.0),
        PhaseState::spatial(xc, -well, 0.0, 0.0),
    ];
    states
        .into_iter()
        .map(|state| {
            let eigenvalues = linearised_eigenvalues(sys, &state)?;
            Ok(Equilibrium {
                state,
                kind: classify(&eigenvalues),
                eigenvalues,
            })
        })
        .collect()
}

/// Exact flow of the linear saddle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleFlow {
    pub q: f64,
    pub p: f64,
    pub escaped: bool,
}

pub fn saddle_analytic_flow(lambda: f64, q0: f64, p0: f64, t: f64) -> SaddleFlow {
    // In the eigenbasis u = q + p, v = q − p the flow is diagonal, which
    // keeps points on the stable manifold free of cosh − sinh cancellation.
    let (u, v) = (q0 + p0, q0 - p0);
    let grow = if u == 0.0 { 0.0 } else { u * (lambda * t).exp() };
    let decay = if v == 0.0 { 0.0 } else { v * (-lambda * t).exp() };
    let q = 0.5 * (grow + decay);
    let p = 0.5 * (grow - decay);
    if q.is_finite() && p.is_finite() {
        SaddleFlow { q, p, escaped: false }
    } else {
        SaddleFlow {
            q: q0,
            p: p0,
            escaped: true,
        }
    }
}

fn saturate(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        ESCAPED_LD
    }
}

/// Forward action of the linear saddle over `[0, τ]`,
/// `(λ/2)(p₀² − q₀²)τ + (q₀² + p₀²) sinh(2λτ)/4 + q₀p₀ (cosh(2λτ) − 1)/2`.
///
/// Evaluated as `u²(e^x − 1)/8 − λuvτ/2 + v²(1 − e^{−x})/8` with
/// `u = q₀ + p₀`, `v = q₀ − p₀`, `x = 2λτ`, which is the same expression
/// without cancellation on the stable manifold.
pub fn saddle_forward_ld_closed_form(lambda: f64, q0: f64, p0: f64, tau: f64) -> f64 {
    let x = 2.0 * lambda * tau;
    let (u, v) = (q0 + p0, q0 - p0);
    let grow = if u == 0.0 { 0.0 } else { u * u * x.exp_m1() / 8.0 };
    let decay = if v == 0.0 { 0.0 } else { -v * v * (-x).exp_m1() / 8.0 };
    saturate(grow + decay - 0.5 * lambda * u * v * tau)
}

/// Forward plus backward action of the linear saddle,
/// `2τH₀ + (p₀² + q₀²) sinh(2λτ)/2`.
///
/// The backward leg from `(q₀, p₀)` is the forward leg from `(q₀, −p₀)`, so
/// this is exactly the sum of two forward closed forms.
pub fn saddle_total_ld_closed_form(lambda: f64, q0: f64, p0: f64, tau: f64) -> f64 {
    let h0 = 0.5 * lambda * (p0 * p0 - q0 * q0);
    saturate(2.0 * tau * h0 + 0.5 * (p0 * p0 + q0 * q0) * (2.0 * lambda * tau).sinh())
}

fn cosh_minus_one(x: f64) -> f64 {
    let h = (0.5 * x).sinh();
    2.0 * h * h
}

/// `sinh x − x` without cancellation for small `x`.
fn sinh_minus_x(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return x.sinh() - x;
    }
    let x2 = x * x;
    let mut term = x * x2 / 6.0;
    let mut sum = term;
    let mut k = 3.0;
    while term.abs() > f64::EPSILON * sum.abs() {
        term *= x2 / ((k + 1.0) * (k + 2.0));
        sum += term;
        k += 2.0;
    }
    sum
}

/// Slope of the forward-descriptor minimiser, `q₀ = −G(τ; λ) p₀`, with
/// `G = (cosh 2λτ − 1) / (sinh 2λτ − 2λτ)`.
pub fn saddle_g(tau: f64, lambda: f64) -> Result<f64> {
    if !(tau > 0.0) || !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "G(τ; λ) needs τ > 0 and λ > 0, got τ = {tau}, λ = {lambda}"
        )));
    }
    let x = 2.0 * lambda * tau;
    if x < 1.0 {
        Ok(cosh_minus_one(x) / sinh_minus_x(x))
    } else {
        // numerator and denominator divided by e^x / 2
        let e1 = (-x).exp();
        let e2 = e1 * e1;
        Ok((1.0 - 2.0 * e1 + e2) / (1.0 - e2 - 2.0 * x * e1))
    }
}

/// Integration time at which `e^{−2λτ} = 10^{−N}`.
pub fn saddle_convergence_time(lambda: f64, digits: u32) -> Result<f64> {
    if !(lambda > 0.0) || digits == 0 {
        return Err(Error::Domain(format!(
            "need λ > 0 and N ≥ 1, got λ = {lambda}, N = {digits}"
        )));
    }
    Ok(digits as f64 * std::f64::consts::LN_10 / (2.0 * lambda))
}

/// Forward action of the oscillator started from `(A, 0)` with energy `H₀`:
/// `H₀ (τ − sin(2ωτ) / 2ω)`. The mass only fixes the amplitude `A`.
pub fn harmonic_forward_ld_closed_form(m: f64, omega: f64, h0: f64, tau: f64) -> Result<f64> {
    if !(m > 0.0) || !(omega > 0.0) || !(h0 >= 0.0) || !(tau >= 0.0) {
        return Err(Error::Domain(format!(
            "need m, ω > 0 and H₀, τ ≥ 0; got m = {m}, ω = {omega}, H₀ = {h0}, τ = {tau}"
        )));
    }
    Ok(h0 * (tau - (2.0 * omega * tau).sin() / (2.0 * omega)))
}

/// Turning point `A = √(2H₀/m) / ω` of the oscillator at energy `H₀`.
pub fn harmonic_amplitude(m: f64, omega: f64, h0: f64) -> f64 {
    (2.0 * h0 / m).sqrt() / omega
}
