//! Polarization-qubit algebra.
//!
//! Basis order is fixed throughout the crate: index 0 is H, index 1 is V.
//! Multi-qubit states use the big-endian tensor convention, so qubit 0 is
//! the most significant bit of the basis index (|HV⟩ is index 1, |VH⟩ is 2).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Jones = Matrix2<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Analyzer alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];

    pub fn ket(self) -> PolarizationKet {
        let s = FRAC_1_SQRT_2;
        let amps = match self {
            Pol::H => [C1, C0],
            Pol::V => [C0, C1],
            Pol::D => [Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
            Pol::A => [Complex64::new(s, 0.0), Complex64::new(-s, 0.0)],
            Pol::R => [Complex64::new(s, 0.0), Complex64::new(0.0, s)],
            Pol::L => [Complex64::new(s, 0.0), Complex64::new(0.0, -s)],
        };
        PolarizationKet { amps }
    }

    /// Complex-conjugate polarization (R and L swap, linear states are real).
    pub fn conj(self) -> Pol {
        match self {
            Pol::R => Pol::L,
            Pol::L => Pol::R,
            p => p,
        }
    }

    pub fn orthogonal(self) -> Pol {
        match self {
            Pol::H => Pol::V,
            Pol::V => Pol::H,
            Pol::D => Pol::A,
            Pol::A => Pol::D,
            Pol::R => Pol::L,
            Pol::L => Pol::R,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            Pol::H | Pol::V => Basis::Z,
            Pol::D | Pol::A => Basis::X,
            Pol::R | Pol::L => Basis::Y,
        }
    }

    /// 0 for the first state of its basis (H, D, R), 1 for the second.
    pub fn index_in_basis(self) -> usize {
        match self {
            Pol::H | Pol::D | Pol::R => 0,
            Pol::V | Pol::A | Pol::L => 1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pol::H => 'H',
            Pol::V => 'V',
            Pol::D => 'D',
            Pol::A => 'A',
            Pol::R => 'R',
            Pol::L => 'L',
        }
    }
}

impl fmt::Display for Pol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for Pol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(Pol::H),
            "V" | "v" => Ok(Pol::V),
            "D" | "d" => Ok(Pol::D),
            "A" | "a" => Ok(Pol::A),
            "R" | "r" => Ok(Pol::R),
            "L" | "l" => Ok(Pol::L),
            other => Err(Error::Format(format!("unknown polarization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];

    pub fn states(self) -> [Pol; 2] {
        match self {
            Basis::Z => [Pol::H, Pol::V],
            Basis::X => [Pol::D, Pol::A],
            Basis::Y => [Pol::R, Pol::L],
        }
    }
}

/// Single-photon polarization amplitudes over (H, V).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationKet {
    pub amps: [Complex64; 2],
}

impl PolarizationKet {
    pub fn new(h: Complex64, v: Complex64) -> Self {
        Self { amps: [h, v] }
    }

    pub fn norm(&self) -> f64 {
        (self.amps[0].norm_sqr() + self.amps[1].norm_sqr()).sqrt()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidParameter("cannot normalize a zero ket".into()));
        }
        Ok(Self {
            amps: [self.amps[0] / n, self.amps[1] / n],
        })
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps[0].conj() * other.amps[0] + self.amps[1].conj() * other.amps[1]
    }

    /// A unit ket orthogonal to `self` (assumes `self` is normalized).
    pub fn orthogonal(&self) -> Self {
        Self {
            amps: [-self.amps[1].conj(), self.amps[0].conj()],
        }
    }

    pub fn apply(&self, jones: &Jones) -> Self {
        Self {
            amps: [
                jones[(0, 0)] * self.amps[0] + jones[(0, 1)] * self.amps[1],
                jones[(1, 0)] * self.amps[0] + jones[(1, 1)] * self.amps[1],
            ],
        }
    }
}

/// Pure n-qubit polarization state (possibly unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    qubits: usize,
    amps: DVector<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        let expected = 1usize << qubits;
        if amps.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: amps.len(),
            });
        }
        Ok(Self {
            qubits,
            amps: DVector::from_vec(amps),
        })
    }

    pub fn tensor(kets: &[PolarizationKet]) -> Self {
        let mut amps = vec![C1];
        for k in kets {
            amps = amps
                .iter()
                .flat_map(|a| [a * k.amps[0], a * k.amps[1]])
                .collect();
        }
        Self {
            qubits: kets.len(),
            amps: DVector::from_vec(amps),
        }
    }

    /// (|HH⟩ + e^{iθ}|VV⟩)/√2
    pub fn bell_phi(theta: f64) -> Self {
        let mut amps = vec![C0; 4];
        amps[0] = Complex64::new(FRAC_1_SQRT_2, 0.0);
        amps[3] = Complex64::from_polar(FRAC_1_SQRT_2, theta);
        Self {
            qubits: 2,
            amps: DVector::from_vec(amps),
        }
    }

    pub fn phi_plus() -> Self {
        Self::bell_phi(0.0)
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps.dotc(&other.amps)
    }

    pub fn projector(&self) -> DensityMatrix {
        let m = &self.amps * self.amps.adjoint();
        DensityMatrix {
            qubits: self.qubits,
            matrix: m,
        }
    }
}

/// Hermitian, positive semi-definite 2ⁿ×2ⁿ matrix with trace ≤ 1.
///
/// Heralded (unnormalized) states are allowed; [`DensityMatrix::is_normalized`]
/// distinguishes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    qubits: usize,
    matrix: DMatrix<Complex64>,
}

pub const HERMITIAN_TOL: f64 = 1e-10;

impl DensityMatrix {
    /// Validates hermiticity, trace in (0, 1] and eigenvalues ≥ −1e-10.
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(matrix)?;
        rho.validate(HERMITIAN_TOL)?;
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || !dim.is_power_of_two() || dim < 2 {
            return Err(Error::InvalidState(format!(
                "matrix is {}x{}, need square 2^n",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            qubits: dim.trailing_zeros() as usize,
            matrix,
        })
    }

    pub fn maximally_mixed(qubits: usize) -> Self {
        let dim = 1usize << qubits;
        Self {
            qubits,
            matrix: DMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0),
        }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn is_normalized(&self) -> bool {
        (self.trace().re - 1.0).abs() <= HERMITIAN_TOL
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.dim();
        for i in 0..n {
            for j in i..n {
                let d = self.matrix[(i, j)] - self.matrix[(j, i)].conj();
                if d.norm() > tol {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({i},{j}), deviation {:e}",
                        d.norm()
                    )));
                }
            }
        }
        let tr = self.trace();
        if tr.im.abs() > tol || tr.re <= 0.0 || tr.re > 1.0 + tol {
            return Err(Error::InvalidState(format!("trace {tr} outside (0, 1]")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = hermitian_part(&self.matrix);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Copy scaled to unit trace.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidState("zero trace".into()));
        }
        Ok(Self {
            qubits: self.qubits,
            matrix: self.matrix.map(|z| z / tr),
        })
    }

    /// ρ → U ρ U† with `op` acting on `qubit` alone.
    pub fn apply_local(&self, op: &Jones, qubit: usize) -> Result<Self> {
        if qubit >= self.qubits {
            return Err(Error::InvalidMode {
                index: qubit,
                len: self.qubits,
            });
        }
        let full = embed_local(op, qubit, self.qubits);
        Ok(Self {
            qubits: self.qubits,
            matrix: &full * &self.matrix * full.adjoint(),
        })
    }

    /// Tr(O ρ)
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Result<Complex64> {
        if op.nrows() != self.dim() || op.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: op.nrows(),
            });
        }
        Ok((op * &self.matrix).trace())
    }
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Full 2ⁿ×2ⁿ operator for a single-qubit `op` on `qubit`.
pub fn embed_local(op: &Jones, qubit: usize, qubits: usize) -> DMatrix<Complex64> {
    let mut full = DMatrix::from_element(1, 1, C1);
    for q in 0..qubits {
        let factor = if q == qubit {
            DMatrix::from_fn(2, 2, |r, c| op[(r, c)])
        } else {
            DMatrix::identity(2, 2)
        };
        full = full.kronecker(&factor);
    }
    full
}

/// Density matrix of (|HH⟩ + e^{iθ}|VV⟩)/√2.
pub fn bell_phi(theta: f64) -> DensityMatrix {
    StateVector::bell_phi(theta).projector()
}

/// ⟨ψ|ρ|ψ⟩ for a pure target.
pub fn fidelity(rho: &DensityMatrix, target: &StateVector) -> Result<f64> {
    if rho.qubits() != target.qubits() {
        return Err(Error::DimensionMismatch {
            expected: rho.qubits(),
            got: target.qubits(),
        });
    }
    let psi = target.amplitudes();
    let v = (psi.adjoint() * rho.matrix() * psi)[(0, 0)];
    debug_assert!(v.im.abs() < 1e-9, "imaginary residue {}", v.im);
    Ok(v.re)
}

/// Principal square root of a positive semi-definite Hermitian matrix.
pub fn psd_sqrt(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = hermitian_part(m).symmetric_eigen();
    let d = eig
        .eigenvalues
        .map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

/// Uhlmann fidelity (Tr √(√ρ σ √ρ))², squared convention.
pub fn state_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: sigma.dim(),
        });
    }
    let s = psd_sqrt(rho.matrix());
    let inner = &s * sigma.matrix() * &s;
    let eig = hermitian_part(&inner).symmetric_eigenvalues();
    let tr: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok(tr * tr)
}

/// ½‖ρ − σ‖₁
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: sigma.dim(),
        });
    }
    let diff = hermitian_part(&(rho.matrix() - sigma.matrix()));
    Ok(0.5 * diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>())
}

pub fn pauli_z() -> Jones {
    Jones::new(C1, C0, C0, -C1)
}

/// Half-wave plate with its fast axis at `angle` from H.
pub fn half_wave_plate(angle: f64) -> Jones {
    let (s, c) = (2.0 * angle).sin_cos();
    Jones::new(
        Complex64::new(c, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(-c, 0.0),
    )
}

/// Quarter-wave plate with its fast axis at `angle` from H.
pub fn quarter_wave_plate(angle: f64) -> Jones {
    let (s, c) = angle.sin_cos();
    let i = Complex64::i();
    Jones::new(
        c * c + i * s * s,
        (C1 - i) * s * c,
        (C1 - i) * s * c,
        s * s + i * c * c,
    )
}

pub fn is_unitary(m: &Jones, tol: f64) -> bool {
    let p = m.adjoint() * m;
    (p - Jones::identity()).iter().all(|z| z.norm() <= tol)
}

/// Largest singular value of a 2×2 complex matrix.
pub fn max_singular_value(m: &Jones) -> f64 {
    let g = m.adjoint() * m;
    let mean = 0.5 * (g[(0, 0)].re + g[(1, 1)].re);
    let half_diff = 0.5 * (g[(0, 0)].re - g[(1, 1)].re);
    let lmax = mean + half_diff.hypot(g[(0, 1)].norm());
    lmax.max(0.0).sqrt()
}

/// Haar-random 2×2 unitary from a normalized complex Gaussian matrix.
pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R) -> Jones {
    let mut g = || {
        Complex64::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    };
    let m = Jones::new(g(), g(), g(), g());
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix the phases of R's diagonal so the distribution is exactly Haar
    let ph = |z: Complex64| if z.norm() > 0.0 { z / z.norm() } else { C1 };
    let lambda = Jones::new(ph(r[(0, 0)]), C0, C0, ph(r[(1, 1)]));
    q * lambda
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FibreLabel {
    /// SMF↑, carries B's H component forward and R's H component backward.
    Up,
    /// SMF↓, carries the V components.
    Down,
}

/// A lossy fibre: forward Jones matrix; backward is its transpose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FibreChannel {
    forward: Jones,
    label: FibreLabel,
}

impl FibreChannel {
    pub fn new(forward: Jones, label: FibreLabel) -> Result<Self> {
        let smax = max_singular_value(&forward);
        if !smax.is_finite() || smax > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "fibre Jones matrix has singular value {smax} > 1"
            )));
        }
        Ok(Self { forward, label })
    }

    pub fn identity(label: FibreLabel) -> Self {
        Self {
            forward: Jones::identity(),
            label,
        }
    }

    /// Haar-random rotation with amplitude transmission √transmittance.
    pub fn haar_random<R: Rng + ?Sized>(rng: &mut R, transmittance: f64, label: FibreLabel) -> Self {
        let u = haar_unitary(rng);
        Self {
            forward: u * Complex64::new(transmittance.clamp(0.0, 1.0).sqrt(), 0.0),
            label,
        }
    }

    pub fn forward(&self) -> &Jones {
        &self.forward
    }

    /// Reciprocal backward matrix.
    pub fn backward(&self) -> Jones {
        self.forward.transpose()
    }

    pub fn label(&self) -> FibreLabel {
        self.label
    }

    /// Amplitude for input polarization `from` to exit with polarization `to`,
    /// forward direction.
    pub fn forward_amplitude(&self, from: usize, to: usize) -> Complex64 {
        self.forward[(to, from)]
    }

    pub fn backward_amplitude(&self, from: usize, to: usize) -> Complex64 {
        self.forward[(from, to)]
    }

    pub fn scaled(&self, amplitude: f64) -> Result<Self> {
        Self::new(self.forward * Complex64::new(amplitude, 0.0), self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpticalElement {
    HalfWavePlate { angle: f64 },
    QuarterWavePlate { angle: f64 },
    /// Transmits H, reflects V.
    Pbs,
    /// 50:50 non-polarizing beamsplitter.
    Hbs,
    GlassPlate { reflectance: f64 },
}

impl OpticalElement {
    pub fn ports(&self) -> usize {
        match self {
            OpticalElement::HalfWavePlate { .. } | OpticalElement::QuarterWavePlate { .. } => 1,
            _ => 2,
        }
    }

    /// Jones matrix for single-port elements.
    pub fn jones(&self) -> Option<Jones> {
        match *self {
            OpticalElement::HalfWavePlate { angle } => Some(half_wave_plate(angle)),
            OpticalElement::QuarterWavePlate { angle } => Some(quarter_wave_plate(angle)),
            _ => None,
        }
    }
}

/// Field (or single-photon) amplitudes over spatial ports × {H, V}.
#[derive(Debug, Clone, PartialEq)]
pub struct PortAmplitudes {
    pub ports: Vec<PolarizationKet>,
}

impl PortAmplitudes {
    pub fn new(ports: Vec<PolarizationKet>) -> Self {
        Self { ports }
    }

    pub fn power(&self) -> f64 {
        self.ports.iter().map(|k| k.norm().powi(2)).sum()
    }

    pub fn port_power(&self, port: usize) -> f64 {
        self.ports[port].norm().powi(2)
    }
}

/// Applies `element` to the listed ports. Two-port elements take
/// `[transmitted_in, reflected_in]` and write back in the same order.
pub fn apply_element(
    state: &PortAmplitudes,
    element: &OpticalElement,
    ports: &[usize],
) -> Result<PortAmplitudes> {
    if ports.len() != element.ports() {
        return Err(Error::DimensionMismatch {
            expected: element.ports(),
            got: ports.len(),
        });
    }
    for &p in ports {
        if p >= state.ports.len() {
            return Err(Error::InvalidMode {
                index: p,
                len: state.ports.len(),
            });
        }
    }
    if ports.len() == 2 && ports[0] == ports[1] {
        return Err(Error::InvalidParameter("two-port element needs distinct ports".into()));
    }
    let mut out = state.clone();
    match *element {
        OpticalElement::HalfWavePlate { .. } | OpticalElement::QuarterWavePlate { .. } => {
            let j = element.jones().expect("single-port element");
            out.ports[ports[0]] = state.ports[ports[0]].apply(&j);
        }
        OpticalElement::Pbs => {
            let (a, b) = (state.ports[ports[0]], state.ports[ports[1]]);
            out.ports[ports[0]] = PolarizationKet::new(a.amps[0], b.amps[1]);
            out.ports[ports[1]] = PolarizationKet::new(b.amps[0], a.amps[1]);
        }
        OpticalElement::Hbs => {
            let (a, b) = (state.ports[ports[0]], state.ports[ports[1]]);
            let s = FRAC_1_SQRT_2;
            out.ports[ports[0]] = PolarizationKet::new(
                (a.amps[0] + b.amps[0]) * s,
                (a.amps[1] + b.amps[1]) * s,
            );
            out.ports[ports[1]] = PolarizationKet::new(
                (a.amps[0] - b.amps[0]) * s,
                (a.amps[1] - b.amps[1]) * s,
            );
        }
        OpticalElement::GlassPlate { reflectance } => {
            if !(0.0..=1.0).contains(&reflectance) {
                return Err(Error::InvalidParameter(format!(
                    "reflectance {reflectance} outside [0, 1]"
                )));
            }
            let (a, b) = (state.ports[ports[0]], state.ports[ports[1]]);
            let r = reflectance.sqrt();
            let t = (1.0 - reflectance).sqrt();
            out.ports[ports[0]] =
                PolarizationKet::new(a.amps[0] * t + b.amps[0] * r, a.amps[1] * t + b.amps[1] * r);
            out.ports[ports[1]] =
                PolarizationKet::new(a.amps[0] * r - b.amps[0] * t, a.amps[1] * r - b.amps[1] * t);
        }
    }
    Ok(out)
}
