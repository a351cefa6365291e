//! Counter-propagating DFS protocol in the single-ancilla-photon picture.
//!
//! Flow: photons A, B, R → (collective noise, PBS port selection) → A, B′, R′
//! → parity check on (A, R′) → A′, B′, R″ with R″ read out in D/A.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{coherent_ancilla_threefold, Truncation};
use crate::polarization::{
    fidelity, pauli_z, DensityMatrix, FibreChannel, FibreLabel, Pol, StateVector,
};
use crate::rng::substream2;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Where a travelling photon leaves the receiving PBS.
///
/// The lower ports keep the fibre's intended polarization (H from the up
/// fibre, V from the down fibre); the upper ports collect the rotated part
/// and are discarded by post-selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortLevel {
    LowerH = 0,
    LowerV = 1,
    /// V component exiting the up fibre.
    UpperV = 2,
    /// H component exiting the down fibre.
    UpperH = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Modes A, B, R; each a polarization qubit.
    Initial,
    /// Modes A (qubit), B (4 port levels), R (4 port levels).
    PostNoise,
    /// Modes A, B′, R′; each a polarization qubit.
    PostPbs,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Initial => "initial",
            Stage::PostNoise => "post-noise",
            Stage::PostPbs => "post-PBS",
        }
    }

    fn dims(self) -> [usize; 3] {
        match self {
            Stage::Initial | Stage::PostPbs => [2, 2, 2],
            Stage::PostNoise => [2, 4, 4],
        }
    }

    pub fn labels(self) -> [&'static str; 3] {
        match self {
            Stage::Initial => ["A", "B", "R"],
            Stage::PostNoise => ["A", "B", "R"],
            Stage::PostPbs => ["A", "B'", "R'"],
        }
    }
}

/// Unnormalized pure state over the three photons, indexed
/// `a·(d_B d_R) + b·d_R + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolState {
    stage: Stage,
    amps: Vec<Complex64>,
}

impl ProtocolState {
    /// |Φ⁺⟩_AB ⊗ |D⟩_R
    pub fn initial() -> Self {
        let psi = StateVector::tensor(&[Pol::H.ket(), Pol::H.ket(), Pol::D.ket()]);
        let vv = StateVector::tensor(&[Pol::V.ket(), Pol::V.ket(), Pol::D.ket()]);
        let amps = psi
            .amplitudes()
            .iter()
            .zip(vv.amplitudes().iter())
            .map(|(a, b)| (a + b) * FRAC_1_SQRT_2)
            .collect();
        Self {
            stage: Stage::Initial,
            amps,
        }
    }

    /// Arbitrary three-qubit input on (A, B, R).
    pub fn from_initial(psi: &StateVector) -> Result<Self> {
        if psi.qubits() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: psi.qubits(),
            });
        }
        Ok(Self {
            stage: Stage::Initial,
            amps: psi.amplitudes().iter().copied().collect(),
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn amplitude(&self, a: usize, b: usize, r: usize) -> Complex64 {
        let [_, db, dr] = self.stage.dims();
        self.amps[a * db * dr + b * dr + r]
    }

    fn expect(&self, stage: Stage) -> Result<()> {
        if self.stage == stage {
            Ok(())
        } else {
            Err(Error::Stage {
                expected: stage.name(),
                got: self.stage.name(),
            })
        }
    }

    /// Three-qubit view once the state is back on qubits.
    pub fn to_state_vector(&self) -> Result<StateVector> {
        if self.stage == Stage::PostNoise {
            return Err(Error::Stage {
                expected: "qubit stage",
                got: self.stage.name(),
            });
        }
        StateVector::from_amplitudes(3, self.amps.clone())
    }
}

/// Port-level amplitudes for one photon polarization crossing the fibre
/// pair: H is routed through `up`, V through `down`.
fn port_amplitudes(pol: usize, up: &[[Complex64; 2]; 2], down: &[[Complex64; 2]; 2]) -> [Complex64; 4] {
    // m[i][j]: amplitude from input polarization i to output polarization j
    let mut out = [C0; 4];
    if pol == 0 {
        out[PortLevel::LowerH as usize] = up[0][0];
        out[PortLevel::UpperV as usize] = up[0][1];
    } else {
        out[PortLevel::LowerV as usize] = down[1][1];
        out[PortLevel::UpperH as usize] = down[1][0];
    }
    out
}

fn transfer(j: &crate::polarization::Jones) -> [[Complex64; 2]; 2] {
    // j[(to, from)] -> m[from][to]
    [[j[(0, 0)], j[(1, 0)]], [j[(0, 1)], j[(1, 1)]]]
}

/// B travels forward and R backward through the same pair of fibres.
pub fn apply_collective_noise(
    input: &ProtocolState,
    up: &FibreChannel,
    down: &FibreChannel,
) -> Result<ProtocolState> {
    input.expect(Stage::Initial)?;
    if up.label() != FibreLabel::Up || down.label() != FibreLabel::Down {
        return Err(Error::InvalidParameter("fibre labels must be (Up, Down)".into()));
    }
    let fwd = (transfer(up.forward()), transfer(down.forward()));
    let bwd = (transfer(&up.backward()), transfer(&down.backward()));
    let b_map = [port_amplitudes(0, &fwd.0, &fwd.1), port_amplitudes(1, &fwd.0, &fwd.1)];
    let r_map = [port_amplitudes(0, &bwd.0, &bwd.1), port_amplitudes(1, &bwd.0, &bwd.1)];

    let mut amps = vec![C0; 2 * 4 * 4];
    for a in 0..2 {
        for (b, b_ports) in b_map.iter().enumerate() {
            for (r, r_ports) in r_map.iter().enumerate() {
                let c = input.amplitude(a, b, r);
                if c == C0 {
                    continue;
                }
                for (pb, &x) in b_ports.iter().enumerate() {
                    for (pr, &y) in r_ports.iter().enumerate() {
                        amps[a * 16 + pb * 4 + pr] += c * x * y;
                    }
                }
            }
        }
    }
    Ok(ProtocolState {
        stage: Stage::PostNoise,
        amps,
    })
}

/// Keeps only lower-port components; the port level fixes the polarization.
pub fn post_pbs_select(state: &ProtocolState) -> Result<ProtocolState> {
    state.expect(Stage::PostNoise)?;
    let mut amps = vec![C0; 8];
    for a in 0..2 {
        for b in 0..2 {
            for r in 0..2 {
                amps[a * 4 + b * 2 + r] = state.amplitude(a, b, r);
            }
        }
    }
    Ok(ProtocolState {
        stage: Stage::PostPbs,
        amps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpcOutcome {
    pub success: bool,
    /// Analyzer result on R″ for successful events.
    pub herald: Option<Pol>,
    /// Normalized conditional state on (A′, B′); `None` at zero probability.
    pub conditional_state: Option<DensityMatrix>,
    pub probability: f64,
}

/// Parity-check Kraus operator K on (A, R′) as a 4×4 matrix in the
/// (HH, HV, VH, VV) basis, mapping to (A′, R″).
pub fn kraus_success() -> DMatrix<Complex64> {
    let mut k = DMatrix::zeros(4, 4);
    k[(0, 1)] = Complex64::new(1.0, 0.0);
    k[(3, 2)] = Complex64::new(1.0, 0.0);
    k
}

/// Failure branch: projector onto span{HH, VV}.
pub fn kraus_failure() -> DMatrix<Complex64> {
    let mut k = DMatrix::zeros(4, 4);
    k[(0, 0)] = Complex64::new(1.0, 0.0);
    k[(3, 3)] = Complex64::new(1.0, 0.0);
    k
}

fn conditional(amps: &[Complex64; 4], prob: f64) -> Result<Option<DensityMatrix>> {
    if prob <= 0.0 {
        return Ok(None);
    }
    let psi = StateVector::from_amplitudes(2, amps.to_vec())?;
    Ok(Some(psi.projector().normalized()?))
}

/// Outcomes in order: success with herald D, success with herald A, failure.
pub fn quantum_parity_check(state: &ProtocolState) -> Result<Vec<QpcOutcome>> {
    state.expect(Stage::PostPbs)?;
    let k = kraus_success();
    let kbar = kraus_failure();
    // success: (A′, B′, R″) amplitudes; failure: projected (A, B′, R′)
    let mut out_k = [[[C0; 2]; 2]; 2];
    let mut kept = [[[C0; 2]; 2]; 2];
    for b in 0..2 {
        let v = nalgebra::DVector::from_fn(4, |i, _| state.amplitude(i / 2, b, i % 2));
        let kv = &k * &v;
        let fv = &kbar * &v;
        for i in 0..4 {
            out_k[i / 2][b][i % 2] = kv[i];
            kept[i / 2][b][i % 2] = fv[i];
        }
    }
    // failure keeps labels; R′ is traced out
    let fail_rho = DMatrix::from_fn(4, 4, |row, col| {
        let (a, b, a2, b2) = (row / 2, row % 2, col / 2, col % 2);
        (0..2).map(|r| kept[a][b][r] * kept[a2][b2][r].conj()).sum::<Complex64>()
    });

    let mut outcomes = Vec::with_capacity(3);
    for herald in [Pol::D, Pol::A] {
        let e = herald.ket();
        let mut amps = [C0; 4];
        for a in 0..2 {
            for b in 0..2 {
                amps[a * 2 + b] =
                    e.amps[0].conj() * out_k[a][b][0] + e.amps[1].conj() * out_k[a][b][1];
            }
        }
        let prob: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        outcomes.push(QpcOutcome {
            success: true,
            herald: Some(herald),
            conditional_state: conditional(&amps, prob)?,
            probability: prob,
        });
    }
    let fail_prob = fail_rho.trace().re;
    let fail_state = if fail_prob > 0.0 {
        Some(DensityMatrix::from_matrix_unchecked(fail_rho)?.normalized()?)
    } else {
        None
    };
    outcomes.push(QpcOutcome {
        success: false,
        herald: None,
        conditional_state: fail_state,
        probability: fail_prob,
    });
    Ok(outcomes)
}

/// Z on A′ after herald A, identity after herald D.
pub fn correct_phase(outcome: &QpcOutcome) -> Result<DensityMatrix> {
    if !outcome.success {
        return Err(Error::FailedOutcome);
    }
    let rho = outcome
        .conditional_state
        .as_ref()
        .ok_or(Error::ZeroProbability)?;
    match outcome.herald {
        Some(Pol::A) => rho.apply_local(&pauli_z(), 0),
        Some(Pol::D) => Ok(rho.clone()),
        other => Err(Error::InvalidParameter(format!("herald {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub success_probability: f64,
    /// |α_H|²|β_V|²/2 read off the channels.
    pub expected_success: f64,
    /// Fidelity to Φ⁺ after correction, per herald (D, A).
    pub fidelities: [Option<f64>; 2],
    pub outcomes: Vec<QpcOutcome>,
}

/// Runs the full protocol on |Φ⁺⟩ ⊗ |D⟩ through the given channels.
pub fn run_protocol(up: &FibreChannel, down: &FibreChannel) -> Result<ProtocolRun> {
    let noisy = apply_collective_noise(&ProtocolState::initial(), up, down)?;
    let selected = post_pbs_select(&noisy)?;
    let outcomes = quantum_parity_check(&selected)?;
    let phi = StateVector::phi_plus();
    let mut fidelities = [None, None];
    for (i, o) in outcomes.iter().take(2).enumerate() {
        if o.probability > 0.0 {
            fidelities[i] = Some(fidelity(&correct_phase(o)?, &phi)?);
        }
    }
    let alpha = up.forward()[(0, 0)].norm_sqr();
    let beta = down.forward()[(1, 1)].norm_sqr();
    Ok(ProtocolRun {
        success_probability: outcomes[0].probability + outcomes[1].probability,
        expected_success: alpha * beta / 2.0,
        fidelities,
        outcomes,
    })
}

/// Haar-random rotation with an amplitude loss factor √t, t ~ U[0.1, 1].
pub fn sample_channel_pair(root_seed: u64, trial: u64) -> (FibreChannel, FibreChannel) {
    use rand::Rng;
    let mut rng = substream2(root_seed, 0xDF5, trial);
    let tu = rng.random_range(0.1..=1.0);
    let td = rng.random_range(0.1..=1.0);
    (
        FibreChannel::haar_random(&mut rng, tu, FibreLabel::Up),
        FibreChannel::haar_random(&mut rng, td, FibreLabel::Down),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ancilla {
    SinglePhoton,
    /// Coherent ancilla launched with mean μ/T.
    CoherentCompensated { mu: f64 },
}

impl Ancilla {
    pub fn name(&self) -> &'static str {
        match self {
            Ancilla::SinglePhoton => "single_photon",
            Ancilla::CoherentCompensated { .. } => "coherent_compensated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Random channel trials averaged per T for the single-photon ancilla.
    pub trials: usize,
    /// Largest launched coherent mean μ/T accepted.
    pub max_launch_mean: f64,
    /// Threshold-detector efficiency for the coherent variant.
    pub detector_efficiency: f64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            max_launch_mean: 1.0,
            detector_efficiency: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub transmittance: f64,
    pub ancilla: Ancilla,
    pub success_rate: f64,
    pub trials: usize,
}

/// Heralded success rate per fibre transmittance.
///
/// Each single-photon trial draws Haar-random rotations for both fibres
/// and scales them by √T; the same rotations are reused across the grid.
pub fn scaling_experiment(
    t_grid: &[f64],
    ancilla: Ancilla,
    opts: &ScalingOptions,
) -> Result<Vec<ScalingRow>> {
    for &t in t_grid {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParameter(format!("transmittance {t} outside (0, 1]")));
        }
    }
    match ancilla {
        Ancilla::SinglePhoton => {
            if opts.trials == 0 {
                return Err(Error::InvalidParameter("trials must be positive".into()));
            }
            let rotations: Vec<(FibreChannel, FibreChannel)> = (0..opts.trials as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = substream2(opts.seed, 0x5CA1E, i);
                    (
                        FibreChannel::haar_random(&mut rng, 1.0, FibreLabel::Up),
                        FibreChannel::haar_random(&mut rng, 1.0, FibreLabel::Down),
                    )
                })
                .collect();
            t_grid
                .iter()
                .map(|&t| {
                    let rates: Vec<f64> = rotations
                        .par_iter()
                        .map(|(u, d)| -> Result<f64> {
                            let u = u.scaled(t.sqrt())?;
                            let d = d.scaled(t.sqrt())?;
                            Ok(run_protocol(&u, &d)?.success_probability)
                        })
                        .collect::<Result<_>>()?;
                    Ok(ScalingRow {
                        transmittance: t,
                        ancilla,
                        success_rate: rates.iter().sum::<f64>() / rates.len() as f64,
                        trials: opts.trials,
                    })
                })
                .collect()
        }
        Ancilla::CoherentCompensated { mu } => {
            if !(mu > 0.0) {
                return Err(Error::InvalidParameter(format!("mu = {mu}")));
            }
            let trunc = Truncation::default();
            t_grid
                .iter()
                .map(|&t| {
                    let launch = mu / t;
                    if launch > opts.max_launch_mean {
                        return Err(Error::InvalidParameter(format!(
                            "launched mean {launch} exceeds bound {}",
                            opts.max_launch_mean
                        )));
                    }
                    let p = coherent_ancilla_threefold(t, launch, opts.detector_efficiency, &trunc)?;
                    Ok(ScalingRow {
                        transmittance: t,
                        ancilla,
                        success_rate: p,
                        trials: 1,
                    })
                })
                .collect()
        }
    }
}

/// Least-squares slope of ln(rate) against ln(T).
pub fn log_log_slope(rows: &[ScalingRow]) -> Result<f64> {
    if rows.len() < 2 || rows.iter().any(|r| r.success_rate <= 0.0) {
        return Err(Error::Undefined("slope needs ≥ 2 positive rates".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.transmittance.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.success_rate.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("all transmittances equal".into()));
    }
    Ok(sxy / sxx)
}
