//! Two-qubit polarization tomography with iterative maximum likelihood.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{fidelity, Basis, DensityMatrix, Pol, StateVector};
use crate::rng::substream2;

type M4 = Matrix4<Complex64>;
type V4 = Vector4<Complex64>;

/// Floor applied to model probabilities inside the likelihood and R(ρ).
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub m: Pol,
    pub n: Pol,
}

impl MeasurementSetting {
    pub fn new(m: Pol, n: Pol) -> Self {
        Self { m, n }
    }

    fn ket(&self) -> V4 {
        let a = self.m.ket().amps;
        let b = self.n.ket().amps;
        V4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    }

    pub fn projector(&self) -> DMatrix<Complex64> {
        let k = self.ket();
        DMatrix::from_fn(4, 4, |i, j| k[i] * k[j].conj())
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.m, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingSet {
    /// All 36 analyzer pairs, grouped into 9 complete bases.
    #[default]
    Overcomplete36,
    /// The 16-setting minimal set.
    Minimal16,
}

impl SettingSet {
    pub fn settings(self) -> Vec<MeasurementSetting> {
        match self {
            SettingSet::Overcomplete36 => analyzer_groups().into_iter().flatten().collect(),
            SettingSet::Minimal16 => {
                use Pol::*;
                [
                    (H, H),
                    (H, V),
                    (V, V),
                    (V, H),
                    (R, H),
                    (R, V),
                    (D, V),
                    (D, H),
                    (D, R),
                    (D, D),
                    (R, D),
                    (H, D),
                    (V, D),
                    (V, L),
                    (H, L),
                    (R, L),
                ]
                .into_iter()
                .map(|(m, n)| MeasurementSetting::new(m, n))
                .collect()
            }
        }
    }
}

/// The 9 complete analyzer groups, 4 outcomes each.
pub fn analyzer_groups() -> Vec<[MeasurementSetting; 4]> {
    let mut out = Vec::with_capacity(9);
    for b1 in Basis::ALL {
        for b2 in Basis::ALL {
            let [p, q] = b1.states();
            let [r, s] = b2.states();
            out.push([
                MeasurementSetting::new(p, r),
                MeasurementSetting::new(p, s),
                MeasurementSetting::new(q, r),
                MeasurementSetting::new(q, s),
            ]);
        }
    }
    out
}

/// Observed counts per setting. Counts are integers for sampled data;
/// exact-probability data may carry fractional weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TomographyData {
    pub entries: Vec<(MeasurementSetting, f64)>,
}

impl TomographyData {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Expected counts `scale · Tr(Π ρ)` for every setting.
    pub fn exact(rho: &DensityMatrix, set: SettingSet, scale: f64) -> Result<Self> {
        check_two_qubit(rho)?;
        let r = to_m4(rho.matrix());
        Ok(Self {
            entries: set
                .settings()
                .into_iter()
                .map(|s| (s, scale * prob(&r, &s.ket())))
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,n,count\n");
        for (set, c) in &self.entries {
            if c.fract() == 0.0 {
                let _ = writeln!(s, "{},{},{}", set.m, set.n, *c as u64);
            } else {
                let _ = writeln!(s, "{},{},{c:e}", set.m, set.n);
            }
        }
        s
    }

    /// Parses `m,n,count` lines; `#` comments and a header line are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("m,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!("line {}: expected m,n,count", lineno + 1)));
            }
            let count: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad count", lineno + 1)))?;
            if !(count >= 0.0 && count.is_finite()) {
                return Err(Error::Format(format!("line {}: negative count", lineno + 1)));
            }
            entries.push((
                MeasurementSetting::new(fields[0].parse()?, fields[1].parse()?),
                count,
            ));
        }
        Ok(Self { entries })
    }
}

fn check_two_qubit(rho: &DensityMatrix) -> Result<()> {
    if rho.qubits() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: rho.qubits(),
        });
    }
    Ok(())
}

fn to_m4(m: &DMatrix<Complex64>) -> M4 {
    M4::from_fn(|i, j| m[(i, j)])
}

fn prob(rho: &M4, k: &V4) -> f64 {
    (k.adjoint() * rho * k)[(0, 0)].re
}

/// Multinomial counts within each complete group (binomial per setting for
/// the minimal set).
pub fn simulate_counts(
    rho: &DensityMatrix,
    set: SettingSet,
    shots: u64,
    seed: u64,
) -> Result<TomographyData> {
    check_two_qubit(rho)?;
    rho.validate(1e-10)?;
    let rho = rho.normalized()?;
    let r = to_m4(rho.matrix());
    let mut rng = substream2(seed, 0x70E0, 0);
    let mut entries = Vec::new();
    let binom = |rng: &mut rand_chacha::ChaCha8Rng, n: u64, p: f64| -> Result<u64> {
        let p = p.clamp(0.0, 1.0);
        Binomial::new(n, p)
            .map(|d| d.sample(rng))
            .map_err(|e| Error::InvalidParameter(e.to_string()))
    };
    match set {
        SettingSet::Overcomplete36 => {
            for group in analyzer_groups() {
                let probs: Vec<f64> = group.iter().map(|s| prob(&r, &s.ket()).max(0.0)).collect();
                let mut left = shots;
                let mut mass = probs.iter().sum::<f64>();
                for (i, s) in group.iter().enumerate() {
                    let c = if i + 1 == group.len() {
                        left
                    } else if mass <= 0.0 {
                        0
                    } else {
                        binom(&mut rng, left, probs[i] / mass)?
                    };
                    left -= c;
                    mass -= probs[i];
                    entries.push((*s, c as f64));
                }
            }
        }
        SettingSet::Minimal16 => {
            for s in set.settings() {
                let c = binom(&mut rng, shots, prob(&r, &s.ket()))?;
                entries.push((s, c as f64));
            }
        }
    }
    Ok(TomographyData { entries })
}

/// True when the setting projectors span the full 16-dimensional operator space.
pub fn is_informationally_complete(settings: &[MeasurementSetting]) -> bool {
    operator_rank(settings) == 16
}

fn operator_rank(settings: &[MeasurementSetting]) -> usize {
    if settings.is_empty() {
        return 0;
    }
    let cols: Vec<DMatrix<Complex64>> = settings.iter().map(|s| s.projector()).collect();
    let m = DMatrix::from_fn(16, cols.len(), |i, j| cols[j][(i / 4, i % 4)]);
    let sv = m.svd(false, false).singular_values;
    sv.iter().filter(|&&x| x > 1e-9).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first step and after every step.
    pub log_likelihood: Vec<f64>,
}

struct Problem {
    kets: Vec<V4>,
    counts: Vec<f64>,
    total: f64,
    h_inv: M4,
    h: M4,
}

impl Problem {
    fn new(data: &TomographyData) -> Result<Self> {
        let settings: Vec<MeasurementSetting> = data.entries.iter().map(|e| e.0).collect();
        let rank = operator_rank(&settings);
        if rank < 16 {
            return Err(Error::Incomplete(rank));
        }
        let kets: Vec<V4> = settings.iter().map(|s| s.ket()).collect();
        let counts: Vec<f64> = data.entries.iter().map(|e| e.1).collect();
        if counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter("counts must be non-negative".into()));
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        let h: M4 = kets.iter().map(|k| k * k.adjoint()).sum();
        let h_inv = h
            .try_inverse()
            .ok_or_else(|| Error::Undefined("singular measurement operator".into()))?;
        Ok(Self {
            kets,
            counts,
            total,
            h_inv,
            h,
        })
    }

    fn log_likelihood(&self, rho: &M4) -> f64 {
        let norm = (self.h * rho).trace().re;
        let mut l = -self.total * norm.ln();
        for (k, &n) in self.kets.iter().zip(&self.counts) {
            if n > 0.0 {
                l += n * prob(rho, k).max(PROBABILITY_FLOOR).ln();
            }
        }
        l
    }

    /// T = Tr(Hρ)/N · H⁻¹ R(ρ); equals the identity at the optimum for
    /// informationally complete data.
    fn step_operator(&self, rho: &M4) -> M4 {
        let mut r = M4::zeros();
        for (k, &n) in self.kets.iter().zip(&self.counts) {
            if n > 0.0 {
                let p = prob(rho, k).max(PROBABILITY_FLOOR);
                r += k * k.adjoint() * Complex64::new(n / p, 0.0);
            }
        }
        let norm = (self.h * rho).trace().re;
        self.h_inv * r * Complex64::new(norm / self.total, 0.0)
    }
}

fn apply_step(t: &M4, rho: &M4) -> M4 {
    let next = t * rho * t.adjoint();
    let next = (next + next.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = next.trace().re;
    next / Complex64::new(tr, 0.0)
}

/// Iterative RρR reconstruction from the maximally mixed state.
///
/// A full step is taken when it raises the likelihood. Otherwise the step
/// operator is diluted to I + εT with ε halved until the likelihood no
/// longer drops, so the recorded log-likelihood is non-decreasing.
pub fn reconstruct_mle(data: &TomographyData, opts: &MleOptions) -> Result<MleResult> {
    let prob = Problem::new(data)?;
    let mut rho = M4::identity() * Complex64::new(0.25, 0.0);
    let mut ll = prob.log_likelihood(&rho);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let eye = M4::identity();
    while iterations < opts.max_iter {
        iterations += 1;
        let t = prob.step_operator(&rho);
        let mut candidate = apply_step(&t, &rho);
        let mut cand_ll = prob.log_likelihood(&candidate);
        let mut eps = 1.0;
        while cand_ll < ll && eps > 1e-14 {
            candidate = apply_step(&(eye + t * Complex64::new(eps, 0.0)), &rho);
            cand_ll = prob.log_likelihood(&candidate);
            eps *= 0.5;
        }
        if !cand_ll.is_finite() {
            return Err(Error::Undefined("log-likelihood is not finite".into()));
        }
        if cand_ll < ll {
            // no ascent direction left at floating-point resolution
            converged = true;
            break;
        }
        let change = (candidate - rho).iter().map(|z| z.norm()).fold(0.0, f64::max);
        rho = candidate;
        ll = cand_ll;
        history.push(ll);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let dm = DensityMatrix::from_matrix(DMatrix::from_fn(4, 4, |i, j| rho[(i, j)]))?;
    Ok(MleResult {
        rho: dm,
        iterations,
        converged,
        log_likelihood: history,
    })
}

/// Least-squares linear inversion of the counts, trace-normalized.
/// The result is Hermitian but not necessarily positive.
pub fn reconstruct_linear(data: &TomographyData) -> Result<DMatrix<Complex64>> {
    let prob = Problem::new(data)?;
    let a = DMatrix::from_fn(prob.kets.len(), 16, |j, idx| {
        let (r, c) = (idx / 4, idx % 4);
        // Tr(Π ρ) = Σ_rc conj(k_r) k_c ρ_rc
        prob.kets[j][r].conj() * prob.kets[j][c]
    });
    let b = DMatrix::from_fn(prob.kets.len(), 1, |j, _| Complex64::new(prob.counts[j], 0.0));
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Undefined(e.to_string()))?;
    let m = DMatrix::from_fn(4, 4, |r, c| x[(r * 4 + c, 0)]);
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = m.trace().re;
    Ok(m / Complex64::new(tr, 0.0))
}

pub fn fidelity_to_phi_plus(rho: &DensityMatrix) -> Result<f64> {
    check_two_qubit(rho)?;
    fidelity(rho, &StateVector::phi_plus())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFidelity {
    pub f_theta: f64,
    pub theta_star: f64,
    /// True when ρ_{HH,VV} = 0 and θ* is arbitrary.
    pub degenerate: bool,
}

/// max_θ ⟨Φ⁺_θ|ρ|Φ⁺_θ⟩ in closed form.
pub fn max_phase_fidelity(rho: &DensityMatrix) -> Result<PhaseFidelity> {
    check_two_qubit(rho)?;
    let c = rho.get(0, 3);
    let diag = 0.5 * (rho.get(0, 0).re + rho.get(3, 3).re);
    let degenerate = c.norm() == 0.0;
    Ok(PhaseFidelity {
        f_theta: diag + c.norm(),
        theta_star: if degenerate { 0.0 } else { -c.arg() },
        degenerate,
    })
}

/// Brute-force scan of ⟨Φ⁺_θ|ρ|Φ⁺_θ⟩ over [−π, π] in steps of `step`.
pub fn phase_fidelity_scan(rho: &DensityMatrix, step: f64) -> Result<(f64, f64)> {
    check_two_qubit(rho)?;
    let n = (2.0 * PI / step).ceil() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let theta = (-PI + i as f64 * step).min(PI);
        let f = fidelity(rho, &StateVector::bell_phi(theta))?;
        if f > best.0 {
            best = (f, theta);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub sd_fidelity: f64,
    pub sd_f_theta: f64,
    pub fidelities: Vec<f64>,
    pub f_thetas: Vec<f64>,
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Poisson resampling of every count, reconstruct, report metric spread.
pub fn bootstrap_errors(
    data: &TomographyData,
    n_resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapResult> {
    if n_resamples < 2 {
        return Err(Error::InvalidParameter("need at least 2 resamples".into()));
    }
    let metrics: Vec<(f64, f64)> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream2(seed, 0xB007, i);
            let entries = data
                .entries
                .iter()
                .map(|&(s, c)| Ok((s, poisson(&mut rng, c)?)))
                .collect::<Result<Vec<_>>>()?;
            let rho = reconstruct_mle(&TomographyData { entries }, opts)?.rho;
            Ok((fidelity_to_phi_plus(&rho)?, max_phase_fidelity(&rho)?.f_theta))
        })
        .collect::<Result<_>>()?;
    let fidelities: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let f_thetas: Vec<f64> = metrics.iter().map(|m| m.1).collect();
    Ok(BootstrapResult {
        sd_fidelity: std_dev(&fidelities),
        sd_f_theta: std_dev(&f_thetas),
        fidelities,
        f_thetas,
    })
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{bell_phi, trace_distance};

    #[test]
    fn setting_projectors_are_rank_one() {
        for s in SettingSet::Overcomplete36.settings() {
            let p = s.projector();
            assert!((p.trace().re - 1.0).abs() < 1e-12);
            assert!((&p * &p - &p).iter().all(|z| z.norm() < 1e-12));
            assert!((&p - p.adjoint()).iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn both_sets_are_complete() {
        assert!(is_informationally_complete(&SettingSet::Overcomplete36.settings()));
        assert!(is_informationally_complete(&SettingSet::Minimal16.settings()));
        let partial: Vec<_> = SettingSet::Overcomplete36.settings().into_iter().take(8).collect();
        assert!(!is_informationally_complete(&partial));
    }

    #[test]
    fn born_rule_on_phi_plus() {
        let d = TomographyData::exact(&bell_phi(0.0), SettingSet::Overcomplete36, 1.0).unwrap();
        let get = |m, n| {
            d.entries
                .iter()
                .find(|e| e.0 == MeasurementSetting::new(m, n))
                .unwrap()
                .1
        };
        assert!((get(Pol::H, Pol::H) - 0.5).abs() < 1e-15);
        assert!(get(Pol::H, Pol::V).abs() < 1e-15);
        assert!((get(Pol::D, Pol::D) - 0.5).abs() < 1e-15);
        assert!((get(Pol::R, Pol::L) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampled_group_totals_are_exact() {
        let d = simulate_counts(&bell_phi(0.3), SettingSet::Overcomplete36, 1000, 5).unwrap();
        for chunk in d.entries.chunks(4) {
            assert_eq!(chunk.iter().map(|e| e.1).sum::<f64>(), 1000.0);
        }
    }

    #[test]
    fn incomplete_data_is_rejected() {
        let mut d = TomographyData::exact(&bell_phi(0.0), SettingSet::Overcomplete36, 1.0).unwrap();
        d.entries.truncate(12);
        assert!(matches!(
            reconstruct_mle(&d, &MleOptions::default()),
            Err(Error::Incomplete(_))
        ));
    }

    #[test]
    fn phi_plus_recovery() {
        let d = TomographyData::exact(&bell_phi(0.0), SettingSet::Overcomplete36, 1e4).unwrap();
        let res = reconstruct_mle(&d, &MleOptions::default()).unwrap();
        assert!(fidelity_to_phi_plus(&res.rho).unwrap() >= 0.9999);
        assert!(res.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn minimal_set_recovery() {
        let target = crate::polarization::DensityMatrix::from_matrix(
            bell_phi(0.7).matrix() * Complex64::new(0.8, 0.0)
                + DensityMatrix::maximally_mixed(2).matrix() * Complex64::new(0.2, 0.0),
        )
        .unwrap();
        let d = TomographyData::exact(&target, SettingSet::Minimal16, 1e4).unwrap();
        let res = reconstruct_mle(&d, &MleOptions::default()).unwrap();
        assert!(trace_distance(&res.rho, &target).unwrap() < 1e-4);
    }

    #[test]
    fn phase_fidelity_examples() {
        let pf = max_phase_fidelity(&bell_phi(-0.87)).unwrap();
        assert!((pf.f_theta - 1.0).abs() < 1e-12);
        assert!((pf.theta_star + 0.87).abs() < 1e-6);
        assert!(!pf.degenerate);
        let f = fidelity_to_phi_plus(&bell_phi(-0.87)).unwrap();
        assert!((f - 0.435f64.cos().powi(2)).abs() < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(2);
        let pf = max_phase_fidelity(&mixed).unwrap();
        assert!(pf.degenerate);
        assert_eq!(pf.theta_star, 0.0);
        assert!((pf.f_theta - 0.25).abs() < 1e-15);
    }

    #[test]
    fn linear_inversion_is_exact_on_exact_data() {
        let d = TomographyData::exact(&bell_phi(1.1), SettingSet::Overcomplete36, 1.0).unwrap();
        let m = reconstruct_linear(&d).unwrap();
        assert!((m - bell_phi(1.1).matrix()).iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn csv_round_trip() {
        let d = simulate_counts(&bell_phi(0.0), SettingSet::Minimal16, 500, 9).unwrap();
        assert_eq!(TomographyData::from_csv(&d.to_csv()).unwrap(), d);
    }
}
