//! Closed-form multi-photon noise model for the parity-check interference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{Basis, Pol};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    /// s₂ / s₁
    pub chi_s: f64,
    /// n₁ / s₁
    pub chi_n: f64,
    pub g2_s: f64,
}

impl NoiseModelParams {
    pub fn new(chi_s: f64, chi_n: f64, g2_s: f64) -> Result<Self> {
        let p = Self { chi_s, chi_n, g2_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.chi_s.is_finite() && self.chi_n.is_finite() && self.g2_s.is_finite();
        if !finite || self.chi_s < 0.0 || self.chi_n < 0.0 || self.g2_s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "chi_s={}, chi_n={}, g2_s={}",
                self.chi_s, self.chi_n, self.g2_s
            )));
        }
        Ok(())
    }
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den > 0.0 && den.is_finite() {
        Ok(num / den)
    } else {
        Err(Error::Undefined(format!("{what}: degenerate parameters")))
    }
}

pub fn visibility_z(p: &NoiseModelParams) -> Result<f64> {
    p.validate()?;
    let (xs, xn) = (p.chi_s, p.chi_n);
    let den = 4.0 * xn + 2.0 * xs * (xn + 1.0) + xs * xs;
    ratio(2.0 * xs * (1.0 - xn), den, "V_z")
}

pub fn visibility_x(p: &NoiseModelParams) -> Result<f64> {
    p.validate()?;
    let (xs, xn) = (p.chi_s, p.chi_n);
    let den = xs * xs + 2.0 * xn * xn + p.g2_s + 2.0 * (xn + 1.0) * xs;
    ratio(2.0 * xs * (1.0 - xn), den, "V_x")
}

/// Equal to [`visibility_x`] in this model.
pub fn visibility_y(p: &NoiseModelParams) -> Result<f64> {
    visibility_x(p)
}

pub fn predicted_fidelity(p: &NoiseModelParams) -> Result<f64> {
    Ok((1.0 + visibility_z(p)? + visibility_x(p)? + visibility_y(p)?) / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub vz: f64,
    pub vx: f64,
    pub vy: f64,
    pub fidelity: f64,
}

pub fn predict(p: &NoiseModelParams) -> Result<Prediction> {
    Ok(Prediction {
        vz: visibility_z(p)?,
        vx: visibility_x(p)?,
        vy: visibility_y(p)?,
        fidelity: predicted_fidelity(p)?,
    })
}

/// Coincidence probabilities P_mn keyed by (herald m, analyzer n). Only
/// same-basis pairs are populated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoincidenceTable {
    pub entries: BTreeMap<(Pol, Pol), f64>,
}

impl CoincidenceTable {
    pub fn get(&self, m: Pol, n: Pol) -> Option<f64> {
        self.entries.get(&(m, n)).copied()
    }

    /// [[P₀₀, P₀₁], [P₁₀, P₁₁]] over the basis states.
    pub fn basis_block(&self, basis: Basis) -> Option<[[f64; 2]; 2]> {
        let s = basis.states();
        Some([
            [self.get(s[0], s[0])?, self.get(s[0], s[1])?],
            [self.get(s[1], s[0])?, self.get(s[1], s[1])?],
        ])
    }

    /// |P₀₀ + P₁₁ − P₀₁ − P₁₀| / Σ for one basis.
    pub fn visibility(&self, basis: Basis) -> Result<f64> {
        let b = self
            .basis_block(basis)
            .ok_or_else(|| Error::Undefined(format!("no entries for basis {basis:?}")))?;
        let sum = b[0][0] + b[0][1] + b[1][0] + b[1][1];
        ratio((b[0][0] + b[1][1] - b[0][1] - b[1][0]).abs(), sum, "visibility")
    }
}

/// Closed-form P_mn at absolute signal mean `s1`.
pub fn coincidence_probabilities(
    p: &NoiseModelParams,
    s1: f64,
    eta1p: f64,
    eta2p: f64,
) -> Result<CoincidenceTable> {
    p.validate()?;
    if !(s1 >= 0.0 && s1.is_finite()) {
        return Err(Error::InvalidParameter(format!("s1 = {s1}")));
    }
    let eta = eta1p * eta2p;
    let s2 = p.chi_s * s1;
    let n1 = p.chi_n * s1;
    let g = p.g2_s;

    let hh = eta / 4.0 * (s1 * s2 + 0.5 * s2 * s2);
    let vh = eta / 4.0 * (n1 * s2 + 0.5 * s2 * s2);
    let vv = eta / 2.0 * (n1 * s1 + 0.5 * s1 * s2);
    let hv = eta / 2.0 * (n1 * s1 + 0.5 * n1 * s2);
    let common = s2 * s2 + g * s1 * s1 + 2.0 * n1 * n1;
    let dd = eta / 16.0 * (common + 4.0 * s1 * s2);
    let ad = eta / 16.0 * (common + 4.0 * n1 * s2);
    let (aa, da) = (dd, ad);

    let mut entries = BTreeMap::new();
    for (m, n, v) in [
        (Pol::H, Pol::H, hh),
        (Pol::V, Pol::H, vh),
        (Pol::V, Pol::V, vv),
        (Pol::H, Pol::V, hv),
        (Pol::D, Pol::D, dd),
        (Pol::A, Pol::D, ad),
        (Pol::A, Pol::A, aa),
        (Pol::D, Pol::A, da),
        // circular analyzers follow the diagonal ones: a circular herald
        // prepares the conjugate circular signal, which swaps correlated
        // and anticorrelated outcomes relative to D/A
        (Pol::R, Pol::L, dd),
        (Pol::L, Pol::R, aa),
        (Pol::R, Pol::R, da),
        (Pol::L, Pol::L, ad),
    ] {
        entries.insert((m, n), v);
    }
    Ok(CoincidenceTable { entries })
}

/// Raw counts for parameter estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    /// Two-fold D_R″(H) ∧ D_B′(H) coincidences.
    pub c_hh: f64,
    /// Two-fold D_R″(H) ∧ D_B′(V) coincidences.
    pub c_hv: f64,
    /// Singles at D_B′ behind an H analyzer, same integration time.
    pub s_h_b: f64,
    /// Singles rate at D_R″ behind an H analyzer, per second.
    pub s_h_r: f64,
    /// Pulse repetition rate in Hz.
    pub f: f64,
    #[serde(default = "default_eta_d")]
    pub eta_d: f64,
}

fn default_eta_d() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub s1_prime: f64,
    pub n1_prime: f64,
    pub s2_prime: f64,
    pub params: NoiseModelParams,
}

pub fn estimate_params(counts: &CountSummary, g2_s: f64) -> Result<Estimate> {
    let c = counts;
    if [c.c_hh, c.c_hv, c.s_h_b, c.s_h_r].iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("counts must be non-negative".into()));
    }
    if !(c.f > 0.0) {
        return Err(Error::InvalidParameter(format!("repetition rate {}", c.f)));
    }
    if !(c.eta_d > 0.0 && c.eta_d <= 1.0) {
        return Err(Error::InvalidParameter(format!("eta_d = {}", c.eta_d)));
    }
    if c.s_h_b == 0.0 {
        return Err(Error::ZeroProbability);
    }
    let s1 = c.c_hh / c.s_h_b;
    let n1 = c.c_hv / c.s_h_b;
    // the D-polarized pulse is split in two at the PBS, so the H singles
    // see half of it
    let s2 = 2.0 * c.s_h_r / c.f;
    if s1 == 0.0 {
        return Err(Error::Undefined("C_HH = 0 leaves chi undefined".into()));
    }
    Ok(Estimate {
        s1_prime: s1,
        n1_prime: n1,
        s2_prime: s2,
        params: NoiseModelParams::new(s2 / s1, n1 / s1, g2_s)?,
    })
}

/// First-order Poisson standard errors on (χ_s, χ_n), treating the two-fold
/// counts as the only noisy inputs.
pub fn estimate_errors(counts: &CountSummary, est: &Estimate) -> (f64, f64) {
    let rel_hh = if counts.c_hh > 0.0 {
        1.0 / counts.c_hh.sqrt()
    } else {
        f64::INFINITY
    };
    let rel_hv = if counts.c_hv > 0.0 {
        1.0 / counts.c_hv.sqrt()
    } else {
        0.0
    };
    let p = est.params;
    (
        p.chi_s * rel_hh,
        p.chi_n * (rel_hh * rel_hh + rel_hv * rel_hv).sqrt(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_params() -> NoiseModelParams {
        NoiseModelParams::new(0.28, 0.018, 0.098).unwrap()
    }

    fn direct_vz(xs: f64, xn: f64) -> f64 {
        2.0 * xs * (1.0 - xn) / (4.0 * xn + 2.0 * xs * (xn + 1.0) + xs.powi(2))
    }

    #[test]
    fn reference_visibilities() {
        let p = reference_params();
        let vz = visibility_z(&p).unwrap();
        let vx = visibility_x(&p).unwrap();
        assert!((vz - direct_vz(0.28, 0.018)).abs() < 1e-15);
        assert!((vz - 0.763).abs() < 5e-4);
        assert!((vx - 0.736).abs() < 5e-4);
        assert!((predicted_fidelity(&p).unwrap() - 0.809).abs() < 5e-4);
    }

    #[test]
    fn full_noise_kills_visibility() {
        let p = NoiseModelParams::new(0.28, 1.0, 0.098).unwrap();
        assert_eq!(visibility_z(&p).unwrap(), 0.0);
        assert_eq!(visibility_x(&p).unwrap(), 0.0);
        assert!((predicted_fidelity(&p).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weak_ancilla_limits() {
        let p = NoiseModelParams::new(1e-9, 0.0, 0.0).unwrap();
        assert!((visibility_z(&p).unwrap() - 1.0).abs() < 1e-8);
        let xs = 0.4;
        let p = NoiseModelParams::new(xs, 0.0, 0.0).unwrap();
        assert!((visibility_x(&p).unwrap() - 2.0 / (2.0 + xs)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_parameters_error() {
        let p = NoiseModelParams::new(0.0, 0.0, 0.0).unwrap();
        assert!(matches!(visibility_z(&p), Err(Error::Undefined(_))));
        assert!(matches!(visibility_x(&p), Err(Error::Undefined(_))));
    }

    #[test]
    fn table_special_cases() {
        let (s1, eta) = (0.01, 0.3);
        let t = coincidence_probabilities(&NoiseModelParams::new(0.0, 0.5, 0.1).unwrap(), s1, eta, 1.0)
            .unwrap();
        assert_eq!(t.get(Pol::H, Pol::H).unwrap(), 0.0);
        let n1 = 0.5 * s1;
        assert!((t.get(Pol::V, Pol::V).unwrap() - 0.5 * eta * n1 * s1).abs() < 1e-18);

        let t = coincidence_probabilities(&NoiseModelParams::new(0.3, 0.0, 0.1).unwrap(), s1, eta, 1.0)
            .unwrap();
        let s2 = 0.3 * s1;
        assert!((t.get(Pol::V, Pol::H).unwrap() - eta * s2 * s2 / 8.0).abs() < 1e-18);
        assert_eq!(t.get(Pol::H, Pol::V).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_difference() {
        let p = reference_params();
        let (s1, e1, e2) = (0.02, 0.4, 0.7);
        let t = coincidence_probabilities(&p, s1, e1, e2).unwrap();
        let d = t.get(Pol::D, Pol::D).unwrap() - t.get(Pol::A, Pol::D).unwrap();
        let expect = 0.25 * e1 * e2 * (p.chi_s * s1) * (s1 - p.chi_n * s1);
        assert!((d - expect).abs() < 1e-18);
    }

    #[test]
    fn table_closes_the_loop() {
        let p = reference_params();
        let t = coincidence_probabilities(&p, 0.01, 0.2, 0.5).unwrap();
        assert!((t.visibility(Basis::Z).unwrap() - visibility_z(&p).unwrap()).abs() < 1e-12);
        assert!((t.visibility(Basis::X).unwrap() - visibility_x(&p).unwrap()).abs() < 1e-12);
        assert!((t.visibility(Basis::Y).unwrap() - visibility_y(&p).unwrap()).abs() < 1e-12);
    }

    fn counts() -> CountSummary {
        CountSummary {
            c_hh: 6000.0,
            c_hv: 110.0,
            s_h_b: 1e6,
            s_h_r: 68_000.0,
            f: 80e6,
            eta_d: 0.05,
        }
    }

    #[test]
    fn estimate_reference_counts() {
        let e = estimate_params(&counts(), 0.098).unwrap();
        assert!((e.s1_prime - 6.0e-3).abs() < 1e-15);
        assert!((e.n1_prime - 1.1e-4).abs() < 1e-15);
        assert!((e.s2_prime - 1.7e-3).abs() < 1e-15);
        assert!((e.params.chi_n - 0.018).abs() < 1e-3);
        assert!((e.params.chi_s - 0.28).abs() < 5e-3);
    }

    #[test]
    fn no_cross_polarized_coincidences() {
        let c = CountSummary {
            c_hv: 0.0,
            ..counts()
        };
        assert_eq!(estimate_params(&c, 0.1).unwrap().params.chi_n, 0.0);
    }

    #[test]
    fn zero_singles_is_an_error() {
        let c = CountSummary {
            s_h_b: 0.0,
            ..counts()
        };
        assert!(estimate_params(&c, 0.1).is_err());
    }
}
