//! Truncated Fock-space simulator over labeled polarization modes.
//!
//! States are stored as incoherent ensembles of pure components. Each pure
//! component is a polynomial in creation operators acting on the vacuum, so
//! passive linear optics is a change of variables and never truncates.
//! Truncation happens only when a Fock-diagonal or coherent source is built,
//! and the discarded probability is accumulated in [`ModeRegister::leakage`].

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{Pol, PolarizationKet};

/// Exponent vector (creation polynomial) or occupation vector (Fock ket).
type Key = Vec<u8>;
type Poly = BTreeMap<Key, Complex64>;
type FockKet = BTreeMap<Key, Complex64>;

/// Linear combination Σ cᵢ âᵢ over mode indices.
pub type ModeForm = Vec<(usize, Complex64)>;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Starting per-source photon-number cutoff.
    pub cutoff: usize,
    /// Largest acceptable discarded probability.
    pub tol: f64,
    pub max_cutoff: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            cutoff: 10,
            tol: 1e-10,
            max_cutoff: 60,
        }
    }
}

impl Truncation {
    /// Smallest cutoff ≥ `self.cutoff` whose tail `tail(c)` is below tolerance.
    fn resolve(&self, tail: impl Fn(usize) -> f64) -> Result<(usize, f64)> {
        let mut c = self.cutoff;
        loop {
            let leak = tail(c);
            if leak < self.tol {
                return Ok((c, leak.max(0.0)));
            }
            if c >= self.max_cutoff {
                return Err(Error::Truncation {
                    leakage: leak,
                    tol: self.tol,
                });
            }
            c += 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    poly: Poly,
}

/// Ensemble of creation-polynomial states over named modes.
#[derive(Debug, Clone)]
pub struct ModeRegister {
    labels: Vec<String>,
    components: Vec<Component>,
    cutoff: usize,
    leakage: f64,
}

fn factorial(n: u8) -> f64 {
    (1..=n as u32).map(f64::from).product()
}

fn mul_form(poly: &Poly, form: &ModeForm) -> Poly {
    let mut out = Poly::new();
    for (key, &c) in poly {
        for &(i, a) in form {
            let mut k = key.clone();
            k[i] += 1;
            *out.entry(k).or_default() += c * a;
        }
    }
    out.retain(|_, c| *c != Complex64::new(0.0, 0.0));
    out
}

fn mul_poly(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ka, &ca) in a {
        for (kb, &cb) in b {
            let k: Key = ka.iter().zip(kb).map(|(x, y)| x + y).collect();
            *out.entry(k).or_default() += ca * cb;
        }
    }
    out
}

fn unit_poly(modes: usize) -> Poly {
    let mut p = Poly::new();
    p.insert(vec![0; modes], ONE);
    p
}

/// (form)^k / √k!, i.e. the normalized k-photon state of a unit-norm mode.
fn fock_power(modes: usize, form: &ModeForm, k: usize) -> Poly {
    let mut p = unit_poly(modes);
    for _ in 0..k {
        p = mul_form(&p, form);
    }
    let norm = factorial(k as u8).sqrt();
    p.values_mut().for_each(|c| *c /= norm);
    p
}

fn to_fock(poly: &Poly) -> FockKet {
    poly.iter()
        .map(|(k, &c)| {
            let s: f64 = k.iter().map(|&n| factorial(n).sqrt()).product();
            (k.clone(), c * s)
        })
        .collect()
}

fn annihilate(ket: &FockKet, form: &ModeForm) -> FockKet {
    let mut out = FockKet::new();
    for (occ, &amp) in ket {
        for &(i, c) in form {
            let n = occ[i];
            if n == 0 {
                continue;
            }
            let mut o = occ.clone();
            o[i] -= 1;
            *out.entry(o).or_default() += amp * c * f64::from(n).sqrt();
        }
    }
    out
}

fn create(ket: &FockKet, form: &ModeForm) -> FockKet {
    let mut out = FockKet::new();
    for (occ, &amp) in ket {
        for &(i, c) in form {
            let mut o = occ.clone();
            o[i] += 1;
            let factor = f64::from(o[i]).sqrt();
            *out.entry(o).or_default() += amp * c.conj() * factor;
        }
    }
    out
}

fn inner(a: &FockKet, b: &FockKet) -> Complex64 {
    let (small, large, flip) = if a.len() <= b.len() {
        (a, b, false)
    } else {
        (b, a, true)
    };
    let mut s = Complex64::new(0.0, 0.0);
    for (k, &x) in small {
        if let Some(&y) = large.get(k) {
            s += if flip { y.conj() * x } else { x.conj() * y };
        }
    }
    s
}

fn norm_sqr(ket: &FockKet) -> f64 {
    ket.values().map(|a| a.norm_sqr()).sum()
}

impl ModeRegister {
    pub fn vacuum<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate mode label `{l}`")));
            }
        }
        let n = labels.len();
        Ok(Self {
            labels,
            components: vec![Component {
                weight: 1.0,
                poly: unit_poly(n),
            }],
            cutoff: 0,
            leakage: 0.0,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn modes(&self) -> usize {
        self.labels.len()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Largest per-source cutoff used while building this register.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Probability discarded by truncation.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn components(&self) -> usize {
        self.components.len()
    }

    pub fn trace(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_sqr(&to_fock(&c.poly)))
            .sum()
    }

    /// Form for a polarization `ket` on the spatial mode with labels
    /// `{prefix}H`, `{prefix}V`, used as a creation operator.
    pub fn polarized_form(&self, prefix: &str, ket: &PolarizationKet) -> Result<ModeForm> {
        Ok(vec![
            (self.index(&format!("{prefix}H"))?, ket.amps[0]),
            (self.index(&format!("{prefix}V"))?, ket.amps[1]),
        ])
    }

    /// Annihilation form b = e_H* a_H + e_V* a_V for analyzer state `ket`.
    pub fn analyzer_form(&self, prefix: &str, ket: &PolarizationKet) -> Result<ModeForm> {
        Ok(vec![
            (self.index(&format!("{prefix}H"))?, ket.amps[0].conj()),
            (self.index(&format!("{prefix}V"))?, ket.amps[1].conj()),
        ])
    }

    pub fn single_mode_form(&self, label: &str) -> Result<ModeForm> {
        Ok(vec![(self.index(label)?, ONE)])
    }

    fn check_form(&self, form: &ModeForm) -> Result<()> {
        for &(i, _) in form {
            if i >= self.modes() {
                return Err(Error::InvalidMode {
                    index: i,
                    len: self.modes(),
                });
            }
        }
        Ok(())
    }

    /// Multiplies in an independent source given as a Fock-diagonal mixture
    /// over the normalized mode `form`: weight `probs[k]` for k photons.
    pub fn with_fock_mixture(&self, form: &ModeForm, probs: &[f64], leakage: f64) -> Result<Self> {
        self.check_form(form)?;
        let n = self.modes();
        let mut components = Vec::new();
        for c in &self.components {
            for (k, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                components.push(Component {
                    weight: c.weight * p,
                    poly: mul_poly(&c.poly, &fock_power(n, form, k)),
                });
            }
        }
        Ok(Self {
            labels: self.labels.clone(),
            components,
            cutoff: self.cutoff.max(probs.len().saturating_sub(1)),
            leakage: 1.0 - (1.0 - self.leakage) * (1.0 - leakage),
        })
    }

    /// Multiplies in a pure superposition Σ_k amps[k] |k⟩ over `form`.
    pub fn with_fock_superposition(
        &self,
        form: &ModeForm,
        amps: &[Complex64],
        leakage: f64,
    ) -> Result<Self> {
        self.check_form(form)?;
        let n = self.modes();
        let mut source = Poly::new();
        for (k, &a) in amps.iter().enumerate() {
            for (key, c) in fock_power(n, form, k) {
                *source.entry(key).or_default() += a * c;
            }
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                poly: mul_poly(&c.poly, &source),
            })
            .collect();
        Ok(Self {
            labels: self.labels.clone(),
            components,
            cutoff: self.cutoff.max(amps.len().saturating_sub(1)),
            leakage: 1.0 - (1.0 - self.leakage) * (1.0 - leakage),
        })
    }

    /// Multiplies in an arbitrary creation polynomial, given as a list of
    /// (coefficient, modes) monomials. Used for entangled photon pairs.
    pub fn with_polynomial(&self, monomials: &[(Complex64, Vec<usize>)]) -> Result<Self> {
        let n = self.modes();
        let mut source = Poly::new();
        for (c, modes) in monomials {
            let mut key = vec![0u8; n];
            for &m in modes {
                if m >= n {
                    return Err(Error::InvalidMode { index: m, len: n });
                }
                key[m] += 1;
            }
            *source.entry(key).or_default() += *c;
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                poly: mul_poly(&c.poly, &source),
            })
            .collect();
        Ok(Self {
            labels: self.labels.clone(),
            components,
            cutoff: self.cutoff,
            leakage: self.leakage,
        })
    }

    /// Passive linear optics in the Schrödinger picture: every input creation
    /// operator a†ᵢ is replaced by `image(i)` = Σⱼ uⱼᵢ b†ⱼ over `out_labels`.
    pub fn linear_map<S: AsRef<str>>(
        &self,
        out_labels: &[S],
        image: impl Fn(usize) -> ModeForm,
    ) -> Result<Self> {
        let out_n = out_labels.len();
        let images: Vec<ModeForm> = (0..self.modes()).map(&image).collect();
        for form in &images {
            for &(j, _) in form {
                if j >= out_n {
                    return Err(Error::InvalidMode {
                        index: j,
                        len: out_n,
                    });
                }
            }
        }
        let mut out = Self::vacuum(out_labels)?;
        out.cutoff = self.cutoff;
        out.leakage = self.leakage;
        out.components = self
            .components
            .iter()
            .map(|c| {
                let mut acc = Poly::new();
                for (key, &coef) in &c.poly {
                    let mut term = unit_poly(out_n);
                    term.values_mut().for_each(|v| *v = coef);
                    for (i, &e) in key.iter().enumerate() {
                        for _ in 0..e {
                            term = mul_form(&term, &images[i]);
                        }
                    }
                    for (k, v) in term {
                        *acc.entry(k).or_default() += v;
                    }
                }
                Component {
                    weight: c.weight,
                    poly: acc,
                }
            })
            .collect();
        Ok(out)
    }

    /// Same-mode-count change of variables on a subset of modes; modes not
    /// listed in `transforms` pass through unchanged.
    pub fn transform_modes(&self, transforms: &BTreeMap<usize, ModeForm>) -> Result<Self> {
        let labels = self.labels.clone();
        self.linear_map(&labels, |i| {
            transforms.get(&i).cloned().unwrap_or_else(|| vec![(i, ONE)])
        })
    }

    /// Σ_w w ⟨(Π dag) ψ | (Π ann) ψ⟩ with the forms in `dag` read as
    /// annihilators on the bra side, i.e. the normally ordered moment
    /// ⟨ b†_{dag[0]} … b_{ann[0]} … ⟩.
    pub fn normal_moment(&self, dag: &[ModeForm], ann: &[ModeForm]) -> Result<Complex64> {
        for f in dag.iter().chain(ann) {
            self.check_form(f)?;
        }
        let mut total = Complex64::new(0.0, 0.0);
        for c in &self.components {
            let psi = to_fock(&c.poly);
            let mut left = psi.clone();
            for f in dag.iter().rev() {
                left = annihilate(&left, f);
            }
            let mut right = psi;
            for f in ann.iter().rev() {
                right = annihilate(&right, f);
            }
            total += inner(&left, &right) * c.weight;
        }
        Ok(total)
    }

    /// Σ_w w ‖(Π forms) ψ‖², the linear-detection coincidence weight.
    pub fn detection_weight(&self, forms: &[ModeForm]) -> Result<f64> {
        for f in forms {
            self.check_form(f)?;
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                let mut psi = to_fock(&c.poly);
                for f in forms {
                    psi = annihilate(&psi, f);
                }
                c.weight * norm_sqr(&psi)
            })
            .sum())
    }

    /// ⟨a†_i a†_j a_k a_l⟩ for mode labels.
    pub fn fourth_moment(&self, ops: [&str; 4]) -> Result<Complex64> {
        let f = |l: &str| self.single_mode_form(l);
        self.normal_moment(&[f(ops[0])?, f(ops[1])?], &[f(ops[2])?, f(ops[3])?])
    }

    pub fn mean_number(&self, label: &str) -> Result<f64> {
        let f = self.single_mode_form(label)?;
        Ok(self.normal_moment(std::slice::from_ref(&f), std::slice::from_ref(&f))?.re)
    }

    /// ⟨a a†⟩ on one mode.
    pub fn antinormal_number(&self, label: &str) -> Result<f64> {
        let f = self.single_mode_form(label)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * norm_sqr(&create(&to_fock(&c.poly), &f)))
            .sum())
    }

    /// Probability that every group of modes registers a click on threshold
    /// detectors with efficiency `eta`: Π_g (1 − (1−η)^{n_g}).
    pub fn joint_click_probability(&self, groups: &[Vec<usize>], eta: f64) -> Result<f64> {
        for g in groups {
            for &i in g {
                if i >= self.modes() {
                    return Err(Error::InvalidMode {
                        index: i,
                        len: self.modes(),
                    });
                }
            }
        }
        let miss = 1.0 - eta;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let psi = to_fock(&c.poly);
                c.weight
                    * psi
                        .iter()
                        .map(|(occ, a)| {
                            let p: f64 = groups
                                .iter()
                                .map(|g| {
                                    let n: i32 = g.iter().map(|&i| i32::from(occ[i])).sum();
                                    1.0 - miss.powi(n)
                                })
                                .product();
                            p * a.norm_sqr()
                        })
                        .sum::<f64>()
            })
            .sum())
    }
}

/// Photon-number support used to realize the heralded signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SignalSupport {
    /// {0, 1, 2}
    #[default]
    Minimal,
    /// {0, 1, 2, 3}, same first two factorial moments.
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub signal_mean: f64,
    pub signal_g2: f64,
    pub noise_mean: f64,
    pub coherent_mean: f64,
    /// Polarization m detected on the heralding photon.
    pub herald: Pol,
    #[serde(default)]
    pub support: SignalSupport,
}

impl SourceModel {
    /// Signal photon-number distribution with mean s₁ and ⟨n(n−1)⟩ = g·s₁².
    pub fn signal_distribution(&self) -> Result<Vec<f64>> {
        let s1 = self.signal_mean;
        let g = self.signal_g2;
        if !(s1 >= 0.0 && g >= 0.0 && s1.is_finite() && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("signal mean {s1}, g2 {g}")));
        }
        let second = g * s1 * s1;
        let probs = match self.support {
            SignalSupport::Minimal => {
                let p2 = second / 2.0;
                let p1 = s1 - 2.0 * p2;
                vec![1.0 - p1 - p2, p1, p2]
            }
            SignalSupport::Extended => {
                let p3 = second / 12.0;
                let p2 = second / 4.0;
                let p1 = s1 - 2.0 * p2 - 3.0 * p3;
                vec![1.0 - p1 - p2 - p3, p1, p2, p3]
            }
        };
        if probs.iter().any(|&p| p < -1e-15) {
            return Err(Error::InvalidParameter(format!(
                "signal (mean {s1}, g2 {g}) is not realizable on this support"
            )));
        }
        Ok(probs.into_iter().map(|p| p.max(0.0)).collect())
    }
}

pub const INPUT_MODES: [&str; 4] = ["1H", "1V", "2H", "2V"];
pub const OUTPUT_MODES: [&str; 4] = ["1'H", "1'V", "2'H", "2'V"];

fn thermal_probs(mean: f64, cutoff: usize) -> Vec<f64> {
    let r = mean / (1.0 + mean);
    (0..=cutoff).map(|k| r.powi(k as i32) / (1.0 + mean)).collect()
}

/// Spatial mode 1 holds the heralded signal in m* plus thermal noise in the
/// polarization orthogonal to m*. Mode 2 is left empty.
pub fn build_heralded_state(model: &SourceModel, trunc: &Truncation) -> Result<ModeRegister> {
    let signal = model.signal_distribution()?;
    let n1 = model.noise_mean;
    if !(n1 >= 0.0 && n1.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise mean {n1}")));
    }
    let (cutoff, leak) = if n1 == 0.0 {
        (trunc.cutoff, 0.0)
    } else {
        trunc.resolve(|c| (n1 / (1.0 + n1)).powi(c as i32 + 1))?
    };
    let reg = ModeRegister::vacuum(&INPUT_MODES)?;
    let sig_ket = model.herald.conj().ket();
    let noise_ket = sig_ket.orthogonal();
    let sig_form = reg.polarized_form("1", &sig_ket)?;
    let noise_form = reg.polarized_form("1", &noise_ket)?;
    let noise = if n1 == 0.0 {
        vec![1.0]
    } else {
        thermal_probs(n1, cutoff)
    };
    let mut reg = reg
        .with_fock_mixture(&sig_form, &signal, 0.0)?
        .with_fock_mixture(&noise_form, &noise, leak)?;
    reg.cutoff = reg.cutoff.max(cutoff);
    Ok(reg)
}

/// Truncated coherent amplitudes e^{−|α|²/2} αᵏ/√k! for k ≤ cutoff.
pub fn coherent_amplitudes(mean: f64, trunc: &Truncation) -> Result<(Vec<Complex64>, f64)> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::InvalidParameter(format!("coherent mean {mean}")));
    }
    let poisson = |k: usize| {
        let mut p = (-mean).exp();
        for j in 1..=k {
            p *= mean / j as f64;
        }
        p
    };
    let (cutoff, leak) = trunc.resolve(|c| {
        // tail sum, computed directly to avoid cancellation in 1 − Σ
        let mut tail = 0.0;
        let mut p = poisson(c + 1);
        let mut j = c + 1;
        while p > 0.0 && j < c + 400 {
            tail += p;
            j += 1;
            p *= mean / j as f64;
        }
        tail
    })?;
    let alpha = mean.sqrt();
    let amps = (0..=cutoff)
        .map(|k| {
            let a = (-mean / 2.0).exp() * alpha.powi(k as i32) / factorial(k as u8).sqrt();
            Complex64::new(a, 0.0)
        })
        .collect();
    Ok((amps, leak))
}

/// Coherent state of mean `mean` in polarization `pol` on spatial mode 2.
pub fn build_coherent_state(mean: f64, pol: Pol, trunc: &Truncation) -> Result<ModeRegister> {
    let reg = ModeRegister::vacuum(&INPUT_MODES)?;
    if mean == 0.0 {
        return Ok(reg);
    }
    let (amps, leak) = coherent_amplitudes(mean, trunc)?;
    let form = reg.polarized_form("2", &pol.ket())?;
    let mut out = reg.with_fock_superposition(&form, &amps, leak)?;
    out.cutoff = amps.len() - 1;
    Ok(out)
}

impl ModeRegister {
    /// Independent union of two registers over the same modes.
    pub fn product(&self, other: &Self) -> Result<Self> {
        if self.labels != other.labels {
            return Err(Error::InvalidParameter("registers have different modes".into()));
        }
        let mut components = Vec::with_capacity(self.components.len() * other.components.len());
        for a in &self.components {
            for b in &other.components {
                components.push(Component {
                    weight: a.weight * b.weight,
                    poly: mul_poly(&a.poly, &b.poly),
                });
            }
        }
        Ok(Self {
            labels: self.labels.clone(),
            components,
            cutoff: self.cutoff.max(other.cutoff),
            leakage: 1.0 - (1.0 - self.leakage) * (1.0 - other.leakage),
        })
    }
}

/// PBS relations 1′H←1H, 1′V←2V, 2′H←2H, 2′V←1V.
pub fn apply_pbs_relations(reg: &ModeRegister) -> Result<ModeRegister> {
    let idx: Vec<usize> = INPUT_MODES
        .iter()
        .map(|l| reg.index(l))
        .collect::<Result<_>>()?;
    if reg.modes() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: reg.modes(),
        });
    }
    // input index -> output index
    let mut target = [0usize; 4];
    target[idx[0]] = 0;
    target[idx[3]] = 1;
    target[idx[2]] = 2;
    target[idx[1]] = 3;
    reg.linear_map(&OUTPUT_MODES, |i| vec![(target[i], ONE)])
}

/// Full heralded-plus-ancilla register after the PBS.
pub fn build_interference_register(model: &SourceModel, trunc: &Truncation) -> Result<ModeRegister> {
    let signal = build_heralded_state(model, trunc)?;
    let ancilla = build_coherent_state(model.coherent_mean, Pol::D, trunc)?;
    apply_pbs_relations(&signal.product(&ancilla)?)
}

/// Linear-detection coincidence probability of D at 1′ and `n` at 2′ given
/// herald `m`, computed from the fourth moment.
pub fn oracle_coincidence_probability(
    m: Pol,
    n: Pol,
    model: &SourceModel,
    eta1p: f64,
    eta2p: f64,
    trunc: &Truncation,
) -> Result<f64> {
    for eta in [eta1p, eta2p] {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("transmittance {eta}")));
        }
    }
    let reg = build_interference_register(&SourceModel { herald: m, ..*model }, trunc)?;
    coincidence_from_register(&reg, n, eta1p, eta2p)
}

fn coincidence_from_register(reg: &ModeRegister, n: Pol, eta1p: f64, eta2p: f64) -> Result<f64> {
    let b1 = reg.analyzer_form("1'", &Pol::D.ket())?;
    let b2 = reg.analyzer_form("2'", &n.ket())?;
    Ok(eta1p * eta2p * reg.detection_weight(&[b1, b2])?)
}

/// Oracle P_mn for all herald and analyzer pairs in one basis.
pub fn oracle_basis_table(
    basis: crate::polarization::Basis,
    model: &SourceModel,
    eta1p: f64,
    eta2p: f64,
    trunc: &Truncation,
) -> Result<[[f64; 2]; 2]> {
    let states = basis.states();
    let mut out = [[0.0; 2]; 2];
    for (i, &m) in states.iter().enumerate() {
        let reg = build_interference_register(&SourceModel { herald: m, ..*model }, trunc)?;
        for (j, &n) in states.iter().enumerate() {
            out[i][j] = coincidence_from_register(&reg, n, eta1p, eta2p)?;
        }
    }
    Ok(out)
}

/// |P₀₀ + P₁₁ − P₀₁ − P₁₀| / Σ, or `None` when every entry vanishes.
pub fn table_visibility(p: &[[f64; 2]; 2]) -> Option<f64> {
    let sum = p[0][0] + p[1][1] + p[0][1] + p[1][0];
    (sum > 0.0).then(|| (p[0][0] + p[1][1] - p[0][1] - p[1][0]).abs() / sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVisibilities {
    pub vz: Option<f64>,
    pub vx: Option<f64>,
    pub vy: Option<f64>,
}

pub fn oracle_visibilities(
    model: &SourceModel,
    eta1p: f64,
    eta2p: f64,
    trunc: &Truncation,
) -> Result<OracleVisibilities> {
    use crate::polarization::Basis;
    let v = |b| -> Result<Option<f64>> {
        Ok(table_visibility(&oracle_basis_table(b, model, eta1p, eta2p, trunc)?))
    };
    Ok(OracleVisibilities {
        vz: v(Basis::Z)?,
        vx: v(Basis::X)?,
        vy: v(Basis::Y)?,
    })
}

/// Three-fold click probability for the coherent-ancilla protocol variant.
///
/// Photons A and B share |Φ⁺⟩; B crosses a channel of intensity
/// transmittance `t`, and the D-polarized coherent ancilla of mean
/// `launch_mean` crosses a channel with the same transmittance. The parity
/// check routes A_H→A′_H, R′_H→A′_V, R′_V→R″_H, A_V→R″_V, and R″ is read in
/// D. Detectors are threshold detectors with efficiency `eta`.
pub fn coherent_ancilla_threefold(
    t: f64,
    launch_mean: f64,
    eta: f64,
    trunc: &Truncation,
) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("transmittance {t}")));
    }
    const MODES: [&str; 10] = [
        "AH", "AV", "BH", "BV", "RH", "RV", "lossBH", "lossBV", "lossRH", "lossRV",
    ];
    let reg = ModeRegister::vacuum(&MODES)?;
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let reg = reg.with_polynomial(&[(s, vec![0, 2]), (s, vec![1, 3])])?;
    let (amps, leak) = coherent_amplitudes(launch_mean, trunc)?;
    let form = reg.polarized_form("R", &Pol::D.ket())?;
    let reg = reg.with_fock_superposition(&form, &amps, leak)?;

    let tt = Complex64::new(t.sqrt(), 0.0);
    let rr = Complex64::new((1.0 - t).sqrt(), 0.0);
    let lossy: BTreeMap<usize, ModeForm> = [(2, 6), (3, 7), (4, 8), (5, 9)]
        .into_iter()
        .map(|(m, l)| (m, vec![(m, tt), (l, rr)]))
        .collect();
    let reg = reg.transform_modes(&lossy)?;

    // parity check and D/A readout of R″
    const OUT: [&str; 10] = [
        "A'H", "A'V", "B'H", "B'V", "R''D", "R''A", "lossBH", "lossBV", "lossRH", "lossRV",
    ];
    let reg = reg.linear_map(&OUT, |i| match i {
        0 => vec![(0, ONE)],
        4 => vec![(1, ONE)],
        // R″_H = (D + A)/√2, R″_V = (D − A)/√2
        5 => vec![(4, s), (5, s)],
        1 => vec![(4, s), (5, -s)],
        2 => vec![(2, ONE)],
        3 => vec![(3, ONE)],
        other => vec![(other, ONE)],
    })?;
    reg.joint_click_probability(&[vec![0, 1], vec![4], vec![2, 3]], eta)
}
