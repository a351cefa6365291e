//! Detector time-tag simulation and coincidence post-processing.
//!
//! All timestamps are integer picoseconds. Pulse references are derived
//! from the divided clock: the clock tag at `c` stands for the pulses at
//! `c + l·rep_period` for `l < clock_divider`.

mod coincidence;
mod histogram;
pub mod io;
mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, NoiseModelParams};
use crate::polarization::{Basis, DensityMatrix, Pol};
use crate::tomography::MeasurementSetting;

pub use coincidence::{
    calibrate_offsets, expected_accidentals, extract_threefold, heralded_g2, pulse_keys,
    CalibrationOptions, CoincidenceWindows, Offsets, PulseKey, ThreefoldResult,
};
pub use histogram::{
    conditional_histogram, fit_gaussian_peak, folded_histogram, start_stop_histogram, GaussianFit,
    Histogram,
};
pub use sim::{simulate_setting_runs, simulate_streams, SettingRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "CLOCK")]
    Clock = 0,
    #[serde(rename = "D_A'")]
    APrime = 1,
    #[serde(rename = "D_R''")]
    RDouble = 2,
    #[serde(rename = "D_B'")]
    BPrime = 3,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Clock, Channel::APrime, Channel::RDouble, Channel::BPrime];
    pub const DETECTORS: [Channel; 3] = [Channel::APrime, Channel::RDouble, Channel::BPrime];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown channel id {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Clock => "CLOCK",
            Channel::APrime => "D_A'",
            Channel::RDouble => "D_R''",
            Channel::BPrime => "D_B'",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub t: u64,
    pub channel: Channel,
}

/// Per-channel sorted timestamp vectors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagStreams {
    streams: [Vec<u64>; 4],
    pub duration_ps: u64,
}

impl TagStreams {
    pub fn new(duration_ps: u64) -> Self {
        Self {
            streams: Default::default(),
            duration_ps,
        }
    }

    /// Builds from per-channel vectors, sorting each.
    pub fn from_unsorted(mut streams: [Vec<u64>; 4], duration_ps: u64) -> Self {
        for s in &mut streams {
            s.sort_unstable();
        }
        Self {
            streams,
            duration_ps,
        }
    }

    pub fn get(&self, ch: Channel) -> &[u64] {
        &self.streams[ch.index()]
    }

    pub fn set(&mut self, ch: Channel, mut tags: Vec<u64>) {
        tags.sort_unstable();
        self.streams[ch.index()] = tags;
    }

    pub fn len(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Single stream ordered by time, ties broken by channel order.
    pub fn merged(&self) -> Vec<TimeTag> {
        let mut out: Vec<TimeTag> = Channel::ALL
            .iter()
            .flat_map(|&ch| self.get(ch).iter().map(move |&t| TimeTag { t, channel: ch }))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn from_tags(tags: &[TimeTag], duration_ps: u64) -> Self {
        let mut streams: [Vec<u64>; 4] = Default::default();
        for tag in tags {
            streams[tag.channel.index()].push(tag.t);
        }
        Self::from_unsorted(streams, duration_ps)
    }
}

pub(crate) fn check_sorted(tags: &[u64], what: &str) -> Result<()> {
    if tags.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Unsorted(what.to_string()));
    }
    Ok(())
}

/// A value per detector channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerDetector {
    pub a_prime: f64,
    pub r_double: f64,
    pub b_prime: f64,
}

impl PerDetector {
    pub const fn uniform(v: f64) -> Self {
        Self {
            a_prime: v,
            r_double: v,
            b_prime: v,
        }
    }

    pub fn get(&self, ch: Channel) -> f64 {
        match ch {
            Channel::APrime => self.a_prime,
            Channel::RDouble => self.r_double,
            Channel::BPrime => self.b_prime,
            Channel::Clock => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rep_period_ps: u64,
    pub clock_divider: u64,
    pub duration_ps: u64,
    /// Mean SPDC pairs per `pair_window_ps` (cw, Poisson in time).
    pub pair_rate: f64,
    pub pair_window_ps: f64,
    /// Mean coherent photons per pulse.
    pub mu: f64,
    pub jitter_sigma_ps: f64,
    pub dark_rate_hz: PerDetector,
    pub efficiency: PerDetector,
    /// Pulse-to-detection delays of the coherent light at D_A′ and D_R″.
    pub delay_a_ps: u64,
    pub delay_r_ps: u64,
    /// Delay of the D_B′ partner relative to the D_A′ photon of a pair.
    pub pair_delay_ps: u64,
    pub echo_delay_ps: u64,
    pub echo_ratio: f64,
    pub echo_channels: Vec<Channel>,
    /// Stored for reference; not used by the simulator.
    pub coherence_times_ps: [f64; 2],
    /// Probability per pulse of a genuine three-fold event.
    pub threefold_prob: f64,
    pub dead_time_ps: u64,
    /// Generation segment length; segments use independent substreams.
    pub segment_ps: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rep_period_ps: 12_500,
            clock_divider: 100,
            duration_ps: 5_000_000_000,
            pair_rate: 9.0e-3,
            pair_window_ps: 300.0,
            mu: 0.31,
            jitter_sigma_ps: 85.0,
            dark_rate_hz: PerDetector::uniform(100.0),
            efficiency: PerDetector {
                a_prime: 0.01,
                r_double: 0.01,
                b_prime: 0.05,
            },
            delay_a_ps: 3_000,
            delay_r_ps: 4_500,
            pair_delay_ps: 2_500,
            echo_delay_ps: 6_000,
            echo_ratio: 0.3,
            echo_channels: vec![Channel::APrime, Channel::RDouble],
            coherence_times_ps: [169.0, 176.0],
            threefold_prob: 5e-3,
            dead_time_ps: 0,
            segment_ps: 1_000_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.rep_period_ps == 0 || self.clock_divider == 0 {
            return bad("rep_period_ps and clock_divider must be positive".into());
        }
        if self.segment_ps == 0 {
            return bad("segment_ps must be positive".into());
        }
        let rates = [
            self.pair_rate,
            self.mu,
            self.jitter_sigma_ps,
            self.dark_rate_hz.a_prime,
            self.dark_rate_hz.r_double,
            self.dark_rate_hz.b_prime,
        ];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("rates and jitter must be finite and non-negative".into());
        }
        if !(self.pair_window_ps > 0.0) {
            return bad("pair_window_ps must be positive".into());
        }
        for ch in Channel::DETECTORS {
            let e = self.efficiency.get(ch);
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("efficiency of {ch} is {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.echo_ratio) {
            return bad(format!("echo_ratio {}", self.echo_ratio));
        }
        if !(0.0..=1.0).contains(&self.threefold_prob) {
            return bad(format!("threefold_prob {}", self.threefold_prob));
        }
        if self.echo_channels.contains(&Channel::Clock) {
            return bad("the clock cannot carry an echo".into());
        }
        Ok(())
    }

    pub fn clock_period_ps(&self) -> u64 {
        self.rep_period_ps.saturating_mul(self.clock_divider)
    }

    /// SPDC pairs per second.
    pub fn pair_rate_hz(&self) -> f64 {
        self.pair_rate / (self.pair_window_ps * 1e-12)
    }

    /// Configuration with every random source switched off.
    pub fn silent(&self) -> Self {
        Self {
            pair_rate: 0.0,
            mu: 0.0,
            dark_rate_hz: PerDetector::uniform(0.0),
            threefold_prob: 0.0,
            ..self.clone()
        }
    }
}

/// Outcome probabilities of genuine three-folds for each pair of analyzer
/// bases. Qubit 0 is read at D_A′ (analyzer m), qubit 1 at D_B′ (analyzer n).
/// Outcomes are ordered (0,0), (0,1), (1,0), (1,1) with 0 the first state of
/// each basis (H, D, R).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    groups: BTreeMap<(Basis, Basis), [f64; 4]>,
    state: DensityMatrix,
}

impl OutcomeTable {
    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        if rho.qubits() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: rho.qubits(),
            });
        }
        rho.validate(1e-10)?;
        let rho = rho.normalized()?;
        let mut groups = BTreeMap::new();
        for b0 in Basis::ALL {
            for b1 in Basis::ALL {
                let mut probs = [0.0; 4];
                for (i, &m) in b0.states().iter().enumerate() {
                    for (j, &n) in b1.states().iter().enumerate() {
                        let p = MeasurementSetting::new(m, n).projector();
                        probs[i * 2 + j] = rho.expectation(&p)?.re.max(0.0);
                    }
                }
                let sum: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= sum);
                groups.insert((b0, b1), probs);
            }
        }
        Ok(Self { groups, state: rho })
    }

    /// ¼(II + v_z ZZ + v_x XX − v_y YY); |Φ⁺⟩ at unit visibilities.
    pub fn bell_diagonal(vz: f64, vx: f64, vy: f64) -> Result<Self> {
        let i = Complex64::i();
        let c = |x: f64| Complex64::new(x, 0.0);
        let z = [[c(1.0), c(0.0)], [c(0.0), c(-1.0)]];
        let x = [[c(0.0), c(1.0)], [c(1.0), c(0.0)]];
        let y = [[c(0.0), -i], [i, c(0.0)]];
        let kron = |a: &[[Complex64; 2]; 2]| {
            DMatrix::from_fn(4, 4, |r, col| a[r / 2][col / 2] * a[r % 2][col % 2])
        };
        let m = DMatrix::<Complex64>::identity(4, 4)
            + kron(&z) * c(vz)
            + kron(&x) * c(vx)
            - kron(&y) * c(vy);
        let rho = DensityMatrix::from_matrix(m * c(0.25)).map_err(|e| {
            Error::InvalidState(format!("visibilities ({vz}, {vx}, {vy}) give no state: {e}"))
        })?;
        Self::from_density(&rho)
    }

    pub fn ideal() -> Self {
        Self::bell_diagonal(1.0, 1.0, 1.0).expect("Φ⁺ is a valid state")
    }

    /// Model visibilities with the diagonal ones each lowered by
    /// `2·overlap_penalty`, so the fidelity drops by exactly the penalty.
    pub fn from_model(p: &NoiseModelParams, overlap_penalty: f64) -> Result<Self> {
        if !(overlap_penalty >= 0.0) {
            return Err(Error::InvalidParameter(format!("overlap penalty {overlap_penalty}")));
        }
        let pred = model::predict(p)?;
        Self::bell_diagonal(
            pred.vz,
            pred.vx - 2.0 * overlap_penalty,
            pred.vy - 2.0 * overlap_penalty,
        )
    }

    pub fn group(&self, b0: Basis, b1: Basis) -> [f64; 4] {
        self.groups[&(b0, b1)]
    }

    pub fn probability(&self, setting: MeasurementSetting) -> f64 {
        let g = self.group(setting.m.basis(), setting.n.basis());
        g[setting.m.index_in_basis() * 2 + setting.n.index_in_basis()]
    }

    /// The state the table was built from.
    pub fn state(&self) -> &DensityMatrix {
        &self.state
    }
}

/// Analyzer settings in run order: m over H,V,D,A,R,L, then n.
pub fn all_settings() -> Vec<MeasurementSetting> {
    Pol::ALL
        .iter()
        .flat_map(|&m| Pol::ALL.iter().map(move |&n| MeasurementSetting::new(m, n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::bell_phi;

    #[test]
    fn outcome_groups_sum_to_one() {
        let t = OutcomeTable::from_density(&bell_phi(0.4)).unwrap();
        for b0 in Basis::ALL {
            for b1 in Basis::ALL {
                assert!((t.group(b0, b1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ideal_table_is_phi_plus() {
        let t = OutcomeTable::ideal();
        assert!((t.probability(MeasurementSetting::new(Pol::H, Pol::H)) - 0.5).abs() < 1e-12);
        assert!(t.probability(MeasurementSetting::new(Pol::D, Pol::A)).abs() < 1e-12);
        assert!((t.probability(MeasurementSetting::new(Pol::R, Pol::L)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn model_table_fidelity() {
        let p = NoiseModelParams::new(0.28, 0.018, 0.098).unwrap();
        let f0 = model::predicted_fidelity(&p).unwrap();
        for penalty in [0.0, 0.06] {
            let t = OutcomeTable::from_model(&p, penalty).unwrap();
            let f = crate::polarization::fidelity(t.state(), &crate::polarization::StateVector::phi_plus())
                .unwrap();
            assert!((f - (f0 - penalty)).abs() < 1e-12);
        }
    }

    #[test]
    fn unphysical_visibilities_are_rejected() {
        assert!(OutcomeTable::bell_diagonal(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn merged_order_breaks_ties_by_channel() {
        let mut s = TagStreams::new(100);
        s.set(Channel::BPrime, vec![5]);
        s.set(Channel::APrime, vec![5, 1]);
        let m = s.merged();
        assert_eq!(m[0].t, 1);
        assert_eq!(m[1].channel, Channel::APrime);
        assert_eq!(m[2].channel, Channel::BPrime);
    }
}
