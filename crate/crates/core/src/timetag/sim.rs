use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;

use super::{Channel, ExperimentConfig, OutcomeTable, TagStreams};
use crate::error::{Error, Result};
use crate::rng::substream2;
use crate::tomography::MeasurementSetting;

const PS_PER_S: f64 = 1e12;

/// Streams for one analyzer setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingRun {
    pub setting: MeasurementSetting,
    pub streams: TagStreams,
}

/// Iterates pulse indices in `[start, end)` that fire with probability `p`.
fn bernoulli_pulses(rng: &mut ChaCha8Rng, start: u64, end: u64, p: f64, mut f: impl FnMut(&mut ChaCha8Rng, u64)) {
    if p <= 0.0 || start >= end {
        return;
    }
    if p >= 1.0 {
        for l in start..end {
            f(rng, l);
        }
        return;
    }
    let geo = Geometric::new(p).expect("0 < p < 1");
    let mut l = start;
    loop {
        let skip = geo.sample(rng);
        l = match l.checked_add(skip) {
            Some(v) if v < end => v,
            _ => return,
        };
        f(rng, l);
        l += 1;
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

struct Jitter {
    normal: Option<Normal<f64>>,
}

impl Jitter {
    fn new(sigma: f64) -> Self {
        Self {
            normal: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")),
        }
    }

    /// Adds Gaussian jitter and rounds half-to-even to the 1 ps grid;
    /// tags pushed below zero are clamped to 0.
    fn apply(&self, rng: &mut ChaCha8Rng, t: u64) -> u64 {
        match &self.normal {
            None => t,
            Some(n) => {
                let v = (t as f64 + n.sample(rng)).round_ties_even();
                if v <= 0.0 {
                    0
                } else {
                    v as u64
                }
            }
        }
    }
}

fn check_range(cfg: &ExperimentConfig) -> Result<()> {
    let max_delay = [
        cfg.delay_a_ps,
        cfg.delay_r_ps,
    ]
    .into_iter()
    .max()
    .unwrap_or(0)
    .checked_add(cfg.echo_delay_ps)
    .and_then(|d| d.checked_add(cfg.pair_delay_ps))
    .and_then(|d| d.checked_add(cfg.rep_period_ps));
    let ok = max_delay
        .and_then(|d| d.checked_add(cfg.duration_ps))
        .and_then(|d| d.checked_add((20.0 * cfg.jitter_sigma_ps) as u64))
        .is_some_and(|end| end < i64::MAX as u64);
    if ok {
        Ok(())
    } else {
        Err(Error::Overflow(format!(
            "duration {} ps plus delays exceeds the 64-bit picosecond range",
            cfg.duration_ps
        )))
    }
}

/// Generates the four streams of one analyzer setting.
pub fn simulate_streams(
    cfg: &ExperimentConfig,
    outcomes: &OutcomeTable,
    setting: MeasurementSetting,
    seed: u64,
    run_index: u64,
) -> Result<TagStreams> {
    cfg.validate()?;
    check_range(cfg)?;
    let rep = cfg.rep_period_ps;
    let period = cfg.clock_period_ps();
    // segments are whole clock periods so pulse bookkeeping stays aligned
    let seg = (cfg.segment_ps / period).max(1) * period;
    let n_segments = cfg.duration_ps / seg + 1;
    let group = outcomes.group(setting.m.basis(), setting.n.basis());
    let want = (setting.m.index_in_basis(), setting.n.index_in_basis());

    let parts: Vec<[Vec<u64>; 4]> = (0..n_segments)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream2(seed, run_index.wrapping_add(1) << 20, k);
            let start = k * seg;
            let end = ((k + 1) * seg).min(cfg.duration_ps.saturating_add(1));
            simulate_segment(cfg, &group, want, start, end, rep, &mut rng)
        })
        .collect();

    let mut streams: [Vec<u64>; 4] = Default::default();
    for part in parts {
        for (dst, src) in streams.iter_mut().zip(part) {
            dst.extend(src);
        }
    }
    let mut out = TagStreams::from_unsorted(streams, cfg.duration_ps);
    if cfg.dead_time_ps > 0 {
        for ch in Channel::DETECTORS {
            let kept = apply_dead_time(out.get(ch), cfg.dead_time_ps);
            out.set(ch, kept);
        }
    }
    Ok(out)
}

/// Tags in `[start, end)` of the time axis (clock and pulse origins), in
/// arbitrary order.
fn simulate_segment(
    cfg: &ExperimentConfig,
    group: &[f64; 4],
    want: (usize, usize),
    start: u64,
    end: u64,
    rep: u64,
    rng: &mut ChaCha8Rng,
) -> [Vec<u64>; 4] {
    let mut s: [Vec<u64>; 4] = Default::default();
    let jitter = Jitter::new(cfg.jitter_sigma_ps);
    let period = cfg.clock_period_ps();
    let a = Channel::APrime.index();
    let r = Channel::RDouble.index();
    let b = Channel::BPrime.index();

    let mut c = start.div_ceil(period) * period;
    while c < end {
        s[0].push(c);
        c += period;
    }

    let first_pulse = start.div_ceil(rep);
    let last_pulse = end.div_ceil(rep);

    // coherent pulse train: half of the D-polarized light reaches each
    // analyzed detector
    for (ch, delay) in [(Channel::APrime, cfg.delay_a_ps), (Channel::RDouble, cfg.delay_r_ps)] {
        let eta = cfg.efficiency.get(ch);
        let p = 1.0 - (-cfg.mu * eta * 0.5).exp();
        bernoulli_pulses(rng, first_pulse, last_pulse, p, |rng, l| {
            let t = jitter.apply(rng, l * rep + delay);
            s[ch.index()].push(t);
        });
        if cfg.echo_channels.contains(&ch) {
            let p = 1.0 - (-cfg.mu * eta * 0.5 * cfg.echo_ratio).exp();
            bernoulli_pulses(rng, first_pulse, last_pulse, p, |rng, l| {
                let t = jitter.apply(rng, l * rep + delay + cfg.echo_delay_ps);
                s[ch.index()].push(t);
            });
        }
    }
    if cfg.echo_channels.contains(&Channel::BPrime) {
        // leaked pulse light on D_B′ arrives with the pair partner's delay
        let eta = cfg.efficiency.b_prime;
        let p = 1.0 - (-cfg.mu * eta * 0.5 * cfg.echo_ratio).exp();
        bernoulli_pulses(rng, first_pulse, last_pulse, p, |rng, l| {
            let t = jitter.apply(rng, l * rep + cfg.delay_a_ps + cfg.echo_delay_ps);
            s[b].push(t);
        });
    }

    // cw SPDC background pairs
    let span = (end - start) as f64;
    let n_pairs = poisson_count(rng, cfg.pair_rate_hz() * span / PS_PER_S);
    let p_b = cfg.efficiency.b_prime * 0.5;
    let p_a = 0.25 * cfg.efficiency.a_prime;
    let p_r = 0.25 * cfg.efficiency.r_double;
    for _ in 0..n_pairs {
        let tau = start + rng.random_range(0..end - start);
        let u: f64 = rng.random();
        if u < p_a {
            s[a].push(jitter.apply(rng, tau));
        } else if u < p_a + p_r {
            s[r].push(jitter.apply(rng, tau));
        }
        if rng.random::<f64>() < p_b {
            s[b].push(jitter.apply(rng, tau + cfg.pair_delay_ps));
        }
    }

    // genuine three-folds
    let cum = [group[0], group[0] + group[1], group[0] + group[1] + group[2]];
    bernoulli_pulses(rng, first_pulse, last_pulse, cfg.threefold_prob, |rng, l| {
        let pulse = l * rep;
        let u: f64 = rng.random();
        let outcome = cum.iter().position(|&c| u < c).unwrap_or(3);
        s[r].push(jitter.apply(rng, pulse + cfg.delay_r_ps));
        if outcome / 2 == want.0 {
            s[a].push(jitter.apply(rng, pulse + cfg.delay_a_ps));
        }
        if outcome % 2 == want.1 {
            s[b].push(jitter.apply(rng, pulse + cfg.delay_a_ps + cfg.pair_delay_ps));
        }
    });

    // dark counts
    for ch in Channel::DETECTORS {
        let n = poisson_count(rng, cfg.dark_rate_hz.get(ch) * span / PS_PER_S);
        for _ in 0..n {
            let t = start + rng.random_range(0..end - start);
            s[ch.index()].push(t);
        }
    }
    s
}

/// Non-paralyzable dead time on a sorted stream.
pub fn apply_dead_time(tags: &[u64], dead: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(tags.len());
    let mut ready = 0u64;
    for &t in tags {
        if out.is_empty() || t >= ready {
            out.push(t);
            ready = t.saturating_add(dead);
        }
    }
    out
}

/// One run per setting, each from its own substream of `seed`.
pub fn simulate_setting_runs(
    cfg: &ExperimentConfig,
    outcomes: &OutcomeTable,
    settings: &[MeasurementSetting],
    seed: u64,
) -> Result<Vec<SettingRun>> {
    settings
        .iter()
        .enumerate()
        .map(|(i, &setting)| {
            Ok(SettingRun {
                setting,
                streams: simulate_streams(cfg, outcomes, setting, seed, i as u64)?,
            })
        })
        .collect()
}
