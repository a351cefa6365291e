use serde::{Deserialize, Serialize};

use super::histogram::{conditional_histogram, folded_histogram, Histogram};
use super::{check_sorted, Channel, TagStreams};
use crate::error::{Error, Result};

/// Window offsets (Δt₁, Δt₂, Δt₃) relative to each pulse, with widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceWindows {
    pub dt1: i64,
    pub dt2: i64,
    pub dt3: i64,
    pub w_a: u64,
    pub w_r: u64,
    pub w_b: u64,
}

impl Default for CoincidenceWindows {
    fn default() -> Self {
        Self {
            dt1: 3_000,
            dt2: 4_500,
            dt3: 5_500,
            w_a: 300,
            w_r: 300,
            w_b: 100,
        }
    }
}

impl CoincidenceWindows {
    pub fn with_offsets(self, o: Offsets) -> Self {
        Self {
            dt1: o.dt1,
            dt2: o.dt2,
            dt3: o.dt3,
            ..self
        }
    }

    fn per_channel(&self) -> [(Channel, i64, u64); 3] {
        [
            (Channel::APrime, self.dt1, self.w_a),
            (Channel::RDouble, self.dt2, self.w_r),
            (Channel::BPrime, self.dt3, self.w_b),
        ]
    }
}

/// A pulse, named by the clock tag that precedes it and its index within
/// the clock period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PulseKey {
    pub clock_index: u64,
    pub pulse: u64,
}

/// Calls `hit(tag, key)` for every tag inside the window of some pulse.
fn for_each_hit(
    tags: &[u64],
    clock: &[u64],
    offset: i64,
    width: u64,
    rep_period_ps: u64,
    clock_divider: u64,
    mut hit: impl FnMut(u64, PulseKey),
) -> Result<()> {
    check_sorted(tags, "tag stream")?;
    check_sorted(clock, "clock stream")?;
    if width == 0 || width > rep_period_ps {
        return Err(Error::WindowOverlap {
            width,
            period: rep_period_ps,
        });
    }
    let shift = (width / 2) as i64 - offset;
    let mut ci = 0usize;
    for &t in tags {
        let u = t as i64 + shift;
        if u < 0 {
            continue;
        }
        let u = u as u64;
        while ci < clock.len() && clock[ci] <= u {
            ci += 1;
        }
        if ci == 0 {
            continue;
        }
        let c = clock[ci - 1];
        let l = (u - c) / rep_period_ps;
        if l < clock_divider && u - (c + l * rep_period_ps) < width {
            hit(
                t,
                PulseKey {
                    clock_index: (ci - 1) as u64,
                    pulse: l,
                },
            );
        }
    }
    Ok(())
}

/// Sorted, deduplicated pulses for which `tags` has at least one tag in
/// `[ref + offset − width/2, ref + offset − width/2 + width)`.
pub fn pulse_keys(
    tags: &[u64],
    clock: &[u64],
    offset: i64,
    width: u64,
    rep_period_ps: u64,
    clock_divider: u64,
) -> Result<Vec<PulseKey>> {
    let mut keys: Vec<PulseKey> = Vec::new();
    for_each_hit(tags, clock, offset, width, rep_period_ps, clock_divider, |_, key| {
        if keys.last() != Some(&key) {
            keys.push(key);
        }
    })?;
    Ok(keys)
}

fn intersect(a: &[PulseKey], b: &[PulseKey]) -> Vec<PulseKey> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreefoldResult {
    pub count: u64,
    pub events: Vec<PulseKey>,
}

/// Pulses with at least one tag in every detector's window.
pub fn extract_threefold(
    streams: &TagStreams,
    windows: &CoincidenceWindows,
    rep_period_ps: u64,
    clock_divider: u64,
) -> Result<ThreefoldResult> {
    let clock = streams.get(Channel::Clock);
    let mut sets = Vec::with_capacity(3);
    for (ch, off, w) in windows.per_channel() {
        sets.push(pulse_keys(streams.get(ch), clock, off, w, rep_period_ps, clock_divider)?);
    }
    let events = intersect(&intersect(&sets[0], &sets[1]), &sets[2]);
    Ok(ThreefoldResult {
        count: events.len() as u64,
        events,
    })
}

/// refs · Π (1 − e^{−rᵢwᵢ}) for independent Poisson channels.
pub fn expected_accidentals(rates_hz: [f64; 3], widths_ps: [u64; 3], references: f64) -> f64 {
    references
        * rates_hz
            .iter()
            .zip(widths_ps)
            .map(|(r, w)| 1.0 - (-r * w as f64 * 1e-12).exp())
            .product::<f64>()
}

/// N_h·N_hab / (N_ha·N_hb) over pulse-keyed click sets.
pub fn heralded_g2(herald: &[PulseKey], a: &[PulseKey], b: &[PulseKey]) -> Option<f64> {
    let ha = intersect(herald, a);
    let hb = intersect(herald, b);
    let hab = intersect(&ha, b);
    let den = ha.len() as f64 * hb.len() as f64;
    (den > 0.0).then(|| herald.len() as f64 * hab.len() as f64 / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub bin_ps: u64,
    pub snr_threshold: f64,
    /// Half-width of the centroid region around the argmax bin.
    pub refine_ps: u64,
    /// A′ window width used to select conditioning tags for Δt₃.
    pub w_a: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            bin_ps: 10,
            snr_threshold: 5.0,
            refine_ps: 300,
            w_a: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offsets {
    pub dt1: i64,
    pub dt2: i64,
    pub dt3: i64,
}

/// Background-subtracted centroid of the highest peak, or an error when
/// the peak does not clear the SNR threshold.
fn peak_position(h: &Histogram, opts: &CalibrationOptions, what: &str) -> Result<f64> {
    let i = h.argmax().ok_or_else(|| Error::NoPeak {
        what: what.to_string(),
        snr: 0.0,
    })?;
    let med = h.median();
    let peak = h.counts[i] as f64;
    let snr = (peak - med) / med.max(1.0).sqrt();
    if !(snr >= opts.snr_threshold) {
        return Err(Error::NoPeak {
            what: what.to_string(),
            snr,
        });
    }
    // mean shift: re-centre the window on its own centroid so a noisy
    // argmax bin does not drag the estimate
    let mut center = h.bin_center(i);
    for _ in 0..50 {
        let (mut w, mut m) = (0.0, 0.0);
        for (k, &c) in h.counts.iter().enumerate() {
            let x = h.bin_center(k);
            if (x - center).abs() <= opts.refine_ps as f64 {
                let y = (c as f64 - med).max(0.0);
                w += y;
                m += y * x;
            }
        }
        if w <= 0.0 {
            break;
        }
        let next = m / w;
        let done = (next - center).abs() < 0.01;
        center = next;
        if done {
            break;
        }
    }
    Ok(center)
}

/// Offsets from histograms summed over all `runs`.
///
/// Δt₁ and Δt₂ come from the pulse-folded D_A′ and D_R″ histograms (the
/// highest peak wins over the echo). Δt₃ is Δt₁ plus the D_B′ delay peak
/// conditioned on D_A′ tags inside the Δt₁ window.
pub fn calibrate_offsets(
    runs: &[&TagStreams],
    rep_period_ps: u64,
    clock_divider: u64,
    opts: &CalibrationOptions,
) -> Result<Offsets> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("no streams to calibrate on".into()));
    }
    let folded = |ch: Channel| -> Result<Histogram> {
        let mut acc = Histogram::new(0, opts.bin_ps, rep_period_ps)?;
        for s in runs {
            acc.merge(&folded_histogram(s.get(Channel::Clock), s.get(ch), rep_period_ps, opts.bin_ps)?)?;
        }
        Ok(acc)
    };
    let dt1 = peak_position(&folded(Channel::APrime)?, opts, "D_A' pulse histogram")?.round() as i64;
    let dt2 = peak_position(&folded(Channel::RDouble)?, opts, "D_R'' pulse histogram")?.round() as i64;

    let half = (rep_period_ps / 2) as i64;
    let mut cond = Histogram::new(-half, opts.bin_ps, 2 * rep_period_ps)?;
    for s in runs {
        let clock = s.get(Channel::Clock);
        let a = s.get(Channel::APrime);
        let mut accepted = Vec::new();
        for_each_hit(a, clock, dt1, opts.w_a, rep_period_ps, clock_divider, |t, _| accepted.push(t))?;
        cond.merge(&conditional_histogram(
            &accepted,
            |_| true,
            s.get(Channel::BPrime),
            -half,
            opts.bin_ps,
            2 * rep_period_ps,
        )?)?;
    }
    let delay = peak_position(&cond, opts, "D_B' conditional histogram")?.round() as i64;
    Ok(Offsets {
        dt1,
        dt2,
        dt3: dt1 + delay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams(clock: Vec<u64>, a: Vec<u64>, r: Vec<u64>, b: Vec<u64>) -> TagStreams {
        TagStreams::from_unsorted([clock, a, r, b], 1_000_000)
    }

    #[test]
    fn empty_streams_have_no_coincidences() {
        let s = TagStreams::new(0);
        let res = extract_threefold(&s, &CoincidenceWindows::default(), 12_500, 100).unwrap();
        assert_eq!(res.count, 0);
    }

    #[test]
    fn upper_window_edge_is_excluded() {
        let w = CoincidenceWindows::default();
        let clock = vec![0];
        // A′ window for pulse 0 is [2850, 3150)
        for (t, hit) in [(2850, true), (3149, true), (3150, false), (2849, false)] {
            let keys = pulse_keys(&[t], &clock, w.dt1, w.w_a, 12_500, 100).unwrap();
            assert_eq!(!keys.is_empty(), hit, "t = {t}");
        }
    }

    #[test]
    fn multiple_tags_count_once() {
        let clock = vec![0, 1_250_000];
        let s = streams(clock, vec![3000, 3010, 15_500], vec![4500, 17_000], vec![5500, 5510, 18_000]);
        let res = extract_threefold(&s, &CoincidenceWindows::default(), 12_500, 100).unwrap();
        assert_eq!(res.count, 2);
        assert_eq!(res.events[1], PulseKey { clock_index: 0, pulse: 1 });
    }

    #[test]
    fn oversized_window_is_rejected() {
        let w = CoincidenceWindows {
            w_a: 20_000,
            ..CoincidenceWindows::default()
        };
        let s = streams(vec![0], vec![1], vec![1], vec![1]);
        assert!(matches!(
            extract_threefold(&s, &w, 12_500, 100),
            Err(Error::WindowOverlap { .. })
        ));
    }

    #[test]
    fn g2_of_independent_sets() {
        let keys = |v: &[u64]| -> Vec<PulseKey> {
            v.iter().map(|&p| PulseKey { clock_index: 0, pulse: p }).collect()
        };
        let h = keys(&[0, 1, 2, 3]);
        let a = keys(&[0, 1]);
        let b = keys(&[0, 2]);
        assert_eq!(heralded_g2(&h, &a, &b), Some(1.0));
        assert_eq!(heralded_g2(&h, &a, &keys(&[2, 3])), Some(0.0));
        assert_eq!(heralded_g2(&h, &[], &b), None);
    }
}
