use std::fmt::Write as _;

use super::check_sorted;
use crate::error::{Error, Result};

/// Fixed-width histogram over `[start_ps, start_ps + bins·bin_ps)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub start_ps: i64,
    pub bin_ps: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(start_ps: i64, bin_ps: u64, range_ps: u64) -> Result<Self> {
        if bin_ps == 0 || range_ps == 0 {
            return Err(Error::InvalidParameter("bin and range must be positive".into()));
        }
        Ok(Self {
            start_ps,
            bin_ps,
            counts: vec![0; range_ps.div_ceil(bin_ps) as usize],
        })
    }

    pub fn range_ps(&self) -> u64 {
        self.counts.len() as u64 * self.bin_ps
    }

    /// Adds a delay; returns whether it fell inside the range.
    pub fn add(&mut self, delay: i64) -> bool {
        let off = delay - self.start_ps;
        if off < 0 || off as u64 >= self.range_ps() {
            return false;
        }
        self.counts[(off as u64 / self.bin_ps) as usize] += 1;
        true
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, i: usize) -> i64 {
        self.start_ps + (i as u64 * self.bin_ps) as i64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.bin_start(i) as f64 + self.bin_ps as f64 / 2.0
    }

    /// Index of the largest bin; the first one on ties.
    pub fn argmax(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == max)
    }

    pub fn median(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let mut v = self.counts.clone();
        v.sort_unstable();
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
        }
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.start_ps != other.start_ps
            || self.bin_ps != other.bin_ps
            || self.counts.len() != other.counts.len()
        {
            return Err(Error::InvalidParameter("histogram layouts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Sums adjacent bins into bins `factor` times wider.
    pub fn rebin(&self, factor: usize) -> Result<Histogram> {
        if factor == 0 {
            return Err(Error::InvalidParameter("rebin factor must be positive".into()));
        }
        Ok(Histogram {
            start_ps: self.start_ps,
            bin_ps: self.bin_ps * factor as u64,
            counts: self.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
        })
    }

    /// `bin_start_ps,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_ps,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{c}", self.bin_start(i));
        }
        s
    }
}

/// Delay of each stop from the latest start at or before it.
pub fn start_stop_histogram(start: &[u64], stop: &[u64], bin_ps: u64, range_ps: u64) -> Result<Histogram> {
    check_sorted(start, "start stream")?;
    check_sorted(stop, "stop stream")?;
    let mut h = Histogram::new(0, bin_ps, range_ps)?;
    let mut j = 0usize;
    for &t in stop {
        while j < start.len() && start[j] <= t {
            j += 1;
        }
        if j == 0 {
            continue;
        }
        h.add((t - start[j - 1]) as i64);
    }
    Ok(h)
}

/// Start-stop delays folded modulo `period_ps`, e.g. onto one pulse period.
pub fn folded_histogram(
    start: &[u64],
    stop: &[u64],
    period_ps: u64,
    bin_ps: u64,
) -> Result<Histogram> {
    check_sorted(start, "start stream")?;
    check_sorted(stop, "stop stream")?;
    if period_ps == 0 {
        return Err(Error::InvalidParameter("fold period must be positive".into()));
    }
    let mut h = Histogram::new(0, bin_ps, period_ps)?;
    let mut j = 0usize;
    for &t in stop {
        while j < start.len() && start[j] <= t {
            j += 1;
        }
        if j == 0 {
            continue;
        }
        h.add(((t - start[j - 1]) % period_ps) as i64);
    }
    Ok(h)
}

/// Delays `target − cond` in `[start_ps, start_ps + range_ps)` for every
/// conditioning tag accepted by `accept`.
pub fn conditional_histogram(
    cond: &[u64],
    accept: impl Fn(u64) -> bool,
    target: &[u64],
    start_ps: i64,
    bin_ps: u64,
    range_ps: u64,
) -> Result<Histogram> {
    check_sorted(cond, "conditioning stream")?;
    check_sorted(target, "target stream")?;
    let mut h = Histogram::new(start_ps, bin_ps, range_ps)?;
    let mut lo = 0usize;
    for &c in cond {
        if !accept(c) {
            continue;
        }
        let first = c as i64 + start_ps;
        while lo < target.len() && (target[lo] as i64) < first {
            lo += 1;
        }
        let mut k = lo;
        while k < target.len() && h.add(target[k] as i64 - c as i64) {
            k += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    pub sigma: f64,
    pub background: f64,
    pub signal: f64,
}

/// Moment estimate of a single peak within `center ± half_width`, after
/// subtracting the median bin as a flat background.
pub fn fit_gaussian_peak(h: &Histogram, center: f64, half_width: f64) -> Result<GaussianFit> {
    let bg = h.median();
    let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, &c) in h.counts.iter().enumerate() {
        let x = h.bin_center(i);
        if (x - center).abs() > half_width {
            continue;
        }
        let y = c as f64 - bg;
        w += y;
        m1 += y * x;
        m2 += y * x * x;
    }
    if w <= 0.0 {
        return Err(Error::NoPeak {
            what: "gaussian fit".into(),
            snr: 0.0,
        });
    }
    let mean = m1 / w;
    // remove the variance of a uniform distribution over one bin
    let var = (m2 / w - mean * mean - (h.bin_ps as f64).powi(2) / 12.0).max(0.0);
    Ok(GaussianFit {
        mean,
        sigma: var.sqrt(),
        background: bg,
        signal: w,
    })
}
