//! Signal-processing primitives shared by the extractors: Butterworth
//! filtering, Welch spectra, band integration, peak picking and summary
//! statistics.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Filter response shape with its cutoff(s) in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass(f64),
    Highpass(f64),
    Bandpass(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub zero_phase: bool,
}

impl FilterSpec {
    /// Fourth-order zero-phase Butterworth.
    pub fn butter(kind: FilterKind) -> Self {
        FilterSpec {
            kind,
            order: 4,
            zero_phase: true,
        }
    }

    pub fn lowpass(cutoff_hz: f64) -> Self {
        Self::butter(FilterKind::Lowpass(cutoff_hz))
    }

    pub fn highpass(cutoff_hz: f64) -> Self {
        Self::butter(FilterKind::Highpass(cutoff_hz))
    }

    pub fn bandpass(lo_hz: f64, hi_hz: f64) -> Self {
        Self::butter(FilterKind::Bandpass(lo_hz, hi_hz))
    }

    pub fn validate(&self, rate_hz: f64) -> Result<(), FeatureError> {
        let nyquist = rate_hz / 2.0;
        let invalid = |msg: String| Err(FeatureError::InvalidFilter(msg));
        if self.order == 0 {
            return invalid("filter order must be positive".into());
        }
        let cutoffs = match self.kind {
            FilterKind::Lowpass(c) | FilterKind::Highpass(c) => vec![c],
            FilterKind::Bandpass(lo, hi) => {
                if lo >= hi {
                    return invalid(format!("bandpass requires low < high (got {lo}, {hi})"));
                }
                vec![lo, hi]
            }
        };
        for c in cutoffs {
            if c.is_nan() || c <= 0.0 {
                return invalid(format!("cutoff {c} Hz must be positive"));
            }
            if c >= nyquist {
                return invalid(format!("cutoff {c} Hz is not below Nyquist {nyquist} Hz"));
            }
        }
        Ok(())
    }

    /// True when every cutoff lies strictly inside (0, Nyquist).
    pub fn fits(&self, rate_hz: f64) -> bool {
        self.validate(rate_hz).is_ok()
    }
}

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 3],
}

impl Biquad {
    fn response_at(&self, z_inv: f64) -> f64 {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = self.a[0] + self.a[1] * z_inv + self.a[2] * z_inv * z_inv;
        num / den
    }

    /// Transposed direct-form-II state giving a constant output for constant
    /// input `x`.
    fn steady_state(&self, x: f64) -> ([f64; 2], f64) {
        let y = x * self.response_at(1.0);
        let z2 = self.b[2] * x - self.a[2] * y;
        let z1 = self.b[1] * x - self.a[1] * y + z2;
        ([z1, z2], y)
    }

    fn run(&self, data: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in data.iter_mut() {
            let x = *v;
            let y = b0 * x + state[0];
            state[0] = b1 * x - a1 * y + state[1];
            state[1] = b2 * x - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth sections via the bilinear transform.
fn butter_sections(order: usize, cutoff_hz: f64, rate_hz: f64, highpass: bool) -> Vec<Biquad> {
    let fs2 = 2.0 * rate_hz;
    let warped = fs2 * (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
    let bilinear = |s: Complex64| (Complex64::new(fs2, 0.0) + s) / (Complex64::new(fs2, 0.0) - s);
    let zero = if highpass { 1.0 } else { -1.0 };
    // Normalize each section at DC (lowpass) or Nyquist (highpass).
    let reference = if highpass { -1.0 } else { 1.0 };

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    let n = order as f64;
    for k in 0..order / 2 {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let proto = Complex64::from_polar(1.0, theta);
        let analog = if highpass {
            Complex64::new(warped, 0.0) / proto
        } else {
            proto * warped
        };
        let p = bilinear(analog);
        let mut section = Biquad {
            b: [1.0, -2.0 * zero, 1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        };
        let g = section.response_at(reference);
        section.b.iter_mut().for_each(|b| *b /= g);
        sections.push(section);
    }
    if order % 2 == 1 {
        // The real prototype pole maps to -warped for both shapes.
        let analog = Complex64::new(-warped, 0.0);
        let p = bilinear(analog).re;
        let mut section = Biquad {
            b: [1.0, -zero, 0.0],
            a: [1.0, -p, 0.0],
        };
        let g = section.response_at(reference);
        section.b.iter_mut().for_each(|b| *b /= g);
        sections.push(section);
    }
    sections
}

fn design(spec: &FilterSpec, rate_hz: f64) -> Vec<Biquad> {
    match spec.kind {
        FilterKind::Lowpass(c) => butter_sections(spec.order, c, rate_hz, false),
        FilterKind::Highpass(c) => butter_sections(spec.order, c, rate_hz, true),
        FilterKind::Bandpass(lo, hi) => {
            let mut s = butter_sections(spec.order, lo, rate_hz, true);
            s.extend(butter_sections(spec.order, hi, rate_hz, false));
            s
        }
    }
}

fn run_cascade(sections: &[Biquad], data: &mut [f64]) {
    let mut level = data.first().copied().unwrap_or(0.0);
    for s in sections {
        let (state, out_level) = s.steady_state(level);
        s.run(data, state);
        level = out_level;
    }
}

/// Applies a Butterworth filter. Zero-phase specs run forward then backward
/// over an odd-extended copy of the series.
pub fn bandpass_filter(
    series: &[f64],
    rate_hz: f64,
    spec: &FilterSpec,
) -> Result<Vec<f64>, FeatureError> {
    spec.validate(rate_hz)?;
    let n = series.len();
    let needed = 3 * spec.order;
    if n < needed.max(2) {
        return Err(FeatureError::InsufficientData { needed, got: n });
    }
    let sections = design(spec, rate_hz);
    if !spec.zero_phase {
        let mut out = series.to_vec();
        run_cascade(&sections, &mut out);
        return Ok(out);
    }

    // Pad long enough for the slowest pole to settle, not just the
    // section-count default, so trends survive very low cutoffs.
    let lowest = match spec.kind {
        FilterKind::Lowpass(c) | FilterKind::Highpass(c) => c,
        FilterKind::Bandpass(lo, _) => lo,
    };
    let settle = (2.0 * rate_hz / lowest).ceil() as usize;
    let pad = (3 * (2 * sections.len() + 1)).max(settle).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (series[0], series[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - series[i]));
    ext.extend_from_slice(series);
    ext.extend((1..=pad).map(|i| 2.0 * last - series[n - 1 - i]));

    run_cascade(&sections, &mut ext);
    ext.reverse();
    run_cascade(&sections, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Filters when the spec fits under Nyquist and the series is long enough;
/// otherwise returns the series unchanged.
pub fn filter_or_passthrough(series: &[f64], rate_hz: f64, spec: &FilterSpec) -> Vec<f64> {
    bandpass_filter(series, rate_hz, spec).unwrap_or_else(|_| series.to_vec())
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub frequencies_hz: Vec<f64>,
    pub power: Vec<f64>,
}

impl SpectralEstimate {
    pub fn resolution_hz(&self) -> f64 {
        if self.frequencies_hz.len() > 1 {
            self.frequencies_hz[1] - self.frequencies_hz[0]
        } else {
            0.0
        }
    }

    /// Σ power·Δf over every bin.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution_hz()
    }

    /// Frequency of the largest bin above DC; `None` when that power is zero.
    pub fn peak_frequency(&self) -> Option<f64> {
        let (idx, &p) = self.power.iter().enumerate().skip(1).fold(
            None,
            |best: Option<(usize, &f64)>, (i, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            },
        )?;
        (p > 0.0).then(|| self.frequencies_hz[idx])
    }
}

pub const MIN_WELCH_SAMPLES: usize = 32;

/// Welch PSD with a Hann window, segments of `min(4·rate, N)` samples and 50%
/// overlap; each segment is mean-detrended.
pub fn welch_psd(series: &[f64], rate_hz: f64) -> Result<SpectralEstimate, FeatureError> {
    let segment = ((4.0 * rate_hz).round() as usize).clamp(1, series.len().max(1));
    welch_psd_with_segment(series, rate_hz, segment)
}

/// Welch PSD with an explicit segment length (clamped to the series length).
pub fn welch_psd_with_segment(
    series: &[f64],
    rate_hz: f64,
    segment: usize,
) -> Result<SpectralEstimate, FeatureError> {
    let n = series.len();
    if n < MIN_WELCH_SAMPLES {
        return Err(FeatureError::InsufficientData {
            needed: MIN_WELCH_SAMPLES,
            got: n,
        });
    }
    let seg = segment.clamp(2, n);
    let step = (seg / 2).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let bins = seg / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    let mut start = 0;
    while start + seg <= n {
        let chunk = &series[start..start + seg];
        let m = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex64::new((x - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (rate_hz * window_energy * segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == seg / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let frequencies_hz = (0..bins).map(|k| k as f64 * rate_hz / seg as f64).collect();
    Ok(SpectralEstimate {
        frequencies_hz,
        power,
    })
}

/// Integrated power over a band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPower {
    pub power: f64,
    /// False when `[lo, hi]` does not overlap the estimate's frequency range.
    pub overlapped: bool,
}

/// Trapezoidal integral of the linearly interpolated spectrum over
/// `[lo_hz, hi_hz]`. Exactly additive over adjacent bands.
pub fn band_power(est: &SpectralEstimate, lo_hz: f64, hi_hz: f64) -> BandPower {
    let f = &est.frequencies_hz;
    let p = &est.power;
    let none = BandPower {
        power: 0.0,
        overlapped: false,
    };
    if f.len() < 2 || lo_hz.partial_cmp(&hi_hz) != Some(Ordering::Less) {
        return none;
    }
    let a = lo_hz.max(f[0]);
    let b = hi_hz.min(f[f.len() - 1]);
    if a.partial_cmp(&b) != Some(Ordering::Less) {
        return none;
    }
    let interp = |k: usize, x: f64| {
        let t = (x - f[k]) / (f[k + 1] - f[k]);
        p[k] + t * (p[k + 1] - p[k])
    };
    let mut total = 0.0;
    for k in 0..f.len() - 1 {
        let x0 = a.max(f[k]);
        let x1 = b.min(f[k + 1]);
        if x1 > x0 {
            total += (x1 - x0) * (interp(k, x0) + interp(k, x1)) / 2.0;
        }
    }
    BandPower {
        power: total,
        overlapped: true,
    }
}

/// Σ power·Δf over bins with `lo ≤ f < hi`.
pub fn band_energy_right_open(est: &SpectralEstimate, lo_hz: f64, hi_hz: f64) -> f64 {
    let df = est.resolution_hz();
    est.frequencies_hz
        .iter()
        .zip(&est.power)
        .filter(|(f, _)| **f >= lo_hz && **f < hi_hz)
        .map(|(_, p)| p * df)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub amplitude: f64,
}

/// Strict local maxima at or above `min_height`, chosen greedily by
/// descending amplitude so that accepted peaks are at least
/// `min_separation_s` apart. Returned in index order.
pub fn detect_peaks(
    series: &[f64],
    rate_hz: f64,
    min_height: f64,
    min_separation_s: f64,
) -> Vec<Peak> {
    if series.len() < 3 {
        return Vec::new();
    }
    let mut candidates: Vec<Peak> = (1..series.len() - 1)
        .filter(|&i| {
            series[i] > series[i - 1] && series[i] > series[i + 1] && series[i] >= min_height
        })
        .map(|i| Peak {
            index: i,
            amplitude: series[i],
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.amplitude
            .total_cmp(&a.amplitude)
            .then(a.index.cmp(&b.index))
    });

    let far_enough = |a: usize, b: usize| (a.abs_diff(b) as f64) / rate_hz >= min_separation_s;
    let mut accepted: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for c in candidates {
        let before = accepted.range(..c.index).next_back();
        let after = accepted.range(c.index..).next();
        if before.is_none_or(|&b| far_enough(b, c.index))
            && after.is_none_or(|&a| far_enough(a, c.index))
        {
            accepted.insert(c.index);
            out.push(c);
        }
    }
    out.sort_by_key(|p| p.index);
    out
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

pub fn min(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn dynamic_range(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        max(x) - min(x)
    }
}

/// Σ|v| / rate.
pub fn abs_integral(x: &[f64], rate_hz: f64) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() / rate_hz
}

/// Least-squares slope against time in seconds.
pub fn slope(x: &[f64], rate_hz: f64) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let t_mean = (n - 1) as f64 / 2.0 / rate_hz;
    let x_mean = mean(x);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 / rate_hz - t_mean;
        num += dt * (v - x_mean);
        den += dt * dt;
    }
    num / den
}

/// Pearson correlation with time; `None` when the series has zero variance.
pub fn time_correlation(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = mean(x);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        let dx = v - x_mean;
        sxy += dt * dx;
        sxx += dx * dx;
        syy += dt * dt;
    }
    (sxx > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolated percentile, `q` in [0, 100].
pub fn percentile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sign changes between consecutive samples (zero counts as non-negative).
pub fn zero_crossings(x: &[f64]) -> usize {
    x.windows(2)
        .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
        .count()
}

pub fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Variance of the first difference.
pub fn diff_variance(x: &[f64]) -> f64 {
    variance(&diff(x))
}

/// Ratio that is undefined instead of infinite or NaN.
pub fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0 && num.is_finite()).then(|| num / den)
}
