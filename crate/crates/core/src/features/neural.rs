//! EEG band features and EOG movement features.

use std::collections::VecDeque;

use crate::model::{FeatureVector, ModalityInput};

use super::dsp::{self, FilterSpec};
use super::{single_channel, FeatureError};

pub const EEG_BANDS: [(&str, f64, f64); 7] = [
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta", 12.0, 30.0),
    ("spindle", 12.0, 14.0),
    ("kcomplex", 0.5, 1.5),
    ("sawtooth", 2.0, 6.0),
];

pub const EOG_BANDS: [(&str, f64, f64); 3] = [
    ("slow", 0.5, 2.0),
    ("rapid", 2.0, 5.0),
    ("total", 0.5, 30.0),
];

pub(crate) const EOG_MOVEMENT_UV: f64 = 120.0;
pub(crate) const EOG_MOVEMENT_WINDOW_S: f64 = 1.5;

fn band_signal(x: &[f64], rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let spec = if hi >= 0.95 * rate / 2.0 {
        FilterSpec::highpass(lo)
    } else {
        FilterSpec::bandpass(lo, hi)
    };
    dsp::filter_or_passthrough(x, rate, &spec)
}

pub fn extract_eeg(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let x = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let duration = input.duration_s().max(1.0 / rate);
    let est = dsp::welch_psd(x, rate).ok();
    let mut fv = FeatureVector::new();
    let mut powers = [0.0; EEG_BANDS.len()];
    for (k, &(name, lo, hi)) in EEG_BANDS.iter().enumerate() {
        let b = band_signal(x, rate, lo, hi);
        let sd = dsp::std_dev(&b);
        let peaks = if sd > 0.0 {
            dsp::detect_peaks(&b, rate, sd, 0.5 / hi).len()
        } else {
            0
        };
        fv.defined(format!("{name}_mean"), dsp::mean(&b), "µV");
        fv.defined(format!("{name}_std"), sd, "µV");
        fv.defined(format!("{name}_var"), dsp::variance(&b), "µV²");
        fv.defined(format!("{name}_range"), dsp::dynamic_range(&b), "µV");
        fv.defined(format!("{name}_peaks"), peaks as f64, "");
        fv.defined(
            format!("{name}_zcr"),
            dsp::zero_crossings(&b) as f64 / duration,
            "1/s",
        );
        fv.defined(format!("{name}_diff_var"), dsp::diff_variance(&b), "µV²");
        let p = est.as_ref().map(|e| dsp::band_power(e, lo, hi).power);
        powers[k] = p.unwrap_or(0.0);
        fv.push(format!("{name}_power"), p, "µV²");
    }
    let [delta, theta, alpha, beta, ..] = powers;
    fv.push("delta_theta_ratio", dsp::ratio(delta, theta), "");
    fv.push("theta_alpha_ratio", dsp::ratio(theta, alpha), "");
    fv.push("alpha_beta_ratio", dsp::ratio(alpha, beta), "");
    fv.push(
        "slow_fast_ratio",
        dsp::ratio(delta + theta, alpha + beta),
        "",
    );
    Ok(fv)
}

pub fn extract_eog(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let x = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let mut fv = FeatureVector::new();
    fv.defined("mean", dsp::mean(x), "µV");
    fv.defined("std", dsp::std_dev(x), "µV");
    fv.defined("var", dsp::variance(x), "µV²");
    fv.defined("range", dsp::dynamic_range(x), "µV");
    fv.defined("zero_crossings", dsp::zero_crossings(x) as f64, "");
    fv.defined("diff_var", dsp::diff_variance(x), "µV²");
    let window = ((EOG_MOVEMENT_WINDOW_S * rate).round() as usize).max(1);
    fv.defined(
        "large_movements",
        large_movements(x, window, EOG_MOVEMENT_UV) as f64,
        "",
    );

    let est = dsp::welch_psd(x, rate).ok();
    let power = |i: usize| {
        est.as_ref()
            .map(|e| dsp::band_power(e, EOG_BANDS[i].1, EOG_BANDS[i].2).power)
    };
    let total = power(2);
    fv.push(
        "slow_ratio",
        power(0).zip(total).and_then(|(p, t)| dsp::ratio(p, t)),
        "",
    );
    fv.push(
        "rapid_ratio",
        power(1).zip(total).and_then(|(p, t)| dsp::ratio(p, t)),
        "",
    );
    Ok(fv)
}

/// Number of maximal runs of window start positions whose peak-to-peak
/// amplitude exceeds `threshold`. A series shorter than the window is
/// treated as one window.
fn large_movements(x: &[f64], window: usize, threshold: f64) -> usize {
    let w = window.min(x.len());
    if w == 0 {
        return 0;
    }
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    let mut runs = 0;
    let mut inside = false;
    for i in 0..x.len() {
        while hi.back().is_some_and(|&j| x[j] <= x[i]) {
            hi.pop_back();
        }
        hi.push_back(i);
        while lo.back().is_some_and(|&j| x[j] >= x[i]) {
            lo.pop_back();
        }
        lo.push_back(i);
        if i + 1 < w {
            continue;
        }
        let start = i + 1 - w;
        while hi.front().is_some_and(|&j| j < start) {
            hi.pop_front();
        }
        while lo.front().is_some_and(|&j| j < start) {
            lo.pop_front();
        }
        let over = x[hi[0]] - x[lo[0]] > threshold;
        if over && !inside {
            runs += 1;
        }
        inside = over;
    }
    runs
}
