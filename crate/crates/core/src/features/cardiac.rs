//! Heart rate, HRV and IBI-spectrum features from ECG or PPG.

use crate::model::{FeatureVector, ModalityInput};

use super::dsp::{self, FilterSpec};
use super::{single_channel, FeatureError};

/// Frequency-domain HRV bands in Hz.
pub const HRV_BANDS: [(&str, f64, f64); 4] = [
    ("ulf", 0.01, 0.04),
    ("lf", 0.04, 0.15),
    ("hf", 0.15, 0.4),
    ("uhf", 0.4, 1.0),
];

pub(crate) const TINN_BIN_MS: f64 = 1000.0 / 128.0;
const IBI_RESAMPLE_HZ: f64 = 4.0;
const MIN_BEAT_SEPARATION_S: f64 = 0.3;
const BEAT_THRESHOLD_FRACTION: f64 = 0.4;
const MIN_HRV_BEATS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardiacSource {
    Ecg,
    Ppg,
}

impl CardiacSource {
    fn band(self) -> (f64, f64) {
        match self {
            CardiacSource::Ecg => (0.5, 40.0),
            CardiacSource::Ppg => (0.5, 8.0),
        }
    }
}

/// Beat detection on the filtered signal, then [`ibi_features`].
pub fn extract_cardiac(
    input: &ModalityInput,
    source: CardiacSource,
) -> Result<FeatureVector, FeatureError> {
    let x = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let (lo, hi) = source.band();
    let hi = hi.min(0.45 * rate);
    let filtered = if lo < hi {
        dsp::filter_or_passthrough(x, rate, &FilterSpec::bandpass(lo, hi))
    } else {
        x.to_vec()
    };
    let top = dsp::max(&filtered);
    let beats = if top > 0.0 {
        dsp::detect_peaks(
            &filtered,
            rate,
            BEAT_THRESHOLD_FRACTION * top,
            MIN_BEAT_SEPARATION_S,
        )
    } else {
        Vec::new()
    };
    let ibis: Vec<f64> = beats
        .windows(2)
        .map(|w| (w[1].index - w[0].index) as f64 * 1000.0 / rate)
        .collect();
    Ok(ibi_features(&ibis))
}

/// HR, HRV and spectral features from inter-beat intervals in ms.
///
/// HR needs one interval; time- and frequency-domain HRV need at least four
/// beats (three intervals). Missing inputs leave the features undefined.
pub fn ibi_features(ibis_ms: &[f64]) -> FeatureVector {
    let mut fv = FeatureVector::new();
    let hr: Vec<f64> = ibis_ms
        .iter()
        .filter(|&&i| i > 0.0)
        .map(|i| 60_000.0 / i)
        .collect();
    let has_hr = !hr.is_empty();
    fv.push("hr_mean", has_hr.then(|| dsp::mean(&hr)), "bpm");
    fv.push("hr_std", has_hr.then(|| dsp::std_dev(&hr)), "bpm");

    let has_hrv = ibis_ms.len() + 1 >= MIN_HRV_BEATS;
    let diffs = dsp::diff(ibis_ms);
    let rmssd = || (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let pnn50 =
        || 100.0 * diffs.iter().filter(|d| d.abs() > 50.0).count() as f64 / diffs.len() as f64;
    fv.push("rmssd", has_hrv.then(rmssd), "ms");
    fv.push("pnn50", has_hrv.then(pnn50), "%");
    fv.push("sdnn", has_hrv.then(|| dsp::std_dev(ibis_ms)), "ms");
    fv.push("tinn", has_hrv.then(|| tinn(ibis_ms)), "ms");

    let spectrum = if has_hrv { ibi_spectrum(ibis_ms) } else { None };
    let powers: Option<Vec<f64>> = spectrum.map(|est| {
        HRV_BANDS
            .iter()
            .map(|&(_, lo, hi)| dsp::band_power(&est, lo, hi).power)
            .collect()
    });
    for (i, (name, _, _)) in HRV_BANDS.iter().enumerate() {
        fv.push(
            format!("{name}_power"),
            powers.as_ref().map(|p| p[i]),
            "ms²",
        );
    }
    let total = powers.as_ref().map(|p| p.iter().sum::<f64>());
    fv.push("total_power", total, "ms²");
    let band = |i: usize| powers.as_ref().map(|p| p[i]);
    let (lf, hf) = (band(1), band(2));
    fv.push(
        "lf_hf_ratio",
        lf.zip(hf).and_then(|(l, h)| dsp::ratio(l, h)),
        "",
    );
    for (i, (name, _, _)) in HRV_BANDS.iter().enumerate() {
        let rel = band(i).zip(total).and_then(|(b, t)| dsp::ratio(b, t));
        fv.push(format!("{name}_rel"), rel, "");
    }
    let lf_hf_sum = lf.zip(hf).map(|(l, h)| l + h);
    fv.push(
        "lf_norm",
        lf.zip(lf_hf_sum).and_then(|(l, s)| dsp::ratio(l, s)),
        "",
    );
    fv.push(
        "hf_norm",
        hf.zip(lf_hf_sum).and_then(|(h, s)| dsp::ratio(h, s)),
        "",
    );
    fv
}

/// IBI series resampled to a uniform grid, mean removed, single-segment
/// Welch estimate. `None` when the grid is shorter than the Welch minimum.
fn ibi_spectrum(ibis_ms: &[f64]) -> Option<dsp::SpectralEstimate> {
    let mut t = 0.0;
    let times: Vec<f64> = ibis_ms
        .iter()
        .map(|i| {
            t += i / 1000.0;
            t
        })
        .collect();
    let (start, end) = (times[0], *times.last()?);
    let step = 1.0 / IBI_RESAMPLE_HZ;
    let n = ((end - start) / step).floor() as usize + 1;
    if n < dsp::MIN_WELCH_SAMPLES {
        return None;
    }
    let mut k = 0;
    let grid: Vec<f64> = (0..n)
        .map(|j| {
            let tj = start + j as f64 * step;
            while k + 1 < times.len() - 1 && times[k + 1] < tj {
                k += 1;
            }
            let (t0, t1) = (times[k], times[(k + 1).min(times.len() - 1)]);
            if t1 > t0 {
                let a = ((tj - t0) / (t1 - t0)).clamp(0.0, 1.0);
                ibis_ms[k] + a * (ibis_ms[(k + 1).min(ibis_ms.len() - 1)] - ibis_ms[k])
            } else {
                ibis_ms[k]
            }
        })
        .collect();
    dsp::welch_psd_with_segment(&grid, IBI_RESAMPLE_HZ, grid.len()).ok()
}

/// Baseline width of the least-squares triangle fitted to the IBI
/// histogram (bins of 1/128 s). The apex sits on the modal bin; the feet are
/// searched over bin centres on each side, including the apex itself, and
/// ties go to the narrower triangle.
fn tinn(ibis_ms: &[f64]) -> f64 {
    let lo = (dsp::min(ibis_ms) / TINN_BIN_MS).floor() as i64;
    let hi = (dsp::max(ibis_ms) / TINN_BIN_MS).floor() as i64;
    // Empty bins on both sides let the feet land outside the occupied range.
    let pad = hi - lo + 1;
    let mut counts = vec![0.0; (3 * pad) as usize];
    for v in ibis_ms {
        counts[((v / TINN_BIN_MS).floor() as i64 - lo + pad) as usize] += 1.0;
    }
    let apex = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
    let height = counts[apex];
    let centre = |i: usize| i as f64;
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for left in 0..=apex {
        for right in apex..counts.len() {
            let err: f64 = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let x = centre(i);
                    let model = if i == apex {
                        height
                    } else if i > left && i < apex {
                        height * (x - centre(left)) / (centre(apex) - centre(left))
                    } else if i > apex && i < right {
                        height * (centre(right) - x) / (centre(right) - centre(apex))
                    } else {
                        0.0
                    };
                    (c - model).powi(2)
                })
                .sum();
            let narrower = right - left < best.2 - best.1;
            if err < best.0 - 1e-12 || (err <= best.0 + 1e-12 && narrower) {
                best = (err, left, right);
            }
        }
    }
    (best.2 - best.1) as f64 * TINN_BIN_MS
}
