//! Electromyography. Chain 1 works on the high-passed signal, chain 2 on
//! its rectified 50 Hz envelope.

use crate::model::{FeatureVector, ModalityInput};

use super::dsp::{self, FilterSpec};
use super::{single_channel, FeatureError};

pub const EMG_BAND_COUNT: usize = 7;
pub const EMG_BAND_SPAN_HZ: f64 = 350.0;
const HIGHPASS_HZ: f64 = 20.0;
const ENVELOPE_HZ: f64 = 50.0;
const BURST_SEPARATION_S: f64 = 0.5;

pub fn extract_emg(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let raw = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let hp = dsp::filter_or_passthrough(raw, rate, &FilterSpec::highpass(HIGHPASS_HZ));
    let mut fv = FeatureVector::new();
    fv.defined("mean", dsp::mean(&hp), "mV");
    fv.defined("std", dsp::std_dev(&hp), "mV");
    fv.defined("dynamic_range", dsp::dynamic_range(&hp), "mV");
    fv.defined("abs_integral", dsp::abs_integral(&hp, rate), "mV·s");
    fv.defined("median", dsp::percentile(&hp, 50.0), "mV");
    fv.defined("p10", dsp::percentile(&hp, 10.0), "mV");
    fv.defined("p90", dsp::percentile(&hp, 90.0), "mV");

    let est = dsp::welch_psd(&hp, rate).ok();
    let total = est.as_ref().map(|e| e.total_power()).filter(|&t| t > 0.0);
    let spectral = est.as_ref().zip(total);
    fv.push(
        "mean_freq",
        spectral.map(|(e, t)| mean_frequency(e, t)),
        "Hz",
    );
    fv.push(
        "median_freq",
        spectral.map(|(e, t)| median_frequency(e, t)),
        "Hz",
    );
    fv.push(
        "peak_freq",
        est.as_ref().and_then(|e| e.peak_frequency()),
        "Hz",
    );
    let width = EMG_BAND_SPAN_HZ / EMG_BAND_COUNT as f64;
    for i in 0..EMG_BAND_COUNT {
        let lo = i as f64 * width;
        let energy = est
            .as_ref()
            .filter(|_| lo < rate / 2.0)
            .map(|e| dsp::band_energy_right_open(e, lo, lo + width));
        fv.push(format!("band{i}_energy"), energy, "mV²");
    }

    let rectified: Vec<f64> = hp.iter().map(|v| v.abs()).collect();
    let envelope = dsp::filter_or_passthrough(&rectified, rate, &FilterSpec::lowpass(ENVELOPE_HZ));
    let threshold = dsp::mean(&envelope) + dsp::std_dev(&envelope);
    let peaks = dsp::detect_peaks(&envelope, rate, threshold, BURST_SEPARATION_S);
    let amps: Vec<f64> = peaks.iter().map(|p| p.amplitude).collect();
    let sum: f64 = amps.iter().sum();
    fv.defined("peak_count", amps.len() as f64, "");
    fv.defined("peak_amp_mean", dsp::mean(&amps), "mV");
    fv.defined("peak_amp_std", dsp::std_dev(&amps), "mV");
    fv.defined("peak_amp_sum", sum, "mV");
    fv.defined(
        "peak_amp_sum_per_s",
        sum / input.duration_s().max(1.0 / rate),
        "mV/s",
    );
    Ok(fv)
}

fn mean_frequency(est: &dsp::SpectralEstimate, total: f64) -> f64 {
    let df = est.resolution_hz();
    est.frequencies_hz
        .iter()
        .zip(&est.power)
        .map(|(f, p)| f * p * df)
        .sum::<f64>()
        / total
}

fn median_frequency(est: &dsp::SpectralEstimate, total: f64) -> f64 {
    let df = est.resolution_hz();
    let mut acc = 0.0;
    for (f, p) in est.frequencies_hz.iter().zip(&est.power) {
        acc += p * df;
        if acc >= total / 2.0 {
            return *f;
        }
    }
    *est.frequencies_hz.last().unwrap_or(&0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn input(x: Vec<f64>, rate: f64) -> ModalityInput {
        ModalityInput {
            modality_id: "EMG".into(),
            channels: BTreeMap::from([("signal".to_string(), x)]),
            sample_rate_hz: rate,
            masked: false,
        }
    }

    #[test]
    fn hundred_hz_sine_sits_in_band_two() {
        let rate = 1000.0;
        let x: Vec<f64> = (0..10_000)
            .map(|i| (2.0 * PI * 100.0 * i as f64 / rate).sin())
            .collect();
        let fv = extract_emg(&input(x, rate)).unwrap();
        assert!((fv.get("peak_freq").unwrap() - 100.0).abs() <= 0.25);
        let bands: Vec<f64> = (0..7)
            .map(|i| fv.get(&format!("band{i}_energy")).unwrap())
            .collect();
        let top = bands
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(top, 2, "{bands:?}");
    }

    #[test]
    fn three_bursts() {
        let rate = 1000.0;
        let x: Vec<f64> = (0..10_000)
            .map(|i| {
                let t = i as f64 / rate;
                let on = [2.0, 5.0, 8.0].iter().any(|c| (t - c).abs() < 0.1);
                if on {
                    (2.0 * PI * 100.0 * t).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let fv = extract_emg(&input(x, rate)).unwrap();
        assert_eq!(fv.get("peak_count"), Some(3.0));
    }

    #[test]
    fn masked_input() {
        let fv = extract_emg(&input(vec![0.0; 5000], 1000.0)).unwrap();
        for f in &fv.entries {
            if f.name.ends_with("_freq") {
                assert_eq!(f.value, None, "{}", f.name);
            } else {
                assert_eq!(f.value, Some(0.0), "{}", f.name);
            }
        }
    }

    #[test]
    fn bands_above_nyquist_are_undefined() {
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.3).sin()).collect();
        let fv = extract_emg(&input(x, 200.0)).unwrap();
        assert!(fv.get("band1_energy").is_some());
        assert_eq!(fv.get("band2_energy"), None);
        assert_eq!(fv.get("band6_energy"), None);
    }
}
