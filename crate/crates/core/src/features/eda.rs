//! Electrodermal activity: raw level, tonic (SCL) and phasic (SCR) features.

use crate::model::{FeatureVector, ModalityInput};

use super::dsp::{self, FilterSpec};
use super::{single_channel, FeatureError};

pub(crate) const SCR_MIN_AMPLITUDE_US: f64 = 0.01;
pub(crate) const SCR_MIN_SEPARATION_S: f64 = 1.0;
/// Events must also reach this fraction of the largest phasic peak, which
/// keeps low-pass ringing around a large response from counting.
pub(crate) const SCR_RELATIVE_AMPLITUDE: f64 = 0.1;
const SMOOTHING_HZ: f64 = 5.0;
const TONIC_HZ: f64 = 0.05;

pub fn extract_eda(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let raw = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let x = dsp::filter_or_passthrough(raw, rate, &FilterSpec::lowpass(SMOOTHING_HZ));
    let mut fv = FeatureVector::new();
    fv.defined("mean", dsp::mean(&x), "µS");
    fv.defined("std", dsp::std_dev(&x), "µS");
    fv.defined("min", dsp::min(&x), "µS");
    fv.defined("max", dsp::max(&x), "µS");
    fv.defined("slope", dsp::slope(&x, rate), "µS/s");
    fv.defined("dynamic_range", dsp::dynamic_range(&x), "µS");

    let tonic = dsp::filter_or_passthrough(&x, rate, &FilterSpec::lowpass(TONIC_HZ));
    fv.defined("scl_mean", dsp::mean(&tonic), "µS");
    fv.defined("scl_std", dsp::std_dev(&tonic), "µS");
    fv.push("scl_time_corr", dsp::time_correlation(&tonic), "");

    let phasic: Vec<f64> = x.iter().zip(&tonic).map(|(a, b)| a - b).collect();
    fv.defined("scr_mean", dsp::mean(&phasic), "µS");
    fv.defined("scr_std", dsp::std_dev(&phasic), "µS");
    let floor = SCR_MIN_AMPLITUDE_US.max(SCR_RELATIVE_AMPLITUDE * dsp::max(&phasic));
    let events = dsp::detect_peaks(&phasic, rate, floor, SCR_MIN_SEPARATION_S);
    fv.defined("scr_count", events.len() as f64, "");
    fv.defined(
        "scr_magnitude_sum",
        events.iter().map(|p| p.amplitude).sum(),
        "µS",
    );
    let width: usize = events.iter().map(|p| half_height_width(&phasic, p)).sum();
    fv.defined("scr_total_duration", width as f64 / rate, "s");
    let auc = phasic.iter().filter(|&&v| v > 0.0).sum::<f64>() / rate;
    fv.defined("scr_auc", auc, "µS·s");
    Ok(fv)
}

/// Samples around a peak that stay at or above half its amplitude.
fn half_height_width(x: &[f64], peak: &dsp::Peak) -> usize {
    let half = peak.amplitude / 2.0;
    let left = x[..peak.index]
        .iter()
        .rev()
        .take_while(|&&v| v >= half)
        .count();
    let right = x[peak.index + 1..]
        .iter()
        .take_while(|&&v| v >= half)
        .count();
    left + right + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn input(x: Vec<f64>, rate: f64) -> ModalityInput {
        ModalityInput {
            modality_id: "EDA".into(),
            channels: BTreeMap::from([("signal".to_string(), x)]),
            sample_rate_hz: rate,
            masked: false,
        }
    }

    #[test]
    fn linear_ramp() {
        let rate = 32.0;
        let n = (60.0 * rate) as usize + 1;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let fv = extract_eda(&input(x, rate)).unwrap();
        assert!(
            (fv.get("slope").unwrap() - 1.0 / 60.0).abs() < 1e-4,
            "{:?}",
            fv.get("slope")
        );
        assert!(fv.get("scl_time_corr").unwrap() > 0.999);
    }

    #[test]
    fn two_bumps_give_two_responses() {
        let rate = 32.0;
        let n = (60.0 * rate) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let bump = |c: f64| 0.5 * (-(t - c).powi(2) / (2.0 * 0.8f64.powi(2))).exp();
                2.0 + bump(15.0) + bump(40.0)
            })
            .collect();
        let fv = extract_eda(&input(x, rate)).unwrap();
        assert_eq!(fv.get("scr_count"), Some(2.0));
        assert!(fv.get("scr_total_duration").unwrap() > 0.0);
    }

    #[test]
    fn masked_input() {
        let fv = extract_eda(&input(vec![0.0; 1920], 32.0)).unwrap();
        assert_eq!(fv.get("scl_mean"), Some(0.0));
        assert_eq!(fv.get("scr_count"), Some(0.0));
        assert_eq!(fv.get("scl_time_corr"), None);
        assert!(fv.get_entry("scl_time_corr").is_some());
    }
}
