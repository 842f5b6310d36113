//! Respiration: breath phases, stretch, volume proxy and rate.

use crate::model::{FeatureVector, ModalityInput};

use super::dsp::{self, FilterSpec};
use super::{single_channel, FeatureError};

const BREATH_BAND_HZ: (f64, f64) = (0.1, 0.35);
/// Smoothing applied to the raw trace when locating phase turning points.
const CONTOUR_HZ: f64 = 2.0;
const MIN_DURATION_S: f64 = 10.0;
const MIN_CYCLES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Turn {
    Max(usize),
    Min(usize),
}

impl Turn {
    fn index(self) -> usize {
        match self {
            Turn::Max(i) | Turn::Min(i) => i,
        }
    }
}

pub fn extract_resp(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let raw = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let band = FilterSpec::bandpass(BREATH_BAND_HZ.0, BREATH_BAND_HZ.1);
    let breath = dsp::filter_or_passthrough(raw, rate, &band);

    let long_enough = input.duration_s() >= MIN_DURATION_S;
    let contour = dsp::filter_or_passthrough(raw, rate, &FilterSpec::lowpass(CONTOUR_HZ));
    let turns = if long_enough {
        refine(&turning_points(&breath), &contour)
    } else {
        Vec::new()
    };
    let mut inhale = Vec::new();
    let mut exhale = Vec::new();
    for w in turns.windows(2) {
        let secs = (w[1].index() - w[0].index()) as f64 / rate;
        match (w[0], w[1]) {
            (Turn::Min(_), Turn::Max(_)) => inhale.push(secs),
            (Turn::Max(_), Turn::Min(_)) => exhale.push(secs),
            _ => {}
        }
    }
    let cycles = dsp::zero_crossings(&breath) as f64 / 2.0;
    let ok = long_enough && inhale.len().min(exhale.len()) >= MIN_CYCLES;
    let when = |v: f64| ok.then_some(v);

    let mut fv = FeatureVector::new();
    fv.push("inhale_mean", when(dsp::mean(&inhale)), "s");
    fv.push("inhale_std", when(dsp::std_dev(&inhale)), "s");
    fv.push("exhale_mean", when(dsp::mean(&exhale)), "s");
    fv.push("exhale_std", when(dsp::std_dev(&exhale)), "s");
    fv.push(
        "ie_ratio",
        if ok {
            dsp::ratio(dsp::mean(&inhale), dsp::mean(&exhale))
        } else {
            None
        },
        "",
    );
    fv.defined("stretch", dsp::dynamic_range(&breath), "a.u.");
    let volume: f64 = dsp::diff(&breath).iter().filter(|&&d| d > 0.0).sum();
    fv.defined("insp_volume", volume, "a.u.");
    fv.push(
        "resp_rate",
        when(cycles * 60.0 / input.duration_s()),
        "breaths/min",
    );
    fv.push(
        "cycle_duration",
        when(dsp::mean(&inhale) + dsp::mean(&exhale)),
        "s",
    );
    Ok(fv)
}

/// Sign changes of the first difference, ignoring flat steps.
fn turning_points(x: &[f64]) -> Vec<Turn> {
    let mut out = Vec::new();
    let mut last_sign = 0i8;
    let mut last_change = 0usize;
    for (i, w) in x.windows(2).enumerate() {
        let d = w[1] - w[0];
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            continue;
        };
        if last_sign == 1 && sign == -1 {
            out.push(Turn::Max(last_change));
        } else if last_sign == -1 && sign == 1 {
            out.push(Turn::Min(last_change));
        }
        if sign != last_sign {
            last_sign = sign;
        }
        last_change = i + 1;
    }
    out
}

/// Moves each band-limited turning point to the extremum of the smoothed
/// raw trace between its neighbours, which recovers asymmetric phase
/// timing that the narrow band erases.
fn refine(turns: &[Turn], contour: &[f64]) -> Vec<Turn> {
    let mut out: Vec<Turn> = Vec::with_capacity(turns.len());
    for (k, t) in turns.iter().enumerate() {
        let lo = if k == 0 { 0 } else { turns[k - 1].index() };
        let hi = turns.get(k + 1).map_or(contour.len() - 1, |n| n.index());
        let span = &contour[lo..=hi];
        let pick = |better: fn(f64, f64) -> bool| {
            let mut best = 0;
            for (i, &v) in span.iter().enumerate() {
                if better(v, span[best]) {
                    best = i;
                }
            }
            lo + best
        };
        let refined = match t {
            Turn::Max(_) => Turn::Max(pick(|a, b| a > b)),
            Turn::Min(_) => Turn::Min(pick(|a, b| a < b)),
        };
        if out.last().is_none_or(|p| p.index() < refined.index()) {
            out.push(refined);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn input(x: Vec<f64>, rate: f64) -> ModalityInput {
        ModalityInput {
            modality_id: "RESP".into(),
            channels: BTreeMap::from([("signal".to_string(), x)]),
            sample_rate_hz: rate,
            masked: false,
        }
    }

    #[test]
    fn sawtooth_phase_ratio() {
        let rate = 32.0;
        let (rise, fall) = (2.0, 3.0);
        let x: Vec<f64> = (0..(60.0 * rate) as usize)
            .map(|i| {
                let t = (i as f64 / rate) % (rise + fall);
                if t < rise {
                    t / rise
                } else {
                    1.0 - (t - rise) / fall
                }
            })
            .collect();
        let fv = extract_resp(&input(x, rate)).unwrap();
        let r = fv.get("ie_ratio").unwrap();
        assert!((r - 2.0 / 3.0).abs() <= 0.1 * 2.0 / 3.0, "{r}");
    }

    #[test]
    fn symmetric_sinusoid() {
        let rate = 32.0;
        let x: Vec<f64> = (0..(60.0 * rate) as usize)
            .map(|i| (2.0 * PI * 0.25 * i as f64 / rate).sin())
            .collect();
        let fv = extract_resp(&input(x, rate)).unwrap();
        let r = fv.get("ie_ratio").unwrap();
        assert!((r - 1.0).abs() <= 0.05, "{r}");
        let rate_bpm = fv.get("resp_rate").unwrap();
        assert!((rate_bpm - 15.0).abs() <= 1.0, "{rate_bpm}");
        assert!((fv.get("cycle_duration").unwrap() - 4.0).abs() < 0.2);
    }

    #[test]
    fn masked_or_short_input_is_undefined() {
        let fv = extract_resp(&input(vec![0.0; 32 * 30], 32.0)).unwrap();
        for name in [
            "inhale_mean",
            "exhale_mean",
            "ie_ratio",
            "resp_rate",
            "cycle_duration",
        ] {
            assert_eq!(fv.get(name), None, "{name}");
        }
        assert_eq!(fv.get("stretch"), Some(0.0));
        let short: Vec<f64> = (0..32 * 8).map(|i| (i as f64 * 0.05).sin()).collect();
        assert_eq!(
            extract_resp(&input(short, 32.0)).unwrap().get("ie_ratio"),
            None
        );
    }
}
