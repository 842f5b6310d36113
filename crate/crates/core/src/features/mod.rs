//! Hand-crafted feature extraction for each sensor type.
//!
//! Every extractor is a pure function of the series, its sample rate and the
//! fixed constants in this module. Masked (all-zero) inputs go through the
//! same code path and produce the degenerate vector: zero for location and
//! dispersion statistics, undefined for ratios and frequencies. Extractors
//! always emit the same feature names for a given sensor type, so prompts see
//! a fixed schema.

mod cardiac;
pub mod dsp;
mod eda;
mod emg;
mod inertial;
mod neural;
mod resp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureVector, ModalityInput, SensorWindow, TaskSpec, WindowFeatures};

pub use cardiac::{extract_cardiac, ibi_features, CardiacSource, HRV_BANDS};
pub use dsp::{
    band_power, bandpass_filter, detect_peaks, welch_psd, BandPower, FilterKind, FilterSpec, Peak,
    SpectralEstimate,
};
pub use eda::extract_eda;
pub use emg::{extract_emg, EMG_BAND_COUNT, EMG_BAND_SPAN_HZ};
pub use inertial::extract_inertial;
pub use neural::{extract_eeg, extract_eog, EEG_BANDS, EOG_BANDS};
pub use resp::extract_resp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("modality `{modality}`: {message}")]
    Schema { modality: String, message: String },
    #[error("modality `{modality}` has unknown sensor type `{tag}`")]
    UnknownSensorType { modality: String, tag: String },
    #[error("modality `{0}` is not described in the task metadata")]
    MissingMetadata(String),
}

/// Sensor-type tags understood by [`extract_window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SensorType {
    Acc,
    Gyr,
    Mag,
    Ang,
    Ecg,
    Ppg,
    Eda,
    Emg,
    Resp,
    Temp,
    Eeg,
    Eog,
    Hr,
}

impl SensorType {
    pub const ALL: [SensorType; 13] = [
        SensorType::Acc,
        SensorType::Gyr,
        SensorType::Mag,
        SensorType::Ang,
        SensorType::Ecg,
        SensorType::Ppg,
        SensorType::Eda,
        SensorType::Emg,
        SensorType::Resp,
        SensorType::Temp,
        SensorType::Eeg,
        SensorType::Eog,
        SensorType::Hr,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SensorType::Acc => "ACC",
            SensorType::Gyr => "GYR",
            SensorType::Mag => "MAG",
            SensorType::Ang => "ANG",
            SensorType::Ecg => "ECG",
            SensorType::Ppg => "PPG",
            SensorType::Eda => "EDA",
            SensorType::Emg => "EMG",
            SensorType::Resp => "RESP",
            SensorType::Temp => "TEMP",
            SensorType::Eeg => "EEG",
            SensorType::Eog => "EOG",
            SensorType::Hr => "HR",
        }
    }

    /// Name of the extractor this type is routed to.
    pub fn extractor(self) -> &'static str {
        match self {
            SensorType::Acc | SensorType::Gyr | SensorType::Mag | SensorType::Ang => "inertial",
            SensorType::Ecg | SensorType::Ppg => "cardiac",
            SensorType::Eda => "eda",
            SensorType::Emg => "emg",
            SensorType::Resp => "resp",
            SensorType::Temp | SensorType::Hr => "scalar",
            SensorType::Eeg => "eeg",
            SensorType::Eog => "eog",
        }
    }

    fn scalar_unit(self) -> &'static str {
        match self {
            SensorType::Hr => "bpm",
            _ => "°C",
        }
    }
}

impl fmt::Display for SensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SensorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        SensorType::ALL
            .into_iter()
            .find(|t| t.tag() == upper)
            .ok_or_else(|| s.to_string())
    }
}

/// Mean, std, min, max, slope and dynamic range of a single-channel stream.
pub fn extract_temp(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    extract_scalar(input, "°C")
}

pub(crate) fn extract_scalar(
    input: &ModalityInput,
    unit: &str,
) -> Result<FeatureVector, FeatureError> {
    let x = single_channel(input)?;
    let rate = input.sample_rate_hz;
    let mut fv = FeatureVector::new();
    fv.defined("mean", dsp::mean(x), unit);
    fv.defined("std", dsp::std_dev(x), unit);
    fv.defined("min", dsp::min(x), unit);
    fv.defined("max", dsp::max(x), unit);
    fv.defined("slope", dsp::slope(x, rate), &format!("{unit}/s"));
    fv.defined("dynamic_range", dsp::dynamic_range(x), unit);
    Ok(fv)
}

pub(crate) fn single_channel(input: &ModalityInput) -> Result<&[f64], FeatureError> {
    let x = input.single_channel().ok_or_else(|| FeatureError::Schema {
        modality: input.modality_id.clone(),
        message: format!("expected one channel, found {}", input.channels.len()),
    })?;
    if x.is_empty() {
        return Err(FeatureError::Schema {
            modality: input.modality_id.clone(),
            message: "empty channel".into(),
        });
    }
    Ok(x)
}

/// Runs the extractor for one sensor type.
pub fn extract_modality(
    input: &ModalityInput,
    sensor: SensorType,
) -> Result<FeatureVector, FeatureError> {
    match sensor {
        SensorType::Acc | SensorType::Gyr | SensorType::Mag | SensorType::Ang => {
            extract_inertial(input)
        }
        SensorType::Ecg => extract_cardiac(input, CardiacSource::Ecg),
        SensorType::Ppg => extract_cardiac(input, CardiacSource::Ppg),
        SensorType::Eda => extract_eda(input),
        SensorType::Emg => extract_emg(input),
        SensorType::Resp => extract_resp(input),
        SensorType::Temp | SensorType::Hr => extract_scalar(input, sensor.scalar_unit()),
        SensorType::Eeg => extract_eeg(input),
        SensorType::Eog => extract_eog(input),
    }
}

/// Extracts features for every modality of a window, routed by the
/// sensor-type tag in the task metadata. Masked modalities are extracted
/// like any other.
pub fn extract_window(
    window: &SensorWindow,
    task: &TaskSpec,
) -> Result<WindowFeatures, FeatureError> {
    let mut out = WindowFeatures::new();
    for m in &window.modalities {
        let meta = task
            .modality_meta
            .get(&m.modality_id)
            .ok_or_else(|| FeatureError::MissingMetadata(m.modality_id.clone()))?;
        let sensor: SensorType =
            meta.sensor_type
                .parse()
                .map_err(|tag| FeatureError::UnknownSensorType {
                    modality: m.modality_id.clone(),
                    tag,
                })?;
        out.insert(m.modality_id.clone(), extract_modality(m, sensor)?);
    }
    Ok(out)
}

/// One row of the feature schema manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub sensor_type: SensorType,
    pub extractor: String,
    pub name: String,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_hz: Option<(f64, f64)>,
}

fn canonical_input(sensor: SensorType) -> ModalityInput {
    let (rate, channels): (f64, &[&str]) = match sensor {
        SensorType::Acc | SensorType::Gyr | SensorType::Mag | SensorType::Ang => {
            (50.0, &["x", "y", "z"])
        }
        SensorType::Ecg | SensorType::Ppg => (256.0, &["signal"]),
        SensorType::Eda => (32.0, &["signal"]),
        SensorType::Emg => (1000.0, &["signal"]),
        SensorType::Resp => (32.0, &["signal"]),
        SensorType::Temp | SensorType::Hr => (4.0, &["signal"]),
        SensorType::Eeg | SensorType::Eog => (100.0, &["signal"]),
    };
    let n = (rate * 30.0) as usize;
    ModalityInput {
        modality_id: sensor.tag().to_string(),
        channels: channels
            .iter()
            .map(|c| (c.to_string(), vec![0.0; n]))
            .collect(),
        sample_rate_hz: rate,
        masked: true,
    }
}

fn band_for(sensor: SensorType, name: &str) -> Option<(f64, f64)> {
    let lookup = |bands: &[(&str, f64, f64)]| {
        bands
            .iter()
            .find(|(b, _, _)| name.starts_with(&format!("{b}_")))
            .map(|&(_, lo, hi)| (lo, hi))
    };
    match sensor {
        SensorType::Eeg => lookup(&EEG_BANDS),
        SensorType::Eog => lookup(&EOG_BANDS),
        SensorType::Ecg | SensorType::Ppg => lookup(&HRV_BANDS),
        SensorType::Emg => {
            let idx: usize = name.strip_prefix("band")?.split('_').next()?.parse().ok()?;
            let w = EMG_BAND_SPAN_HZ / EMG_BAND_COUNT as f64;
            Some((idx as f64 * w, (idx + 1) as f64 * w))
        }
        _ => None,
    }
}

/// Machine-readable listing of every feature each extractor emits.
pub fn feature_schema() -> Vec<SchemaEntry> {
    let mut out = Vec::new();
    for sensor in SensorType::ALL {
        let fv = extract_modality(&canonical_input(sensor), sensor)
            .expect("canonical input is well-formed");
        for f in fv.entries {
            out.push(SchemaEntry {
                sensor_type: sensor,
                extractor: sensor.extractor().to_string(),
                band_hz: band_for(sensor, &f.name),
                name: f.name,
                unit: f.unit,
            });
        }
    }
    out
}

/// Processing constants worth stamping into results metadata.
pub fn design_parameters() -> serde_json::Value {
    serde_json::json!({
        "filter": {"family": "butterworth", "order": 4, "zero_phase": true},
        "welch": {"window": "hann", "segment_samples": "min(4*rate, N)", "overlap": 0.5},
        "eeg_bands_hz": EEG_BANDS.iter().map(|(n, lo, hi)| (n.to_string(), [*lo, *hi])).collect::<std::collections::BTreeMap<_, _>>(),
        "eog_bands_hz": EOG_BANDS.iter().map(|(n, lo, hi)| (n.to_string(), [*lo, *hi])).collect::<std::collections::BTreeMap<_, _>>(),
        "hrv_bands_hz": HRV_BANDS.iter().map(|(n, lo, hi)| (n.to_string(), [*lo, *hi])).collect::<std::collections::BTreeMap<_, _>>(),
        "emg_bands": {"count": EMG_BAND_COUNT, "span_hz": EMG_BAND_SPAN_HZ, "intervals": "right-open"},
        "scr": {
            "min_amplitude_us": eda::SCR_MIN_AMPLITUDE_US,
            "min_relative_amplitude": eda::SCR_RELATIVE_AMPLITUDE,
            "min_separation_s": eda::SCR_MIN_SEPARATION_S,
        },
        "tinn_bin_ms": cardiac::TINN_BIN_MS,
        "pnn50": "strictly greater than 50 ms",
        "eog_large_movement": {"threshold_uv": neural::EOG_MOVEMENT_UV, "window_s": neural::EOG_MOVEMENT_WINDOW_S},
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn sensor_tags_round_trip() {
        for t in SensorType::ALL {
            assert_eq!(t.tag().parse::<SensorType>().unwrap(), t);
        }
        assert_eq!("acc".parse::<SensorType>().unwrap(), SensorType::Acc);
        assert!("LIDAR".parse::<SensorType>().is_err());
    }

    #[test]
    fn temp_constant_and_ramp() {
        let mk = |x: Vec<f64>| ModalityInput {
            modality_id: "TEMP".into(),
            channels: BTreeMap::from([("signal".to_string(), x)]),
            sample_rate_hz: 4.0,
            masked: false,
        };
        let fv = extract_temp(&mk(vec![33.0; 240])).unwrap();
        assert_eq!(fv.get("mean"), Some(33.0));
        assert_eq!(fv.get("std"), Some(0.0));
        assert_eq!(fv.get("dynamic_range"), Some(0.0));
        assert!(fv.get("slope").unwrap().abs() < 1e-12);

        let n = 241;
        let ramp: Vec<f64> = (0..n)
            .map(|i| 30.0 + 4.0 * i as f64 / (n - 1) as f64)
            .collect();
        let duration = (n - 1) as f64 / 4.0;
        let fv = extract_temp(&mk(ramp)).unwrap();
        assert!((fv.get("dynamic_range").unwrap() - 4.0).abs() < 1e-12);
        assert!((fv.get("slope").unwrap() - 4.0 / duration).abs() < 1e-12);

        let fv = extract_temp(&mk(vec![0.0; 240])).unwrap();
        assert!(fv.entries.iter().all(|f| f.value == Some(0.0)));
    }

    #[test]
    fn schema_covers_every_sensor_type() {
        let schema = feature_schema();
        for t in SensorType::ALL {
            assert!(schema.iter().any(|e| e.sensor_type == t), "{t} missing");
        }
        assert!(schema
            .iter()
            .any(|e| e.name == "alpha_power" && e.band_hz == Some((8.0, 12.0))));
        assert!(schema
            .iter()
            .any(|e| e.name == "band2_energy" && e.band_hz == Some((100.0, 150.0))));
    }
}
