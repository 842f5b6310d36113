use crate::model::{FeatureVector, ModalityInput};

use super::dsp;
use super::FeatureError;

const AXES: [&str; 3] = ["x", "y", "z"];

/// Per-axis and magnitude statistics for three-axis motion streams
/// (accelerometer, gyroscope, magnetometer, joint angle).
pub fn extract_inertial(input: &ModalityInput) -> Result<FeatureVector, FeatureError> {
    let rate = input.sample_rate_hz;
    let mut axes = Vec::with_capacity(3);
    for axis in AXES {
        let series = input
            .channels
            .get(axis)
            .ok_or_else(|| FeatureError::Schema {
                modality: input.modality_id.clone(),
                message: format!("missing axis channel `{axis}`"),
            })?;
        axes.push(series.as_slice());
    }
    let n = axes[0].len();
    if n == 0 || axes.iter().any(|a| a.len() != n) {
        return Err(FeatureError::Schema {
            modality: input.modality_id.clone(),
            message: "axis channels must be non-empty and of equal length".into(),
        });
    }
    let magnitude: Vec<f64> = (0..n)
        .map(|i| (axes[0][i].powi(2) + axes[1][i].powi(2) + axes[2][i].powi(2)).sqrt())
        .collect();

    let mut fv = FeatureVector::new();
    let named = AXES
        .iter()
        .copied()
        .zip(axes.iter().copied())
        .chain(std::iter::once(("magnitude", magnitude.as_slice())));
    for (name, x) in named {
        fv.defined(format!("{name}_mean"), dsp::mean(x), "");
        fv.defined(format!("{name}_std"), dsp::std_dev(x), "");
        fv.defined(
            format!("{name}_abs_integral"),
            dsp::abs_integral(x, rate),
            "·s",
        );
    }
    for (name, x) in AXES.iter().zip(&axes) {
        let peak = dsp::welch_psd(x, rate)
            .ok()
            .and_then(|est| est.peak_frequency());
        fv.push(format!("{name}_peak_freq"), peak, "Hz");
    }
    Ok(fv)
}
