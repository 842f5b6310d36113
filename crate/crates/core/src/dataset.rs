//! On-disk dataset format, within-subject splits, balanced subsampling,
//! missingness masks and the synthetic generator.
//!
//! A dataset directory holds `task.json` (a [`TaskSpec`]) and
//! `windows.jsonl`, one window per line:
//!
//! ```json
//! {"window_id": "s1-w0", "subject_id": "s1", "label": "rest",
//!  "modalities": {"EEG": {"channels": {"signal": [0.1, 0.2]}}}}
//! ```
//!
//! Sample rates come from the task metadata. The synthetic generator also
//! writes `manifest.json` with its generation parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::SensorType;
use crate::model::{ModalityInput, ModalityMeta, SensorWindow, TaskSpec};

pub const TASK_FILE: &str = "task.json";
pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid task: {}", .0.join("; "))]
    Task(Vec<String>),
    #[error("window `{window_id}`: {}", .problems.join("; "))]
    Window {
        window_id: String,
        problems: Vec<String>,
    },
    #[error("mask plan: {0}")]
    Mask(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelsRecord {
    channels: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WindowRecord {
    window_id: String,
    subject_id: String,
    label: String,
    modalities: BTreeMap<String, ChannelsRecord>,
}

/// Loads and validates a dataset directory. Windows keep file order;
/// modalities within a window are ordered by id.
pub fn load_dataset(root: &Path) -> Result<(TaskSpec, Vec<SensorWindow>), DatasetError> {
    let task_path = root.join(TASK_FILE);
    let text = fs::read_to_string(&task_path).map_err(io_err(&task_path))?;
    let task: TaskSpec = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: task_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let problems = task.check();
    if !problems.is_empty() {
        return Err(DatasetError::Task(problems));
    }

    let windows_path = root.join(WINDOWS_FILE);
    let file = fs::File::open(&windows_path).map_err(io_err(&windows_path))?;
    let mut windows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&windows_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: windows_path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let window = window_from_record(rec, &task)?;
        if !seen.insert(window.window_id.clone()) {
            return Err(DatasetError::Window {
                window_id: window.window_id,
                problems: vec!["duplicate window id".into()],
            });
        }
        windows.push(window);
    }
    Ok((task, windows))
}

fn window_from_record(rec: WindowRecord, task: &TaskSpec) -> Result<SensorWindow, DatasetError> {
    let mut problems = Vec::new();
    let modalities = rec
        .modalities
        .into_iter()
        .map(|(id, ch)| {
            let rate = task
                .modality_meta
                .get(&id)
                .map_or(0.0, |m| m.sample_rate_hz);
            ModalityInput {
                modality_id: id,
                channels: ch.channels,
                sample_rate_hz: rate,
                masked: false,
            }
        })
        .collect();
    let window = SensorWindow {
        window_id: rec.window_id,
        subject_id: rec.subject_id,
        label: rec.label,
        modalities,
    };
    problems.extend(window.check(task));
    if problems.is_empty() {
        Ok(window)
    } else {
        Err(DatasetError::Window {
            window_id: window.window_id,
            problems,
        })
    }
}

/// Writes `task.json` and `windows.jsonl` (plus an optional manifest).
pub fn write_dataset(
    root: &Path,
    task: &TaskSpec,
    windows: &[SensorWindow],
    manifest: Option<&serde_json::Value>,
) -> Result<(), DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let task_path = root.join(TASK_FILE);
    let json = serde_json::to_string_pretty(task).expect("task serializes");
    fs::write(&task_path, json + "\n").map_err(io_err(&task_path))?;

    let windows_path = root.join(WINDOWS_FILE);
    let mut out =
        std::io::BufWriter::new(fs::File::create(&windows_path).map_err(io_err(&windows_path))?);
    for w in windows {
        let rec = WindowRecord {
            window_id: w.window_id.clone(),
            subject_id: w.subject_id.clone(),
            label: w.label.clone(),
            modalities: w
                .modalities
                .iter()
                .map(|m| {
                    (
                        m.modality_id.clone(),
                        ChannelsRecord {
                            channels: m.channels.clone(),
                        },
                    )
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("window serializes");
        writeln!(out, "{line}").map_err(io_err(&windows_path))?;
    }
    out.flush().map_err(io_err(&windows_path))?;

    if let Some(m) = manifest {
        let path = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(m).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

/// Stable 64-bit seed derived from a base seed and a list of labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Example/test partition for 1-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// One window per (subject, class).
    pub example_windows: Vec<String>,
    pub test_windows: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Split {
    /// Example window id for each class of one subject.
    pub fn examples_for<'a>(
        &self,
        subject: &str,
        windows: &'a [SensorWindow],
    ) -> BTreeMap<String, &'a SensorWindow> {
        let ids: BTreeSet<&str> = self.example_windows.iter().map(String::as_str).collect();
        windows
            .iter()
            .filter(|w| w.subject_id == subject && ids.contains(w.window_id.as_str()))
            .map(|w| (w.label.clone(), w))
            .collect()
    }
}

/// Picks one example window per (subject, class) uniformly under `seed`; the
/// rest become test windows. Pairs with a single window are dropped, and so
/// are the test windows of any subject left without an example for every
/// class, since its prompts could not be built.
pub fn within_subject_split(task: &TaskSpec, windows: &[SensorWindow], seed: u64) -> Split {
    let mut groups: BTreeMap<(&str, &str), Vec<&str>> = BTreeMap::new();
    for w in windows {
        groups
            .entry((w.subject_id.as_str(), w.label.as_str()))
            .or_default()
            .push(w.window_id.as_str());
    }
    let mut warnings = Vec::new();
    let mut examples: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut tests: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for ((subject, class), mut ids) in groups {
        if ids.len() < 2 {
            warnings.push(format!(
                "subject `{subject}` class `{class}` has {} window(s); pair excluded",
                ids.len()
            ));
            continue;
        }
        ids.sort_unstable();
        let pick = rng_for(seed, &["split", subject, class]).random_range(0..ids.len());
        examples.entry(subject).or_default().push(ids.remove(pick));
        tests.entry(subject).or_default().extend(ids);
    }
    let mut example_windows = Vec::new();
    let mut test_windows = Vec::new();
    let subjects: BTreeSet<&str> = windows.iter().map(|w| w.subject_id.as_str()).collect();
    for subject in subjects {
        let ex = examples.remove(subject).unwrap_or_default();
        let te = tests.remove(subject).unwrap_or_default();
        if ex.len() < task.classes.len() {
            if !te.is_empty() {
                warnings.push(format!(
                    "subject `{subject}` lacks an example for some class; {} test window(s) excluded",
                    te.len()
                ));
            } else if ex.is_empty() {
                warnings.push(format!("subject `{subject}` excluded"));
            }
            example_windows.extend(ex.into_iter().map(str::to_string));
            continue;
        }
        example_windows.extend(ex.into_iter().map(str::to_string));
        test_windows.extend(te.into_iter().map(str::to_string));
    }
    example_windows.sort();
    test_windows.sort();
    for w in &warnings {
        log::warn!("{w}");
    }
    Split {
        example_windows,
        test_windows,
        warnings,
    }
}

/// Up to `per_class` test windows per class, uniformly without replacement
/// under `seed`, returned sorted by window id.
pub fn subsample_balanced(
    test_windows: &[&SensorWindow],
    per_class: usize,
    seed: u64,
) -> Vec<String> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for w in test_windows {
        by_class
            .entry(w.label.as_str())
            .or_default()
            .push(w.window_id.as_str());
    }
    let mut out = Vec::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.dedup();
        let mut rng = rng_for(seed, &["subsample", class]);
        let k = per_class.min(ids.len());
        let chosen = rand::seq::index::sample(&mut rng, ids.len(), k);
        out.extend(chosen.into_iter().map(|i| ids[i].to_string()));
    }
    out.sort();
    out
}

/// Which modalities of each window are replaced by zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub ratio: f64,
    pub seed: u64,
    pub assignments: BTreeMap<String, BTreeSet<String>>,
}

impl MaskPlan {
    /// Masks `round(N·ratio)` modalities per window. Each window draws one
    /// permutation of its modality ids from `(seed, window_id)` and masks a
    /// prefix, so plans are shared across protocols and nested across ratios.
    pub fn build(windows: &[&SensorWindow], ratio: f64, seed: u64) -> MaskPlan {
        let ratio = ratio.clamp(0.0, 1.0);
        let assignments = windows
            .iter()
            .map(|w| {
                let mut ids: Vec<&str> = w
                    .modalities
                    .iter()
                    .map(|m| m.modality_id.as_str())
                    .collect();
                ids.sort_unstable();
                ids.shuffle(&mut rng_for(seed, &["mask", &w.window_id]));
                let k = (ids.len() as f64 * ratio).round() as usize;
                (
                    w.window_id.clone(),
                    ids[..k].iter().map(|s| s.to_string()).collect(),
                )
            })
            .collect();
        MaskPlan {
            ratio,
            seed,
            assignments,
        }
    }

    pub fn masked(&self, window_id: &str) -> Option<&BTreeSet<String>> {
        self.assignments.get(window_id)
    }
}

/// Copy of `window` with the planned modalities zeroed and flagged.
pub fn apply_mask_plan(
    window: &SensorWindow,
    plan: &MaskPlan,
) -> Result<SensorWindow, DatasetError> {
    let set = plan.masked(&window.window_id).ok_or_else(|| {
        DatasetError::Mask(format!("window `{}` is not covered", window.window_id))
    })?;
    if let Some(unknown) = set.iter().find(|id| window.modality(id).is_none()) {
        return Err(DatasetError::Mask(format!(
            "window `{}` has no modality `{unknown}`",
            window.window_id
        )));
    }
    let mut out = window.clone();
    for m in &mut out.modalities {
        if set.contains(&m.modality_id) {
            m.channels
                .values_mut()
                .for_each(|c| c.iter_mut().for_each(|v| *v = 0.0));
            m.masked = true;
        }
    }
    Ok(out)
}

/// Signal shape for one class of one synthetic modality. Meaning depends on
/// the sensor type: oscillation frequency for rhythmic signals, beat rate for
/// cardiac, response rate for EDA; `level` is the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub freq_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub id: String,
    pub sensor_type: SensorType,
    pub sample_rate_hz: f64,
    pub collection_protocol: String,
    pub feature_extraction: String,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Class name → signature. Every task class needs an entry.
    pub per_class: BTreeMap<String, ClassSignature>,
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub description: String,
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTemplate {
    pub description: String,
    pub classes: Vec<SynthClass>,
    pub modalities: Vec<SynthModality>,
    pub window_s: f64,
}

impl SynthTemplate {
    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            description: self.description.clone(),
            classes: self.classes.iter().map(|c| c.name.clone()).collect(),
            class_descriptions: self
                .classes
                .iter()
                .map(|c| (c.name.clone(), c.description.clone()))
                .collect(),
            modality_meta: self
                .modalities
                .iter()
                .map(|m| {
                    (
                        m.id.clone(),
                        ModalityMeta {
                            sensor_type: m.sensor_type.tag().to_string(),
                            collection_protocol: m.collection_protocol.clone(),
                            feature_extraction: m.feature_extraction.clone(),
                            sample_rate_hz: m.sample_rate_hz,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Three activity classes over five wearable modalities.
    pub fn demo() -> Self {
        let sig = |freq_hz: f64, amplitude: f64, level: f64| ClassSignature {
            freq_hz,
            amplitude,
            level,
        };
        let per_class = |rest: ClassSignature, walk: ClassSignature, run: ClassSignature| {
            BTreeMap::from([
                ("rest".to_string(), rest),
                ("walk".to_string(), walk),
                ("run".to_string(), run),
            ])
        };
        SynthTemplate {
            description: "Classify the user's activity: rest, walk, run, based on signals collected from wearable sensors."
                .into(),
            classes: vec![
                SynthClass {
                    name: "rest".into(),
                    description: "Seated or lying without purposeful movement.".into(),
                },
                SynthClass {
                    name: "walk".into(),
                    description: "Steady walking at a comfortable pace.".into(),
                },
                SynthClass {
                    name: "run".into(),
                    description: "Running or jogging.".into(),
                },
            ],
            modalities: vec![
                SynthModality {
                    id: "ACC-wrist".into(),
                    sensor_type: SensorType::Acc,
                    sample_rate_hz: 25.0,
                    collection_protocol: "Three-axis accelerometer on the dominant wrist, in g.".into(),
                    feature_extraction: "Per-axis and magnitude mean, std and absolute integral; per-axis peak frequency.".into(),
                    noise: 0.05,
                    per_class: per_class(sig(0.3, 0.02, 1.0), sig(1.8, 0.4, 1.0), sig(2.8, 1.2, 1.0)),
                },
                SynthModality {
                    id: "ECG-chest".into(),
                    sensor_type: SensorType::Ecg,
                    sample_rate_hz: 128.0,
                    collection_protocol: "Single-lead chest ECG, in mV.".into(),
                    feature_extraction: "Beat detection, heart rate, HRV time and frequency domain features.".into(),
                    noise: 0.03,
                    per_class: per_class(sig(1.1, 1.0, 0.0), sig(1.6, 1.0, 0.0), sig(2.5, 1.0, 0.0)),
                },
                SynthModality {
                    id: "EDA-wrist".into(),
                    sensor_type: SensorType::Eda,
                    sample_rate_hz: 8.0,
                    collection_protocol: "Skin conductance on the wrist, in µS.".into(),
                    feature_extraction: "5 Hz low-pass level statistics, tonic SCL and phasic SCR features.".into(),
                    noise: 0.005,
                    per_class: per_class(sig(0.02, 0.1, 2.0), sig(0.05, 0.3, 3.0), sig(0.1, 0.6, 5.0)),
                },
                SynthModality {
                    id: "RESP-chest".into(),
                    sensor_type: SensorType::Resp,
                    sample_rate_hz: 16.0,
                    collection_protocol: "Chest-band respiration stretch sensor, arbitrary units.".into(),
                    feature_extraction: "0.1-0.35 Hz band-pass breath phase, stretch, volume and rate features.".into(),
                    noise: 0.02,
                    per_class: per_class(sig(0.2, 0.5, 0.0), sig(0.27, 0.8, 0.0), sig(0.33, 1.2, 0.0)),
                },
                SynthModality {
                    id: "TEMP-wrist".into(),
                    sensor_type: SensorType::Temp,
                    sample_rate_hz: 4.0,
                    collection_protocol: "Skin temperature on the wrist, in °C.".into(),
                    feature_extraction: "Mean, std, min, max, slope and dynamic range.".into(),
                    noise: 0.02,
                    per_class: per_class(sig(0.0, 0.0, 33.5), sig(0.0, 0.3, 32.8), sig(0.0, 0.6, 32.0)),
                },
            ],
            window_s: 30.0,
        }
    }
}

/// Generated dataset plus a manifest of its parameters.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub task: TaskSpec,
    pub windows: Vec<SensorWindow>,
    pub manifest: serde_json::Value,
}

/// Deterministic synthetic windows: `n_subjects` × classes ×
/// `windows_per_class`, each modality drawn from its class signature plus
/// Gaussian noise. Subjects get a small per-subject gain.
pub fn generate_synthetic(
    template: &SynthTemplate,
    n_subjects: usize,
    windows_per_class: usize,
    seed: u64,
) -> SynthDataset {
    let task = template.task();
    let mut windows = Vec::new();
    for s in 0..n_subjects {
        let subject = format!("s{s:02}");
        let gain = 1.0 + 0.1 * (rng_for(seed, &["gain", &subject]).random::<f64>() - 0.5);
        for class in &task.classes {
            for k in 0..windows_per_class {
                let window_id = format!("{subject}-{class}-{k:03}");
                let modalities = template
                    .modalities
                    .iter()
                    .map(|m| {
                        let sig = m.per_class.get(class).cloned().unwrap_or(ClassSignature {
                            freq_hz: 0.0,
                            amplitude: 0.0,
                            level: 0.0,
                        });
                        let mut rng = rng_for(seed, &["signal", &window_id, &m.id]);
                        synth_modality(m, &sig, gain, template.window_s, &mut rng)
                    })
                    .collect();
                windows.push(SensorWindow {
                    window_id,
                    subject_id: subject.clone(),
                    label: class.clone(),
                    modalities,
                });
            }
        }
    }
    let manifest = serde_json::json!({
        "generator": "synthetic",
        "seed": seed,
        "n_subjects": n_subjects,
        "windows_per_class": windows_per_class,
        "n_windows": windows.len(),
        "template": template,
    });
    SynthDataset {
        task,
        windows,
        manifest,
    }
}

fn synth_modality(
    m: &SynthModality,
    sig: &ClassSignature,
    gain: f64,
    window_s: f64,
    rng: &mut ChaCha8Rng,
) -> ModalityInput {
    use std::f64::consts::PI;
    let rate = m.sample_rate_hz;
    let n = (window_s * rate).round().max(1.0) as usize;
    let noise = Normal::new(0.0, m.noise.max(0.0)).expect("finite noise std");
    let phase: f64 = rng.random::<f64>() * 2.0 * PI;
    let amp = sig.amplitude * gain;
    let t = |i: usize| i as f64 / rate;
    let channel = |f: &dyn Fn(f64) -> f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|i| round6(f(t(i)) + noise.sample(rng)))
            .collect()
    };
    let channels: BTreeMap<String, Vec<f64>> = match m.sensor_type {
        SensorType::Acc | SensorType::Gyr | SensorType::Mag | SensorType::Ang => ["x", "y", "z"]
            .iter()
            .enumerate()
            .map(|(k, axis)| {
                let share = [1.0, 0.6, 0.3][k];
                let base = if k == 2 { sig.level } else { 0.0 };
                let f = move |t: f64| {
                    base + share * amp * (2.0 * PI * sig.freq_hz * t + phase + k as f64).sin()
                };
                (axis.to_string(), channel(&f, rng))
            })
            .collect(),
        SensorType::Ecg | SensorType::Ppg => {
            let period = 1.0 / sig.freq_hz.max(0.1);
            let width = if m.sensor_type == SensorType::Ecg {
                0.015
            } else {
                0.08
            };
            let offset = rng.random::<f64>() * period;
            let f = move |t: f64| {
                let phase = (t + offset) % period - period / 2.0;
                sig.level + amp * (-(phase * phase) / (2.0 * width * width)).exp()
            };
            BTreeMap::from([("signal".to_string(), channel(&f, rng))])
        }
        SensorType::Eda => {
            let count = (sig.freq_hz * window_s).round().max(0.0) as usize;
            let centres: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * window_s).collect();
            let f = move |t: f64| {
                sig.level * gain
                    + centres
                        .iter()
                        .map(|c| amp * (-(t - c).powi(2) / (2.0 * 0.8 * 0.8)).exp())
                        .sum::<f64>()
            };
            BTreeMap::from([("signal".to_string(), channel(&f, rng))])
        }
        SensorType::Temp | SensorType::Hr => {
            let drift = amp / window_s;
            let f = move |t: f64| sig.level + drift * t;
            BTreeMap::from([("signal".to_string(), channel(&f, rng))])
        }
        SensorType::Eeg | SensorType::Eog | SensorType::Emg | SensorType::Resp => {
            let f = move |t: f64| sig.level + amp * (2.0 * PI * sig.freq_hz * t + phase).sin();
            BTreeMap::from([("signal".to_string(), channel(&f, rng))])
        }
    };
    ModalityInput {
        modality_id: m.id.clone(),
        channels,
        sample_rate_hz: rate,
        masked: false,
    }
}

/// Keeps files compact without changing any feature materially.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(subjects: usize, per_class: usize) -> (TaskSpec, Vec<SensorWindow>) {
        let mut t = SynthTemplate::demo();
        t.window_s = 12.0;
        let d = generate_synthetic(&t, subjects, per_class, 7);
        (d.task, d.windows)
    }

    #[test]
    fn split_one_example_per_pair() {
        let (task, windows) = toy(2, 2);
        let split = within_subject_split(&task, &windows, 1);
        assert_eq!(split.example_windows.len(), 2 * 3);
        assert_eq!(split.test_windows.len(), 2 * 3);
        let ex: BTreeSet<_> = split.example_windows.iter().collect();
        assert!(split.test_windows.iter().all(|t| !ex.contains(t)));
        assert_eq!(split, within_subject_split(&task, &windows, 1));
    }

    #[test]
    fn singleton_pair_is_excluded() {
        let (task, mut windows) = toy(1, 2);
        windows.retain(|w| w.window_id != "s00-rest-001");
        let split = within_subject_split(&task, &windows, 1);
        assert!(split.warnings.iter().any(|w| w.contains("rest")));
        assert!(!split.example_windows.contains(&"s00-rest-000".to_string()));
        assert!(split.test_windows.is_empty());
    }

    #[test]
    fn subsample_caps_and_is_stable() {
        let (_, windows) = toy(2, 4);
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        let a = subsample_balanced(&refs, 3, 9);
        assert_eq!(a.len(), 9);
        assert_eq!(a, subsample_balanced(&refs, 3, 9));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted);
        let all = subsample_balanced(&refs, 100, 9);
        assert_eq!(all.len(), windows.len());
    }

    #[test]
    fn mask_counts_and_identity() {
        let (_, windows) = toy(1, 1);
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        for ratio in [0.0, 0.1, 0.3, 0.5, 1.0] {
            let plan = MaskPlan::build(&refs, ratio, 3);
            for w in &windows {
                let masked = apply_mask_plan(w, &plan).unwrap();
                let n = masked.modalities.iter().filter(|m| m.masked).count();
                assert_eq!(n, (w.modalities.len() as f64 * ratio).round() as usize);
                assert!(masked.check(&SynthTemplate::demo().task()).is_empty());
                assert_eq!(apply_mask_plan(&masked, &plan).unwrap(), masked);
                if ratio == 0.0 {
                    assert_eq!(&masked, w);
                }
            }
        }
    }

    #[test]
    fn unknown_modality_in_plan_is_error() {
        let (_, windows) = toy(1, 1);
        let mut plan = MaskPlan::build(&windows.iter().collect::<Vec<_>>(), 0.0, 0);
        plan.assignments
            .get_mut(&windows[0].window_id)
            .unwrap()
            .insert("LIDAR".into());
        assert!(matches!(
            apply_mask_plan(&windows[0], &plan),
            Err(DatasetError::Mask(_))
        ));
    }

    #[test]
    fn zero_subjects_is_empty() {
        let d = generate_synthetic(&SynthTemplate::demo(), 0, 3, 1);
        assert!(d.windows.is_empty());
        assert_eq!(d.manifest["n_windows"], 0);
    }
}
