//! Synthetic normal-series generation and controlled detection tasks.
//!
//! Two families of inliers: an ECG-like mix of sinusoids with a sharp
//! periodic pulse (standardized to zero mean, unit variance) and a gait-like
//! near-periodic stitched template (rescaled to [-1, 1]). Tasks inject
//! anomalies into a held-out test set at a fixed ratio, with each
//! hyperparameter either fixed across the test set or resampled per series.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inject::{inject, AnomalyType, AugParams, InjectError};
use crate::rngs;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Inject(#[from] InjectError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// A univariate series with an optional binary anomaly label.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    /// `Some(0)` normal, `Some(1)` anomalous, `None` unlabeled.
    pub label: Option<u8>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SeriesFamily {
    /// Sum of 2-3 sinusoids plus a sharp periodic pulse and noise;
    /// standardized per series to zero mean, unit variance.
    EcgLike { beat_period: usize },
    /// Near-periodic stitched template with per-cycle jitter and noise;
    /// rescaled per series to [-1, 1].
    GaitLike { period: usize },
}

impl SeriesFamily {
    pub fn ecg() -> Self {
        SeriesFamily::EcgLike { beat_period: 40 }
    }

    pub fn gait() -> Self {
        SeriesFamily::GaitLike { period: 32 }
    }
}

/// Generates `n` normal series of length `k`, deterministically in `seed`.
/// Each series draws from its own RNG stream, so generation order does not
/// matter and per-series parallelism stays reproducible.
pub fn generate_normal(n: usize, k: usize, family: SeriesFamily, seed: u64) -> Result<Vec<Series>> {
    if n == 0 || k == 0 {
        return Err(SynthError::InvalidTask(format!(
            "need positive counts, got n={n}, k={k}"
        )));
    }
    Ok((0..n)
        .map(|i| match family {
            SeriesFamily::EcgLike { beat_period } => ecg_like(k, beat_period, seed, i as u64),
            SeriesFamily::GaitLike { period } => gait_like(k, period, seed, i as u64),
        })
        .collect())
}

fn ecg_like(k: usize, beat_period: usize, seed: u64, idx: u64) -> Series {
    let mut rng = rngs::stream(seed, "ecg", idx);
    let period = beat_period as f64 * rng.random_range(0.9..1.1);
    let phase: f64 = rng.random_range(0.0..period);
    let n_waves = 2 + (rng.random::<f64>() < 0.5) as usize;
    let waves: Vec<(f64, f64, f64)> = (0..n_waves)
        .map(|w| {
            let freq = (w + 1) as f64 / period;
            let amp = rng.random_range(0.2..0.6) / (w + 1) as f64;
            let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (freq, amp, ph)
        })
        .collect();
    let pulse_amp = rng.random_range(2.0..3.0);
    let pulse_width = rng.random_range(1.5..2.5);
    let noise_sd = 0.08;
    let mut v = Vec::with_capacity(k);
    for t in 0..k {
        let tf = t as f64;
        let mut s = 0.0;
        for &(freq, amp, ph) in &waves {
            s += amp * (std::f64::consts::TAU * freq * tf + ph).sin();
        }
        // sharp periodic pulse: one narrow bump per beat
        let dt = (tf + phase).rem_euclid(period);
        let dist = dt.min(period - dt);
        s += pulse_amp * (-0.5 * (dist / pulse_width).powi(2)).exp();
        s += gauss(&mut rng) * noise_sd;
        v.push(s);
    }
    standardize(&mut v);
    Series {
        values: v,
        label: Some(0),
    }
}

fn gait_like(k: usize, period: usize, seed: u64, idx: u64) -> Series {
    let mut rng = rngs::stream(seed, "gait", idx);
    // one template cycle per series: asymmetric double bump, like a femur
    // angle trace
    let template: Vec<f64> = (0..period)
        .map(|t| {
            let ph = t as f64 / period as f64 * std::f64::consts::TAU;
            ph.sin() + 0.45 * (2.0 * ph + 0.8).sin()
        })
        .collect();
    let amp_jitter: f64 = rng.random_range(0.85..1.15);
    let noise_sd = 0.04;
    let mut v = Vec::with_capacity(k);
    let mut t = 0usize;
    while v.len() < k {
        let cycle_amp = amp_jitter * rng.random_range(0.95..1.05);
        for s in &template {
            if v.len() >= k {
                break;
            }
            v.push(cycle_amp * s + gauss(&mut rng) * noise_sd);
            t += 1;
        }
        let _ = t;
    }
    rescale_unit(&mut v);
    Series {
        values: v,
        label: Some(0),
    }
}

fn gauss(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

fn rescale_unit(v: &mut [f64]) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in v.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let span = (hi - lo).max(1e-12);
    for x in v.iter_mut() {
        *x = 2.0 * (*x - lo) / span - 1.0;
    }
}

/// How one hyperparameter behaves across the anomalous test series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldMode {
    Fixed(f64),
    Random(f64, f64),
}

impl FieldMode {
    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        match *self {
            FieldMode::Fixed(v) => v,
            FieldMode::Random(lo, hi) => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
        }
    }
}

/// Anomaly profile of one detection task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub family: SeriesFamily,
    pub anomaly_type: AnomalyType,
    pub level: FieldMode,
    pub location: FieldMode,
    /// `None` only for the spike type, which has no duration.
    pub length: Option<FieldMode>,
    /// Fraction of anomalous series in the test set.
    pub ratio: f64,
}

impl TaskProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(SynthError::InvalidTask(format!(
                "anomaly ratio {} outside (0,1)",
                self.ratio
            )));
        }
        match (self.anomaly_type, self.length) {
            (AnomalyType::Extremum, Some(_)) => Err(SynthError::InvalidTask(
                "spike anomalies have no duration field".into(),
            )),
            (AnomalyType::Extremum, None) => Ok(()),
            (_, None) => Err(SynthError::InvalidTask(format!(
                "{} requires a duration field",
                self.anomaly_type
            ))),
            _ => Ok(()),
        }
    }
}

/// Train/test/validation split of one task.
///
/// `train` holds only normal series. `test` is labeled for evaluation;
/// `val_indices` names the half of the test set the tuner may see
/// (without labels).
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Series>,
    pub test: Vec<Series>,
    pub val_indices: Vec<usize>,
}

impl DatasetSplit {
    pub fn k(&self) -> usize {
        self.train.first().map(|s| s.len()).unwrap_or(0)
    }

    /// Unlabeled view of the validation subset (labels stripped).
    pub fn val_series(&self) -> Vec<Series> {
        self.val_indices
            .iter()
            .map(|&i| Series {
                values: self.test[i].values.clone(),
                label: None,
            })
            .collect()
    }

    /// Validation labels; for evaluation and trajectory reporting only.
    pub fn val_labels(&self) -> Vec<u8> {
        self.val_indices
            .iter()
            .map(|&i| self.test[i].label.unwrap_or(0))
            .collect()
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|s| s.label.unwrap_or(0)).collect()
    }
}

/// Builds a detection task: normal training data plus a labeled test set with
/// exactly `round(ratio * n_test)` injected anomalies, and a fixed seeded
/// half of the test set marked as the validation subset.
pub fn build_task(
    profile: &TaskProfile,
    n_trn: usize,
    n_test: usize,
    k: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    profile.validate()?;
    let all = generate_normal(n_trn + n_test, k, profile.family, seed)?;
    let train = all[..n_trn].to_vec();
    let mut test = all[n_trn..].to_vec();

    let n_anom = (profile.ratio * n_test as f64).round() as usize;
    let mut pick = rngs::stream(seed, "task-pick", 0);
    let anom_idx = sample_without_replacement(n_test, n_anom, &mut pick);

    let mut draw = rngs::stream(seed, "task-params", 0);
    for &i in &anom_idx {
        let a = AugParams {
            anomaly_type: profile.anomaly_type,
            location: profile.location.draw(&mut draw),
            length: profile
                .length
                .map(|m| m.draw(&mut draw))
                .unwrap_or(1.0 / k as f64),
            level: profile.level.draw(&mut draw),
        };
        test[i] = inject(&test[i], &a)?;
    }
    for (i, s) in test.iter_mut().enumerate() {
        if !anom_idx.contains(&i) {
            s.label = Some(0);
        }
    }

    // fixed 50% validation split of the test set
    let mut vs = rngs::stream(seed, "task-val", 0);
    let mut val_indices = sample_without_replacement(n_test, n_test / 2, &mut vs);
    val_indices.sort_unstable();

    Ok(DatasetSplit {
        train,
        test,
        val_indices,
    })
}

fn sample_without_replacement(
    n: usize,
    m: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates
    for i in 0..m.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_ecg_is_standardized() {
        let data = generate_normal(8, 256, SeriesFamily::ecg(), 3).unwrap();
        for s in &data {
            let n = s.len() as f64;
            let mean = s.values.iter().sum::<f64>() / n;
            let var = s.values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
            assert_eq!(s.label, Some(0));
        }
    }

    #[test]
    fn generated_gait_in_unit_range() {
        let data = generate_normal(8, 256, SeriesFamily::gait(), 3).unwrap();
        for s in &data {
            let lo = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= -1.0 - 1e-12 && hi <= 1.0 + 1e-12);
            assert!((lo + 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_deterministic() {
        let a = generate_normal(4, 128, SeriesFamily::ecg(), 11).unwrap();
        let b = generate_normal(4, 128, SeriesFamily::ecg(), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_normal(4, 128, SeriesFamily::ecg(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gait_dominant_period_matches_request() {
        let period = 32;
        let data = generate_normal(4, 512, SeriesFamily::GaitLike { period }, 7).unwrap();
        for s in &data {
            // autocorrelation peak over plausible lags
            let v = &s.values;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let mut best = (0usize, f64::NEG_INFINITY);
            for lag in period / 2..period * 2 {
                let mut acc = 0.0;
                for t in 0..v.len() - lag {
                    acc += (v[t] - mean) * (v[t + lag] - mean);
                }
                if acc > best.1 {
                    best = (lag, acc);
                }
            }
            assert!(
                (best.0 as i64 - period as i64).abs() <= 1,
                "autocorrelation peak at {} vs period {period}",
                best.0
            );
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_normal(0, 10, SeriesFamily::ecg(), 0).is_err());
        assert!(generate_normal(10, 0, SeriesFamily::ecg(), 0).is_err());
    }

    fn platform_profile() -> TaskProfile {
        TaskProfile {
            family: SeriesFamily::ecg(),
            anomaly_type: AnomalyType::Platform,
            level: FieldMode::Fixed(0.2),
            location: FieldMode::Random(0.05, 0.55),
            length: Some(FieldMode::Random(0.1, 0.4)),
            ratio: 0.1,
        }
    }

    #[test]
    fn task_anomaly_count_exact() {
        let split = build_task(&platform_profile(), 32, 200, 128, 5).unwrap();
        let n_anom: usize = split.test_labels().iter().map(|&l| l as usize).sum();
        assert_eq!(n_anom, 20);
        assert!(split.train.iter().all(|s| s.label == Some(0)));
        assert_eq!(split.val_indices.len(), 100);
        assert!(split.val_series().iter().all(|s| s.label.is_none()));
    }

    #[test]
    fn fixed_level_constant_across_anomalies() {
        let split = build_task(&platform_profile(), 16, 60, 128, 9).unwrap();
        // platform anomalies contain a run of samples equal to the level
        for s in &split.test {
            if s.label == Some(1) {
                let hits = s.values.iter().filter(|&&v| v == 0.2).count();
                assert!(hits >= 12, "expected a platform at 0.2, found {hits} samples");
            }
        }
    }

    #[test]
    fn random_location_covers_span() {
        let profile = TaskProfile {
            ratio: 0.5,
            ..platform_profile()
        };
        let split = build_task(&profile, 8, 200, 128, 21).unwrap();
        // recover each platform's start as first index where value == level
        let mut starts = Vec::new();
        for s in &split.test {
            if s.label == Some(1) {
                if let Some(pos) = s.values.iter().position(|&v| v == 0.2) {
                    starts.push(pos as f64 / 128.0);
                }
            }
        }
        assert!(starts.len() == 100);
        let lo = starts.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = starts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // spec-level check: observed span covers at least 80% of the interval
        let span = (hi - lo) / (0.55 - 0.05);
        assert!(span >= 0.8, "span coverage {span}");
    }

    #[test]
    fn extremum_profile_needs_no_length() {
        let p = TaskProfile {
            family: SeriesFamily::ecg(),
            anomaly_type: AnomalyType::Extremum,
            level: FieldMode::Fixed(8.0),
            location: FieldMode::Random(0.1, 0.9),
            length: None,
            ratio: 0.1,
        };
        assert!(p.validate().is_ok());
        let bad = TaskProfile {
            length: Some(FieldMode::Fixed(0.1)),
            ..p
        };
        assert!(bad.validate().is_err());
        let missing = TaskProfile {
            anomaly_type: AnomalyType::Platform,
            length: None,
            ..p
        };
        assert!(missing.validate().is_err());
    }

    #[test]
    fn task_deterministic_in_seed() {
        let a = build_task(&platform_profile(), 8, 20, 64, 77).unwrap();
        let b = build_task(&platform_profile(), 8, 20, 64, 77).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.val_indices, b.val_indices);
    }
}
