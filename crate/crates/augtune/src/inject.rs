//! Parametric anomaly injection: six transformation types, each controlled
//! by a window (`location`, `length` as fractions of the series length) and a
//! severity (`level` in type-specific units). These are the analytic,
//! non-learned transforms; the learned differentiable surrogate lives in
//! [`crate::faug`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::Series;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("empty hyperparameter domain: {0}")]
    EmptyDomain(String),
}

pub type Result<T> = std::result::Result<T, InjectError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyType {
    /// Window replaced by a constant value.
    Platform,
    /// Constant added to the window.
    MeanShift,
    /// Window multiplied by a constant.
    Amplitude,
    /// Linear ramp `level * t` added over the window.
    Trend,
    /// A single sample set to `level`; has no duration.
    Extremum,
    /// Local time compression raising the window's frequency.
    FrequencyShift,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 6] = [
        AnomalyType::Platform,
        AnomalyType::MeanShift,
        AnomalyType::Amplitude,
        AnomalyType::Trend,
        AnomalyType::Extremum,
        AnomalyType::FrequencyShift,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnomalyType::Platform => "platform",
            AnomalyType::MeanShift => "mean-shift",
            AnomalyType::Amplitude => "amplitude",
            AnomalyType::Trend => "trend",
            AnomalyType::Extremum => "extremum",
            AnomalyType::FrequencyShift => "frequency-shift",
        }
    }

    /// The level at which the transform is the identity, if one exists.
    pub fn neutral_level(&self) -> Option<f64> {
        match self {
            AnomalyType::MeanShift | AnomalyType::Trend | AnomalyType::FrequencyShift => Some(0.0),
            AnomalyType::Amplitude => Some(1.0),
            AnomalyType::Platform | AnomalyType::Extremum => None,
        }
    }
}

impl std::str::FromStr for AnomalyType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "platform" => Ok(AnomalyType::Platform),
            "mean-shift" | "meanshift" | "mean_shift" => Ok(AnomalyType::MeanShift),
            "amplitude" => Ok(AnomalyType::Amplitude),
            "trend" => Ok(AnomalyType::Trend),
            "extremum" | "spike" => Ok(AnomalyType::Extremum),
            "frequency-shift" | "frequencyshift" | "frequency_shift" | "frequency" => {
                Ok(AnomalyType::FrequencyShift)
            }
            other => Err(format!("unknown anomaly type: {other}")),
        }
    }
}

impl std::fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Augmentation hyperparameters: the vector `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub anomaly_type: AnomalyType,
    /// Window start as a fraction of the series length, in `[0,1)`.
    pub location: f64,
    /// Window duration as a fraction of the series length, in `(0,1]`.
    pub length: f64,
    /// Severity, in type-specific units.
    pub level: f64,
}

/// Closed sampling/tuning intervals for one anomaly type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperDomain {
    pub location: (f64, f64),
    pub length: (f64, f64),
    pub level: (f64, f64),
}

impl HyperDomain {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("location", self.location),
            ("length", self.length),
            ("level", self.level),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(InjectError::EmptyDomain(format!("{name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Full-scale defaults: the discrete level grids are relaxed to their
    /// convex hulls so the level can be tuned continuously, and window
    /// hyperparameters are normalized by the series length `k`.
    pub fn paper(atype: AnomalyType, k: usize) -> HyperDomain {
        let kf = k as f64;
        match atype {
            AnomalyType::Platform | AnomalyType::MeanShift => HyperDomain {
                location: (100.0 / kf, 2000.0 / kf),
                length: (400.0 / kf, 600.0 / kf),
                level: (-1.0, 1.0),
            },
            AnomalyType::Amplitude => HyperDomain {
                location: (100.0 / kf, 2000.0 / kf),
                length: (400.0 / kf, 600.0 / kf),
                level: (1.0, 6.0),
            },
            AnomalyType::Trend => HyperDomain {
                location: (100.0 / kf, 2000.0 / kf),
                length: (400.0 / kf, 600.0 / kf),
                level: (-0.01, 0.01),
            },
            AnomalyType::Extremum => HyperDomain {
                location: (100.0 / kf, 2600.0 / kf),
                length: (1.0 / kf, 1.0 / kf),
                level: (-15.0, 15.0),
            },
            AnomalyType::FrequencyShift => HyperDomain {
                location: (200.0 / 1500.0, 800.0 / 1500.0),
                length: (100.0 / 1500.0, 400.0 / 1500.0),
                level: (1.0, 3.0),
            },
        }
    }

    /// Desk-scale defaults for short synthetic series.
    pub fn desk(atype: AnomalyType, k: usize) -> HyperDomain {
        let kf = k as f64;
        let location = (0.05, 0.55);
        let length = (0.1, 0.4);
        match atype {
            AnomalyType::Platform | AnomalyType::MeanShift => HyperDomain {
                location,
                length,
                level: (-1.0, 1.0),
            },
            AnomalyType::Amplitude => HyperDomain {
                location,
                length,
                level: (1.0, 6.0),
            },
            AnomalyType::Trend => HyperDomain {
                location,
                length,
                level: (-0.3, 0.3),
            },
            AnomalyType::Extremum => HyperDomain {
                location: (0.05, 0.95),
                length: (1.0 / kf, 1.0 / kf),
                level: (-15.0, 15.0),
            },
            AnomalyType::FrequencyShift => HyperDomain {
                location,
                length,
                level: (1.0, 3.0),
            },
        }
    }

    pub fn clamp_level(&self, level: f64) -> f64 {
        level.clamp(self.level.0, self.level.1)
    }

    pub fn clamp_length(&self, length: f64) -> f64 {
        length.clamp(self.length.0, self.length.1)
    }
}

/// Integer window `[start, start+len)` for params on a length-`k` series.
pub fn window(a: &AugParams, k: usize) -> Result<(usize, usize)> {
    if k < 2 {
        return Err(InjectError::InvalidParams(format!(
            "series too short: {k} samples"
        )));
    }
    if !(0.0..1.0).contains(&a.location) {
        return Err(InjectError::InvalidParams(format!(
            "location {} outside [0,1)",
            a.location
        )));
    }
    if !(a.length > 0.0 && a.length <= 1.0) {
        return Err(InjectError::InvalidParams(format!(
            "length {} outside (0,1]",
            a.length
        )));
    }
    let start = (a.location * k as f64).floor() as usize;
    let len = ((a.length * k as f64).floor() as usize).max(1);
    if start + len > k {
        return Err(InjectError::InvalidParams(format!(
            "window [{start}, {}) exceeds series length {k}",
            start + len
        )));
    }
    Ok((start, len))
}

/// Applies the anomaly described by `a` to a copy of `x`.
///
/// Samples outside the window are bit-identical to the input. The output is
/// labeled anomalous.
pub fn inject(x: &Series, a: &AugParams) -> Result<Series> {
    let k = x.values.len();
    let (start, len) = window(a, k)?;
    let mut v = x.values.clone();
    match a.anomaly_type {
        AnomalyType::Platform => {
            for t in start..start + len {
                v[t] = a.level;
            }
        }
        AnomalyType::MeanShift => {
            for t in start..start + len {
                v[t] += a.level;
            }
        }
        AnomalyType::Amplitude => {
            for t in start..start + len {
                v[t] *= a.level;
            }
        }
        AnomalyType::Trend => {
            for (i, t) in (start..start + len).enumerate() {
                v[t] += a.level * i as f64;
            }
        }
        AnomalyType::Extremum => {
            v[start] = a.level;
        }
        AnomalyType::FrequencyShift => {
            // Time-warp resampling: the window is read at (1 + level) speed
            // with linear interpolation, clamped to the window's last sample.
            let src: Vec<f64> = x.values[start..start + len].to_vec();
            let rate = 1.0 + a.level;
            for i in 0..len {
                let pos = (i as f64 * rate).min((len - 1) as f64).max(0.0);
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                v[start + i] = src[lo] * (1.0 - frac) + src[hi] * frac;
            }
        }
    }
    Ok(Series {
        values: v,
        label: Some(1),
    })
}

/// Uniform draw of `a` from a domain. Binary fields of the draw are
/// deterministic in the RNG state.
pub fn sample_params(
    domain: &HyperDomain,
    atype: AnomalyType,
    rng: &mut ChaCha8Rng,
) -> Result<AugParams> {
    domain.validate()?;
    let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let location = u(rng, domain.location);
    let length = u(rng, domain.length);
    let level = u(rng, domain.level);
    Ok(AugParams {
        anomaly_type: atype,
        location,
        length,
        level,
    })
}

/// Builds the augmented counterpart of a training set: one injected copy per
/// series, each with freshly sampled hyperparameters.
pub fn build_aug_dataset(
    d_trn: &[Series],
    domain: &HyperDomain,
    atype: AnomalyType,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Series, AugParams)>> {
    d_trn
        .iter()
        .map(|x| {
            let a = sample_params(domain, atype, rng)?;
            let y = inject(x, &a)?;
            Ok((y, a))
        })
        .collect()
}
