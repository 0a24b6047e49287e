//! The simulated lossy channel and multi-style perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureUtterance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `frames ← gain · quantize(moving_average(frames)) + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Moving-average length along time; 1 disables smoothing.
    pub window: usize,
    /// Number of uniform levels on `[−range, range]`; `None` disables.
    pub levels: Option<usize>,
    pub range: f64,
    pub noise: f64,
    /// Per-utterance gain drawn uniformly from this range.
    pub gain: (f64, f64),
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            window: 5,
            levels: Some(8),
            range: 3.0,
            noise: 0.5,
            gain: (0.6, 0.9),
        }
    }
}

impl CorruptionSpec {
    pub fn identity() -> Self {
        CorruptionSpec {
            window: 1,
            levels: None,
            range: 1.0,
            noise: 0.0,
            gain: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("smoothing window must be ≥ 1".into()));
        }
        if matches!(self.levels, Some(k) if k < 2) {
            return Err(Error::Config("quantization needs at least 2 levels".into()));
        }
        if !(self.range > 0.0 && self.noise >= 0.0 && self.gain.0 > 0.0 && self.gain.0 <= self.gain.1) {
            return Err(Error::Config("invalid range, noise or gain bounds".into()));
        }
        Ok(())
    }
}

/// Centered moving average along time with the window truncated at the
/// edges. Even windows reach one frame further back than forward.
pub fn moving_average(frames: &Tensor, window: usize) -> Tensor {
    if window <= 1 {
        return frames.clone();
    }
    let (f, t) = (frames.shape()[0], frames.shape()[1]);
    let back = window / 2;
    let fwd = window - 1 - back;
    let src = frames.data();
    let mut out = vec![0f32; f * t];
    for fi in 0..f {
        let row = &src[fi * t..(fi + 1) * t];
        for ti in 0..t {
            let lo = ti.saturating_sub(back);
            let hi = (ti + fwd).min(t - 1);
            let s: f64 = row[lo..=hi].iter().map(|&v| v as f64).sum();
            out[fi * t + ti] = (s / (hi - lo + 1) as f64) as f32;
        }
    }
    Tensor::new(vec![f, t], out).expect("same shape")
}

/// Rounds to the nearest of `levels` evenly spaced values on `[−range, range]`.
pub fn quantize(x: f32, levels: usize, range: f64) -> f32 {
    let step = 2.0 * range / (levels - 1) as f64;
    let c = (x as f64).clamp(-range, range);
    (-range + ((c + range) / step).round() * step) as f32
}

/// FNV-1a, used to derive a stable per-utterance stream from its id.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Applies the channel. Labels and tokens are never touched; the result is a
/// pure function of `(utt, spec, seed)`.
pub fn corrupt(utt: &FeatureUtterance, spec: &CorruptionSpec, seed: u64) -> Result<FeatureUtterance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id_hash(&utt.id));
    let gain = if spec.gain.0 == spec.gain.1 {
        spec.gain.0
    } else {
        rng.gen_range(spec.gain.0..spec.gain.1)
    };
    let mut frames = moving_average(&utt.frames, spec.window);
    for v in frames.data_mut() {
        let q = match spec.levels {
            Some(k) => quantize(*v, k, spec.range),
            None => *v,
        };
        let n = if spec.noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.noise * z
        } else {
            0.0
        };
        *v = (gain * q as f64 + n) as f32;
    }
    Ok(FeatureUtterance {
        id: utt.id.clone(),
        frames,
        labels: utt.labels.clone(),
        tokens: utt.tokens.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    /// Even-indexed utterances take the first factor, odd ones the second.
    pub speed: (f64, f64),
    pub volume: (f64, f64),
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec {
            speed: (0.9, 1.1),
            volume: (0.8, 1.2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    Speed,
    Volume,
    Both,
}

impl PerturbKind {
    pub fn suffix(self) -> &'static str {
        match self {
            PerturbKind::Speed => "s",
            PerturbKind::Volume => "v",
            PerturbKind::Both => "sv",
        }
    }
}

fn resample(utt: &FeatureUtterance, factor: f64) -> Result<FeatureUtterance> {
    let (f, t) = (utt.features(), utt.len());
    let t_new = (t as f64 / factor).round() as usize;
    if t_new < 2 || t < 2 {
        return Err(Error::InvalidArgument(format!(
            "speed factor {factor} turns {t} frames into {t_new}"
        )));
    }
    if t_new == t {
        return Ok(utt.clone());
    }
    let scale = (t - 1) as f64 / (t_new - 1) as f64;
    let src = utt.frames.data();
    let mut data = vec![0f32; f * t_new];
    let mut labels = Vec::with_capacity(t_new);
    for j in 0..t_new {
        let pos = j as f64 * scale;
        let i0 = (pos.floor() as usize).min(t - 1);
        let i1 = (i0 + 1).min(t - 1);
        let w = (pos - i0 as f64) as f32;
        for fi in 0..f {
            let a = src[fi * t + i0];
            let b = src[fi * t + i1];
            data[fi * t_new + j] = a + w * (b - a);
        }
        labels.push(utt.labels[(pos.round() as usize).min(t - 1)]);
    }
    Ok(FeatureUtterance {
        id: utt.id.clone(),
        frames: Tensor::new(vec![f, t_new], data)?,
        labels,
        tokens: utt.tokens.clone(),
    })
}

/// Speed changes resample the time axis to `round(T/factor)` frames with
/// nearest-index labels; volume changes scale every value.
pub fn mtr_perturb(
    utt: &FeatureUtterance,
    index: usize,
    spec: &PerturbSpec,
    kind: PerturbKind,
) -> Result<FeatureUtterance> {
    let pick = |pair: (f64, f64)| if index % 2 == 0 { pair.0 } else { pair.1 };
    if pick(spec.speed) <= 0.0 || pick(spec.volume) <= 0.0 {
        return Err(Error::Config("perturbation factors must be positive".into()));
    }
    let mut out = match kind {
        PerturbKind::Speed | PerturbKind::Both => resample(utt, pick(spec.speed))?,
        PerturbKind::Volume => utt.clone(),
    };
    if kind != PerturbKind::Speed {
        let g = pick(spec.volume) as f32;
        for v in out.frames.data_mut() {
            *v *= g;
        }
    }
    out.id = format!("{}-{}", utt.id, kind.suffix());
    Ok(out)
}
