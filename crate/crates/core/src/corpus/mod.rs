//! Synthetic labelled feature corpora and the mismatch channel.
//!
//! Utterances are token sequences; every token owns a disjoint, fixed run of
//! senones and every senone a Gaussian emission around its mean vector.

mod channel;
mod io;
pub use io::csv_err;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

pub use channel::{corrupt, moving_average, mtr_perturb, quantize, CorruptionSpec, PerturbKind, PerturbSpec};
pub use io::{export_csv, read_corpus, write_corpus};

/// 100 frames per second for one hour.
pub const FRAMES_PER_HOUR: usize = 360_000;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureUtterance {
    pub id: String,
    /// `[F, T]`.
    pub frames: Tensor,
    pub labels: Vec<usize>,
    pub tokens: Vec<usize>,
}

impl FeatureUtterance {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.frames.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub n_utterances: usize,
    pub features: usize,
    pub senones: usize,
    pub vocab: usize,
    pub frames_per_hour: usize,
    pub sigma_emit: f64,
    /// Inclusive range of tokens per utterance.
    pub tokens_per_utterance: (usize, usize),
    /// Inclusive range of frames per senone segment.
    pub segment_frames: (usize, usize),
    /// Senone sequence of every token; senone sets are disjoint.
    pub lexicon: Vec<Vec<usize>>,
    /// `C × F` emission means.
    pub means: Vec<Vec<f32>>,
}

/// Knobs for [`CorpusManifest::generate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_utterances: usize,
    pub features: usize,
    pub senones: usize,
    pub vocab: usize,
    pub sigma_emit: f64,
    /// Standard deviation of every mean component.
    pub mean_scale: f64,
    pub tokens_per_utterance: (usize, usize),
    pub segment_frames: (usize, usize),
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            seed: 0,
            n_utterances: 200,
            features: 16,
            senones: 48,
            vocab: 12,
            sigma_emit: 1.0,
            mean_scale: 1.0,
            tokens_per_utterance: (4, 10),
            segment_frames: (3, 8),
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corpus: {m}")));
        if self.vocab < 2 || self.senones < self.vocab {
            return bad("need C ≥ V ≥ 2");
        }
        if self.senones < 2 * self.vocab {
            return bad("every token needs at least two senones of its own (C ≥ 2V)");
        }
        if self.features == 0 || self.n_utterances == 0 {
            return bad("F and the utterance count must be positive");
        }
        let (lo, hi) = self.tokens_per_utterance;
        let (slo, shi) = self.segment_frames;
        if lo == 0 || lo > hi || slo == 0 || slo > shi {
            return bad("length ranges must be non-empty and positive");
        }
        if !(self.sigma_emit >= 0.0 && self.mean_scale > 0.0) {
            return bad("σ_emit must be ≥ 0 and the mean scale > 0");
        }
        Ok(())
    }
}

impl CorpusManifest {
    /// Draws the lexicon and emission means from `params.seed`.
    pub fn generate(params: &CorpusParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let (c, v) = (params.senones, params.vocab);
        let mut order: Vec<usize> = (0..c).collect();
        order.shuffle(&mut rng);
        let mut next = 0;
        let mut lexicon = Vec::with_capacity(v);
        for token in 0..v {
            // Leave at least two senones for every remaining token.
            let spare = c - next - 2 * (v - token);
            let len = rng.gen_range(2..=4).min(2 + spare);
            lexicon.push(order[next..next + len].to_vec());
            next += len;
        }
        let means = (0..c)
            .map(|_| {
                (0..params.features)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (z * params.mean_scale) as f32
                    })
                    .collect()
            })
            .collect();
        Ok(CorpusManifest {
            seed: params.seed,
            n_utterances: params.n_utterances,
            features: params.features,
            senones: c,
            vocab: v,
            frames_per_hour: FRAMES_PER_HOUR,
            sigma_emit: params.sigma_emit,
            tokens_per_utterance: params.tokens_per_utterance,
            segment_frames: params.segment_frames,
            lexicon,
            means,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("manifest: {m}")));
        if self.lexicon.len() != self.vocab || self.means.len() != self.senones {
            return bad("lexicon or means do not match V and C".into());
        }
        if self.means.iter().any(|m| m.len() != self.features) {
            return bad("mean vectors must have F entries".into());
        }
        let mut seen = vec![false; self.senones];
        for (t, seq) in self.lexicon.iter().enumerate() {
            if !(2..=4).contains(&seq.len()) {
                return bad(format!("token {t} has {} senones", seq.len()));
            }
            for &s in seq {
                if s >= self.senones || std::mem::replace(&mut seen[s], true) {
                    return bad(format!("senone {s} of token {t} is out of range or shared"));
                }
            }
        }
        if !(self.sigma_emit >= 0.0) || self.frames_per_hour == 0 {
            return bad("σ_emit must be ≥ 0 and frames_per_hour positive".into());
        }
        Ok(())
    }

    /// Token owning each senone; senones outside the lexicon map to `None`.
    pub fn senone_to_token(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.senones];
        for (t, seq) in self.lexicon.iter().enumerate() {
            for &s in seq {
                map[s] = Some(t);
            }
        }
        map
    }

    pub fn utterance_id(&self, index: usize) -> String {
        format!("utt{:05}-s{}", index, self.seed)
    }

    /// Synthesizes utterance `index` from its own random stream.
    pub fn synth_utterance(&self, index: usize) -> FeatureUtterance {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        let (lo, hi) = self.tokens_per_utterance;
        let n_tokens = rng.gen_range(lo..=hi);
        let mut tokens = Vec::with_capacity(n_tokens);
        while tokens.len() < n_tokens {
            let t = rng.gen_range(0..self.vocab);
            if tokens.last() != Some(&t) {
                tokens.push(t);
            }
        }
        let mut labels = Vec::new();
        let (slo, shi) = self.segment_frames;
        for &t in &tokens {
            for &s in &self.lexicon[t] {
                let len = rng.gen_range(slo..=shi);
                labels.extend(std::iter::repeat(s).take(len));
            }
        }
        let f = self.features;
        let t_len = labels.len();
        let mut data = vec![0f32; f * t_len];
        for (ti, &s) in labels.iter().enumerate() {
            for fi in 0..f {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[fi * t_len + ti] = self.means[s][fi] + (self.sigma_emit * z) as f32;
            }
        }
        FeatureUtterance {
            id: self.utterance_id(index),
            frames: Tensor::new(vec![f, t_len], data).expect("positive extents"),
            labels,
            tokens,
        }
    }
}

/// A set of utterances sharing `F` and `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub features: usize,
    pub senones: usize,
    pub utterances: Vec<FeatureUtterance>,
}

impl Corpus {
    pub fn new(features: usize, senones: usize, utterances: Vec<FeatureUtterance>) -> Result<Self> {
        for u in &utterances {
            if u.features() != features || u.labels.iter().any(|&l| l >= senones) {
                return Err(Error::InvalidArgument(format!(
                    "utterance {} does not fit F={features}, C={senones}",
                    u.id
                )));
            }
            if u.frames.shape()[1] != u.labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "utterance {} has {} frames but {} labels",
                    u.id,
                    u.frames.shape()[1],
                    u.labels.len()
                )));
            }
        }
        Ok(Corpus {
            features,
            senones,
            utterances,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.len()).sum()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            features: self.features,
            senones: self.senones,
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Corpus {
        Corpus {
            features: self.features,
            senones: self.senones,
            utterances: self.utterances[range].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(usize, &FeatureUtterance) -> Result<FeatureUtterance> + Sync) -> Result<Corpus> {
        let utterances = parallel::map_indexed(&self.utterances, |i, u| f(i, u))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(self.features, self.senones, utterances)
    }

    pub fn extend(&mut self, other: Corpus) {
        self.utterances.extend(other.utterances);
    }
}

/// Generates every utterance of the manifest.
pub fn synth_corpus(manifest: &CorpusManifest) -> Result<Corpus> {
    manifest.validate()?;
    let idx: Vec<usize> = (0..manifest.n_utterances).collect();
    let utterances = parallel::map_indexed(&idx, |_, &i| manifest.synth_utterance(i));
    Corpus::new(manifest.features, manifest.senones, utterances)
}

/// Splices `2·radius+1` frames around each time step into a
/// `[(2r+1)·F, T]` matrix, replicating the edge frames.
pub fn context_window(frames: &Tensor, radius: usize) -> Tensor {
    let (f, t) = (frames.shape()[0], frames.shape()[1]);
    let span = 2 * radius + 1;
    let src = frames.data();
    let mut out = vec![0f32; span * f * t];
    for ti in 0..t {
        for o in 0..span {
            let s = (ti + o).saturating_sub(radius).min(t - 1);
            for fi in 0..f {
                out[(o * f + fi) * t + ti] = src[fi * t + s];
            }
        }
    }
    Tensor::new(vec![span * f, t], out).expect("positive extents")
}

/// A fixed-length window with its frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    /// `[F, W]`.
    pub frames: Tensor,
    pub labels: Vec<usize>,
}

/// Windows of `w` frames every `hop` frames; a trailing partial window is
/// dropped and utterances shorter than `w` give nothing.
pub fn chunk(utt: &FeatureUtterance, w: usize, hop: usize) -> Vec<Chunk> {
    let t = utt.len();
    if w == 0 || hop == 0 || t < w {
        return Vec::new();
    }
    let f = utt.features();
    let src = utt.frames.data();
    (0..=(t - w) / hop)
        .map(|k| {
            let start = k * hop;
            let mut data = Vec::with_capacity(f * w);
            for fi in 0..f {
                data.extend_from_slice(&src[fi * t + start..fi * t + start + w]);
            }
            Chunk {
                frames: Tensor::new(vec![f, w], data).expect("positive extents"),
                labels: utt.labels[start..start + w].to_vec(),
            }
        })
        .collect()
}

/// Nested subsets sized by hour-equivalents: one seeded shuffle, then the
/// shortest prefix reaching each frame budget.
pub fn partition_by_hours(
    corpus: &Corpus,
    hours: &[f64],
    frames_per_hour: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let total = corpus.total_frames();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    hours
        .iter()
        .map(|&h| {
            let budget = h * frames_per_hour as f64;
            if !(budget > 0.0) || budget > total as f64 {
                return Err(Error::InvalidArgument(format!(
                    "{h} hour-equivalents ({budget} frames) exceed the corpus ({total} frames)"
                )));
            }
            let mut acc = 0usize;
            let mut take = 0;
            while (acc as f64) < budget {
                acc += corpus.utterances[order[take]].len();
                take += 1;
            }
            Ok(order[..take].to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests;
