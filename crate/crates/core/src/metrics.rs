//! Frame and sequence error rates, alignment and correlation analysis.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::corpus::FeatureUtterance;
use crate::error::{Error, Result};
use crate::models::{enhance, AcousticModel, Generator};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub reference: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

impl std::ops::Add for ErrorCounts {
    type Output = ErrorCounts;

    fn add(self, o: ErrorCounts) -> ErrorCounts {
        ErrorCounts {
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            substitutions: self.substitutions + o.substitutions,
            reference: self.reference + o.reference,
        }
    }
}

/// `(S + D + I) / N`.
pub fn error_rate(c: &ErrorCounts) -> Result<f64> {
    if c.reference == 0 {
        return Err(Error::InvalidArgument("error rate of an empty reference".into()));
    }
    Ok(c.total() as f64 / c.reference as f64)
}

/// Unit-cost edit alignment. When several alignments are optimal the
/// backtrace prefers the diagonal (match or substitution), then deletion,
/// then insertion.
pub fn levenshtein<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> ErrorCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = ErrorCounts {
        reference: n,
        ..ErrorCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = reference[i - 1] != hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(diff) {
                c.substitutions += usize::from(diff);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Maps per-frame senones to tokens, collapses repeats and drops runs
/// shorter than `min_run` frames. Neighbours left equal after a glitch is
/// removed merge into one token. Senones without a token are skipped.
pub fn decode_tokens(senones: &[usize], senone_to_token: &[Option<usize>], min_run: usize) -> Vec<usize> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for tok in senones.iter().filter_map(|&s| senone_to_token.get(s).copied().flatten()) {
        match runs.last_mut() {
            Some((t, n)) if *t == tok => *n += 1,
            _ => runs.push((tok, 1)),
        }
    }
    let mut out: Vec<usize> = Vec::new();
    for (t, n) in runs {
        if n >= min_run && out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// Population Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs ≥ 3 paired values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::InvalidArgument("pearson of a constant series".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::InvalidArgument("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between corresponding frames of two `[F, T]`
/// matrices. Frames where either side is all zeros are left out.
pub fn feature_correlation(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::Shape(format!(
            "feature_correlation of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (f, t) = (a.shape()[0], a.shape()[1]);
    let (mut total, mut used) = (0.0, 0usize);
    for ti in 0..t {
        let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for fi in 0..f {
            let (x, y) = (a.data()[fi * t + ti] as f64, b.data()[fi * t + ti] as f64);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        if aa > 0.0 && bb > 0.0 {
            total += ab / (aa * bb).sqrt();
            used += 1;
        }
    }
    Ok(if used == 0 { 0.0 } else { total / used as f64 })
}

fn check_dims(am: &AcousticModel, generator: Option<&Generator>, corpus: &Corpus) -> Result<()> {
    if am.spec.features != corpus.features || am.spec.senones != corpus.senones {
        return Err(Error::InvalidArgument(format!(
            "model (F={}, C={}) does not match corpus (F={}, C={})",
            am.spec.features, am.spec.senones, corpus.features, corpus.senones
        )));
    }
    if let Some(g) = generator {
        if g.features() != corpus.features {
            return Err(Error::InvalidArgument("generator F does not match corpus".into()));
        }
    }
    Ok(())
}

/// Frames as seen by the acoustic model, optionally after enhancement.
pub fn front_end(generator: Option<&Generator>, utt: &FeatureUtterance) -> Result<Tensor> {
    match generator {
        Some(g) => enhance(g, &utt.frames),
        None => Ok(utt.frames.clone()),
    }
}

/// Per-utterance arg-max senone predictions.
pub fn predict_corpus(
    am: &AcousticModel,
    generator: Option<&Generator>,
    corpus: &Corpus,
) -> Result<Vec<Vec<usize>>> {
    check_dims(am, generator, corpus)?;
    parallel::map_indexed(&corpus.utterances, |_, u| am.predict(&front_end(generator, u)?))
        .into_iter()
        .collect()
}

pub fn seer_of(predictions: &[Vec<usize>], corpus: &Corpus) -> f64 {
    let (mut wrong, mut total) = (0usize, 0usize);
    for (p, u) in predictions.iter().zip(&corpus.utterances) {
        wrong += p.iter().zip(&u.labels).filter(|(a, b)| a != b).count();
        total += u.len();
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

/// Fraction of frames whose arg-max senone differs from the label.
pub fn seer(am: &AcousticModel, generator: Option<&Generator>, corpus: &Corpus) -> Result<f64> {
    Ok(seer_of(&predict_corpus(am, generator, corpus)?, corpus))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub id: String,
    pub frames: usize,
    pub frame_errors: usize,
    pub counts: ErrorCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seer: f64,
    pub token_error_rate: f64,
    pub counts: ErrorCounts,
    pub utterances: Vec<UtteranceEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per utterance followed by a `TOTAL` row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        use crate::corpus::csv_err;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "frames", "frame_errors", "insertions", "deletions", "substitutions", "reference"])
            .map_err(csv_err)?;
        let row = |id: &str, frames: usize, fe: usize, c: &ErrorCounts| {
            [
                id.to_string(),
                frames.to_string(),
                fe.to_string(),
                c.insertions.to_string(),
                c.deletions.to_string(),
                c.substitutions.to_string(),
                c.reference.to_string(),
            ]
        };
        let (mut frames, mut errors) = (0, 0);
        for u in &self.utterances {
            w.write_record(row(&u.id, u.frames, u.frame_errors, &u.counts)).map_err(csv_err)?;
            frames += u.frames;
            errors += u.frame_errors;
        }
        w.write_record(row("TOTAL", frames, errors, &self.counts)).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

/// Builds a report from per-utterance predictions.
pub fn report_from_predictions(
    predictions: &[Vec<usize>],
    corpus: &Corpus,
    senone_to_token: &[Option<usize>],
    min_run: usize,
) -> Result<EvalReport> {
    let mut utterances = Vec::with_capacity(corpus.len());
    let mut counts = ErrorCounts::default();
    for (p, u) in predictions.iter().zip(&corpus.utterances) {
        let hyp = decode_tokens(p, senone_to_token, min_run);
        let c = levenshtein(&u.tokens, &hyp);
        counts = counts + c;
        utterances.push(UtteranceEval {
            id: u.id.clone(),
            frames: u.len(),
            frame_errors: p.iter().zip(&u.labels).filter(|(a, b)| a != b).count(),
            counts: c,
        });
    }
    Ok(EvalReport {
        seer: seer_of(predictions, corpus),
        token_error_rate: error_rate(&counts)?,
        counts,
        utterances,
    })
}

pub fn evaluate(
    am: &AcousticModel,
    generator: Option<&Generator>,
    corpus: &Corpus,
    senone_to_token: &[Option<usize>],
    min_run: usize,
) -> Result<EvalReport> {
    let preds = predict_corpus(am, generator, corpus)?;
    report_from_predictions(&preds, corpus, senone_to_token, min_run)
}

pub const DEFAULT_MIN_RUN: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub label: String,
    pub seer: f64,
    pub token_error_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub points: Vec<CorrelationPoint>,
    pub r: f64,
}

impl CorrelationStudy {
    pub fn from_points(points: Vec<CorrelationPoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidArgument("correlation study needs ≥ 3 checkpoints".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.seer).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.token_error_rate).collect();
        let r = pearson(&xs, &ys)?;
        Ok(CorrelationStudy { points, r })
    }

    /// Two metric columns, one row per checkpoint.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        use crate::corpus::csv_err;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "seer", "token_error_rate"]).map_err(csv_err)?;
        for p in &self.points {
            w.write_record([p.label.clone(), p.seer.to_string(), p.token_error_rate.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every generator with the same acoustic model.
pub fn correlation_study(
    am: &AcousticModel,
    generators: &[(String, Option<&Generator>)],
    dev: &Corpus,
    senone_to_token: &[Option<usize>],
) -> Result<CorrelationStudy> {
    if generators.len() < 3 {
        return Err(Error::InvalidArgument("correlation study needs ≥ 3 checkpoints".into()));
    }
    let points = generators
        .iter()
        .map(|(label, g)| {
            let r = evaluate(am, *g, dev, senone_to_token, DEFAULT_MIN_RUN)?;
            Ok(CorrelationPoint {
                label: label.clone(),
                seer: r.seer,
                token_error_rate: r.token_error_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CorrelationStudy::from_points(points)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn paper_error_decomposition() {
        let c = ErrorCounts {
            insertions: 984,
            deletions: 1317,
            substitutions: 8228,
            reference: 54402,
        };
        assert_eq!(c.total(), 10529);
        let r = error_rate(&c).unwrap();
        assert_eq!(format!("{:.2}", r * 100.0), "19.35");
        let none = ErrorCounts {
            reference: 10,
            ..ErrorCounts::default()
        };
        assert_eq!(error_rate(&none).unwrap(), 0.0);
        let all_ins = ErrorCounts {
            insertions: 10,
            reference: 10,
            ..ErrorCounts::default()
        };
        assert_eq!(error_rate(&all_ins).unwrap(), 1.0);
        assert!(error_rate(&ErrorCounts::default()).is_err());
    }

    #[test]
    fn levenshtein_examples() {
        let a = ["a", "b", "c"];
        assert_eq!(
            levenshtein(&a, &a),
            ErrorCounts {
                reference: 3,
                ..ErrorCounts::default()
            }
        );
        let c = levenshtein(&a, &["a", "x", "c"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
        // "a b" vs "b a": one sub + one sub beats del + ins only on ties; both
        // cost 2 and the diagonal wins.
        let c = levenshtein(&["a", "b"], &["b", "a"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 0));
        let c = levenshtein::<u8>(&[], &[1, 2]);
        assert_eq!((c.insertions, c.reference), (2, 0));
        let c = levenshtein::<u8>(&[1, 2, 3], &[2]);
        assert_eq!((c.deletions, c.substitutions), (2, 0));
    }

    fn memo(a: &[u8], b: &[u8], cache: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&v) = cache.get(&(a.len(), b.len())) {
            return v;
        }
        let v = (memo(&a[1..], &b[1..], cache) + usize::from(a[0] != b[0]))
            .min(memo(&a[1..], b, cache) + 1)
            .min(memo(a, &b[1..], cache) + 1);
        cache.insert((a.len(), b.len()), v);
        v
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursion(
            a in proptest::collection::vec(0u8..4, 0..12),
            b in proptest::collection::vec(0u8..4, 0..12),
        ) {
            let c = levenshtein(&a, &b);
            prop_assert_eq!(c.total(), memo(&a, &b, &mut HashMap::new()));
            prop_assert!(c.substitutions + c.deletions <= a.len());
            let r = levenshtein(&b, &a);
            prop_assert_eq!(r.total(), c.total());
        }
    }

    #[test]
    fn levenshtein_swaps_insertions_and_deletions() {
        let a = [1, 2, 3, 4];
        let b = [2, 3, 5];
        let (x, y) = (levenshtein(&a, &b), levenshtein(&b, &a));
        assert_eq!(x.total(), y.total());
        assert_eq!((x.insertions, x.deletions), (y.deletions, y.insertions));
    }

    #[test]
    fn decode_examples() {
        let map = vec![Some(0), Some(0), Some(1), Some(1), None];
        assert!(decode_tokens(&[], &map, 2).is_empty());
        // token 0 for 4 frames, token 1 for 3.
        assert_eq!(decode_tokens(&[0, 0, 1, 1, 2, 2, 3], &map, 2), vec![0, 1]);
        // A one-frame glitch of token 1 inside token 0.
        let glitch = [0, 0, 0, 2, 1, 1, 1];
        assert_eq!(decode_tokens(&glitch, &map, 1), vec![0, 1, 0]);
        assert_eq!(decode_tokens(&glitch, &map, 2), vec![0]);
        assert_eq!(decode_tokens(&[4, 4, 0, 0], &map, 2), vec![0]);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        // Hand arithmetic: deviations x (−2,−1,0,1,2), y (−1.4,−0.4,−2.4,2.6,1.6):
        // Σxy = 2.8+0.4+0+2.6+3.2 = 9, Σx² = 10, Σy² = 17.2.
        let ys = [1.0, 2.0, 0.0, 5.0, 4.0];
        let r = pearson(&xs, &ys).unwrap();
        assert!((r - 9.0 / (10.0f64 * 17.2).sqrt()).abs() < 1e-9);
        assert!(pearson(&xs, &[1.0; 5]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn feature_correlation_examples() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        assert!((feature_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| -v);
        assert!((feature_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let y = Tensor::new(vec![2, 2], vec![0.0, 3.0, 1.0, 0.0]).unwrap();
        assert_eq!(feature_correlation(&x, &y).unwrap(), 0.0);
        let z = Tensor::zeros(vec![2, 2]);
        assert_eq!(feature_correlation(&x, &z).unwrap(), 0.0);
        assert!(feature_correlation(&x, &a).is_err());
    }

    fn fixture_corpus() -> Corpus {
        let mk = |id: &str, labels: Vec<usize>, tokens: Vec<usize>| FeatureUtterance {
            id: id.into(),
            frames: Tensor::zeros(vec![1, labels.len()]),
            labels,
            tokens,
        };
        Corpus::new(
            1,
            4,
            vec![mk("a", vec![0, 0, 1, 1, 2, 2], vec![0, 1]), mk("b", vec![3, 3, 3], vec![1])],
        )
        .unwrap()
    }

    #[test]
    fn seer_and_report_from_predictions() {
        let c = fixture_corpus();
        let map = vec![Some(0), Some(0), Some(1), Some(1)];
        let perfect: Vec<Vec<usize>> = c.utterances.iter().map(|u| u.labels.clone()).collect();
        let r = report_from_predictions(&perfect, &c, &map, 2).unwrap();
        assert_eq!(r.seer, 0.0);
        assert_eq!(r.token_error_rate, 0.0);
        let wrong: Vec<Vec<usize>> = c
            .utterances
            .iter()
            .map(|u| u.labels.iter().map(|l| (l + 1) % 4).collect())
            .collect();
        assert_eq!(seer_of(&wrong, &c), 1.0);

        let mixed = vec![vec![0, 1, 1, 1, 3, 2], vec![3, 0, 3]];
        let mut wrong_frames = 0;
        for (p, u) in mixed.iter().zip(&c.utterances) {
            for (a, b) in p.iter().zip(&u.labels) {
                wrong_frames += usize::from(a != b);
            }
        }
        let r = report_from_predictions(&mixed, &c, &map, 2).unwrap();
        assert_eq!(r.seer, wrong_frames as f64 / 9.0);
        let summed = r.utterances.iter().fold(ErrorCounts::default(), |a, u| a + u.counts);
        assert_eq!(summed, r.counts);

        let json = r.to_json().unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("TOTAL,9,"));
    }

    #[test]
    fn correlation_study_guards() {
        let p = |s: f64, t: f64| CorrelationPoint {
            label: "x".into(),
            seer: s,
            token_error_rate: t,
        };
        assert!(CorrelationStudy::from_points(vec![p(0.1, 0.2); 10]).is_err());
        assert!(CorrelationStudy::from_points(vec![p(0.1, 0.2), p(0.2, 0.3)]).is_err());
        let s = CorrelationStudy::from_points(vec![p(0.1, 0.2), p(0.2, 0.35), p(0.3, 0.5)]).unwrap();
        assert!(s.r > 0.99);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("label,seer,token_error_rate"));
    }
}
