use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::stem::stem;
use super::AssessmentError;

/// Word groups treated as interchangeable in the last matching stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynonymTable {
    group_of: HashMap<String, usize>,
}

impl SynonymTable {
    /// Words are lowercased; a word listed in several groups keeps its first.
    pub fn new<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut group_of = HashMap::new();
        for (g, words) in groups.into_iter().enumerate() {
            for w in words {
                group_of.entry(w.as_ref().to_lowercase()).or_insert(g);
            }
        }
        Self { group_of }
    }

    /// One group per non-empty line, words separated by commas.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect::<Vec<_>>()),
        )
    }

    fn group(&self, word: &str) -> Option<usize> {
        self.group_of.get(word).or_else(|| self.group_of.get(&stem(word))).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeteorParams {
    /// Weight of recall against precision in the harmonic mean.
    pub recall_weight: f64,
    pub penalty_gamma: f64,
    pub penalty_power: f64,
    pub use_stem: bool,
    pub synonyms: Option<SynonymTable>,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            recall_weight: 9.0,
            penalty_gamma: 0.5,
            penalty_power: 3.0,
            use_stem: true,
            synonyms: None,
        }
    }
}

impl MeteorParams {
    pub fn validate(&self) -> Result<(), AssessmentError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.recall_weight) || !ok(self.penalty_power) || !ok(self.penalty_gamma) || self.penalty_gamma > 1.0 {
            return Err(AssessmentError::Validation(
                "METEOR weights must be positive and the penalty weight at most 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeteorScore {
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
}

/// Lowercases and splits on anything that is not a letter or digit.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Pairs `(hyp index, ref index)` sorted by hypothesis position.
pub fn align(hyp: &[String], reference: &[String], params: &MeteorParams) -> Vec<(usize, usize)> {
    let mut h_used = vec![false; hyp.len()];
    let mut r_used = vec![false; reference.len()];
    let mut pairs = Vec::new();

    let exact: Vec<Option<String>> = hyp.iter().map(|t| Some(t.clone())).collect();
    let exact_r: Vec<Option<String>> = reference.iter().map(|t| Some(t.clone())).collect();
    let mut stages = vec![(exact, exact_r)];
    if params.use_stem {
        stages.push((
            hyp.iter().map(|t| Some(stem(t))).collect(),
            reference.iter().map(|t| Some(stem(t))).collect(),
        ));
    }
    if let Some(table) = &params.synonyms {
        let key = |t: &String| table.group(t).map(|g| g.to_string());
        stages.push((hyp.iter().map(key).collect(), reference.iter().map(key).collect()));
    }

    for (hk, rk) in &stages {
        let matchable = |i: usize, j: usize, hu: &[bool], ru: &[bool]| !hu[i] && !ru[j] && hk[i].is_some() && hk[i] == rk[j];
        // Repeatedly take the longest run of consecutive matchable pairs
        // (earliest hypothesis then reference position on ties).
        loop {
            let (n, m) = (hyp.len(), reference.len());
            let mut run = vec![0usize; (n + 1) * (m + 1)];
            let mut best = (0usize, 0usize, 0usize);
            for i in (0..n).rev() {
                for j in (0..m).rev() {
                    if matchable(i, j, &h_used, &r_used) {
                        run[i * (m + 1) + j] = run[(i + 1) * (m + 1) + j + 1] + 1;
                    }
                }
            }
            for i in 0..n {
                for j in 0..m {
                    let l = run[i * (m + 1) + j];
                    if l > best.2 {
                        best = (i, j, l);
                    }
                }
            }
            let (i, j, l) = best;
            if l == 0 {
                break;
            }
            for k in 0..l {
                h_used[i + k] = true;
                r_used[j + k] = true;
                pairs.push((i + k, j + k));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of maximal runs that are contiguous in both sequences.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_detail(hypothesis: &str, reference: &str, params: &MeteorParams) -> Result<MeteorScore, AssessmentError> {
    params.validate()?;
    let (h, r) = (tokenize(hypothesis), tokenize(reference));
    if h.is_empty() && r.is_empty() {
        return Ok(MeteorScore {
            score: 1.0,
            matches: 0,
            chunks: 0,
            precision: 1.0,
            recall: 1.0,
            fmean: 1.0,
            penalty: 0.0,
        });
    }
    let pairs = align(&h, &r, params);
    let m = pairs.len();
    if m == 0 {
        return Ok(MeteorScore {
            score: 0.0,
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
        });
    }
    let chunks = count_chunks(&pairs);
    let precision = m as f64 / h.len() as f64;
    let recall = m as f64 / r.len() as f64;
    let w = params.recall_weight;
    let fmean = (1.0 + w) * precision * recall / (recall + w * precision);
    let penalty = params.penalty_gamma * (chunks as f64 / m as f64).powf(params.penalty_power);
    Ok(MeteorScore {
        score: fmean * (1.0 - penalty),
        matches: m,
        chunks,
        precision,
        recall,
        fmean,
        penalty,
    })
}

pub fn meteor(hypothesis: &str, reference: &str, params: &MeteorParams) -> Result<f64, AssessmentError> {
    Ok(meteor_detail(hypothesis, reference, params)?.score)
}
