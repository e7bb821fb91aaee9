//! Caption metrics: BLEU-1..4, ROUGE-L, CIDEr and a simplified METEOR.
//!
//! Tokens are whitespace-split words. None of the metrics apply smoothing.
//! CIDEr is the plain variant without a length penalty. METEOR-lite aligns
//! exact matches, then synonym-group matches, and has no stemming.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference set is empty")]
    EmptyReferences,
    #[error("reference {0} has no tokens")]
    EmptyReference(usize),
    #[error("CIDEr needs at least 2 corpus items, got {0}")]
    CorpusTooSmall(usize),
}

/// Non-empty, deduplicated references in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    references: Vec<Vec<String>>,
}

impl ReferenceSet {
    pub fn new(refs: Vec<Vec<String>>) -> Result<Self, MetricError> {
        let mut references: Vec<Vec<String>> = Vec::with_capacity(refs.len());
        for (i, r) in refs.into_iter().enumerate() {
            if r.is_empty() {
                return Err(MetricError::EmptyReference(i));
            }
            if !references.contains(&r) {
                references.push(r);
            }
        }
        if references.is_empty() {
            return Err(MetricError::EmptyReferences);
        }
        Ok(ReferenceSet { references })
    }

    pub fn references(&self) -> &[Vec<String>] {
        &self.references
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// BLEU-n with multi-reference clipping and brevity penalty against the
/// closest reference length (shorter wins ties).
pub fn bleu<S: AsRef<str>>(candidate: &[S], refs: &ReferenceSet, n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = refs.references.iter().map(|r| ngram_counts(r, k)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len() as f64;
    let r = refs
        .references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(candidate.len()), len))
        .expect("reference set is non-empty") as f64;
    let bp = (1.0 - r / c).min(0.0).exp();
    bp * (log_sum / n as f64).exp()
}

/// Longest common subsequence length.
pub fn lcs_length<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure with recall weight `beta = 1.2`, best reference.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], refs: &ReferenceSet) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    refs.references
        .iter()
        .map(|r| {
            let l = lcs_length(candidate, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rc = l as f64 / r.len() as f64;
            (1.0 + b2) * p * rc / (rc + b2 * p)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

type Vector<'a> = BTreeMap<Vec<&'a str>, f64>;

fn tfidf<'a, S: AsRef<str>>(tokens: &'a [S], n: usize, idf: &dyn Fn(&[&str]) -> f64) -> Vector<'a> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, c)| {
            let w = c as f64 * idf(&g);
            (g, w)
        })
        .collect()
}

fn cosine(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Corpus CIDEr. Document frequency counts the items whose reference set
/// contains an n-gram; `idf = ln(|corpus| / max(1, df))`.
pub fn cider<S: AsRef<str> + Sync>(corpus: &[(Vec<S>, ReferenceSet)]) -> Result<CiderScores, MetricError> {
    if corpus.len() < 2 {
        return Err(MetricError::CorpusTooSmall(corpus.len()));
    }
    let mut df: Vec<BTreeMap<Vec<&str>, usize>> = vec![BTreeMap::new(); CIDER_MAX_N];
    for (_, refs) in corpus {
        for (n, table) in df.iter_mut().enumerate() {
            let mut seen: std::collections::BTreeSet<Vec<&str>> = Default::default();
            for r in &refs.references {
                seen.extend(ngram_counts(r, n + 1).into_keys());
            }
            for g in seen {
                *table.entry(g).or_insert(0) += 1;
            }
        }
    }
    let size = corpus.len() as f64;
    let per_item: Vec<f64> = corpus
        .par_iter()
        .map(|(cand, refs)| {
            let mut total = 0.0;
            for (n, table) in df.iter().enumerate() {
                let idf = |g: &[&str]| (size / table.get(g).copied().unwrap_or(0).max(1) as f64).ln();
                let vc = tfidf(cand, n + 1, &idf);
                let s: f64 = refs
                    .references
                    .iter()
                    .map(|r| cosine(&vc, &tfidf(r, n + 1, &idf)))
                    .sum();
                total += s / refs.len() as f64;
            }
            CIDER_SCALE * total / CIDER_MAX_N as f64
        })
        .collect();
    let mut sorted = per_item.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(CiderScores { per_item, mean })
}

/// Alignment statistics of one candidate against one reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Greedy two-stage unigram alignment: exact matches first, then synonym
/// group matches. Each candidate token takes the first free reference token.
pub fn align<A: AsRef<str>, B: AsRef<str>>(candidate: &[A], reference: &[B], lex: &Lexicon) -> Alignment {
    let mut ref_used = vec![false; reference.len()];
    let mut link: Vec<Option<usize>> = vec![None; candidate.len()];
    for exact in [true, false] {
        for (i, c) in candidate.iter().enumerate() {
            if link[i].is_some() {
                continue;
            }
            let c = c.as_ref();
            let found = reference.iter().enumerate().position(|(j, r)| {
                let r = r.as_ref();
                !ref_used[j] && if exact { c == r } else { lex.same_group(c, r) }
            });
            if let Some(j) = found {
                ref_used[j] = true;
                link[i] = Some(j);
            }
        }
    }
    let mut matches = 0;
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, l) in link.iter().enumerate() {
        match l {
            Some(j) => {
                matches += 1;
                if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                    chunks += 1;
                }
                prev = Some((i, *j));
            }
            None => prev = None,
        }
    }
    Alignment { matches, chunks }
}

/// METEOR-lite: `F = 10PR / (R + 9P)`, fragmentation penalty
/// `0.5 (chunks / matches)^3`, best reference.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], refs: &ReferenceSet, lex: &Lexicon) -> f64 {
    refs.references
        .iter()
        .map(|r| {
            let a = align(candidate, r, lex);
            if a.matches == 0 {
                return 0.0;
            }
            let m = a.matches as f64;
            let p = m / candidate.len() as f64;
            let rc = m / r.len() as f64;
            let f = 10.0 * p * rc / (rc + 9.0 * p);
            let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
            f * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

/// All per-caption metrics for one candidate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionMetrics {
    pub bleu: [f64; 4],
    pub meteor_lite: f64,
    pub rouge_l: f64,
}

pub fn caption_metrics<S: AsRef<str>>(candidate: &[S], refs: &ReferenceSet, lex: &Lexicon) -> CaptionMetrics {
    CaptionMetrics {
        bleu: [1, 2, 3, 4].map(|n| bleu(candidate, refs, n)),
        meteor_lite: meteor_lite(candidate, refs, lex),
        rouge_l: rouge_l(candidate, refs),
    }
}
