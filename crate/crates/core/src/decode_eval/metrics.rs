use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum BLEU n-gram order.
pub const MAX_ORDER: usize = 4;
/// Longest phrase the TER shift search moves.
pub const MAX_SHIFT_LEN: usize = 10;

/// Splits on whitespace, lowercasing unless `case_sensitive`.
pub fn tokenize(line: &str, case_sensitive: bool) -> Vec<String> {
    line.split_whitespace()
        .map(|t| if case_sensitive { t.to_string() } else { t.to_lowercase() })
        .collect()
}

fn check_corpus<T>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    Ok(())
}

fn ngram_counts<T: Hash + Eq>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Percent in `[0, 100]`.
    pub bleu: f64,
    /// Clipped n-gram precisions for orders 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    /// Highest order entering the geometric mean.
    pub order: usize,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Corpus-level BLEU: geometric mean of clipped 1..4-gram precisions times
/// the brevity penalty, without smoothing. Orders for which the hypothesis
/// corpus has no n-grams at all are left out of the mean.
pub fn bleu<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<BleuReport> {
    check_corpus(hyps, refs)?;
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let order = totals.iter().take_while(|&&t| t > 0).count();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if order == 0 || precisions[..order].contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions[..order].iter().map(|p| p.ln()).sum::<f64>() / order as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        order,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit counts and the resulting percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub percent: f64,
    pub edits: usize,
    pub ref_len: usize,
}

fn rate(edits: usize, ref_len: usize) -> Result<ErrorRate> {
    if ref_len == 0 {
        return Err(Error::Empty("reference corpus has no tokens".into()));
    }
    Ok(ErrorRate {
        percent: 100.0 * edits as f64 / ref_len as f64,
        edits,
        ref_len,
    })
}

/// Corpus word error rate: total edits over total reference tokens.
pub fn wer<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<ErrorRate> {
    check_corpus(hyps, refs)?;
    let edits = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    rate(edits, refs.iter().map(Vec::len).sum())
}

/// Moves `words[start..start+len]` so it begins at `dest` of the remaining sequence.
fn apply_shift<T: Clone>(words: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let mut rest: Vec<T> = Vec::with_capacity(words.len());
    rest.extend_from_slice(&words[..start]);
    rest.extend_from_slice(&words[start + len..]);
    let mut out = Vec::with_capacity(words.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&words[start..start + len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

fn occurs_in<T: PartialEq>(phrase: &[T], text: &[T]) -> bool {
    text.windows(phrase.len()).any(|w| w == phrase)
}

/// Edits of one sentence under the greedy shift search: repeatedly apply
/// the block shift that lowers the edit distance the most (counting the
/// shift itself as one edit), then add the remaining edit distance.
/// Candidate blocks are hypothesis phrases of up to [`MAX_SHIFT_LEN`] words
/// that also occur in the reference. Ties prefer longer blocks, then
/// earlier starts, then earlier destinations.
pub fn ter_edits<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> usize {
    let mut cur = hyp.to_vec();
    let mut dist = edit_distance(&cur, reference);
    let mut shifts = 0;
    loop {
        let mut best: Option<(usize, Vec<T>)> = None;
        let n = cur.len();
        for len in (1..=MAX_SHIFT_LEN.min(n)).rev() {
            for start in 0..=n - len {
                if !occurs_in(&cur[start..start + len], reference) {
                    continue;
                }
                for dest in 0..=n - len {
                    if dest == start {
                        continue;
                    }
                    let moved = apply_shift(&cur, start, len, dest);
                    let d = edit_distance(&moved, reference);
                    if d + 1 < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, moved));
                    }
                }
            }
        }
        match best {
            Some((d, moved)) => {
                cur = moved;
                dist = d;
                shifts += 1;
            }
            None => return shifts + dist,
        }
    }
}

/// Corpus translation edit rate: total edits (shifts included) over total reference tokens.
pub fn ter<T: PartialEq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<ErrorRate> {
    check_corpus(hyps, refs)?;
    let edits = hyps.iter().zip(refs).map(|(h, r)| ter_edits(h, r)).sum();
    rate(edits, refs.iter().map(Vec::len).sum())
}

/// All scores of one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub ter: f64,
    pub wer: f64,
    pub sentences: usize,
    pub exact_matches: usize,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// BLEU, TER and WER of tokenized hypotheses against references.
pub fn score<T: Hash + Eq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<MetricReport> {
    let b = bleu(hyps, refs)?;
    let t = ter(hyps, refs)?;
    let w = wer(hyps, refs)?;
    Ok(MetricReport {
        bleu: b.bleu,
        ter: t.percent,
        wer: w.percent,
        sentences: hyps.len(),
        exact_matches: hyps.iter().zip(refs).filter(|(h, r)| h == r).count(),
        precisions: b.precisions,
        brevity_penalty: b.brevity_penalty,
        hyp_len: b.hyp_len,
        ref_len: b.ref_len,
    })
}

/// [`score`] over whitespace-tokenized lines.
pub fn score_lines(hyps: &[String], refs: &[String], case_sensitive: bool) -> Result<MetricReport> {
    let tok = |v: &[String]| -> Vec<Vec<String>> { v.iter().map(|l| tokenize(l, case_sensitive)).collect() };
    score(&tok(hyps), &tok(refs))
}
