//! Word-level minimum-edit-distance alignment and word error rate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnorm::NormalizedText;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WerError {
    #[error("reference is empty but hypothesis has {0} words")]
    EmptyReference(usize),
    #[error("no utterance pairs to score")]
    EmptyCorpus,
    #[error("alignment does not match the given word sequences")]
    MismatchedInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Match,
    Sub,
    Del,
    Ins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub ref_index: Option<usize>,
    pub hyp_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    /// Substitutions (S).
    pub s_count: usize,
    /// Deletions (D).
    pub d_count: usize,
    /// Insertions (I).
    pub i_count: usize,
    /// Reference length (N).
    pub n_ref: usize,
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn errors(&self) -> usize {
        self.s_count + self.d_count + self.i_count
    }

    pub fn matches(&self) -> usize {
        self.ops.iter().filter(|o| o.kind == EditKind::Match).count()
    }

    /// Replays the edit script on `reference`, producing the hypothesis the
    /// alignment was computed against. Substituted and inserted words are
    /// taken from `hyp`.
    pub fn replay<'a>(&self, reference: &[&'a str], hyp: &[&'a str]) -> Option<Vec<&'a str>> {
        let mut out = Vec::with_capacity(hyp.len());
        let mut next_ref = 0;
        for op in &self.ops {
            match op.kind {
                EditKind::Match => {
                    let r = op.ref_index?;
                    if r != next_ref {
                        return None;
                    }
                    out.push(*reference.get(r)?);
                    next_ref += 1;
                }
                EditKind::Sub => {
                    if op.ref_index? != next_ref {
                        return None;
                    }
                    out.push(*hyp.get(op.hyp_index?)?);
                    next_ref += 1;
                }
                EditKind::Del => {
                    if op.ref_index? != next_ref {
                        return None;
                    }
                    next_ref += 1;
                }
                EditKind::Ins => out.push(*hyp.get(op.hyp_index?)?),
            }
        }
        (next_ref == reference.len()).then_some(out)
    }
}

/// Minimum edit distance alignment with unit costs.
///
/// When several minimal alignments exist the backtrace prefers, at each
/// cell, match over substitution over deletion over insertion.
pub fn align<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hyp: &[T]) -> Alignment {
    let n = reference.len();
    let m = hyp.len();
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        dist[i * width] = i;
        let r = reference[i - 1].as_ref();
        for j in 1..=m {
            let diag = dist[(i - 1) * width + j - 1] + usize::from(r != hyp[j - 1].as_ref());
            let up = dist[(i - 1) * width + j] + 1;
            let left = dist[i * width + j - 1] + 1;
            dist[i * width + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let diag = dist[(i - 1) * width + j - 1];
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if same && diag == here {
                ops.push(EditOp { kind: EditKind::Match, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                ops.push(EditOp { kind: EditKind::Sub, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                s += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[(i - 1) * width + j] + 1 == here {
            ops.push(EditOp { kind: EditKind::Del, ref_index: Some(i - 1), hyp_index: None });
            d += 1;
            i -= 1;
        } else {
            ops.push(EditOp { kind: EditKind::Ins, ref_index: None, hyp_index: Some(j - 1) });
            ins += 1;
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { s_count: s, d_count: d, i_count: ins, n_ref: n, ops }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub wer: f64,
    pub alignment: Alignment,
}

/// WER = (S + D + I) / N. An empty reference scores 0 against an empty
/// hypothesis and is an error otherwise.
pub fn wer(reference: &NormalizedText, hyp: &NormalizedText) -> Result<WerReport, WerError> {
    let r = reference.words();
    let h = hyp.words();
    let alignment = align(&r, &h);
    let wer = if alignment.n_ref == 0 {
        if !h.is_empty() {
            return Err(WerError::EmptyReference(h.len()));
        }
        0.0
    } else {
        alignment.errors() as f64 / alignment.n_ref as f64
    };
    Ok(WerReport { wer, alignment })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusWer {
    /// (ΣS + ΣD + ΣI) / ΣN.
    pub pooled_wer: f64,
    /// Arithmetic mean of utterance WERs over utterances with N > 0.
    pub mean_utterance_wer: f64,
    pub per_utterance: Vec<WerReport>,
}

impl CorpusWer {
    pub fn totals(&self) -> (usize, usize, usize, usize) {
        self.per_utterance.iter().fold((0, 0, 0, 0), |acc, r| {
            let a = &r.alignment;
            (acc.0 + a.s_count, acc.1 + a.d_count, acc.2 + a.i_count, acc.3 + a.n_ref)
        })
    }
}

pub fn corpus_wer<'a, I>(pairs: I) -> Result<CorpusWer, WerError>
where
    I: IntoIterator<Item = (&'a NormalizedText, &'a NormalizedText)>,
{
    let per_utterance = pairs
        .into_iter()
        .map(|(r, h)| wer(r, h))
        .collect::<Result<Vec<_>, _>>()?;
    if per_utterance.is_empty() {
        return Err(WerError::EmptyCorpus);
    }
    let (mut errors, mut n) = (0usize, 0usize);
    let (mut sum, mut scored) = (0.0, 0usize);
    for r in &per_utterance {
        errors += r.alignment.errors();
        n += r.alignment.n_ref;
        if r.alignment.n_ref > 0 {
            sum += r.wer;
            scored += 1;
        }
    }
    let pooled_wer = if n == 0 { 0.0 } else { errors as f64 / n as f64 };
    let mean_utterance_wer = if scored == 0 { 0.0 } else { sum / scored as f64 };
    Ok(CorpusWer { pooled_wer, mean_utterance_wer, per_utterance })
}

/// Fixed-width REF / HYP / OP rows; gaps are `-`, matches have a blank op.
pub fn render_alignment<S: AsRef<str>, T: AsRef<str>>(
    alignment: &Alignment,
    reference: &[S],
    hyp: &[T],
) -> Result<String, WerError> {
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    if alignment.n_ref != r.len() || alignment.replay(&r, &h).as_deref() != Some(&h[..]) {
        return Err(WerError::MismatchedInputs);
    }
    let mut rows = [String::from("REF:"), String::from("HYP:"), String::from("OP: ")];
    for op in &alignment.ops {
        let rw = op.ref_index.map_or("-", |i| r[i]);
        let hw = op.hyp_index.map_or("-", |i| h[i]);
        let tag = match op.kind {
            EditKind::Match => "",
            EditKind::Sub => "S",
            EditKind::Del => "D",
            EditKind::Ins => "I",
        };
        let w = rw.len().max(hw.len()).max(1);
        for (row, cell) in rows.iter_mut().zip([rw, hw, tag]) {
            let _ = write!(row, " {cell:<w$}");
        }
    }
    Ok(rows.map(|r| r.trim_end().to_owned()).join("\n"))
}
