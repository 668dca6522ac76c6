//! Word error rates, oracle rates, automatic side-by-side comparison and the
//! contacts biasing evaluation.

mod contacts;

pub use contacts::{contacts_eval, phrase_trie, ContactsReport};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit operation counts of one alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Levenshtein alignment with unit costs. The backtrace takes the diagonal
/// first, then deletion, then insertion, so ties resolve to substitutions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                c.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Word errors between two transcripts.
pub fn word_errors(reference: &str, hyp: &str) -> usize {
    edit_distance(&words(reference), &words(hyp)).errors()
}

/// Errors over reference words in percent. An empty reference counts as one
/// word so the rate stays finite.
pub fn rate(errors: usize, ref_words: usize) -> f64 {
    100.0 * errors as f64 / ref_words.max(1) as f64
}

pub fn wer(reference: &str, hyp: &str) -> f64 {
    rate(word_errors(reference, hyp), words(reference).len())
}

/// Lowest WER over a candidate list.
pub fn oracle_wer(reference: &str, hyps: &[String]) -> Result<f64> {
    Ok(rate(oracle_errors(reference, hyps)?, words(reference).len()))
}

pub fn oracle_errors(reference: &str, hyps: &[String]) -> Result<usize> {
    hyps.iter()
        .map(|h| word_errors(reference, h))
        .min()
        .ok_or(Error::EmptyInput("oracle hypothesis list"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    #[serde(flatten)]
    pub counts: EditCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
    pub oracle_wer: Option<f64>,
    pub utterances: Vec<UtteranceRecord>,
}

/// One utterance to score: reference, top hypothesis and optional candidates.
#[derive(Clone, Debug)]
pub struct Scored<'a> {
    pub id: &'a str,
    pub reference: &'a str,
    pub hypothesis: &'a str,
    pub candidates: Option<&'a [String]>,
}

/// Corpus WER; the oracle is reported when every utterance has candidates.
pub fn evaluate(items: &[Scored<'_>]) -> Result<EvalReport> {
    let mut total = EditCounts::default();
    let mut ref_words = 0;
    let mut oracle = Some(0usize);
    let mut utterances = Vec::with_capacity(items.len());
    for it in items {
        let r = words(it.reference);
        let c = edit_distance(&r, &words(it.hypothesis));
        total.add(&c);
        ref_words += r.len();
        oracle = match (oracle, it.candidates) {
            (Some(acc), Some(cands)) => Some(acc + oracle_errors(it.reference, cands)?),
            _ => None,
        };
        utterances.push(UtteranceRecord {
            id: it.id.to_string(),
            reference: it.reference.to_string(),
            hypothesis: it.hypothesis.to_string(),
            counts: c,
        });
    }
    if items.is_empty() {
        oracle = None;
    }
    Ok(EvalReport {
        wer: rate(total.errors(), ref_words),
        substitutions: total.substitutions,
        insertions: total.insertions,
        deletions: total.deletions,
        ref_words,
        oracle_wer: oracle.map(|e| rate(e, ref_words)),
        utterances,
    })
}

/// Per-utterance rows `id, ref, hyp, S, I, D`, tab separated.
pub fn write_tsv(out: &mut impl Write, report: &EvalReport) -> Result<()> {
    writeln!(out, "id\tref\thyp\tS\tI\tD")?;
    for u in &report.utterances {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            u.id, u.reference, u.hypothesis, u.counts.substitutions, u.counts.insertions, u.counts.deletions
        )?;
    }
    Ok(())
}

/// Reference-based stand-in for a human side-by-side rating: an utterance is
/// correct when it matches the reference exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SxsReport {
    pub utterances: usize,
    pub changed: usize,
    pub changed_pct: f64,
    /// B correct, A not.
    pub wins: usize,
    /// A correct, B not.
    pub losses: usize,
    pub neutral: usize,
}

pub fn sxs_compare(refs: &[String], a: &[String], b: &[String]) -> Result<SxsReport> {
    if refs.len() != a.len() || refs.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "sxs needs aligned lists, got {} refs, {} and {} hypotheses",
            refs.len(),
            a.len(),
            b.len()
        )));
    }
    let mut r = SxsReport { utterances: refs.len(), ..SxsReport::default() };
    for ((y, ha), hb) in refs.iter().zip(a).zip(b) {
        let (wa, wb, wy) = (words(ha), words(hb), words(y));
        if wa == wb {
            continue;
        }
        r.changed += 1;
        match (wa == wy, wb == wy) {
            (false, true) => r.wins += 1,
            (true, false) => r.losses += 1,
            _ => r.neutral += 1,
        }
    }
    r.changed_pct = if refs.is_empty() { 0.0 } else { 100.0 * r.changed as f64 / refs.len() as f64 };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_cases() {
        let c = edit_distance(&words("alice's restaurant"), &words("allison's restaurant"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (1, 0, 0));
        assert_eq!(wer("alice's restaurant", "allison's restaurant"), 50.0);
        let c = edit_distance(&words("a b"), &words("b"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (0, 0, 1));
        assert_eq!(wer("a b", "b"), 50.0);
        assert_eq!(edit_distance(&words("x y z"), &words("x y z")), EditCounts::default());
        let c = edit_distance(&words(""), &words("p q"));
        assert_eq!(c.insertions, 2);
    }

    #[test]
    fn ties_prefer_substitution() {
        let c = edit_distance(&["a"], &["b"]);
        assert_eq!((c.substitutions, c.insertions, c.deletions), (1, 0, 0));
        let c = edit_distance(&["a", "b"], &["c", "d"]);
        assert_eq!(c.substitutions, 2);
    }

    #[test]
    fn oracle_and_sxs_basics() {
        let hyps = vec!["a c".to_string(), "a b".to_string()];
        assert_eq!(oracle_wer("a b", &hyps).unwrap(), 0.0);
        assert_eq!(oracle_wer("a b", &hyps[..1]).unwrap(), wer("a b", "a c"));
        assert!(oracle_wer("a b", &[]).is_err());

        let refs: Vec<String> = ["a b", "c", "d e"].iter().map(|s| s.to_string()).collect();
        let same = sxs_compare(&refs, &refs, &refs).unwrap();
        assert_eq!((same.changed, same.wins, same.losses, same.neutral), (0, 0, 0, 0));
        let a: Vec<String> = ["a x", "c", "q"].iter().map(|s| s.to_string()).collect();
        let s = sxs_compare(&refs, &a, &refs).unwrap();
        assert_eq!((s.changed, s.wins, s.losses), (2, 2, 0));
        assert!((s.changed_pct - 200.0 / 3.0).abs() < 1e-12);
        assert!(sxs_compare(&refs, &a[..1], &refs).is_err());
    }

    #[test]
    fn report_aggregates_and_tsv() {
        let cands = vec!["a b".to_string(), "a".to_string()];
        let items = [
            Scored { id: "u1", reference: "a b", hypothesis: "a", candidates: Some(&cands) },
            Scored { id: "u2", reference: "c", hypothesis: "c", candidates: Some(&cands[1..]) },
        ];
        let r = evaluate(&items).unwrap();
        assert_eq!((r.deletions, r.ref_words), (1, 3));
        assert!((r.wer - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.oracle_wer.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_tsv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "u1\ta b\ta\t0\t0\t1");
    }
}
