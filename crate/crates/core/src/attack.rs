//! Adversary simulation: capture fingerprints under unknown keys, then
//! recover them by dictionary lookup.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::cipher::{fingerprint, CipherError, CipherSpec, Fingerprint, KeyValue, Plaintext};
use crate::dictionary::{DictError, Dictionary};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error("truth column length differs from fingerprint count")]
    TruthLength,
    #[error("target file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Captured fingerprints, optionally with the keys that produced them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetBatch {
    pub fps: Vec<Fingerprint>,
    /// Ground truth, kept only for scoring.
    pub truth: Option<Vec<KeyValue>>,
}

impl TargetBatch {
    pub fn len(&self) -> usize {
        self.fps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fps.is_empty()
    }

    /// Drops the truth column.
    pub fn without_truth(mut self) -> Self {
        self.truth = None;
        self
    }

    /// One lowercase hex fingerprint per line, with a tab and the hex key
    /// when truth is present.
    pub fn to_text(&self, spec: &CipherSpec) -> String {
        let mut out = String::with_capacity(self.fps.len() * (2 * spec.block_len() + 1));
        for (i, fp) in self.fps.iter().enumerate() {
            out.push_str(&fp.to_hex());
            if let Some(truth) = &self.truth {
                out.push('\t');
                out.push_str(&truth[i].to_hex(spec.key_bits()));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the target file format. Blank lines are skipped; truth must be
    /// given on every line or none.
    pub fn parse(text: &str, spec: &CipherSpec) -> Result<Self, AttackError> {
        let mut fps = Vec::new();
        let mut truth: Vec<KeyValue> = Vec::new();
        let mut with_truth = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let fp_col = cols.next().unwrap_or_default();
            let key_col = cols.next();
            if cols.next().is_some() {
                return Err(AttackError::Parse {
                    line: line_no,
                    reason: "more than two columns".into(),
                });
            }
            let fp = Fingerprint::from_hex(fp_col, spec.block_bits()).map_err(|e| {
                AttackError::Parse {
                    line: line_no,
                    reason: e.to_string(),
                }
            })?;
            match (with_truth, key_col.is_some()) {
                (None, has) => with_truth = Some(has),
                (Some(expected), has) if expected != has => {
                    return Err(AttackError::Parse {
                        line: line_no,
                        reason: "truth column present on some lines only".into(),
                    })
                }
                _ => {}
            }
            if let Some(col) = key_col {
                let key =
                    KeyValue::from_hex(col, spec.key_bits()).map_err(|e| AttackError::Parse {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                truth.push(key);
            }
            fps.push(fp);
        }
        Ok(TargetBatch {
            fps,
            truth: with_truth.unwrap_or(false).then_some(truth),
        })
    }
}

/// Fingerprints `keys` under `(spec, x0)`, retaining the keys as truth.
pub fn capture_targets(
    spec: &CipherSpec,
    x0: &Plaintext,
    keys: &[KeyValue],
) -> Result<TargetBatch, AttackError> {
    let fps = keys
        .par_iter()
        .map(|&k| fingerprint(spec, k, x0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TargetBatch {
        fps,
        truth: Some(keys.to_vec()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    /// Position of the target in its batch.
    pub index: usize,
    /// Every key stored under the target's fingerprint.
    pub candidates: Vec<KeyValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackReport {
    pub total: usize,
    pub hits_unique: usize,
    pub hits_ambiguous: usize,
    pub misses: usize,
    /// Hits in batch order.
    pub recovered: Vec<Recovery>,
    pub any_hit: bool,
    /// Hits whose candidates exclude the true key; `None` without truth.
    pub false_positives: Option<usize>,
}

impl AttackReport {
    /// `key=value` summary line.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "total={} hits_unique={} hits_ambiguous={} misses={} any_hit={}",
            self.total, self.hits_unique, self.hits_ambiguous, self.misses, self.any_hit
        );
        if let Some(fp) = self.false_positives {
            let _ = write!(s, " false_positives={fp}");
        }
        s
    }

    /// Summary line followed by one `hit<TAB>index<TAB>k1,k2,...` line per hit.
    pub fn to_text(&self, key_bits: u32) -> String {
        let mut out = format!("report {}\n", self.summary_line());
        for rec in &self.recovered {
            let keys: Vec<String> = rec.candidates.iter().map(|k| k.to_hex(key_bits)).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                if rec.candidates.len() == 1 {
                    "unique"
                } else {
                    "ambiguous"
                },
                rec.index,
                keys.join(",")
            );
        }
        out
    }
}

enum Outcome {
    Miss,
    Hit {
        candidates: Vec<KeyValue>,
        false_positive: bool,
    },
}

/// Looks up every target. Ambiguous hits report the whole collision set.
pub fn run_attack(dict: &Dictionary, batch: &TargetBatch) -> Result<AttackReport, AttackError> {
    let truth = batch.truth.as_deref();
    if truth.is_some_and(|t| t.len() != batch.fps.len()) {
        return Err(AttackError::TruthLength);
    }
    let outcomes: Vec<Outcome> = batch
        .fps
        .par_iter()
        .enumerate()
        .map(|(i, fp)| {
            let found = dict.lookup(fp)?;
            Ok(match found.entry() {
                None => Outcome::Miss,
                Some(entry) => Outcome::Hit {
                    candidates: entry.keys.clone(),
                    false_positive: truth.is_some_and(|t| entry.keys.binary_search(&t[i]).is_err()),
                },
            })
        })
        .collect::<Result<_, DictError>>()?;

    let mut report = AttackReport {
        total: outcomes.len(),
        false_positives: truth.map(|_| 0),
        ..AttackReport::default()
    };
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Miss => report.misses += 1,
            Outcome::Hit {
                candidates,
                false_positive,
            } => {
                if candidates.len() == 1 {
                    report.hits_unique += 1;
                } else {
                    report.hits_ambiguous += 1;
                }
                if false_positive {
                    *report.false_positives.as_mut().expect("truth present") += 1;
                }
                report.recovered.push(Recovery { index, candidates });
            }
        }
    }
    report.any_hit = report.misses < report.total;
    Ok(report)
}
