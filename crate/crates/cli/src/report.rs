//! Line-per-verdict report plus the summary counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use malscan_core::ModelKind;
use serde::{Deserialize, Serialize};

use crate::verdict::{FinalStatus, Triage, Verdict};

/// Counts for the versions one model flagged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub flagged: usize,
    pub tp: usize,
    pub fp: usize,
    /// Flags removed because the version was reproduced.
    pub cleared: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub versions: usize,
    pub flagged: usize,
    pub auto_cleared: usize,
    pub clean: usize,
    pub errors: usize,
    pub clone_matches: usize,
    pub reproducer_clears: usize,
    /// Versions flagged by at least one model, before post-processing.
    pub any_model: ModelSummary,
    pub per_model: BTreeMap<ModelKind, ModelSummary>,
}

fn tally(s: &mut ModelSummary, v: &Verdict) {
    s.flagged += 1;
    match v.triage {
        Some(Triage::TruePositive) => s.tp += 1,
        Some(Triage::FalsePositive) => s.fp += 1,
        None => {}
    }
    if v.status == FinalStatus::AutoCleared {
        s.cleared += 1;
    }
}

impl Summary {
    pub fn of(verdicts: &[Verdict]) -> Self {
        let mut s = Summary {
            versions: verdicts.len(),
            ..Summary::default()
        };
        for kind in ModelKind::ALL {
            s.per_model.insert(kind, ModelSummary::default());
        }
        for v in verdicts {
            match v.status {
                FinalStatus::Flagged => s.flagged += 1,
                FinalStatus::AutoCleared => s.auto_cleared += 1,
                FinalStatus::Clean => s.clean += 1,
                FinalStatus::Error => s.errors += 1,
            }
            s.clone_matches += usize::from(v.clone_match.is_some());
            s.reproducer_clears += usize::from(v.status == FinalStatus::AutoCleared);
            for (kind, label) in &v.flags {
                if label.is_malicious() {
                    tally(s.per_model.entry(*kind).or_default(), v);
                }
            }
            if v.model_flagged() {
                tally(&mut s.any_model, v);
            }
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ReportLine {
    Verdict(Verdict),
    Summary(Summary),
}

/// One `{"verdict": ...}` line per verdict, then one `{"summary": ...}` line.
pub fn write_report<W: Write>(mut out: W, verdicts: &[Verdict]) -> io::Result<Summary> {
    let summary = Summary::of(verdicts);
    for v in verdicts {
        serde_json::to_writer(&mut out, &ReportLine::Verdict(v.clone()))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &ReportLine::Summary(summary.clone()))?;
    out.write_all(b"\n")?;
    Ok(summary)
}

/// Reads the verdict lines of a report; summary lines are recomputed, not trusted.
pub fn read_report<R: BufRead>(input: R) -> io::Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        if let ReportLine::Verdict(v) = parsed {
            out.push(v);
        }
    }
    Ok(out)
}

/// Human-readable summary: one row per model, then the pipeline totals.
pub fn render_table(s: &Summary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<16} {:>8} {:>6} {:>6} {:>6}", "model", "flagged", "tp", "fp", "-n");
    let row = |t: &mut String, name: &str, m: &ModelSummary| {
        let _ = writeln!(t, "{:<16} {:>8} {:>6} {:>6} {:>6}", name, m.flagged, m.tp, m.fp, m.cleared);
    };
    for (kind, m) in &s.per_model {
        row(&mut t, kind.id(), m);
    }
    row(&mut t, "any", &s.any_model);
    let _ = writeln!(
        t,
        "versions {}  flagged {}  auto-cleared {}  clean {}  errors {}  clone matches {}",
        s.versions, s.flagged, s.auto_cleared, s.clean, s.errors, s.clone_matches
    );
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use malscan_core::{Label, ReproduceStatus};

    fn verdict(name: &str, flag: bool, status: FinalStatus) -> Verdict {
        let mut v = Verdict::error(name, "1.0.0", String::new());
        v.error = None;
        v.status = status;
        v.flags.insert(ModelKind::DecisionTree, if flag { Label::Malicious } else { Label::Benign });
        v.flags.insert(ModelKind::NaiveBayes, Label::Benign);
        v
    }

    #[test]
    fn counts() {
        let mut cleared = verdict("c", true, FinalStatus::AutoCleared);
        cleared.reproduce = Some(ReproduceStatus::Reproduced);
        let mut tp = verdict("a", true, FinalStatus::Flagged);
        tp.triage = Some(Triage::TruePositive);
        let vs = vec![tp, verdict("b", false, FinalStatus::Clean), cleared];
        let s = Summary::of(&vs);
        assert_eq!((s.versions, s.flagged, s.auto_cleared, s.clean), (3, 1, 1, 1));
        assert_eq!(s.reproducer_clears, 1);
        let tree = s.per_model[&ModelKind::DecisionTree];
        assert_eq!((tree.flagged, tree.tp, tree.fp, tree.cleared), (2, 1, 0, 1));
        assert_eq!(s.per_model[&ModelKind::NaiveBayes].flagged, 0);
        assert_eq!(s.any_model.flagged, 2);
    }

    #[test]
    fn empty_batch_roundtrip() {
        let mut buf = Vec::new();
        let s = write_report(&mut buf, &[]).unwrap();
        assert_eq!(s.versions, 0);
        assert!(s.per_model.values().all(|m| *m == ModelSummary::default()));
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1);
        assert!(read_report(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn report_roundtrip() {
        let vs = vec![verdict("a", true, FinalStatus::Flagged), verdict("b", false, FinalStatus::Clean)];
        let mut buf = Vec::new();
        write_report(&mut buf, &vs).unwrap();
        assert_eq!(read_report(&buf[..]).unwrap(), vs);
        assert!(render_table(&Summary::of(&vs)).contains("decision_tree"));
    }
}
