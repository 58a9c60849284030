//! Exact-match span precision, recall and F1.
//!
//! A predicted span is a true positive only when its start, end and type
//! all match a gold span. Overall scores are micro-averaged. An `I-X` that
//! does not continue an `X` span opens a new one, as in the CoNLL scorer.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::seqdata::{extract_spans, EntitySpan, EntityType, Tag, TagScheme};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_positives: usize,
    /// Predicted spans.
    pub predicted: usize,
    /// Gold spans.
    pub gold: usize,
}

impl Counts {
    pub fn false_positives(&self) -> usize {
        self.predicted - self.true_positives
    }

    pub fn false_negatives(&self) -> usize {
        self.gold - self.true_positives
    }

    fn add(&mut self, other: Counts) {
        self.true_positives += other.true_positives;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> Scores {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.true_positives, self.predicted);
        let recall = ratio(self.true_positives, self.gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            precision,
            recall,
            f1,
            counts: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl Scores {
    /// Precision had no predicted spans to divide by.
    pub fn precision_undefined(&self) -> bool {
        self.counts.predicted == 0
    }

    /// Recall had no gold spans to divide by.
    pub fn zero_support(&self) -> bool {
        self.counts.gold == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Indexed in [`EntityType::ALL`] order.
    pub per_type: [Scores; 4],
    pub overall: Scores,
}

impl EvalReport {
    pub fn for_type(&self, kind: EntityType) -> &Scores {
        &self.per_type[kind as usize]
    }

    /// Human-readable notes for every metric whose denominator was zero.
    pub fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        let named = EntityType::ALL
            .iter()
            .map(|k| k.as_str().to_lowercase())
            .zip(&self.per_type);
        for (name, s) in std::iter::once(("overall".to_string(), &self.overall)).chain(named) {
            if s.precision_undefined() {
                out.push(format!("{name}: no predicted spans, precision reported as 0"));
            }
            if s.zero_support() {
                out.push(format!("{name}: no gold spans (zero support), recall reported as 0"));
            }
        }
        out
    }
}

fn spans(tags: &[Tag]) -> Vec<EntitySpan> {
    let mut repaired = tags.to_vec();
    TagScheme::repair(&mut repaired);
    extract_spans(&repaired).expect("repaired sequences are legal")
}

/// Scores `pred` against `gold`, sentence by sentence.
pub fn evaluate(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_type = [Counts::default(); 4];
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Contract(format!(
                "sentence {}: {} gold tags but {} predicted",
                i + 1,
                g.len(),
                p.len()
            )));
        }
        let gs = spans(g);
        let ps = spans(p);
        for s in &gs {
            per_type[s.kind as usize].gold += 1;
        }
        for s in &ps {
            let c = &mut per_type[s.kind as usize];
            c.predicted += 1;
            // spans within a sentence are disjoint, so a match is unique
            if gs.contains(s) {
                c.true_positives += 1;
            }
        }
    }
    let mut overall = Counts::default();
    for c in per_type {
        overall.add(c);
    }
    Ok(EvalReport {
        per_type: per_type.map(|c| c.scores()),
        overall: overall.scores(),
    })
}

const COLUMNS: [&str; 7] = ["Per.", "Loc.", "Org.", "Misc.", "Prec.", "Recall", "F1"];
const WIDTH: usize = 8;

/// Fixed-width table: per-type F1 then overall precision, recall and F1,
/// all as percentages with two decimals. Zero-denominator notes follow on
/// lines starting with `#`.
pub fn report_format(report: &EvalReport) -> String {
    let mut out = String::new();
    for c in COLUMNS {
        let _ = write!(out, "{c:>WIDTH$}");
    }
    out.push('\n');
    for v in report_values(report) {
        let _ = write!(out, "{:>WIDTH$.2}", 100.0 * v);
    }
    out.push('\n');
    for flag in report.flags() {
        let _ = writeln!(out, "# {flag}");
    }
    out
}

fn report_values(report: &EvalReport) -> [f64; 7] {
    let t = &report.per_type;
    [
        t[0].f1,
        t[1].f1,
        t[2].f1,
        t[3].f1,
        report.overall.precision,
        report.overall.recall,
        report.overall.f1,
    ]
}

/// Reads the seven percentages back from [`report_format`] output.
pub fn parse_report(text: &str) -> Result<[f64; 7]> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty report".into(),
        })?
        .split_whitespace()
        .collect();
    if header != COLUMNS {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let row = lines.next().ok_or_else(|| Error::Parse {
        line: 2,
        msg: "missing values".into(),
    })?;
    let values = row
        .split_whitespace()
        .map(|v| {
            v.parse::<f64>().map_err(|e| Error::Parse {
                line: 2,
                msg: format!("{v:?}: {e}"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    values.try_into().map_err(|v: Vec<f64>| Error::Parse {
        line: 2,
        msg: format!("expected 7 values, got {}", v.len()),
    })
}

/// Machine-readable `key=value` lines (fractions, not percentages).
pub fn report_kv(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut emit = |prefix: &str, s: &Scores| {
        let _ = writeln!(out, "{prefix}.precision={}", s.precision);
        let _ = writeln!(out, "{prefix}.recall={}", s.recall);
        let _ = writeln!(out, "{prefix}.f1={}", s.f1);
        let _ = writeln!(out, "{prefix}.tp={}", s.counts.true_positives);
        let _ = writeln!(out, "{prefix}.predicted={}", s.counts.predicted);
        let _ = writeln!(out, "{prefix}.gold={}", s.counts.gold);
        let _ = writeln!(out, "{prefix}.zero_support={}", s.zero_support());
    };
    emit("overall", &report.overall);
    for (k, s) in EntityType::ALL.iter().zip(&report.per_type) {
        emit(&k.as_str().to_lowercase(), s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|x| Tag::parse(x).unwrap()).collect()
    }

    #[test]
    fn identical_predictions_score_one() {
        let gold = vec![t("B-PER I-PER O B-LOC"), t("B-ORG O B-MISC")];
        let r = evaluate(&gold, &gold).unwrap();
        assert_eq!(r.overall.f1, 1.0);
        assert!(r.per_type.iter().all(|s| s.f1 == 1.0));
        let text = report_format(&r);
        assert_eq!(
            text.lines()
                .nth(1)
                .unwrap()
                .split_whitespace()
                .filter(|c| *c == "100.00")
                .count(),
            7
        );
    }

    #[test]
    fn boundary_mismatch_is_a_miss() {
        let r = evaluate(&[t("B-PER I-PER O")], &[t("B-PER O O")]).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn all_outside_prediction_flags_precision() {
        let r = evaluate(&[t("B-PER O")], &[t("O O")]).unwrap();
        assert_eq!(r.overall.precision, 0.0);
        assert_eq!(r.overall.recall, 0.0);
        assert!(r.overall.precision_undefined());
        assert!(report_format(&r).contains("# overall: no predicted spans"));
    }

    #[test]
    fn no_entities_anywhere_reports_zero_support() {
        let r = evaluate(&[t("O O")], &[t("O O")]).unwrap();
        assert_eq!(r.overall.recall, 0.0);
        assert!(r.overall.zero_support());
        assert!(report_kv(&r).contains("overall.zero_support=true"));
    }

    #[test]
    fn dangling_inside_tag_opens_a_span() {
        let r = evaluate(&[t("B-LOC O")], &[t("I-LOC O")]).unwrap();
        assert_eq!(r.overall.f1, 1.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(evaluate(&[t("O")], &[]).is_err());
        assert!(evaluate(&[t("O O")], &[t("O")]).is_err());
    }

    #[test]
    fn formatted_table_is_stable() {
        let r = evaluate(
            &[t("B-PER O B-LOC I-LOC"), t("B-ORG")],
            &[t("B-PER O B-LOC O"), t("B-ORG")],
        )
        .unwrap();
        let expected = "    Per.    Loc.    Org.   Misc.   Prec.  Recall      F1\n  100.00    0.00  100.00    0.00   66.67   66.67   66.67\n# misc: no predicted spans, precision reported as 0\n# misc: no gold spans (zero support), recall reported as 0\n";
        assert_eq!(report_format(&r), expected);
        let parsed = parse_report(expected).unwrap();
        assert_eq!(parsed, [100.0, 0.0, 100.0, 0.0, 66.67, 66.67, 66.67]);
    }
}
