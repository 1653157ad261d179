//! Tag-ranking and necessity metrics, and the report tables built from them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::PrecisionDenominator;
use crate::corpus::Necessity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagEvalRecord {
    pub id: u64,
    pub truth: Vec<String>,
    /// Ranked, unique.
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityEvalRecord {
    pub id: u64,
    pub truth: Necessity,
    pub predicted: Necessity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NecessityMetrics {
    pub accuracy: f64,
    pub f1_necessary: f64,
    pub f1_unnecessary: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-request precision, recall and F1 at `k`. Missing predictions count as misses.
pub fn record_prf_at_k(record: &TagEvalRecord, k: usize, denom: PrecisionDenominator) -> TagMetrics {
    let truth: HashSet<&str> = record.truth.iter().map(String::as_str).collect();
    let hits = record
        .predicted
        .iter()
        .take(k)
        .filter(|p| truth.contains(p.as_str()))
        .count() as f64;
    let n_truth = truth.len();
    if n_truth == 0 {
        return TagMetrics::default();
    }
    let p_den = match denom {
        PrecisionDenominator::Min => k.min(n_truth),
        PrecisionDenominator::K => k,
    } as f64;
    let precision = hits / p_den;
    let recall = hits / n_truth as f64;
    TagMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

/// Macro average over requests of P@K, R@K and F1@K.
pub fn precision_recall_f1_at_k(
    records: &[TagEvalRecord],
    k: usize,
    denom: PrecisionDenominator,
) -> Result<TagMetrics> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if records.is_empty() {
        return Ok(TagMetrics::default());
    }
    let mut sum = TagMetrics::default();
    for r in records {
        let m = record_prf_at_k(r, k, denom);
        sum.precision += m.precision;
        sum.recall += m.recall;
        sum.f1 += m.f1;
    }
    let n = records.len() as f64;
    Ok(TagMetrics {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    })
}

/// Accuracy plus F1 of each necessity class taken as the positive class.
pub fn accuracy_and_class_f1(records: &[NecessityEvalRecord]) -> Result<NecessityMetrics> {
    if records.is_empty() {
        return Err(Error::Data("no necessity records to evaluate".into()));
    }
    let correct = records.iter().filter(|r| r.truth == r.predicted).count();
    let class_f1 = |class: Necessity| {
        let tp = records.iter().filter(|r| r.truth == class && r.predicted == class).count() as f64;
        let fp = records.iter().filter(|r| r.truth != class && r.predicted == class).count() as f64;
        let fn_ = records.iter().filter(|r| r.truth == class && r.predicted != class).count() as f64;
        if tp + fp + fn_ == 0.0 {
            log::warn!("class {class} absent from truth and predictions; its F1 is reported as 0");
            return 0.0;
        }
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        f1(p, r)
    };
    Ok(NecessityMetrics {
        accuracy: correct as f64 / records.len() as f64,
        f1_necessary: class_f1(Necessity::Necessary),
        f1_unnecessary: class_f1(Necessity::Unnecessary),
    })
}

/// Expected P/R/F1@k of a uniformly random ranking over `n_labels` tags, for
/// one request with `n_truth` truth tags. Used as a chance baseline.
pub fn random_ranking_expectation(n_labels: usize, n_truth: usize, k: usize, denom: PrecisionDenominator) -> TagMetrics {
    // hits ~ Hypergeometric(population n_labels, successes n_truth, draws k)
    let k = k.min(n_labels);
    let ln_choose = |n: usize, r: usize| -> f64 {
        if r > n {
            return f64::NEG_INFINITY;
        }
        (1..=r).map(|i| ((n - r + i) as f64).ln() - (i as f64).ln()).sum()
    };
    let total = ln_choose(n_labels, k);
    let mut out = TagMetrics::default();
    for h in 0..=k.min(n_truth) {
        let ln_p = ln_choose(n_truth, h) + ln_choose(n_labels - n_truth, k - h) - total;
        if !ln_p.is_finite() {
            continue;
        }
        let prob = ln_p.exp();
        let rec = TagEvalRecord {
            id: 0,
            truth: (0..n_truth).map(|i| format!("t{i}")).collect(),
            predicted: (0..k).map(|i| if i < h { format!("t{i}") } else { format!("x{i}") }).collect(),
        };
        let m = record_prf_at_k(&rec, k, denom);
        out.precision += prob * m.precision;
        out.recall += prob * m.recall;
        out.f1 += prob * m.f1;
    }
    out
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub name: String,
    pub necessity: Option<NecessityMetrics>,
    pub tags: BTreeMap<usize, TagMetrics>,
    pub precision_denominator: PrecisionDenominator,
}

impl MetricSet {
    pub fn evaluate(
        name: &str,
        tags: &[TagEvalRecord],
        necessity: &[NecessityEvalRecord],
        ks: &[usize],
        denom: PrecisionDenominator,
    ) -> Result<Self> {
        let mut by_k = BTreeMap::new();
        for &k in ks {
            by_k.insert(k, precision_recall_f1_at_k(tags, k, denom)?);
        }
        let necessity = if necessity.is_empty() {
            None
        } else {
            Some(accuracy_and_class_f1(necessity)?)
        };
        Ok(Self {
            name: name.to_string(),
            necessity,
            tags: by_k,
            precision_denominator: denom,
        })
    }

    fn necessity_cells(&self) -> Vec<(String, f64)> {
        self.necessity
            .as_ref()
            .map(|n| {
                vec![
                    ("Accuracy".to_string(), n.accuracy),
                    ("F1 Necessary".to_string(), n.f1_necessary),
                    ("F1 Unnecessary".to_string(), n.f1_unnecessary),
                ]
            })
            .unwrap_or_default()
    }

    fn tag_cells(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, m) in &self.tags {
            out.push((format!("P@{k}"), m.precision));
            out.push((format!("R@{k}"), m.recall));
            out.push((format!("F1@{k}"), m.f1));
        }
        out
    }
}

fn rel_delta(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        None
    } else {
        Some((a - b) / b)
    }
}

fn fmt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

/// Text and CSV renderings of an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn render_block(out: &mut String, title: &str, sets: &[MetricSet], cells: impl Fn(&MetricSet) -> Vec<(String, f64)>) {
    let header = cells(&sets[0]);
    if header.is_empty() {
        return;
    }
    let name_w = sets.iter().map(|s| s.name.len()).max().unwrap_or(5).max(10);
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<name_w$}", "Model");
    for (h, _) in &header {
        let _ = write!(out, " {h:>14}");
    }
    out.push('\n');
    for s in sets {
        let _ = write!(out, "{:<name_w$}", s.name);
        for (_, v) in cells(s) {
            let _ = write!(out, " {v:>14.3}");
        }
        out.push('\n');
    }
    if sets.len() > 1 {
        // first row is the reference; compare it against the best other row per cell
        let _ = write!(out, "{:<name_w$}", "% Improv.");
        let rows: Vec<Vec<(String, f64)>> = sets.iter().map(&cells).collect();
        for (j, (_, a)) in rows[0].iter().enumerate() {
            let b = rows[1..].iter().map(|r| r[j].1).fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, " {:>14}", fmt_pct(rel_delta(*a, b)));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn render_ablation(out: &mut String, title: &str, sets: &[MetricSet], cells: impl Fn(&MetricSet) -> Vec<(String, f64)>) {
    let reference = cells(&sets[0]);
    if reference.is_empty() || sets.len() < 2 {
        return;
    }
    let name_w = sets.iter().map(|s| s.name.len()).max().unwrap_or(5).max(10);
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<name_w$}", "Model");
    for (h, _) in &reference {
        let _ = write!(out, " {h:>10}");
    }
    let _ = writeln!(out, " {:>14}", "↓");
    for (i, s) in sets.iter().enumerate() {
        let _ = write!(out, "{:<name_w$}", s.name);
        let row = cells(s);
        for (_, v) in &row {
            let _ = write!(out, " {v:>10.3}");
        }
        if i == 0 {
            let _ = writeln!(out, " {:>14}", "-");
            continue;
        }
        let drops: Vec<f64> = reference
            .iter()
            .zip(&row)
            .filter(|((_, full), _)| *full != 0.0)
            .map(|((_, full), (_, abl))| (full - abl) / full)
            .collect();
        let range = if drops.is_empty() {
            "n/a".to_string()
        } else {
            let lo = drops.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            format!("{:.1}-{:.1}%", lo * 100.0, hi * 100.0)
        };
        let _ = writeln!(out, " {range:>14}");
    }
    out.push('\n');
}

/// Render necessity (Table 2 shape) and tag (Table 3 shape) blocks, plus
/// ablation blocks with relative-drop ranges when more than one config is given.
/// The first metric set is the reference row.
pub fn render_report(sets: &[MetricSet]) -> Report {
    let mut text = String::new();
    let mut csv = String::from("section,model,metric,value\n");
    if sets.is_empty() {
        return Report { text, csv };
    }
    let denom = sets[0].precision_denominator;
    let _ = writeln!(text, "precision denominator: {}\n", denom.label());
    render_block(&mut text, "Request necessity prediction", sets, MetricSet::necessity_cells);
    render_block(&mut text, "Tag recommendation", sets, MetricSet::tag_cells);
    render_ablation(&mut text, "Ablation: request necessity prediction", sets, MetricSet::necessity_cells);
    for (metric, prefix) in [("Precision@k", "P@"), ("Recall@k", "R@"), ("F1@k", "F1@")] {
        render_ablation(&mut text, &format!("Ablation: tag recommendation {metric}"), sets, |s| {
            s.tag_cells().into_iter().filter(|(h, _)| h.starts_with(prefix)).collect()
        });
    }
    for s in sets {
        for (h, v) in s.necessity_cells() {
            let _ = writeln!(csv, "necessity,{},{h},{v:.6}", s.name);
        }
        for (h, v) in s.tag_cells() {
            let _ = writeln!(csv, "tags[{}],{},{h},{v:.6}", s.precision_denominator.label(), s.name);
        }
    }
    Report { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(truth: &[&str], pred: &[&str]) -> TagEvalRecord {
        TagEvalRecord {
            id: 0,
            truth: truth.iter().map(|s| s.to_string()).collect(),
            predicted: pred.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn hand_cases() {
        let m = precision_recall_f1_at_k(&[rec(&["a", "b"], &["a", "b", "c"])], 3, PrecisionDenominator::Min).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = precision_recall_f1_at_k(&[rec(&["a", "b"], &["a", "b", "c"])], 3, PrecisionDenominator::K).unwrap();
        assert_eq!(m.precision, 2.0 / 3.0);
        let m = precision_recall_f1_at_k(&[rec(&["a"], &["x", "y", "z"])], 3, PrecisionDenominator::Min).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(precision_recall_f1_at_k(&[], 0, PrecisionDenominator::Min).is_err());
    }

    #[test]
    fn short_prediction_lists_count_as_misses() {
        let m = precision_recall_f1_at_k(&[rec(&["a", "b", "c", "d"], &["a"])], 5, PrecisionDenominator::Min).unwrap();
        assert_eq!(m.precision, 0.25);
        assert_eq!(m.recall, 0.25);
    }

    #[test]
    fn confusion_matrix_case() {
        // TP=3, FP=1, FN=2, TN=4 with "necessary" as positive
        let mut records = Vec::new();
        let mut push = |t, p, n| {
            for _ in 0..n {
                records.push(NecessityEvalRecord { id: 0, truth: t, predicted: p });
            }
        };
        use Necessity::*;
        push(Necessary, Necessary, 3);
        push(Unnecessary, Necessary, 1);
        push(Necessary, Unnecessary, 2);
        push(Unnecessary, Unnecessary, 4);
        let m = accuracy_and_class_f1(&records).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        let expect = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((m.f1_necessary - expect).abs() < 1e-12);
        // negative class: TP=4, FP=2, FN=1
        let expect_neg = 2.0 * (4.0 / 6.0) * 0.8 / (4.0 / 6.0 + 0.8);
        assert!((m.f1_unnecessary - expect_neg).abs() < 1e-12);
    }

    #[test]
    fn all_correct_and_absent_class() {
        let r = vec![
            NecessityEvalRecord { id: 0, truth: Necessity::Necessary, predicted: Necessity::Necessary },
            NecessityEvalRecord { id: 1, truth: Necessity::Unnecessary, predicted: Necessity::Unnecessary },
        ];
        let m = accuracy_and_class_f1(&r).unwrap();
        assert_eq!((m.accuracy, m.f1_necessary, m.f1_unnecessary), (1.0, 1.0, 1.0));
        let m = accuracy_and_class_f1(&r[..1]).unwrap();
        assert_eq!(m.f1_unnecessary, 0.0);
        assert!(accuracy_and_class_f1(&[]).is_err());
    }

    #[test]
    fn random_baseline_closed_form() {
        // single truth tag: E[hits] = k/n, P(min) = k/n, R = k/n
        let m = random_ranking_expectation(424, 1, 5, PrecisionDenominator::Min);
        assert!((m.recall - 5.0 / 424.0).abs() < 1e-12);
        assert!((m.precision - 5.0 / 424.0).abs() < 1e-12);
    }

    fn set(name: &str, acc: f64, p3: f64) -> MetricSet {
        MetricSet {
            name: name.into(),
            necessity: Some(NecessityMetrics { accuracy: acc, f1_necessary: acc, f1_unnecessary: acc }),
            tags: [(3, TagMetrics { precision: p3, recall: p3, f1: p3 })].into_iter().collect(),
            precision_denominator: PrecisionDenominator::Min,
        }
    }

    #[test]
    fn report_rows() {
        let single = render_report(&[set("full", 0.8, 0.6)]);
        assert!(!single.text.contains("% Improv."));
        assert!(single.text.contains("precision denominator: min"));
        let two = render_report(&[set("full", 0.8, 0.6), set("no_code_prefix", 0.5, 0.5)]);
        // (0.8 - 0.5) / 0.5 = 60%, (0.6 - 0.5) / 0.5 = 20%
        assert!(two.text.contains("60.0%"));
        assert!(two.text.contains("20.0%"));
        // drops: (0.8-0.5)/0.8 = 37.5% on necessity cells
        assert!(two.text.contains("37.5-37.5%"));
        assert_eq!(two, render_report(&[set("full", 0.8, 0.6), set("no_code_prefix", 0.5, 0.5)]));
        assert!(two.csv.lines().any(|l| l == "necessity,full,Accuracy,0.800000"));
    }
}
