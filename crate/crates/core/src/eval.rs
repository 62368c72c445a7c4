//! Precision, recall and F1 per entity class, ROC curves, and rendering of
//! reports and plots.

use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{self, LabelScheme, LabeledSequence};
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold items of the class, `tp + fn`.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ClassScores {
        precision,
        recall,
        f1: f1(precision, recall),
        support: tp + fn_,
        tp,
        fp,
        fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Exact `(start, end, type)` span matches.
    Entity,
    /// Per-token tag equality, `O` excluded.
    Token,
}

impl MetricMode {
    pub fn name(self) -> &'static str {
        match self {
            MetricMode::Entity => "entity",
            MetricMode::Token => "token",
        }
    }
}

impl std::str::FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(MetricMode::Entity),
            "token" => Ok(MetricMode::Token),
            _ => Err(Error::InvalidArgument(format!("unknown metric mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedScores {
    pub class: String,
    #[serde(flatten)]
    pub scores: ClassScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: MetricMode,
    /// In scheme order.
    pub classes: Vec<NamedScores>,
    /// Micro average over all classes.
    pub average: ClassScores,
}

impl EvalReport {
    pub fn from_counts(mode: MetricMode, counts: &[(String, usize, usize, usize)]) -> Self {
        let classes = counts
            .iter()
            .map(|(c, tp, fp, fn_)| NamedScores {
                class: c.clone(),
                scores: prf(*tp, *fp, *fn_),
            })
            .collect();
        let sum = |f: fn(&(String, usize, usize, usize)) -> usize| counts.iter().map(f).sum();
        let average = prf(sum(|c| c.1), sum(|c| c.2), sum(|c| c.3));
        EvalReport {
            mode,
            classes,
            average,
        }
    }

    pub fn class(&self, name: &str) -> Option<&ClassScores> {
        self.classes.iter().find(|c| c.class == name).map(|c| &c.scores)
    }
}

/// Scores predicted tag sequences against gold. Predictions are
/// canonicalized to IOB2 before span extraction.
pub fn score_entities(
    gold: &[LabeledSequence],
    pred: &[Vec<usize>],
    scheme: &LabelScheme,
    mode: MetricMode,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let types = scheme.entity_types().len();
    let (mut tp, mut fp, mut fn_) = (vec![0; types], vec![0; types], vec![0; types]);
    for (g, p) in gold.iter().zip(pred) {
        if g.tags.len() != p.len() {
            return Err(Error::Dimension {
                expected: g.tags.len(),
                found: p.len(),
            });
        }
        if let Some(&bad) = p.iter().find(|&&t| t >= scheme.len()) {
            return Err(Error::InvalidArgument(format!("predicted tag {bad} outside the scheme")));
        }
        match mode {
            MetricMode::Entity => {
                let gs = corpus::entity_spans(&corpus::canonicalize_iob(&g.tags, scheme), scheme)?;
                let ps = corpus::entity_spans(&corpus::canonicalize_iob(p, scheme), scheme)?;
                for s in &ps {
                    if gs.contains(s) {
                        tp[s.etype] += 1;
                    } else {
                        fp[s.etype] += 1;
                    }
                }
                for s in gs.iter().filter(|s| !ps.contains(s)) {
                    fn_[s.etype] += 1;
                }
            }
            MetricMode::Token => {
                for (&gt, &pt) in g.tags.iter().zip(p) {
                    if gt == pt {
                        if let Some(t) = scheme.type_of(pt) {
                            tp[t] += 1;
                        }
                        continue;
                    }
                    if let Some(t) = scheme.type_of(pt) {
                        fp[t] += 1;
                    }
                    if let Some(t) = scheme.type_of(gt) {
                        fn_[t] += 1;
                    }
                }
            }
        }
    }
    let counts: Vec<(String, usize, usize, usize)> = scheme
        .entity_types()
        .iter()
        .enumerate()
        .map(|(t, name)| (name.clone(), tp[t], fp[t], fn_[t]))
        .collect();
    Ok(EvalReport::from_counts(mode, &counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over distinct scores, highest first, with equal scores
/// entering together. Area by the trapezoid rule.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            found: positives.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc scores".into()));
    }
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "roc curve needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Class name, per-token scores and per-token positive flags.
pub type ClassRocInput = (String, Vec<f64>, Vec<bool>);

/// Per-class one-vs-rest token scores: the posterior mass of `B-T` plus
/// `I-T`, with gold membership in class `T` as the positive flag.
pub fn class_roc_inputs(
    marginals: &[Matrix],
    gold: &[LabeledSequence],
    scheme: &LabelScheme,
) -> Result<Vec<ClassRocInput>> {
    if marginals.len() != gold.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            found: marginals.len(),
        });
    }
    let mut out: Vec<ClassRocInput> = scheme
        .entity_types()
        .iter()
        .map(|t| (t.clone(), Vec::new(), Vec::new()))
        .collect();
    for (m, g) in marginals.iter().zip(gold) {
        if m.shape() != (g.len(), scheme.len()) {
            return Err(Error::Shape(format!(
                "marginals {:?} for a sentence of {} tokens and {} labels",
                m.shape(),
                g.len(),
                scheme.len()
            )));
        }
        for (t, (_, scores, flags)) in out.iter_mut().enumerate() {
            for (pos, &tag) in g.tags.iter().enumerate() {
                scores.push(m[(pos, scheme.begin(t))] + m[(pos, scheme.inside(t))]);
                flags.push(scheme.type_of(tag) == Some(t));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// Two decimals, halves rounded up. A small slack absorbs binary
/// representation error so that e.g. 0.845 renders as 0.85.
fn half_up(x: f64) -> String {
    let cents = (x * 100.0 + 0.5 + 1e-9).floor();
    format!("{:.2}", cents / 100.0)
}

pub const AVERAGE_LABEL: &str = "Average scores";

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Table => Ok(render_table(report).into_bytes()),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn render_table(report: &EvalReport) -> String {
    let width = report
        .classes
        .iter()
        .map(|c| c.class.chars().count())
        .chain([AVERAGE_LABEL.len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}", "", "precision", "recall", "f1-score", "support");
    out.push('\n');
    for c in &report.classes {
        table_row(&mut out, &c.class, &c.scores, width);
    }
    if !report.classes.is_empty() {
        out.push('\n');
    }
    table_row(&mut out, AVERAGE_LABEL, &report.average, width);
    out
}

fn table_row(out: &mut String, name: &str, s: &ClassScores, width: usize) {
    let _ = writeln!(
        out,
        "{name:>width$}  {:>9}  {:>9}  {:>9}  {:>9}",
        half_up(s.precision),
        half_up(s.recall),
        half_up(s.f1),
        s.support
    );
}

fn render_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(["class", "precision", "recall", "f1", "support"]).map_err(csv_err)?;
    let rows = report
        .classes
        .iter()
        .map(|c| (c.class.as_str(), &c.scores))
        .chain([(AVERAGE_LABEL, &report.average)]);
    for (name, s) in rows {
        w.write_record([
            name.to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            s.support.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

const CHART_SIZE: f64 = 300.0;
const CHART_MARGIN: f64 = 60.0;
const CHART_SPAN: f64 = CHART_SIZE + 2.0 * CHART_MARGIN;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One SVG document with a chart per curve, stacked vertically. Each curve
/// is drawn in unit coordinates under a transform, so the `points` attribute
/// carries the exact curve values.
pub fn emit_roc_plot(curves: &[(String, RocCurve)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::Empty("roc curve list".into()));
    }
    let height = CHART_SPAN * curves.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_SPAN}" height="{height}" viewBox="0 0 {CHART_SPAN} {height}" font-family="sans-serif" font-size="12">"#
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let name = escape(name);
        let top = k as f64 * CHART_SPAN;
        let _ = writeln!(s, r#"<g class="chart" id="roc-{k}" transform="translate({CHART_MARGIN} {})">"#, top + CHART_MARGIN);
        let _ = writeln!(s, r#"<text x="{}" y="-20" text-anchor="middle" font-size="14">ROC curve for {name} class</text>"#, CHART_SIZE / 2.0);
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{CHART_SIZE}" height="{CHART_SIZE}" fill="none" stroke="black"/>"#);
        for tick in [0.0, 0.5, 1.0] {
            let pos = tick * CHART_SIZE;
            let _ = writeln!(s, r#"<text x="{pos}" y="{}" text-anchor="middle">{tick:.1}</text>"#, CHART_SIZE + 16.0);
            let _ = writeln!(s, r#"<text x="-8" y="{}" text-anchor="end">{tick:.1}</text>"#, CHART_SIZE - pos + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#, CHART_SIZE / 2.0, CHART_SIZE + 36.0);
        let _ = writeln!(
            s,
            r#"<text x="-40" y="{}" text-anchor="middle" transform="rotate(-90 -40 {})">True positive rate</text>"#,
            CHART_SIZE / 2.0,
            CHART_SIZE / 2.0
        );
        let _ = writeln!(s, r#"<g transform="matrix({CHART_SIZE} 0 0 -{CHART_SIZE} 0 {CHART_SIZE})">"#);
        let _ = writeln!(
            s,
            r#"<line class="diagonal" x1="0" y1="0" x2="1" y2="1" stroke="gray" stroke-dasharray="4 4" vector-effect="non-scaling-stroke"/>"#
        );
        let pts: Vec<String> = curve.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="roc" points="{}" fill="none" stroke="steelblue" stroke-width="2" vector-effect="non-scaling-stroke"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}" text-anchor="end">{name} (AUC = {:.4})</text>"#,
            CHART_SIZE - 8.0,
            CHART_SIZE - 10.0,
            curve.auc
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
