//! Report serialization: JSON table, ROC point CSVs and an SVG plot.

use std::fmt::Write as _;

use super::benchmark::{MetricsReport, ReportRow, RocCurve};
use crate::error::Result;

/// `v` rounded to six significant digits.
pub fn round6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn fmt6(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    round6(v).to_string()
}

/// The results table as a JSON array, one object per model and target mode.
pub fn report_json(report: &MetricsReport) -> Result<String> {
    let rows: Vec<ReportRow> = report
        .rows
        .iter()
        .map(|r| ReportRow {
            accuracy_mean: round6(r.accuracy_mean),
            accuracy_std: round6(r.accuracy_std),
            balanced_accuracy_mean: round6(r.balanced_accuracy_mean),
            balanced_accuracy_std: round6(r.balanced_accuracy_std),
            f1_mean: round6(r.f1_mean),
            f1_std: round6(r.f1_std),
            ..r.clone()
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.roc.points {
        let _ = writeln!(s, "{},{},{}", fmt6(p.threshold), fmt6(p.fpr), fmt6(p.tpr));
    }
    s
}

/// `model,target_mode,seed,auc` per curve.
pub fn auc_csv(curves: &[RocCurve]) -> String {
    let mut s = String::from("model,target_mode,seed,auc\n");
    for c in curves {
        let _ = writeln!(s, "{},{},{},{}", c.model, c.target_mode.name(), c.seed, fmt6(c.roc.auc));
    }
    s
}

const COLORS: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// ROC plot with one polyline per curve and the AUCs in the legend.
pub fn roc_svg(curves: &[RocCurve], title: &str) -> String {
    let (size, pad) = (400.0, 50.0);
    let legend_h = 18.0 * curves.len() as f64 + 10.0;
    let (w, h) = (size + 2.0 * pad, size + 2.0 * pad + legend_h);
    let px = |x: f64| pad + x * size;
    let py = |y: f64| pad + (1.0 - y) * size;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">false positive rate</text>"#,
        w / 2.0,
        pad + size + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">true positive rate</text>"#,
        pad + size / 2.0,
        pad + size / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.roc.points.iter().map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let y = pad + size + 50.0 + 18.0 * i as f64;
        let _ =
            writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="3"/>"#, y - 4.0, pad + 20.0, y - 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12">{} ({}) AUC {:.4}</text>"#,
            pad + 28.0,
            escape(&c.model),
            c.target_mode.name(),
            c.roc.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(round6(0.123456789), 0.123457);
        assert_eq!(round6(1234567.0), 1234570.0);
        assert_eq!(round6(0.0), 0.0);
        assert_eq!(fmt6(f64::INFINITY), "inf");
    }
}
