//! `report.md` rendering. Tables are pivots of the metric rows, so every
//! number in the report also appears verbatim in `metrics.csv`.

use std::fmt::Write;

use event_spectra::cloud::format_sig9;
use event_spectra::metrics::MetricRow;

/// Values in first-appearance order, without duplicates.
fn ordered<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// One table per scene: rows are metrics, columns are methods.
pub fn pivot_table(rows: &[MetricRow], scene: &str) -> String {
    let rows: Vec<&MetricRow> = rows.iter().filter(|r| r.scene == scene).collect();
    let methods = ordered(rows.iter().map(|r| r.method.as_str()));
    let metrics = ordered(rows.iter().map(|r| r.metric.as_str()));
    let mut s = String::from("| metric |");
    for m in &methods {
        let _ = write!(s, " {m} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(methods.len()));
    s.push('\n');
    for metric in metrics {
        let _ = write!(s, "| {metric} |");
        for method in &methods {
            let cell = rows
                .iter()
                .find(|r| r.metric == metric && r.method == *method)
                .map_or_else(|| "-".to_string(), |r| format_sig9(r.value));
            let _ = write!(s, " {cell} |");
        }
        s.push('\n');
    }
    s
}

pub fn render_report(title: &str, preamble: &[String], rows: &[MetricRow]) -> String {
    let mut s = format!("# {title}\n\n");
    for line in preamble {
        let _ = writeln!(s, "{line}");
    }
    if !preamble.is_empty() {
        s.push('\n');
    }
    for scene in ordered(rows.iter().map(|r| r.scene.as_str())) {
        let _ = write!(s, "## {scene}\n\n{}\n", pivot_table(rows, scene));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivot_fills_missing_cells() {
        let rows = vec![
            MetricRow::new("chart", "sweep", "rmse_raw", 3.0),
            MetricRow::new("chart", "sweep", "rmse_curve", 1.0),
            MetricRow::new("chart", "counting", "rmse_raw", 4.5),
            MetricRow::new("other", "x", "y", 0.0),
        ];
        let t = pivot_table(&rows, "chart");
        assert_eq!(
            t,
            "| metric | sweep | counting |\n|---|---|---|\n| rmse_raw | 3 | 4.5 |\n| rmse_curve | 1 | - |\n"
        );
    }
}
