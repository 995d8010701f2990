//! Result files: CSV tables, plot data and the configuration fingerprint.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use bdqcd::{Metric, SweepRow};

pub const CSV_MAGIC: &str = "# bdqcd-results v1";

const COLUMNS: [&str; 10] = [
    "fingerprint",
    "axis",
    "value",
    "metric",
    "mean",
    "ci_halfwidth",
    "censor_fraction",
    "n",
    "theory",
    "ratio",
];

/// SHA-256 of the canonical JSON encoding of `value`.
///
/// serde_json writes struct fields in declaration order and never reorders
/// maps we build ourselves, so equal configurations hash equally.
pub fn fingerprint<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

pub fn metric_name(metric: Metric) -> String {
    match metric {
        Metric::Delay => "delay".into(),
        Metric::FalseAlarm => "false_alarm".into(),
        Metric::FalseIsolation(q) => format!("false_isolation_{q}"),
    }
}

fn number(x: f64, precision: usize) -> String {
    format!("{x:.precision$}")
}

fn optional(x: Option<f64>, precision: usize) -> String {
    x.map_or_else(String::new, |x| number(x, precision))
}

/// Writes the results table. Row order follows the sweep order.
pub fn write_csv<W: Write>(
    out: W,
    fingerprint: &str,
    axis: &str,
    metric: Metric,
    rows: &[SweepRow],
    precision: usize,
) -> csv::Result<()> {
    let mut out = out;
    writeln!(out, "{CSV_MAGIC}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    let metric = metric_name(metric);
    for row in rows {
        let e = &row.estimate;
        w.write_record([
            fingerprint,
            axis,
            &row.value,
            &metric,
            &number(e.mean, precision),
            &number(e.ci_halfwidth, precision),
            &number(e.censor_fraction, precision),
            &e.n.to_string(),
            &optional(row.reference, precision),
            &optional(row.ratio, precision),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot data: one `x,y,ci` line per row. Non-numeric axes use the row index.
pub fn write_plot<W: Write>(out: W, rows: &[SweepRow], precision: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "ci"])?;
    for (i, row) in rows.iter().enumerate() {
        let x = row.value.parse::<f64>().unwrap_or(i as f64);
        w.write_record([
            number(x, precision),
            number(row.estimate.mean, precision),
            number(row.estimate.ci_halfwidth, precision),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bdqcd::{AttackKind, MetricsEstimate};

    fn row(value: &str, reference: Option<f64>) -> SweepRow {
        let estimate = MetricsEstimate {
            mean: 12.5,
            ci_halfwidth: 0.25,
            censor_fraction: 0.0,
            n: 100,
            total: 100,
            lower_estimate: false,
        };
        SweepRow {
            value: value.into(),
            threshold: 4.0,
            d: 1,
            attack: AttackKind::Absent,
            gamma: None,
            estimate,
            undecidable_fraction: 0.0,
            reference,
            ratio: reference.map(|r| 12.5 / r),
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "abc", "h", Metric::Delay, &[row("4", Some(10.0)), row("5", None)], 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_MAGIC);
        assert_eq!(lines[1], COLUMNS.join(","));
        assert_eq!(lines[2], "abc,h,4,delay,12.500,0.250,0.000,100,10.000,1.250");
        assert_eq!(lines[3], "abc,h,5,delay,12.500,0.250,0.000,100,,");
    }

    #[test]
    fn fingerprint_is_stable() {
        let a = fingerprint(&(1, "x", 2.5)).unwrap();
        assert_eq!(a, fingerprint(&(1, "x", 2.5)).unwrap());
        assert_ne!(a, fingerprint(&(1, "x", 2.6)).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn plot_uses_index_for_labels() {
        let mut buf = Vec::new();
        write_plot(&mut buf, &[row("Reverse", None), row("2.5", None)], 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,y,ci\n0.00,12.50,0.25\n2.50,12.50,0.25\n");
    }
}
