use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::edit::RecordMetrics;

/// Mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci: f64,
}

/// `mean ± 1.96 · s / √n` with the sample standard deviation `s`.
pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    if values.len() < 2 {
        return Err(Error::TooShort(format!(
            "a confidence interval needs >= 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanCi {
        mean,
        ci: 1.96 * (var / n).sqrt(),
    })
}

/// Per-metric means and confidence half-widths over records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_records: usize,
    pub es: MeanCi,
    pub em: MeanCi,
    pub ps: MeanCi,
    pub pm: MeanCi,
    pub ns: MeanCi,
    pub nm: MeanCi,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<MeanCi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<MeanCi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essence: Option<MeanCi>,
}

fn optional(records: &[RecordMetrics], f: impl Fn(&RecordMetrics) -> Option<f64>) -> Result<Option<MeanCi>> {
    let values: Option<Vec<f64>> = records.iter().map(f).collect();
    values.map(|v| mean_ci(&v)).transpose()
}

/// Aggregates per-record metrics. Optional metrics are reported only when
/// every record has them.
pub fn aggregate(records: &[RecordMetrics]) -> Result<MetricReport> {
    let col = |f: fn(&RecordMetrics) -> f64| mean_ci(&records.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        n_records: records.len(),
        es: col(|r| r.es)?,
        em: col(|r| r.em)?,
        ps: col(|r| r.ps)?,
        pm: col(|r| r.pm)?,
        ns: col(|r| r.ns)?,
        nm: col(|r| r.nm)?,
        ge: optional(records, |r| r.ge)?,
        rs: optional(records, |r| r.rs)?,
        essence: optional(records, |r| r.essence)?,
    })
}

/// Column-aligned table, one row per labelled report, cells as
/// `mean (half-width)`.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let header = ["Editor", "ES", "PS", "NS", "EM", "PM", "NM", "GE", "RS", "Essence"];
    let cell = |m: Option<MeanCi>| m.map_or("-".to_string(), |m| format!("{:.3} ({:.3})", m.mean, m.ci));
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for (label, r) in rows {
        let mut line = vec![label.clone()];
        line.extend([r.es, r.ps, r.ns, r.em, r.pm, r.nm].map(|m| cell(Some(m))));
        line.extend([r.ge, r.rs, r.essence].map(cell));
        table.push(line);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values_closed_form() {
        let m = mean_ci(&[0.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.5);
        assert!((m.ci - 1.96 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_values_have_zero_width() {
        assert_eq!(mean_ci(&[0.3; 5]).unwrap().ci, 0.0);
    }

    #[test]
    fn single_value_is_an_error() {
        assert!(mean_ci(&[1.0]).is_err());
    }
}
