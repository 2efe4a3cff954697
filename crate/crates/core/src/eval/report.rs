use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricKind, MetricScore};
use crate::error::{Error, Result};
use crate::lang::{Attribute, LanguageCode};

/// Distance of a percentage metric from the balanced value 50.
pub fn bias_score(value: f64) -> f64 {
    (50.0 - value).abs()
}

pub fn bias_score_of(metric: &MetricScore) -> f64 {
    bias_score(metric.value)
}

/// Rounds to two decimals, halves away from zero. The small slack absorbs
/// binary representation error so 4.705 rounds to 4.71.
pub fn round_half_up(x: f64) -> f64 {
    let r = ((x.abs() * 100.0) + 0.5 + 1e-7).floor() / 100.0;
    if x < 0.0 {
        -r
    } else {
        r
    }
}

/// One raw metric value for a (method, attribute, language) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub method: String,
    pub attribute: Attribute,
    pub language: LanguageCode,
    pub metric: MetricKind,
    pub value: f64,
    pub n_pairs: usize,
}

impl ScoreEntry {
    pub fn new(method: impl Into<String>, attribute: Attribute, language: LanguageCode, score: &MetricScore) -> Self {
        ScoreEntry {
            method: method.into(),
            attribute,
            language,
            metric: score.kind,
            value: score.value,
            n_pairs: score.n_pairs,
        }
    }

    pub fn bias_score(&self) -> f64 {
        bias_score(self.value)
    }
}

pub fn format_scores_csv(entries: &[ScoreEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_scores_csv(content: &str) -> Result<Vec<ScoreEntry>> {
    let mut r = csv::Reader::from_reader(content.as_bytes());
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<ScoreEntry>().enumerate() {
        let e = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
            message: e.to_string(),
        })?;
        if !(e.value.is_finite() && (0.0..=100.0).contains(&e.value)) {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("metric value {} outside [0, 100]", e.value),
            });
        }
        out.push(e);
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    /// Bias scores in column order.
    pub cells: Vec<f64>,
    /// Mean of the unrounded cells.
    pub avg: f64,
    /// Best-in-column flags for each cell, then for Avg.
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub metric: MetricKind,
    pub attribute: Attribute,
    pub columns: Vec<LanguageCode>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn figure_name(&self) -> String {
        format!("fig_{}_{}.csv", self.metric, self.attribute)
    }

    pub fn to_text(&self) -> String {
        let method_w = self
            .rows
            .iter()
            .map(|r| r.method.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!(
            "{} {} bias score (|50 - metric|, * = best)\n",
            self.metric.title(),
            self.attribute
        );
        let _ = write!(s, "{:<method_w$}", "Method");
        for c in &self.columns {
            let _ = write!(s, " {:>7}", c.code());
        }
        let _ = writeln!(s, " {:>7}", "Avg.");
        for r in &self.rows {
            let _ = write!(s, "{:<method_w$}", r.method);
            for (v, b) in r.cells.iter().chain([&r.avg]).zip(&r.best) {
                let cell = format!("{}{:.2}", if *b { "*" } else { "" }, round_half_up(*v));
                let _ = write!(s, " {cell:>7}");
            }
            s.push('\n');
        }
        s
    }

    /// One row per (method, language) for bar charts.
    pub fn figure_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "language", "bias_score"]).map_err(csv_err)?;
        for r in &self.rows {
            for (c, v) in self.columns.iter().zip(&r.cells) {
                w.write_record([r.method.as_str(), c.code(), &format!("{:.2}", round_half_up(*v))])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub tables: Vec<ReportTable>,
    pub entries: Vec<ScoreEntry>,
}

impl BiasReport {
    pub fn table(&self, metric: MetricKind, attribute: Attribute) -> Option<&ReportTable> {
        self.tables
            .iter()
            .find(|t| t.metric == metric && t.attribute == attribute)
    }

    pub fn to_text(&self) -> String {
        self.tables.iter().map(|t| t.to_text()).collect::<Vec<_>>().join("\n")
    }

    /// Long form: metric,attribute,method,column,bias_score,best.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "attribute", "method", "column", "bias_score", "best"])
            .map_err(csv_err)?;
        for t in &self.tables {
            let labels: Vec<&str> = t.columns.iter().map(|c| c.code()).chain(["Avg"]).collect();
            for r in &t.rows {
                for ((label, v), b) in labels.iter().zip(r.cells.iter().chain([&r.avg])).zip(&r.best) {
                    w.write_record([
                        t.metric.name(),
                        t.attribute.name(),
                        &r.method,
                        label,
                        &format!("{:.2}", round_half_up(*v)),
                        if *b { "1" } else { "0" },
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes report.txt, report.csv, scores.csv and one figure CSV per
    /// table into `dir`. Returns the written paths.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            ("report.txt".to_string(), self.to_text()),
            ("report.csv".to_string(), self.to_csv()?),
            ("scores.csv".to_string(), format_scores_csv(&self.entries)?),
        ];
        for t in &self.tables {
            files.push((t.figure_name(), t.figure_csv()?));
        }
        let mut written = Vec::new();
        for (name, content) in files {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Groups entries into one table per (metric, attribute). Columns are the
/// languages present in that group in table order; rows keep the order in
/// which methods first appear. Every row must cover every column.
pub fn make_report(entries: &[ScoreEntry]) -> Result<BiasReport> {
    if entries.is_empty() {
        return Err(Error::Empty("score entries"));
    }
    let mut groups: BTreeMap<(MetricKind, Attribute), Vec<&ScoreEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry((e.metric, e.attribute)).or_default().push(e);
    }
    let mut tables = Vec::new();
    for ((metric, attribute), group) in groups {
        let mut columns: Vec<LanguageCode> = group
            .iter()
            .map(|e| e.language)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        columns.sort_by_key(|l| l.table_rank());
        let mut methods: Vec<&str> = Vec::new();
        let mut cells: BTreeMap<(&str, LanguageCode), f64> = BTreeMap::new();
        for e in &group {
            if !methods.contains(&e.method.as_str()) {
                methods.push(&e.method);
            }
            if cells.insert((&e.method, e.language), e.bias_score()).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate score for {} / {metric} / {attribute} / {}",
                    e.method, e.language
                )));
            }
        }
        let mut rows = Vec::new();
        for m in methods {
            let row_cells = columns
                .iter()
                .map(|&c| {
                    cells
                        .get(&(m, c))
                        .copied()
                        .ok_or_else(|| Error::MissingCell(format!("{m} / {metric} / {attribute} / {c}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let avg = row_cells.iter().sum::<f64>() / row_cells.len() as f64;
            rows.push(ReportRow {
                method: m.to_string(),
                cells: row_cells,
                avg,
                best: Vec::new(),
            });
        }
        let n_cols = columns.len() + 1;
        let value = |r: &ReportRow, j: usize| round_half_up(if j < columns.len() { r.cells[j] } else { r.avg });
        let minima: Vec<f64> = (0..n_cols)
            .map(|j| rows.iter().map(|r| value(r, j)).fold(f64::INFINITY, f64::min))
            .collect();
        for r in &mut rows {
            r.best = (0..n_cols).map(|j| value(r, j) == minima[j]).collect();
        }
        tables.push(ReportTable {
            metric,
            attribute,
            columns,
            rows,
        });
    }
    Ok(BiasReport {
        tables,
        entries: entries.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLS: [LanguageCode; 4] = [LanguageCode::De, LanguageCode::Zh, LanguageCode::Es, LanguageCode::Ja];

    fn row(method: &str, cells: [f64; 4]) -> Vec<ScoreEntry> {
        COLS.iter()
            .zip(cells)
            .enumerate()
            .map(|(i, (&l, b))| ScoreEntry {
                method: method.into(),
                attribute: Attribute::Gender,
                language: l,
                metric: MetricKind::Crows,
                // Alternate which side of 50 the metric lies on.
                value: if i % 2 == 0 { 50.0 + b } else { 50.0 - b },
                n_pairs: 10,
            })
            .collect()
    }

    #[test]
    fn bias_score_examples() {
        assert_eq!(bias_score(50.0), 0.0);
        assert!((bias_score(58.48) - 8.48).abs() < 1e-12);
        assert!((bias_score(41.52) - 8.48).abs() < 1e-12);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(4.705), 4.71);
        assert_eq!(round_half_up(2.245), 2.25);
        assert_eq!(round_half_up(6.96), 6.96);
        assert_eq!(round_half_up(0.0), 0.0);
        assert_eq!(round_half_up(-1.005), -1.01);
    }

    #[test]
    fn averages_and_best_flags() {
        let mut e = row("Baseline", [8.48, 2.50, 4.26, 3.58]);
        e.extend(row("MCDA", [0.0, 0.0, 0.0, 0.0]));
        e.extend(row("MSD", [7.35, 8.33, 8.60, 3.56]));
        let rep = make_report(&e).unwrap();
        let t = rep.table(MetricKind::Crows, Attribute::Gender).unwrap();
        assert_eq!(t.columns, COLS.to_vec());
        let avgs: Vec<f64> = t.rows.iter().map(|r| round_half_up(r.avg)).collect();
        assert_eq!(avgs, vec![4.71, 0.0, 6.96]);
        assert!(t.row("MCDA").unwrap().best.iter().all(|&b| b));
        assert!(t.row("Baseline").unwrap().best.iter().all(|&b| !b));
        let text = rep.to_text();
        assert!(text.contains("Method"), "{text}");
        assert!(text.lines().nth(2).unwrap().trim_end().ends_with("4.71"));
        assert!(text.contains("*0.00"));
    }

    #[test]
    fn missing_and_duplicate_cells() {
        let mut e = row("Baseline", [1.0, 2.0, 3.0, 4.0]);
        let mut partial = row("SD", [1.0, 2.0, 3.0, 4.0]);
        partial.pop();
        e.extend(partial);
        assert!(matches!(make_report(&e), Err(Error::MissingCell(_))));
        let mut d = row("Baseline", [1.0, 2.0, 3.0, 4.0]);
        d.push(d[0].clone());
        assert!(matches!(make_report(&d), Err(Error::Invalid(_))));
        assert!(make_report(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_outputs() {
        let e = row("MD w/ Adapter", [1.234, 2.0, 3.0, 4.0]);
        let text = format_scores_csv(&e).unwrap();
        assert!(text.starts_with("method,attribute,language,metric,value,n_pairs\n"));
        assert_eq!(parse_scores_csv(&text).unwrap(), e);
        assert!(parse_scores_csv("method,attribute,language,metric,value,n_pairs\nx,gender,XX,crows,1,1\n").is_err());
        assert!(parse_scores_csv("method,attribute,language,metric,value,n_pairs\nx,gender,DE,crows,120,1\n").is_err());

        let rep = make_report(&e).unwrap();
        let fig = rep.tables[0].figure_csv().unwrap();
        assert_eq!(fig.lines().count(), 5);
        assert_eq!(fig.lines().nth(1).unwrap(), "MD w/ Adapter,DE,1.23");
        let long = rep.to_csv().unwrap();
        assert_eq!(long.lines().count(), 6);
        assert!(long.contains("crows,gender,MD w/ Adapter,Avg,2.56,1"));

        let dir = tempfile::tempdir().unwrap();
        let files = rep.write_dir(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        assert!(dir.path().join("fig_crows_gender.csv").exists());
    }
}
