//! Experiment results and their Table-2-style rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::corpus::Split;

pub type CellKey = (String, String, Split);

/// Scores per (strategy, pair, split), plus what is needed to describe the run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    /// Row order.
    pub strategies: Vec<String>,
    /// Column order (target-language codes).
    pub pairs: Vec<String>,
    pub scores: BTreeMap<CellKey, f64>,
    pub failed: BTreeMap<CellKey, String>,
    /// Per-pair choice for the test phase, when selecting on dev.
    pub selected: BTreeMap<String, String>,
    /// Canonical plan text.
    pub plan: String,
    pub metadata: Vec<(String, String)>,
    /// Training steps performed by this invocation (0 when fully cached).
    pub training_steps: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "text-table" | "text" => Some(ReportFormat::TextTable),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

const RESULT_HEADER: &str = "mtlab-result 1";

fn split_label(s: Split) -> &'static str {
    match s {
        Split::Train => "Train",
        Split::Dev => "Dev",
        Split::Test => "Test",
    }
}

impl ExperimentResult {
    pub fn score(&self, strategy: &str, pair: &str, split: Split) -> Option<f64> {
        self.scores
            .get(&(strategy.to_string(), pair.to_string(), split))
            .copied()
    }

    /// Mean over the pairs that have a score, and how many pairs that is.
    pub fn average(&self, strategy: &str, split: Split) -> Option<(f64, usize)> {
        let v: Vec<f64> = self.pairs.iter().filter_map(|p| self.score(strategy, p, split)).collect();
        if v.is_empty() {
            None
        } else {
            Some((v.iter().sum::<f64>() / v.len() as f64, v.len()))
        }
    }

    /// Strategies with at least one scored or failed cell in `split`.
    fn rows(&self, split: Split) -> Vec<&str> {
        self.strategies
            .iter()
            .filter(|s| {
                self.pairs.iter().any(|p| {
                    let k = ((*s).clone(), p.clone(), split);
                    self.scores.contains_key(&k) || self.failed.contains_key(&k)
                })
            })
            .map(String::as_str)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{RESULT_HEADER}\n");
        let _ = writeln!(s, "strategies\t{}", self.strategies.join(","));
        let _ = writeln!(s, "pairs\t{}", self.pairs.join(","));
        for ((st, p, sp), v) in &self.scores {
            let _ = writeln!(s, "score\t{sp}\t{st}\t{p}\t{v:?}");
        }
        for ((st, p, sp), m) in &self.failed {
            let _ = writeln!(s, "failed\t{sp}\t{st}\t{p}\t{}", m.replace(['\n', '\t'], " "));
        }
        for (p, st) in &self.selected {
            let _ = writeln!(s, "selected\t{p}\t{st}");
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "meta\t{k}\t{v}");
        }
        for line in self.plan.lines() {
            let _ = writeln!(s, "plan\t{line}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let bad = |n: usize, m: &str| HarnessError::config("result", n, m);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == RESULT_HEADER => {}
            _ => return Err(bad(1, "missing result header")),
        }
        let mut r = ExperimentResult::default();
        let list = |v: &str| -> Vec<String> { v.split(',').filter(|s| !s.is_empty()).map(String::from).collect() };
        for (i, line) in lines {
            let n = i + 1;
            let f: Vec<&str> = line.splitn(5, '\t').collect();
            let split = |s: &str| Split::parse(s).ok_or_else(|| bad(n, "bad split"));
            match f.as_slice() {
                ["strategies", v] => r.strategies = list(v),
                ["pairs", v] => r.pairs = list(v),
                ["score", sp, st, p, v] => {
                    let v: f64 = v.parse().map_err(|_| bad(n, "bad score"))?;
                    r.scores.insert((st.to_string(), p.to_string(), split(sp)?), v);
                }
                ["failed", sp, st, p, m] => {
                    r.failed.insert((st.to_string(), p.to_string(), split(sp)?), m.to_string());
                }
                ["selected", p, st] => {
                    r.selected.insert(p.to_string(), st.to_string());
                }
                ["meta", k, v] => r.metadata.push((k.to_string(), v.to_string())),
                ["plan", l] => {
                    r.plan.push_str(l);
                    r.plan.push('\n');
                }
                ["plan"] => r.plan.push('\n'),
                _ => return Err(bad(n, "unrecognized line")),
            }
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        super::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        ExperimentResult::from_text(&text)
    }
}

/// One rendered section: header cells and rows of (label cells, values).
struct Grid {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn cell(v: Option<f64>, best: bool) -> String {
    match v {
        None => "-".into(),
        Some(v) => format!("{v:.2}{}", if best { "*" } else { "" }),
    }
}

fn column_best(values: &[Option<f64>]) -> Option<f64> {
    values.iter().flatten().copied().fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

fn grid(r: &ExperimentResult) -> Grid {
    let mut header = vec!["Data".to_string(), "Model".to_string()];
    header.extend(r.pairs.iter().cloned());
    header.push("Average".into());
    let mut rows = Vec::new();
    for split in [Split::Dev, Split::Test] {
        let names = r.rows(split);
        // Columns: each pair, then the average.
        let table: Vec<Vec<Option<f64>>> = names
            .iter()
            .map(|s| {
                let mut v: Vec<Option<f64>> = r.pairs.iter().map(|p| r.score(s, p, split)).collect();
                v.push(r.average(s, split).map(|a| a.0));
                v
            })
            .collect();
        let ncols = r.pairs.len() + 1;
        let best: Vec<Option<f64>> = (0..ncols)
            .map(|c| column_best(&table.iter().map(|row| row[c]).collect::<Vec<_>>()))
            .collect();
        for (i, (name, vals)) in names.iter().zip(&table).enumerate() {
            let mut row = vec![
                if i == 0 { split_label(split).to_string() } else { String::new() },
                name.to_string(),
            ];
            for (c, v) in vals.iter().enumerate() {
                row.push(cell(*v, v.is_some() && *v == best[c] && names.len() > 1));
            }
            rows.push(row);
        }
    }
    Grid { header, rows }
}

fn notes(r: &ExperimentResult) -> Vec<String> {
    let mut out = Vec::new();
    for split in [Split::Dev, Split::Test] {
        for s in r.rows(split) {
            if let Some((_, n)) = r.average(s, split) {
                if n < r.pairs.len() {
                    out.push(format!(
                        "average of {} {} covers {n} of {} pairs",
                        split_label(split),
                        s,
                        r.pairs.len()
                    ));
                }
            }
        }
    }
    for ((st, p, sp), m) in &r.failed {
        out.push(format!("failed {} {st} {p}: {m}", split_label(*sp)));
    }
    if !r.selected.is_empty() {
        let sel: Vec<String> = r.selected.iter().map(|(p, s)| format!("{p}={s}")).collect();
        out.push(format!("selected on dev: {}", sel.join(" ")));
    }
    out
}

/// Renders scores at two decimals. `*` marks the best score in each column
/// of a section (when the section has more than one row); `-` marks a
/// missing cell. A configuration appendix follows the table.
pub fn render_report(r: &ExperimentResult, format: ReportFormat) -> String {
    let g = grid(r);
    let mut out = String::new();
    match format {
        ReportFormat::TextTable => {
            let mut widths: Vec<usize> = g.header.iter().map(|h| h.chars().count()).collect();
            for row in &g.rows {
                for (w, c) in widths.iter_mut().zip(row) {
                    *w = (*w).max(c.chars().count());
                }
            }
            for w in widths.iter_mut().skip(2) {
                *w += 1;
            }
            let line = |cells: &[String]| {
                let mut s = String::new();
                for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                    if i > 0 {
                        s.push_str("  ");
                    }
                    if i < 2 {
                        let _ = write!(s, "{c:<w$}");
                    } else {
                        // Right-align numbers, keeping a column for the marker.
                        let (num, mark) = match c.strip_suffix('*') {
                            Some(n) => (n, "*"),
                            None => (c.as_str(), " "),
                        };
                        let _ = write!(s, "{:>w$}{mark}", num, w = w - 1);
                    }
                }
                s.trim_end().to_string()
            };
            let _ = writeln!(out, "chrF2");
            let _ = writeln!(out, "{}", line(&g.header));
            let mut prev_label = String::new();
            for row in &g.rows {
                if !row[0].is_empty() && !prev_label.is_empty() {
                    let _ = writeln!(out);
                }
                if !row[0].is_empty() {
                    prev_label = row[0].clone();
                }
                let _ = writeln!(out, "{}", line(row));
            }
            let _ = writeln!(out, "\n* best in column within its section; - no score");
            for n in notes(r) {
                let _ = writeln!(out, "{n}");
            }
            if !r.plan.is_empty() || !r.metadata.is_empty() {
                let _ = writeln!(out, "\nConfiguration");
                for l in r.plan.lines() {
                    if l.is_empty() {
                        out.push('\n');
                    } else {
                        let _ = writeln!(out, "  {l}");
                    }
                }
                for (k, v) in &r.metadata {
                    let _ = writeln!(out, "  {k}: {v}");
                }
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let _ = w.write_record(&g.header);
            // Every CSV row names its section.
            let mut label = String::new();
            for row in &g.rows {
                let mut row = row.clone();
                if row[0].is_empty() {
                    row[0] = label.clone();
                } else {
                    label = row[0].clone();
                }
                let _ = w.write_record(&row);
            }
            out.push_str(&String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default());
            for n in notes(r) {
                let _ = writeln!(out, "# {n}");
            }
            for l in r.plan.lines() {
                let _ = writeln!(out, "# plan: {l}");
            }
            for (k, v) in &r.metadata {
                let _ = writeln!(out, "# {k}: {v}");
            }
        }
    }
    out
}

/// Reads the score cells back from CSV output (values at two decimals,
/// average column dropped).
pub fn parse_report_csv(text: &str) -> Result<BTreeMap<CellKey, f64>, HarnessError> {
    let bad = |n: u64, m: &str| HarnessError::config("csv", n as usize, m);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(1, &e.to_string()))?.clone();
    let n = header.len();
    if n < 3 || &header[0] != "Data" || &header[1] != "Model" || &header[n - 1] != "Average" {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), &e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let split = Split::parse(&rec[0].to_lowercase()).ok_or_else(|| bad(line, "bad split"))?;
        for i in 2..n - 1 {
            let c = &rec[i];
            if c == "-" {
                continue;
            }
            let v: f64 = c.trim_end_matches('*').parse().map_err(|_| bad(line, "bad score"))?;
            out.insert((rec[1].to_string(), header[i].to_string(), split), v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(rows: &[(&str, Split, &[Option<f64>])], pairs: &[&str]) -> ExperimentResult {
        let mut r = ExperimentResult {
            pairs: pairs.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        for (name, split, vals) in rows {
            if !r.strategies.iter().any(|s| s == name) {
                r.strategies.push(name.to_string());
            }
            for (p, v) in pairs.iter().zip(vals.iter()) {
                if let Some(v) = v {
                    r.scores.insert((name.to_string(), p.to_string(), *split), *v);
                }
            }
        }
        r
    }

    #[test]
    fn single_cell() {
        let r = result(&[("M", Split::Test, &[Some(12.346)])], &["quy"]);
        assert_eq!(r.average("M", Split::Test), Some((12.346, 1)));
        let text = render_report(&r, ReportFormat::TextTable);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["Data", "Model", "quy", "Average"]);
        assert_eq!(lines[2].split_whitespace().collect::<Vec<_>>(), ["Test", "M", "12.35", "12.35"]);
    }

    #[test]
    fn missing_cells_and_flagged_average() {
        let r = result(
            &[("A", Split::Dev, &[Some(10.0), None]), ("B", Split::Dev, &[Some(20.0), Some(30.0)])],
            &["aym", "czn"],
        );
        assert_eq!(r.average("A", Split::Dev), Some((10.0, 1)));
        let text = render_report(&r, ReportFormat::TextTable);
        assert!(text.contains(" -"));
        assert!(text.contains("average of Dev A covers 1 of 2 pairs"));
        let b = text.lines().find(|l| l.contains(" B ")).unwrap();
        assert_eq!(b.split_whitespace().collect::<Vec<_>>(), ["B", "20.00*", "30.00*", "25.00*"]);
    }

    #[test]
    fn csv_round_trip() {
        let r = result(
            &[
                ("A", Split::Dev, &[Some(10.004), Some(55.5555)]),
                ("B", Split::Dev, &[None, Some(1.0)]),
                ("B", Split::Test, &[Some(99.999), Some(0.0)]),
            ],
            &["aym", "czn"],
        );
        let csv = render_report(&r, ReportFormat::Csv);
        let parsed = parse_report_csv(&csv).unwrap();
        let rounded: BTreeMap<CellKey, f64> = r
            .scores
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v:.2}").parse().unwrap()))
            .collect();
        assert_eq!(parsed, rounded);
        assert!(csv.lines().nth(3).unwrap().starts_with("Test,B,"));

        let odd = result(&[("base, tuned", Split::Dev, &[Some(1.0), Some(2.0)])], &["aym", "czn"]);
        let csv = render_report(&odd, ReportFormat::Csv);
        assert!(csv.contains("\"base, tuned\""));
        assert_eq!(parse_report_csv(&csv).unwrap(), odd.scores);
        assert!(parse_report_csv("Data,Model,aym,Average\nDev,A,x,1\n").is_err());
    }

    #[test]
    fn result_text_round_trip() {
        let mut r = result(&[("A", Split::Dev, &[Some(1.0 / 3.0), None])], &["aym", "czn"]);
        r.failed.insert(("A".into(), "czn".into(), Split::Dev), "boom".into());
        r.selected.insert("aym".into(), "A".into());
        r.plan = "seeds = 1\n\n[model]\n".into();
        r.metadata.push(("dropped".into(), "0".into()));
        let back = ExperimentResult::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(ExperimentResult::from_text("nope").is_err());
    }
}
