//! `report`: collects the CSV artifacts found in a run directory (and its
//! immediate subdirectories) into one markdown file with SVG bar charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{CliError, ReportArgs};

/// Category labels and named value series.
type Series = (Vec<String>, Vec<(String, Vec<f64>)>);

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}\n", self.headers.join(" | "), "---|".repeat(self.headers.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out
    }
}

/// Grouped vertical bars: one group per category, one bar per series.
pub fn bar_chart_svg(title: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
    let (w, h, left, top, bottom) = (640.0, 320.0, 50.0, 30.0, 60.0);
    let plot_h = h - top - bottom;
    let group_w = (w - left - 20.0) / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    for tick in 0..=4 {
        let v = f64::from(tick) / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            svg,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            w - 20.0,
            left - 4.0,
            y + 4.0
        );
    }
    for (c, cat) in categories.iter().enumerate() {
        let x0 = left + group_w * c as f64 + group_w * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let bh = plot_h * v;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"><title>{v:.4}</title></rect>",
                x0 + bar_w * s as f64,
                top + plot_h - bh,
                bar_w,
                PALETTE[s % PALETTE.len()]
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            left + group_w * (c as f64 + 0.5),
            top + plot_h + 16.0,
            escape(cat)
        );
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let x = left + 120.0 * s as f64;
        let y = h - 18.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            y - 9.0,
            PALETTE[s % PALETTE.len()],
            x + 14.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Run directory and its immediate subdirectories, sorted.
fn search_dirs(run: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = vec![run.to_path_buf()];
    let mut subs: Vec<PathBuf> = fs::read_dir(run)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", run.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    dirs.extend(subs);
    Ok(dirs)
}

fn find(dirs: &[PathBuf], name: &str) -> Vec<PathBuf> {
    dirs.iter().map(|d| d.join(name)).filter(|p| p.is_file()).collect()
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

/// Per-model series of `metric` over the CC levels of a cross-CC table.
fn cc_series(table: &Table, metric: &str) -> Option<Series> {
    let (m, cc, v) = (table.column("model")?, table.column("cc")?, table.column(metric)?);
    let mut categories: Vec<String> = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    for row in table.rows.iter().filter(|r| r[cc] != "mean" && r[cc] != "std") {
        if !categories.contains(&row[cc]) {
            categories.push(row[cc].clone());
        }
        let value = row[v].parse().unwrap_or(0.0);
        match series.iter_mut().find(|(name, _)| *name == row[m]) {
            Some((_, values)) => values.push(value),
            None => series.push((row[m].clone(), vec![value])),
        }
    }
    Some((categories, series))
}

/// Accuracy per dimension, one series per task column value.
fn dimension_series(table: &Table) -> Option<Series> {
    let (t, d, a) = (table.column("task")?, table.column("dimension")?, table.column("accuracy")?);
    let categories: Vec<String> =
        table.rows.iter().map(|r| r[d].clone()).filter(|d| d != "all").fold(Vec::new(), |mut acc, d| {
            if !acc.contains(&d) {
                acc.push(d);
            }
            acc
        });
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    for row in table.rows.iter().filter(|r| r[d] != "all") {
        let value = row[a].parse().unwrap_or(0.0);
        match series.iter_mut().find(|(name, _)| *name == row[t]) {
            Some((_, values)) => values.push(value),
            None => series.push((row[t].clone(), vec![value])),
        }
    }
    Some((categories, series))
}

pub fn run(a: ReportArgs) -> Result<(), CliError> {
    if !a.run.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", a.run.display())));
    }
    let dirs = search_dirs(&a.run)?;
    let output = a.output.unwrap_or_else(|| a.run.join("report.md"));
    let out_dir = output.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut md = format!("# Run report: {}\n", a.run.display());
    let mut charts: Vec<(PathBuf, String)> = Vec::new();
    let mut sections = 0;

    for path in find(&dirs, "stats.csv") {
        sections += 1;
        let _ = write!(md, "\n## Task statistics ({})\n\n{}", relative(&path, &a.run), Table::read(&path)?.markdown());
    }
    for path in find(&dirs, "cross_cc.csv") {
        sections += 1;
        let table = Table::read(&path)?;
        let _ = write!(md, "\n## Cross-CC evaluation ({})\n\n{}", relative(&path, &a.run), table.markdown());
        for (metric, title) in [("cav_accuracy", "CAV accuracy"), ("av_auc", "AV AUC")] {
            if let Some((cats, series)) = cc_series(&table, metric) {
                let name = format!("cross_cc_{metric}.svg");
                charts.push((out_dir.join(&name), bar_chart_svg(&format!("{title} per CC test set"), &cats, &series)));
                let _ = write!(md, "\n![{title}]({name})\n");
            }
        }
    }
    for (file, title) in [("stel.csv", "STEL"), ("or_content.csv", "STEL-Or-Content")] {
        for path in find(&dirs, file) {
            sections += 1;
            let table = Table::read(&path)?;
            let _ = write!(md, "\n## {title} ({})\n\n{}", relative(&path, &a.run), table.markdown());
            if let Some((cats, series)) = dimension_series(&table) {
                let name = format!("{}.svg", file.trim_end_matches(".csv"));
                charts.push((
                    out_dir.join(&name),
                    bar_chart_svg(&format!("{title} accuracy per dimension"), &cats, &series),
                ));
                let _ = write!(md, "\n![{title}]({name})\n");
            }
        }
    }
    for path in find(&dirs, "metrics.csv") {
        sections += 1;
        let _ = write!(md, "\n## Training ({})\n\n{}", relative(&path, &a.run), Table::read(&path)?.markdown());
    }
    for (file, title) in [("sweep.csv", "Silhouette sweep"), ("cohesion.csv", "Cluster cohesion")] {
        for path in find(&dirs, file) {
            sections += 1;
            let _ = write!(md, "\n## {title} ({})\n\n{}", relative(&path, &a.run), Table::read(&path)?.markdown());
        }
    }
    for path in find(&dirs, "clusters.md") {
        sections += 1;
        let _ = write!(md, "\n## Clusters ({})\n\n{}", relative(&path, &a.run), fs::read_to_string(&path)?);
    }
    if sections == 0 {
        return Err(CliError::Data(format!("no artifacts found under {}", a.run.display())));
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&output, md)?;
    for (path, svg) in charts {
        fs::write(path, svg)?;
    }
    eprintln!("wrote {}", output.display());
    Ok(())
}
