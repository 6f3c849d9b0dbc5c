use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{EvalCounts, EvalReport};
use super::pipeline::RunDir;
use crate::corpus::Snr;
use crate::error::{Error, Result};
use crate::pruning::SparsityReport;

/// What `report` produced and what it had to leave out.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportOutcome {
    pub written: Vec<PathBuf>,
    /// `(artifact, reason)` for every artifact not produced.
    pub skipped: Vec<(String, String)>,
}

impl ReportOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("artifact,status,detail\n");
        for p in &self.written {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let _ = writeln!(s, "{name},written,");
        }
        for (a, why) in &self.skipped {
            let _ = writeln!(s, "{a},skipped,{}", why.replace(',', ";"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SparsityRow {
    cells: Vec<String>,
    total_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct History {
    t: Vec<usize>,
    series: Vec<(String, Vec<Option<f64>>)>,
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(stem) = name.strip_suffix(suffix) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

fn read_sparsity(path: &Path) -> Result<SparsityRow> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SparsityReport::CSV_HEADER) {
        return Err(Error::Format(format!("{} header mismatch", path.display())));
    }
    let row = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} has no data row", path.display())))?;
    let cells: Vec<String> = row.split(',').map(str::to_string).collect();
    let total_pct = cells
        .last()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::Format(format!("{} total column", path.display())))?;
    Ok(SparsityRow { cells, total_pct })
}

fn read_history(path: &Path) -> Result<History> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
        .split(',')
        .collect();
    if header.first() != Some(&"t") {
        return Err(Error::Format(format!(
            "{} lacks the t column",
            path.display()
        )));
    }
    let far_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("dev_FAR_")
                .and_then(|s| s.strip_suffix("dB"))
                .map(|s| (i, s.to_string()))
        })
        .collect();
    let mut h = History {
        t: Vec::new(),
        series: far_cols
            .iter()
            .map(|(_, s)| (s.clone(), Vec::new()))
            .collect(),
    };
    for line in lines.filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(Error::Format(format!("{} row {line:?}", path.display())));
        }
        h.t.push(
            cols[0].parse().map_err(|_| {
                Error::Format(format!("{} iteration {:?}", path.display(), cols[0]))
            })?,
        );
        for (k, (i, _)) in far_cols.iter().enumerate() {
            h.series[k].1.push(cols[*i].parse().ok());
        }
    }
    Ok(h)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{:.2}", 100.0 * x))
}

fn snr_columns(evals: &BTreeMap<String, EvalReport>) -> Vec<Snr> {
    let mut out: Vec<Snr> = Vec::new();
    for r in evals.values() {
        for (s, _) in &r.strata {
            if !out.contains(s) {
                out.push(*s);
            }
        }
    }
    out
}

fn far_cells(r: &EvalReport, snrs: &[Snr]) -> String {
    snrs.iter()
        .map(|s| pct(r.stratum(*s).and_then(EvalCounts::far)))
        .collect::<Vec<_>>()
        .join(",")
}

fn far_header(snrs: &[Snr]) -> String {
    snrs.iter()
        .map(|s| format!("far_{s}dB_pct"))
        .collect::<Vec<_>>()
        .join(",")
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// FAR-versus-iteration polylines, one per SNR column, as standalone SVG.
pub fn history_svg(title: &str, t: &[usize], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (64.0, 140.0, 40.0, 52.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let t_min = *t.iter().min().unwrap_or(&1) as f64;
    let t_max = (*t.iter().max().unwrap_or(&1) as f64).max(t_min + 1.0);
    let peak = series
        .iter()
        .flat_map(|(_, v)| v.iter().flatten())
        .fold(0.0f64, |m, &v| m.max(100.0 * v));
    let y_max = (peak / 5.0).ceil().max(1.0) * 5.0;
    let x = |ti: f64| left + pw * (ti - t_min) / (t_max - t_min);
    let y = |v: f64| top + ph * (1.0 - v / y_max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        left + pw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    for &ti in t {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{ti}</text>"#,
            x(ti as f64),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">pruning iteration t</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">dev FAR (%)</text>"#,
        top + ph / 2.0
    );
    for (k, (label, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = t
            .iter()
            .zip(values)
            .filter_map(|(&ti, v)| v.map(|v| format!("{:.2},{:.2}", x(ti as f64), y(100.0 * v))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            left + pw + 12.0,
            left + pw + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{label} dB</text>"#,
            left + pw + 38.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Assembles tables and curves from the artifacts in `dir`:
/// `dense_far.csv` (unpruned models), `sparsity_far.csv` (every evaluated model with
/// its pruned share), `layer_sparsity.csv` (per-layer-type pruned shares),
/// `{history}.far_curve.svg` per pruning history, and `report.csv` listing what
/// was written and skipped.
pub fn build_report(out: &RunDir) -> Result<ReportOutcome> {
    let dir = &out.path;
    let mut evals = BTreeMap::new();
    for (stem, p) in files_with_suffix(dir, ".eval.csv")? {
        evals.insert(stem, EvalReport::from_csv(&std::fs::read_to_string(p)?)?);
    }
    let mut sparsity = BTreeMap::new();
    for (stem, p) in files_with_suffix(dir, ".sparsity.csv")? {
        sparsity.insert(stem, read_sparsity(&p)?);
    }
    let mut histories = BTreeMap::new();
    for (stem, p) in files_with_suffix(dir, ".history.csv")? {
        histories.insert(stem, read_history(&p)?);
    }

    let mut files: Vec<(String, String)> = Vec::new();
    let mut skipped: Vec<(String, String)> = Vec::new();
    let snrs = snr_columns(&evals);

    let mut t1 = format!("system,one_minus_frr_pct,{}\n", far_header(&snrs));
    let mut t1_rows = 0;
    let mut t3 = format!(
        "system,pruned_pct,one_minus_frr_pct,far_all_pct,{}\n",
        far_header(&snrs)
    );
    let mut t3_rows = 0;
    for (stem, r) in &evals {
        let one_minus = r.overall.frr().map(|f| 1.0 - f);
        match sparsity.get(stem) {
            Some(sp) => {
                if sp.total_pct == 0.0 {
                    let _ = writeln!(t1, "{stem},{},{}", pct(one_minus), far_cells(r, &snrs));
                    t1_rows += 1;
                }
                let _ = writeln!(
                    t3,
                    "{stem},{:.2},{},{},{}",
                    sp.total_pct,
                    pct(one_minus),
                    pct(r.overall.far()),
                    far_cells(r, &snrs)
                );
                t3_rows += 1;
            }
            None => skipped.push((
                format!("{stem} in dense_far.csv/sparsity_far.csv"),
                format!("{stem}.sparsity.csv missing"),
            )),
        }
    }
    if t1_rows > 0 {
        files.push(("dense_far.csv".into(), t1));
    } else {
        skipped.push(("dense_far.csv".into(), "no evaluated unpruned model".into()));
    }
    if t3_rows > 0 {
        files.push(("sparsity_far.csv".into(), t3));
    } else {
        skipped.push((
            "sparsity_far.csv".into(),
            "no evaluated model with a sparsity table".into(),
        ));
    }

    let mut t4 = format!("{}\n", SparsityReport::CSV_HEADER);
    let pruned: Vec<&SparsityRow> = sparsity.values().filter(|s| s.total_pct > 0.0).collect();
    for row in &pruned {
        let _ = writeln!(t4, "{}", row.cells.join(","));
    }
    if pruned.is_empty() {
        skipped.push(("layer_sparsity.csv".into(), "no pruned model".into()));
    } else {
        files.push(("layer_sparsity.csv".into(), t4));
    }

    if histories.is_empty() {
        skipped.push(("far_curve".into(), "no pruning history".into()));
    }
    for (stem, h) in &histories {
        let name = format!("{stem}.far_curve.svg");
        let has_values = h.series.iter().any(|(_, v)| v.iter().any(Option::is_some));
        if has_values {
            files.push((name, history_svg(stem, &h.t, &h.series)));
        } else {
            skipped.push((name, format!("{stem}.history.csv has no dev FAR values")));
        }
    }

    let mut names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    names.push("report.csv".into());
    out.claim(&names)?;
    let mut outcome = ReportOutcome {
        written: Vec::new(),
        skipped,
    };
    for (name, body) in &files {
        outcome.written.push(out.write(name, body)?);
    }
    out.write("report.csv", outcome.to_csv())?;
    Ok(outcome)
}
