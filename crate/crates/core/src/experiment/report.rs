use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::Campaign;
use super::runner::{TrialResult, TrialStatus};
use super::ExperimentError;

/// One fold's final metric for one hyperparameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCell {
    pub fold: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// `None` for a failed trial.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCell {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub mean_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRankCell {
    pub alpha: f64,
    pub rank: usize,
    pub mean_wer: Option<f64>,
    pub mean_time_s: Option<f64>,
}

/// Averaged WER against one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub title: String,
    pub x_label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// Final WER per fold and point of the base campaign.
    pub table1: Vec<FoldCell>,
    /// Final eval loss, same layout.
    pub table2: Vec<FoldCell>,
    /// Mean wall clock over folds per base point.
    pub table3: Vec<TimeCell>,
    /// Mean WER over folds per alpha and rank of the adapter campaign.
    pub table4: Vec<AlphaRankCell>,
    pub fig1: Series,
    pub fig2: Series,
    pub fig3: Series,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Float keys for ordered grouping; the grid only holds positive values,
/// whose bit patterns sort like the numbers.
fn key(x: f64) -> u64 {
    x.to_bits()
}

fn averaged(results: &[&TrialResult], title: &str, x_label: &str, x: impl Fn(&TrialResult) -> f64) -> Series {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in results {
        if let Some(w) = r.eval_wer {
            groups.entry(key(x(r))).or_default().push(w);
        }
    }
    Series {
        title: title.into(),
        x_label: x_label.into(),
        points: groups.into_iter().map(|(k, v)| (f64::from_bits(k), mean(&v).unwrap_or(0.0))).collect(),
    }
}

/// Pivots trial results into table and figure data. Tables 1 to 3 and the
/// figures use base-campaign trials; table 4 uses adapter-campaign trials.
pub fn aggregate(results: &[TrialResult]) -> Result<ReportBundle, ExperimentError> {
    if results.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    let base: Vec<&TrialResult> = results.iter().filter(|r| r.config.campaign == Campaign::Base).collect();
    let lora: Vec<&TrialResult> = results.iter().filter(|r| r.config.campaign == Campaign::Lora).collect();
    let ok = |r: &&&TrialResult| r.status == TrialStatus::Ok;

    let mut table1: Vec<FoldCell> = base
        .iter()
        .map(|r| FoldCell {
            fold: r.config.fold,
            lr: r.config.learning_rate,
            batch: r.config.batch_size,
            epochs: r.config.epochs,
            value: r.eval_wer,
        })
        .collect();
    let cell_order = |a: &FoldCell, b: &FoldCell| {
        (a.fold, key(a.lr), a.batch, a.epochs).cmp(&(b.fold, key(b.lr), b.batch, b.epochs))
    };
    table1.sort_by(cell_order);
    let mut table2: Vec<FoldCell> = base
        .iter()
        .map(|r| FoldCell {
            fold: r.config.fold,
            lr: r.config.learning_rate,
            batch: r.config.batch_size,
            epochs: r.config.epochs,
            value: r.eval_loss,
        })
        .collect();
    table2.sort_by(cell_order);

    let mut times: BTreeMap<(u64, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in base.iter().filter(ok) {
        times
            .entry((key(r.config.learning_rate), r.config.batch_size, r.config.epochs))
            .or_default()
            .push(r.wall_clock_s);
    }
    let table3 = times
        .into_iter()
        .map(|((lr, batch, epochs), t)| TimeCell { lr: f64::from_bits(lr), batch, epochs, mean_time_s: mean(&t).unwrap_or(0.0) })
        .collect();

    let mut ar: BTreeMap<(u64, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &lora {
        let e = ar.entry((key(r.config.lora.alpha), r.config.lora.rank)).or_default();
        if r.status == TrialStatus::Ok {
            e.0.extend(r.eval_wer);
            e.1.push(r.wall_clock_s);
        }
    }
    let table4 = ar
        .into_iter()
        .map(|((alpha, rank), (w, t))| AlphaRankCell { alpha: f64::from_bits(alpha), rank, mean_wer: mean(&w), mean_time_s: mean(&t) })
        .collect();

    let base_ok: Vec<&TrialResult> = base.iter().filter(ok).copied().collect();
    Ok(ReportBundle {
        table1,
        table2,
        table3,
        table4,
        fig1: averaged(&base_ok, "Average WER vs learning rate", "learning rate", |r| r.config.learning_rate),
        fig2: averaged(&base_ok, "Average WER vs epochs", "epochs", |r| r.config.epochs as f64),
        fig3: averaged(&base_ok, "Average WER vs batch size", "batch size", |r| r.config.batch_size as f64),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV bodies keyed by file name; tables without rows are left out.
fn tables(bundle: &ReportBundle) -> Vec<(&'static str, usize, String)> {
    let mut t1 = String::from("fold,lr,batch,epochs,wer\n");
    for c in &bundle.table1 {
        let _ = writeln!(t1, "{},{},{},{},{}", c.fold, c.lr, c.batch, c.epochs, opt(c.value));
    }
    let mut t2 = String::from("fold,lr,batch,epochs,loss\n");
    for c in &bundle.table2 {
        let _ = writeln!(t2, "{},{},{},{},{}", c.fold, c.lr, c.batch, c.epochs, opt(c.value));
    }
    let mut t3 = String::from("lr,batch,epochs,mean_time_s\n");
    for c in &bundle.table3 {
        let _ = writeln!(t3, "{},{},{},{}", c.lr, c.batch, c.epochs, c.mean_time_s);
    }
    let mut t4 = String::from("alpha,rank,mean_wer\n");
    let mut t4t = String::from("alpha,rank,mean_time_s\n");
    for c in &bundle.table4 {
        let _ = writeln!(t4, "{},{},{}", c.alpha, c.rank, opt(c.mean_wer));
        let _ = writeln!(t4t, "{},{},{}", c.alpha, c.rank, opt(c.mean_time_s));
    }
    vec![
        ("table1.csv", bundle.table1.len(), t1),
        ("table2.csv", bundle.table2.len(), t2),
        ("table3.csv", bundle.table3.len(), t3),
        ("table4.csv", bundle.table4.len(), t4),
        ("table4_time.csv", bundle.table4.len(), t4t),
    ]
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-2 {
        format!("{v:e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

/// Line chart with categorical x positions, one per distinct x value.
pub fn render_svg(series: &Series) -> String {
    let (w, h) = (520.0, 340.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let ymax = series.points.iter().map(|p| p.1).fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
    let n = series.points.len();
    let xpos = |i: usize| left + if n == 1 { pw / 2.0 } else { pw * i as f64 / (n - 1) as f64 };
    let ypos = |y: f64| top + ph * (1.0 - y / ymax);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, series.title);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=4 {
        let y = ymax * i as f64 / 4.0;
        let py = ypos(y);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py}" x2="{}" y2="{py}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, fmt_tick(y));
    }
    for (i, (x, _)) in series.points.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, xpos(i), top + ph + 18.0, fmt_tick(*x));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 14.0, series.x_label);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean WER</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let pts: Vec<String> = series.points.iter().enumerate().map(|(i, p)| format!("{},{}", xpos(i), ypos(p.1))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, pts.join(" "));
    for (i, p) in series.points.iter().enumerate() {
        let _ = writeln!(s, r##"<circle cx="{}" cy="{}" r="4" fill="#1f5fa8"><title>{}</title></circle>"##, xpos(i), ypos(p.1), fmt_tick(p.1));
    }
    s.push_str("</svg>\n");
    s
}

/// Files written and the warnings for anything skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes the CSV tables and SVG figures of `bundle` into `out_dir`.
pub fn emit_report(bundle: &ReportBundle, out_dir: &Path) -> Result<ReportFiles, ExperimentError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut files = ReportFiles::default();
    for (name, rows, body) in tables(bundle) {
        if rows == 0 {
            files.warnings.push(format!("{name}: no rows, not written"));
            continue;
        }
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        files.written.push(path);
    }
    for (name, series) in [("fig1.svg", &bundle.fig1), ("fig2.svg", &bundle.fig2), ("fig3.svg", &bundle.fig3)] {
        if series.points.is_empty() {
            files.warnings.push(format!("{name}: empty series, not written"));
            continue;
        }
        let path = out_dir.join(name);
        fs::write(&path, render_svg(series)).map_err(io(&path))?;
        files.written.push(path);
    }
    for w in &files.warnings {
        log::warn!("{w}");
    }
    Ok(files)
}
