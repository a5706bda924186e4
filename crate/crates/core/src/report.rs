//! Experiment reports: a summary table plus line plots (CSV and SVG) of the
//! training log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LOG_HEADER;

/// One parsed training-log row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub phase: String,
    pub lr: f64,
    pub lambda: f64,
    pub w: f64,
    pub l_f: f64,
    pub l_c: f64,
    pub l_con: f64,
    pub l_inter: f64,
    pub total: f64,
    pub gates_fired: usize,
}

pub fn parse_log(text: &str, path: &Path) -> Result<Vec<LogRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == LOG_HEADER => {}
        _ => return Err(err(1, format!("expected header `{LOG_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(err(n, format!("expected 11 fields, found {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| err(n, format!("bad number `{}`", f[k])))
        };
        let int = |k: usize| -> Result<usize> {
            f[k].parse()
                .map_err(|_| err(n, format!("bad integer `{}`", f[k])))
        };
        out.push(LogRecord {
            iteration: int(0)?,
            phase: f[1].to_string(),
            lr: num(2)?,
            lambda: num(3)?,
            w: num(4)?,
            l_f: num(5)?,
            l_c: num(6)?,
            l_con: num(7)?,
            l_inter: num(8)?,
            total: num(9)?,
            gates_fired: int(10)?,
        });
    }
    Ok(out)
}

/// A named line of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn from_log(name: &str, log: &[LogRecord], f: impl Fn(&LogRecord) -> f64) -> Self {
        Series {
            name: name.to_string(),
            points: log.iter().map(|r| (r.iteration as f64, f(r))).collect(),
        }
    }
}

/// Long-format plot data: `x,series,y`.
pub fn plot_csv(x_label: &str, series: &[Series]) -> String {
    let mut s = format!("{x_label},series,value\n");
    for ser in series {
        for (x, y) in &ser.points {
            writeln!(s, "{x},{},{y}", ser.name).expect("write to string");
        }
    }
    s
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, x1, y0, y1)| {
        let (x0, x1) = if x1 > x0 {
            (x0, x1)
        } else {
            (x0 - 0.5, x0 + 0.5)
        };
        let pad = if y1 > y0 {
            0.05 * (y1 - y0)
        } else {
            y0.abs().max(1.0) * 0.1
        };
        (x0, x1, y0 - pad, y1 + pad)
    })
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// A self-contained SVG line chart.
pub fn plot_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (80.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .expect("write to string");
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("write to string");
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
        left + pw / 2.0
    )
    .expect("write to string");
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .expect("write to string");
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        left + pw / 2.0,
        h - 10.0
    )
    .expect("write to string");
    if let Some((x0, x1, y0, y1)) = bounds(series) {
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
        for k in 0..=4 {
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            writeln!(
                s,
                r##"<line x1="{left}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#ddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{4}</text>"##,
                sy(fy),
                left + pw,
                left - 6.0,
                sy(fy) + 4.0,
                fmt_tick(fy)
            )
            .expect("write to string");
            writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                sx(fx),
                top + ph + 16.0,
                fmt_tick(fx)
            )
            .expect("write to string");
        }
        for (i, ser) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = ser
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )
            .expect("write to string");
            let ly = top + 10.0 + 18.0 * i as f64;
            writeln!(
                s,
                r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
                left + pw + 10.0,
                left + pw + 30.0,
                left + pw + 36.0,
                ly + 4.0,
                ser.name
            )
            .expect("write to string");
        }
    }
    s.push_str("</svg>\n");
    s
}

/// First and last value of a column over the rows of one phase.
pub fn phase_endpoints(
    log: &[LogRecord],
    phase: &str,
    f: impl Fn(&LogRecord) -> f64,
) -> Option<(f64, f64)> {
    let mut rows = log.iter().filter(|r| r.phase == phase);
    let first = rows.next()?;
    let last = rows.last().unwrap_or(first);
    Some((f(first), f(last)))
}

/// Summary table of the log and, when given, an event-based scores CSV.
pub fn summary_table(log: &[LogRecord], scores_csv: Option<&str>) -> String {
    let mut s = String::new();
    let count = |p: &str| log.iter().filter(|r| r.phase == p).count();
    writeln!(
        s,
        "iterations {} (warmup {}, tuning {})",
        log.len(),
        count("warmup"),
        count("tuning")
    )
    .expect("write to string");
    writeln!(
        s,
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "column", "first", "last", "min", "max"
    )
    .expect("write to string");
    let cols: [(&str, fn(&LogRecord) -> f64); 9] = [
        ("lr", |r| r.lr),
        ("lambda", |r| r.lambda),
        ("w", |r| r.w),
        ("l_f", |r| r.l_f),
        ("l_c", |r| r.l_c),
        ("l_con", |r| r.l_con),
        ("l_inter", |r| r.l_inter),
        ("total", |r| r.total),
        ("gates", |r| r.gates_fired as f64),
    ];
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        for (name, f) in cols {
            let min = log.iter().map(f).fold(f64::INFINITY, f64::min);
            let max = log.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            writeln!(
                s,
                "{name:<10} {:>12} {:>12} {:>12} {:>12}",
                fmt_tick(f(first)),
                fmt_tick(f(last)),
                fmt_tick(min),
                fmt_tick(max)
            )
            .expect("write to string");
        }
    }
    if let Some((a, b)) = phase_endpoints(log, "tuning", |r| r.lambda) {
        writeln!(s, "tuning lambda {a} -> {b}").expect("write to string");
    }
    if let Some(csv) = scores_csv {
        s.push_str("\nscores\n");
        s.push_str(csv);
    }
    s
}

/// Files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Reads `log_path` (and `scores_path`), writes `summary.txt` and
/// `{loss,lr,lambda,w}.{csv,svg}` to `out_dir`.
pub fn write_report(
    log_path: &Path,
    scores_path: Option<&Path>,
    out_dir: &Path,
) -> Result<ReportFiles> {
    let log = parse_log(&fs::read_to_string(log_path)?, log_path)?;
    let scores = scores_path.map(fs::read_to_string).transpose()?;
    fs::create_dir_all(out_dir)?;
    let summary = out_dir.join("summary.txt");
    fs::write(&summary, summary_table(&log, scores.as_deref()))?;

    let plots: [(&str, &str, Vec<Series>); 4] = [
        (
            "loss",
            "Training losses",
            vec![
                Series::from_log("total", &log, |r| r.total),
                Series::from_log("l_f", &log, |r| r.l_f),
                Series::from_log("l_c", &log, |r| r.l_c),
                Series::from_log("l_con", &log, |r| r.l_con),
                Series::from_log("l_inter", &log, |r| r.l_inter),
            ],
        ),
        (
            "lr",
            "Learning rate",
            vec![Series::from_log("lr", &log, |r| r.lr)],
        ),
        (
            "lambda",
            "Confidence threshold",
            vec![Series::from_log("lambda", &log, |r| r.lambda)],
        ),
        (
            "w",
            "Ramp weight",
            vec![Series::from_log("w", &log, |r| r.w)],
        ),
    ];
    let mut files = Vec::new();
    for (name, title, series) in &plots {
        let csv = out_dir.join(format!("{name}.csv"));
        let svg = out_dir.join(format!("{name}.svg"));
        fs::write(&csv, plot_csv("iteration", series))?;
        fs::write(&svg, plot_svg(title, "iteration", series))?;
        files.push(csv);
        files.push(svg);
    }
    Ok(ReportFiles {
        summary,
        plots: files,
    })
}
