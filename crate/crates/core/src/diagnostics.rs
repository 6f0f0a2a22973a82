//! Advantage-policy plane snapshots, per-epoch metric tables, multi-seed
//! aggregation, and their CSV / SVG sinks.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::mean_std;
use crate::objectives::ObjectiveReport;
use crate::trainer::{EpochRecord, IterTrace};

/// Floats in every CSV sink: 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    pub adv: f64,
    pub d: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSnapshot {
    pub epoch: usize,
    pub iter: usize,
    pub points: Vec<PlanePoint>,
    pub u_b: f64,
    pub l_b: f64,
}

/// Pairs each normalized advantage with its log-ratio and clip flag.
pub fn plane_snapshot(
    epoch: usize,
    iter: usize,
    report: &ObjectiveReport,
    adv: &[f64],
    bounds: (f64, f64),
) -> Result<PlaneSnapshot> {
    if adv.len() != report.len() || report.clip_mask.len() != report.len() {
        return Err(Error::Dimension {
            what: "plane snapshot advantages",
            expected: report.len(),
            got: adv.len(),
        });
    }
    let points = adv
        .iter()
        .zip(&report.d)
        .zip(&report.clip_mask)
        .map(|((&adv, &d), &clipped)| PlanePoint { adv, d, clipped })
        .collect();
    Ok(PlaneSnapshot {
        epoch,
        iter,
        points,
        u_b: bounds.0,
        l_b: bounds.1,
    })
}

impl PlaneSnapshot {
    /// Counts in quadrants I..IV (counter-clockwise from `adv > 0, d > 0`).
    /// Points with `adv == 0` or `d == 0` sit on an axis and are not counted.
    pub fn quadrant_counts(&self) -> [usize; 4] {
        let mut q = [0; 4];
        for p in &self.points {
            let i = match (p.adv > 0.0, p.adv < 0.0, p.d > 0.0, p.d < 0.0) {
                (true, _, true, _) => 0,
                (_, true, true, _) => 1,
                (_, true, _, true) => 2,
                (true, _, _, true) => 3,
                _ => continue,
            };
            q[i] += 1;
        }
        q
    }

    pub fn on_axis(&self) -> usize {
        self.points
            .iter()
            .filter(|p| p.adv == 0.0 || p.d == 0.0)
            .count()
    }

    pub fn clip_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.clipped).count() as f64 / self.points.len() as f64
    }

    pub fn file_stem(&self) -> String {
        format!("plane_e{}_i{}", self.epoch, self.iter)
    }
}

pub const METRIC_COLUMNS: [&str; 11] = [
    "epoch",
    "avg_return",
    "std_return",
    "entropy",
    "d_mc",
    "exact_kl",
    "iters_used",
    "clip_fraction",
    "loss",
    "loss_pos",
    "loss_neg",
];

/// One metrics.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub avg_return: f64,
    pub std_return: f64,
    pub entropy: f64,
    pub d_mc: f64,
    pub exact_kl: f64,
    pub iters_used: usize,
    pub clip_fraction: f64,
    pub loss: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
}

impl From<&EpochRecord> for MetricRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            avg_return: r.avg_return,
            std_return: r.std_return,
            entropy: r.entropy,
            d_mc: r.d_mc,
            exact_kl: r.exact_kl,
            iters_used: r.iters_used,
            clip_fraction: r.clip_fraction,
            loss: r.loss,
            loss_pos: r.loss_pos,
            loss_neg: r.loss_neg,
        }
    }
}

impl MetricRow {
    /// Every column after `epoch`, as floats, in [`METRIC_COLUMNS`] order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.avg_return,
            self.std_return,
            self.entropy,
            self.d_mc,
            self.exact_kl,
            self.iters_used as f64,
            self.clip_fraction,
            self.loss,
            self.loss_pos,
            self.loss_neg,
        ]
    }

    fn record(&self) -> Vec<String> {
        let mut rec = vec![self.epoch.to_string()];
        for (i, v) in self.values().iter().enumerate() {
            rec.push(if i == 5 {
                self.iters_used.to_string()
            } else {
                fmt_f64(*v)
            });
        }
        rec
    }
}

/// Per-epoch metrics of one run, epochs strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSeries {
    rows: Vec<MetricRow>,
}

impl MetricSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: &[EpochRecord]) -> Self {
        Self {
            rows: records.iter().map(MetricRow::from).collect(),
        }
    }

    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::Config(format!(
                    "metric epochs must increase: {} after {}",
                    row.epoch, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(epoch, value)` pairs of a named column.
    pub fn column(&self, name: &str) -> Option<Vec<(usize, f64)>> {
        let idx = METRIC_COLUMNS.iter().position(|c| *c == name)?;
        if idx == 0 {
            return Some(self.rows.iter().map(|r| (r.epoch, r.epoch as f64)).collect());
        }
        Some(self.rows.iter().map(|r| (r.epoch, r.values()[idx - 1])).collect())
    }

    /// Mean of `avg_return` over the last `k` epochs.
    pub fn final_mean_return(&self, k: usize) -> Option<f64> {
        if self.rows.is_empty() || k == 0 {
            return None;
        }
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        Some(tail.iter().map(|r| r.avg_return).sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::csv("<metrics>", e);
        w.write_record(METRIC_COLUMNS).map_err(wrap)?;
        for r in &self.rows {
            w.write_record(r.record()).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let wrap = |e: csv::Error| Error::csv("<metrics>", e);
        let header = rdr.headers().map_err(wrap)?.clone();
        if header.iter().ne(METRIC_COLUMNS) {
            return Err(Error::Config(format!("unexpected metrics header {header:?}")));
        }
        let mut series = Self::new();
        for rec in rdr.records() {
            let rec = rec.map_err(wrap)?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|e| Error::Config(format!("metrics column {}: {e}", METRIC_COLUMNS[i])))
            };
            let u = |i: usize| -> Result<usize> {
                rec[i]
                    .parse()
                    .map_err(|e| Error::Config(format!("metrics column {}: {e}", METRIC_COLUMNS[i])))
            };
            series.push(MetricRow {
                epoch: u(0)?,
                avg_return: f(1)?,
                std_return: f(2)?,
                entropy: f(3)?,
                d_mc: f(4)?,
                exact_kl: f(5)?,
                iters_used: u(6)?,
                clip_fraction: f(7)?,
                loss: f(8)?,
                loss_pos: f(9)?,
                loss_neg: f(10)?,
            })?;
        }
        Ok(series)
    }
}

pub fn write_plane_csv<W: Write>(snap: &PlaneSnapshot, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::csv("<plane>", e);
    w.write_record(["adv", "d", "clipped"]).map_err(wrap)?;
    for p in &snap.points {
        w.write_record([fmt_f64(p.adv), fmt_f64(p.d), u8::from(p.clipped).to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<plane>", e))
}

pub fn read_plane_csv<R: Read>(input: R) -> Result<Vec<PlanePoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    let wrap = |e: csv::Error| Error::csv("<plane>", e);
    let bad = |what: String| Error::Config(format!("plane csv: {what}"));
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(wrap)?;
            Ok(PlanePoint {
                adv: rec[0].parse().map_err(|e| bad(format!("{e}")))?,
                d: rec[1].parse().map_err(|e| bad(format!("{e}")))?,
                clipped: match &rec[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(bad(format!("clipped flag '{other}'"))),
                },
            })
        })
        .collect()
}

/// Inner-pass traces of one epoch: the objective split by advantage sign
/// and both KL measures.
pub fn write_trace_csv<W: Write>(traces: &[IterTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::csv("<trace>", e);
    w.write_record(["pass", "loss", "loss_pos", "loss_neg", "d_mc", "exact_kl", "clip_fraction"])
        .map_err(wrap)?;
    for (i, t) in traces.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(
            [t.loss, t.loss_pos, t.loss_neg, t.d_mc, t.exact_kl, t.clip_fraction]
                .iter()
                .map(|v| fmt_f64(*v)),
        );
        w.write_record(rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))
}

/// Runs `write` into a freshly created file, attaching `path` to any error.
pub fn write_file(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let relabel = |e: Error| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    };
    write(&mut w).map_err(relabel)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn emit_metrics_csv(series: &MetricSeries, path: &Path) -> Result<()> {
    write_file(path, |w| series.write_csv(w))
}

pub fn emit_plane_csv(snap: &PlaneSnapshot, path: &Path) -> Result<()> {
    write_file(path, |w| write_plane_csv(snap, w))
}

pub fn read_metrics_file(path: &Path) -> Result<MetricSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    MetricSeries::read_csv(file).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Per-epoch mean and population std of every metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub n: usize,
    pub mean: [f64; 10],
    pub std: [f64; 10],
}

/// Aggregates runs over the epochs every run reached. Runs are sorted by
/// seed first, so the result does not depend on the order they are given in.
pub fn aggregate(runs: &[(u64, MetricSeries)]) -> Vec<AggregateRow> {
    if runs.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<&(u64, MetricSeries)> = runs.iter().collect();
    sorted.sort_by_key(|(seed, _)| *seed);
    let common = sorted.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    (0..common)
        .map(|i| {
            let epoch = sorted[0].1.rows[i].epoch;
            let mut mean = [0.0; 10];
            let mut std = [0.0; 10];
            for k in 0..10 {
                let xs: Vec<f64> = sorted.iter().map(|(_, s)| s.rows[i].values()[k]).collect();
                (mean[k], std[k]) = mean_std(&xs);
            }
            AggregateRow {
                epoch,
                n: sorted.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// `algo,epoch,n,<metric>_mean,<metric>_std,...` for each algorithm in turn.
pub fn write_aggregate_csv<W: Write>(groups: &[(String, Vec<AggregateRow>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::csv("<aggregate>", e);
    let mut header = vec!["algo".to_string(), "epoch".to_string(), "n".to_string()];
    for c in &METRIC_COLUMNS[1..] {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    w.write_record(&header).map_err(wrap)?;
    for (algo, rows) in groups {
        for r in rows {
            let mut rec = vec![algo.clone(), r.epoch.to_string(), r.n.to_string()];
            for k in 0..10 {
                rec.push(fmt_f64(r.mean[k]));
                rec.push(fmt_f64(r.std[k]));
            }
            w.write_record(&rec).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("<aggregate>", e))
}

// ---------------------------------------------------------------------------
// SVG

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if !(lo.is_finite() && hi.is_finite()) {
            (-1.0, 1.0)
        } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            let pad = 0.5 * lo.abs().max(1.0);
            (lo - pad, hi + pad)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        };
        Self {
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

fn axes(s: &mut String, xs: &Scale, ys: &Scale) {
    let _ = writeln!(
        s,
        r##"<rect class="frame" x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for (v, anchor_x, anchor_y) in [
        (xs.lo, xs.px_lo, H - MARGIN + 16.0),
        (xs.hi, xs.px_hi, H - MARGIN + 16.0),
    ] {
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="middle">{}</text>"#,
            tick_label(v)
        );
    }
    for (v, py) in [(ys.lo, ys.px_lo), (ys.hi, ys.px_hi)] {
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            py + 4.0,
            tick_label(v)
        );
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One named curve with an optional ± band.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

impl Curve {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            band: None,
        }
    }
}

/// Line chart of one or more curves. Every data point also gets a marker.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> Result<String> {
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::Config(format!("nothing to plot for '{title}'")));
    }
    let xr = finite_range(curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)));
    let yr = finite_range(curves.iter().flat_map(|c| {
        c.points.iter().enumerate().flat_map(move |(i, p)| {
            let b = c.band.as_ref().map_or(0.0, |b| b[i]);
            [p.1 - b, p.1 + b]
        })
    }));
    let xs = Scale::new(xr.0, xr.1, MARGIN, W - MARGIN);
    let ys = Scale::new(yr.0, yr.1, H - MARGIN, MARGIN);
    let mut s = svg_open(title, x_label, y_label);
    axes(&mut s, &xs, &ys);
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let pts: Vec<(f64, f64)> = c
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .copied()
            .collect();
        if let Some(band) = &c.band {
            let mut poly = String::new();
            let upper = c.points.iter().zip(band).map(|(p, b)| (p.0, p.1 + b));
            let lower = c.points.iter().zip(band).rev().map(|(p, b)| (p.0, p.1 - b));
            for (x, y) in upper.chain(lower).filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = write!(poly, "{:.2},{:.2} ", xs.map(x), ys.map(y));
            }
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.trim_end()
            );
        }
        if pts.len() > 1 {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", xs.map(x), ys.map(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in &pts {
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#,
                xs.map(x),
                ys.map(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            W - MARGIN - 100.0,
            MARGIN + 16.0 + 14.0 * ci as f64,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter of a plane snapshot: x = advantage, y = log-ratio. Positive
/// advantages are green, negative blue, clipped samples hollow. The upper
/// clip bound is drawn over the right half-plane only and the lower bound
/// over the left half-plane only.
pub fn plane_svg(snap: &PlaneSnapshot) -> Result<String> {
    if snap.points.is_empty() {
        return Err(Error::Config("empty plane snapshot".into()));
    }
    let xr = finite_range(snap.points.iter().map(|p| p.adv).chain([0.0]));
    let yr = finite_range(snap.points.iter().map(|p| p.d).chain([snap.u_b, snap.l_b]));
    let xs = Scale::new(xr.0, xr.1, MARGIN, W - MARGIN);
    let ys = Scale::new(yr.0, yr.1, H - MARGIN, MARGIN);
    let title = format!("advantage-policy plane, epoch {} pass {}", snap.epoch, snap.iter);
    let mut s = svg_open(&title, "normalized advantage", "log pi - log pi_old");
    axes(&mut s, &xs, &ys);
    let (x0, y0) = (xs.map(0.0), ys.map(0.0));
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#999"/>"##,
        xs.px_lo, xs.px_hi
    );
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{:.2}" stroke="#999"/>"##,
        ys.px_lo, ys.px_hi
    );
    for p in &snap.points {
        if !(p.adv.is_finite() && p.d.is_finite()) {
            continue;
        }
        let color = if p.adv >= 0.0 { "#2ca02c" } else { "#1f77b4" };
        let fill = if p.clipped { "none" } else { color };
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="1.5" fill="{fill}" stroke="{color}" stroke-width="0.5"/>"#,
            xs.map(p.adv),
            ys.map(p.d)
        );
    }
    let (yu, yl) = (ys.map(snap.u_b), ys.map(snap.l_b));
    let _ = writeln!(
        s,
        r##"<line class="clip-bound" x1="{x0:.2}" y1="{yu:.2}" x2="{:.2}" y2="{yu:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
        xs.px_hi
    );
    let _ = writeln!(
        s,
        r##"<line class="clip-bound" x1="{:.2}" y1="{yl:.2}" x2="{x0:.2}" y2="{yl:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
        xs.px_lo
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(svg: &str, path: &Path) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Return, entropy and KL charts of one run.
pub fn emit_run_plots(series: &MetricSeries, dir: &Path) -> Result<()> {
    if series.is_empty() {
        return Ok(());
    }
    let col = |name: &str| -> Vec<(f64, f64)> {
        series
            .column(name)
            .expect("known column")
            .into_iter()
            .map(|(e, v)| (e as f64, v))
            .collect()
    };
    let charts = [
        ("return", "average return", vec![Curve::new("avg_return", col("avg_return"))]),
        ("entropy", "entropy", vec![Curve::new("entropy", col("entropy"))]),
        (
            "kl",
            "KL",
            vec![Curve::new("d_mc", col("d_mc")), Curve::new("exact_kl", col("exact_kl"))],
        ),
    ];
    for (stem, y, curves) in charts {
        let svg = line_chart_svg(stem, "epoch", y, &curves)?;
        emit_svg(&svg, &dir.join(format!("{stem}.svg")))?;
    }
    Ok(())
}

/// Objective split by advantage sign and both KL measures over the inner
/// passes of one epoch.
pub fn trace_svg(epoch: usize, traces: &[IterTrace]) -> Result<String> {
    let pts = |f: fn(&IterTrace) -> f64| -> Vec<(f64, f64)> {
        traces.iter().enumerate().map(|(i, t)| (i as f64, f(t))).collect()
    };
    line_chart_svg(
        &format!("objective and KL over inner passes, epoch {epoch}"),
        "pass",
        "value",
        &[
            Curve::new("loss", pts(|t| t.loss)),
            Curve::new("loss_neg", pts(|t| t.loss_neg)),
            Curve::new("loss_pos", pts(|t| t.loss_pos)),
            Curve::new("exact_kl", pts(|t| t.exact_kl)),
            Curve::new("d_mc", pts(|t| t.d_mc)),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{evaluate, ObjectiveKind};

    fn row(epoch: usize, x: f64) -> MetricRow {
        MetricRow {
            epoch,
            avg_return: x,
            std_return: 2.0 * x,
            entropy: 1.5 - x,
            d_mc: x / 100.0,
            exact_kl: x / 50.0,
            iters_used: 80 - epoch,
            clip_fraction: 0.25,
            loss: x / 10.0,
            loss_pos: x / 20.0,
            loss_neg: x / 20.0,
        }
    }

    fn series(n: usize, offset: f64) -> MetricSeries {
        let mut s = MetricSeries::new();
        for e in 0..n {
            s.push(row(e, offset + e as f64 * 0.1)).unwrap();
        }
        s
    }

    #[test]
    fn epochs_must_increase() {
        let mut s = MetricSeries::new();
        s.push(row(3, 0.0)).unwrap();
        assert!(s.push(row(3, 0.0)).is_err());
        assert!(s.push(row(2, 0.0)).is_err());
    }

    #[test]
    fn empty_series_is_header_only() {
        let mut buf = Vec::new();
        MetricSeries::new().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", METRIC_COLUMNS.join(",")));
    }

    #[test]
    fn metrics_roundtrip_exactly() {
        let mut s = MetricSeries::new();
        s.push(row(0, 0.1 + 0.2)).unwrap();
        s.push(row(1, -1.0 / 3.0)).unwrap();
        s.push(row(5, 1e-300)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(MetricSeries::read_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn snapshot_at_old_policy_sits_on_axis() {
        let logp = [-1.0, -2.0, -0.5, -3.0];
        let adv = [1.0, -1.0, 0.5, 0.0];
        let rep = evaluate(ObjectiveKind::Ppg { upper: 0.2, lower: -0.2 }, &logp, &logp, &adv)
            .unwrap();
        let snap = plane_snapshot(0, 0, &rep, &adv, (0.2, -0.2)).unwrap();
        assert!(snap.points.iter().all(|p| p.d == 0.0 && !p.clipped));
        assert_eq!(snap.quadrant_counts(), [0; 4]);
        assert_eq!(snap.on_axis(), 4);
        assert_eq!(snap.clip_fraction(), 0.0);
    }

    #[test]
    fn saturated_batch_keeps_true_coordinates() {
        let old = [-1.0; 5];
        let new = [-0.5, -0.1, 0.0, 1.0, 3.0];
        let adv = [0.1, 0.5, 1.0, 2.0, 3.0];
        let rep = evaluate(ObjectiveKind::Ppg { upper: 0.2, lower: -0.2 }, &new, &old, &adv)
            .unwrap();
        let snap = plane_snapshot(2, 7, &rep, &adv, (0.2, -0.2)).unwrap();
        assert!(snap.points.iter().all(|p| p.clipped));
        for (p, n) in snap.points.iter().zip(new) {
            assert_eq!(p.d, n - (-1.0));
        }
        assert_eq!(snap.file_stem(), "plane_e2_i7");
    }

    #[test]
    fn quadrants_partition_off_axis_points() {
        let snap = PlaneSnapshot {
            epoch: 0,
            iter: 1,
            points: [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (2.0, 0.5), (0.0, 1.0), (1.0, 0.0)]
                .iter()
                .map(|&(adv, d)| PlanePoint { adv, d, clipped: false })
                .collect(),
            u_b: 0.2,
            l_b: -0.2,
        };
        let q = snap.quadrant_counts();
        assert_eq!(q, [2, 1, 1, 1]);
        assert_eq!(q.iter().sum::<usize>(), snap.points.len() - snap.on_axis());
    }

    #[test]
    fn snapshot_length_mismatch() {
        let logp = [-1.0, -2.0];
        let rep = evaluate(ObjectiveKind::Vpg, &logp, &logp, &[1.0, 2.0]).unwrap();
        assert!(plane_snapshot(0, 0, &rep, &[1.0], (0.2, -0.2)).is_err());
    }

    #[test]
    fn aggregate_single_run_is_identity() {
        let s = series(4, 1.0);
        let agg = aggregate(&[(10000, s.clone())]);
        assert_eq!(agg.len(), 4);
        for (a, r) in agg.iter().zip(s.rows()) {
            assert_eq!(a.mean, r.values());
            assert_eq!(a.std, [0.0; 10]);
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let runs = vec![
            (10000, series(5, 0.1)),
            (10001, series(5, -3.7)),
            (10002, series(4, 2.9)),
            (10003, series(5, 1.0 / 3.0)),
        ];
        let base = aggregate(&runs);
        assert_eq!(base.len(), 4);
        let mut shuffled = runs.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        assert_eq!(aggregate(&shuffled), base);
    }

    #[test]
    fn chart_with_single_point() {
        let svg = line_chart_svg("t", "x", "y", &[Curve::new("a", vec![(0.0, 1.0)])]).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let markers = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("marker"))
            .count();
        assert_eq!(markers, 1);
        assert!(line_chart_svg("t", "x", "y", &[Curve::new("a", vec![])]).is_err());
    }
}
