//! CSV, JSON and SVG outputs. Everything here is byte-deterministic for a
//! given input: fixed number formatting, no timestamps, stable ordering.

use std::fmt::Write as _;
use std::io::Write;

use super::rank::{RankDiagram, ScoreTable};
use crate::data::format_f64;
use crate::error::Result;

pub fn write_score_table<W: Write>(table: &ScoreTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string()];
    header.extend(table.methods.iter().cloned());
    out.write_record(&header)?;
    for (name, row) in table.rows.iter().zip(&table.values) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.map(format_f64).unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn rank_json(diagram: &RankDiagram) -> Result<String> {
    Ok(serde_json::to_string_pretty(diagram)?)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-method mean and median over present cells, as CSV.
pub fn write_aggregates<W: Write>(table: &ScoreTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "n", "mean", "median"])?;
    for (j, m) in table.methods.iter().enumerate() {
        let col: Vec<f64> = table.column(j).into_iter().flatten().collect();
        let (mu, med) = if col.is_empty() {
            (String::new(), String::new())
        } else {
            (format_f64(mean(&col)), format_f64(median(&col)))
        };
        out.write_record([m.clone(), col.len().to_string(), mu, med])?;
    }
    out.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    body: String,
    y_lo: f64,
    y_hi: f64,
}

impl Canvas {
    fn new(title: &str, y_lo: f64, y_hi: f64) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = write!(body, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
        let mut c = Self { body, y_lo, y_hi };
        c.axes();
        c
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_hi - self.y_lo).max(1e-12);
        H - PAD - (v - self.y_lo) / span * (H - 2.0 * PAD)
    }

    fn axes(&mut self) {
        let _ = write!(
            self.body,
            r##"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="#000"/><line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="#000"/>"##,
            H - PAD,
            H - PAD,
            W - PAD,
            H - PAD
        );
        for i in 0..=4 {
            let v = self.y_lo + (self.y_hi - self.y_lo) * i as f64 / 4.0;
            let y = self.y(v);
            let _ = write!(
                self.body,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{:.1}</text>"#,
                PAD - 4.0,
                y + 4.0,
                v
            );
        }
    }

    fn x_label(&mut self, x: f64, text: &str) {
        let _ = write!(
            self.body,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="end" transform="rotate(-35 {x:.2} {:.2})">{}</text>"#,
            H - PAD + 14.0,
            H - PAD + 14.0,
            esc(text)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn slot(i: usize, n: usize) -> f64 {
    PAD + (i as f64 + 0.5) * (W - 2.0 * PAD) / n as f64
}

/// One box per group: quartiles, median line and whiskers at the extremes.
pub fn box_plot_svg(title: &str, groups: &[(String, Vec<f64>)]) -> String {
    let all: Vec<f64> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let (lo, hi) = bounds(&all);
    let mut c = Canvas::new(title, lo, hi);
    let n = groups.len().max(1);
    let half = 0.3 * (W - 2.0 * PAD) / n as f64;
    for (i, (name, vals)) in groups.iter().enumerate() {
        let x = slot(i, n);
        c.x_label(x, name);
        if vals.is_empty() {
            continue;
        }
        let mut s = vals.clone();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| crate::synthesis::anomalies::quantile(&s, p);
        let (q1, q2, q3) = (c.y(q(0.25)), c.y(q(0.5)), c.y(q(0.75)));
        let (ymin, ymax) = (c.y(s[0]), c.y(s[s.len() - 1]));
        let _ = write!(
            c.body,
            r##"<line x1="{x:.2}" y1="{ymin:.2}" x2="{x:.2}" y2="{ymax:.2}" stroke="#333"/><rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="#333"/><line x1="{:.2}" y1="{q2:.2}" x2="{:.2}" y2="{q2:.2}" stroke="#000" stroke-width="2"/>"##,
            x - half,
            2.0 * half,
            (q1 - q3).max(0.0),
            PALETTE[i % PALETTE.len()],
            x - half,
            x + half
        );
    }
    c.finish()
}

/// Lines over a shared x grid, one per series.
pub fn line_plot_svg(title: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (lo, hi) = bounds(&all);
    let mut c = Canvas::new(title, lo, hi);
    let (xlo, xhi) = bounds(x);
    let px = |v: f64| PAD + (v - xlo) / (xhi - xlo).max(1e-12) * (W - 2.0 * PAD);
    for v in x {
        c.x_label(px(*v), &format_f64(*v));
    }
    for (i, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = x.iter().zip(ys).map(|(a, b)| format!("{:.2},{:.2}", px(*a), c.y(*b))).collect();
        let _ = write!(
            c.body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}" fill="{colour}">{}</text>"#,
            pts.join(" "),
            W - PAD + 4.0,
            PAD + 14.0 * i as f64,
            esc(name)
        );
    }
    c.finish()
}

/// Grouped bars: one cluster per category, one bar per series.
pub fn bar_chart_svg(title: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).chain([0.0]).collect();
    let (lo, hi) = bounds(&all);
    let mut c = Canvas::new(title, lo, hi);
    let n = categories.len().max(1);
    let width = 0.8 * (W - 2.0 * PAD) / n as f64 / series.len().max(1) as f64;
    for (i, cat) in categories.iter().enumerate() {
        let centre = slot(i, n);
        c.x_label(centre, cat);
        let start = centre - width * series.len() as f64 / 2.0;
        for (s, (_, vals)) in series.iter().enumerate() {
            let Some(&v) = vals.get(i) else { continue };
            let (top, base) = (c.y(v.max(0.0)), c.y(v.min(0.0)));
            let _ = write!(
                c.body,
                r#"<rect x="{:.2}" y="{top:.2}" width="{width:.2}" height="{:.2}" fill="{}"/>"#,
                start + width * s as f64,
                base - top,
                PALETTE[s % PALETTE.len()]
            );
        }
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let _ = write!(
            c.body,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - PAD + 4.0,
            PAD + 14.0 * s as f64,
            PALETTE[s % PALETTE.len()],
            esc(name)
        );
    }
    c.finish()
}

/// Average ranks on a horizontal axis; methods closer than the critical
/// difference are joined by a bar.
pub fn cd_diagram_svg(title: &str, diagram: &RankDiagram) -> String {
    let k = diagram.entries.len();
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11"><text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let px = |r: f64| PAD + (r - 1.0) / (k.max(2) - 1) as f64 * (W - 2.0 * PAD);
    let _ = write!(s, r##"<line x1="{PAD}" y1="60" x2="{}" y2="60" stroke="#000"/>"##, W - PAD);
    for r in 1..=k {
        let _ = write!(s, r#"<text x="{:.2}" y="52" text-anchor="middle">{r}</text>"#, px(r as f64));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| diagram.entries[a].avg_rank.total_cmp(&diagram.entries[b].avg_rank).then(a.cmp(&b)));
    for (row, &i) in order.iter().enumerate() {
        let e = &diagram.entries[i];
        let x = px(e.avg_rank);
        let y = 90.0 + 18.0 * row as f64;
        let _ = write!(
            s,
            r##"<line x1="{x:.2}" y1="60" x2="{x:.2}" y2="{y:.2}" stroke="#555"/><text x="{:.2}" y="{:.2}">{} ({:.2})</text>"##,
            x + 4.0,
            y + 4.0,
            esc(&e.method),
            e.avg_rank
        );
    }
    // maximal runs of methods within one critical difference of each other
    let mut bar = 0;
    let mut reach = 0;
    for a in 0..k {
        let mut b = a;
        while b + 1 < k
            && diagram.entries[order[b + 1]].avg_rank - diagram.entries[order[a]].avg_rank <= diagram.critical_difference
        {
            b += 1;
        }
        if b > a && b > reach {
            let y = 66.0 + 5.0 * bar as f64;
            let _ = write!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-width="3"/>"##,
                px(diagram.entries[order[a]].avg_rank),
                px(diagram.entries[order[b]].avg_rank)
            );
            bar += 1;
        }
        reach = reach.max(b);
    }
    let _ = write!(
        s,
        r#"<text x="{PAD}" y="{}">CD = {:.3} (alpha {}, {} rows)</text></svg>"#,
        H - 20.0,
        diagram.critical_difference,
        diagram.alpha,
        diagram.n_rows
    );
    s.push('\n');
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
