//! Figure files from evaluation records: position scatter, direction violins,
//! confusion heatmaps (SVG) and fusion panels (PNG).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use trifusion_core::dataio::encode_png;
use trifusion_core::fusion::Attention;
use trifusion_core::objectives::{denormalize_state, EvalReport};
use trifusion_core::{Direction, ImageTensor, NormalizedState};

use crate::error::{HarnessError, Result};
use crate::eval::{evaluation_from_record, Record, RecordRow};

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Evenly spread hues; distinct for any `n`.
pub fn palette(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let h = 360.0 * i as f64 / n.max(1) as f64;
            let l = if i % 2 == 0 { 45 } else { 60 };
            format!("hsl({h:.2},70%,{l}%)")
        })
        .collect()
}

fn header(s: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn axes(s: &mut String, x: &Axis, y: &Axis, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x.a,
        y.b,
        x.b - x.a,
        y.a - y.b
    );
    for t in ticks(x.lo, x.hi, 5) {
        let px = x.map(t);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{t:.0}</text>"#, y.a + 16.0);
    }
    for t in ticks(y.lo, y.hi, 5) {
        let py = y.map(t);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, x.a - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x.a + x.b) / 2.0, y.a + 36.0, xlabel);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y.a + y.b) / 2.0,
        (y.a + y.b) / 2.0,
        ylabel
    );
}

fn non_empty(record: &Record) -> Result<()> {
    if record.rows.is_empty() {
        return Err(HarnessError::Usage(format!("record {:?} has no rows", record.run)));
    }
    Ok(())
}

fn location(r: &RecordRow) -> (i64, i64) {
    ((r.p_x * 100.0).round() as i64, (r.p_y * 100.0).round() as i64)
}

/// Estimated positions in cm, one color per true location, with true positions marked.
pub fn scatter_svg(record: &Record) -> Result<String> {
    non_empty(record)?;
    let mut groups: BTreeMap<(i64, i64), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &record.rows {
        let s = denormalize_state(&NormalizedState::from_array(r.pred));
        groups.entry(location(r)).or_default().push((s.p_x, s.p_y));
    }
    let pts = || groups.iter().flat_map(|(k, v)| v.iter().copied().chain([(k.0 as f64 / 100.0, k.1 as f64 / 100.0)]));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        let p = ((hi - lo) * 0.05).max(5.0);
        ((lo - p).floor(), (hi + p).ceil())
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let legend_w = 130.0;
    let xa = Axis { lo: x0, hi: x1, a: MARGIN, b: W - MARGIN - legend_w };
    let ya = Axis { lo: y0, hi: y1, a: H - MARGIN, b: MARGIN };
    let mut s = String::new();
    let canvas_h = H.max(MARGIN + 14.0 * groups.len() as f64 + 20.0);
    header(&mut s, W, canvas_h, &format!("Estimated positions: {} ({})", record.run, record.modalities));
    axes(&mut s, &xa, &ya, "p_x (cm)", "p_y (cm)");
    let colors = palette(groups.len());
    for (((k, v), c), i) in groups.iter().zip(&colors).zip(0..) {
        let _ = writeln!(s, r#"<g fill="{c}" fill-opacity="0.6">"#);
        for &(x, y) in v {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, xa.map(x), ya.map(y));
        }
        let _ = writeln!(s, "</g>");
        let (tx, ty) = (xa.map(k.0 as f64 / 100.0), ya.map(k.1 as f64 / 100.0));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2},{:.2}h8M{:.2},{:.2}v8" stroke="black" stroke-width="1.5" transform="translate(-4,-4)"/>"#,
            tx,
            ty,
            tx + 4.0,
            ty - 4.0
        );
        let ly = MARGIN + 14.0 * i as f64;
        let lx = W - MARGIN - legend_w + 16.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><rect x="{lx}" y="{:.1}" width="10" height="10" fill="{c}"/><text x="{}" y="{:.1}">({:.0}, {:.0})</text></g>"#,
            ly - 9.0,
            lx + 14.0,
            ly,
            k.0 as f64 / 100.0,
            k.1 as f64 / 100.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Gaussian kernel density with Silverman's bandwidth, sampled on `grid`.
fn density(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let bw = (1.06 * sd * n.powf(-0.2)).max(1e-3);
    grid.iter()
        .map(|g| values.iter().map(|v| (-0.5 * ((g - v) / bw).powi(2)).exp()).sum::<f64>() / (n * bw))
        .collect()
}

/// Raw `d̂` distribution per true heading, with mean, lower and upper extrema marked.
pub fn violin_svg(record: &Record) -> Result<String> {
    non_empty(record)?;
    let ya = Axis { lo: -0.1, hi: 1.1, a: H - MARGIN, b: MARGIN };
    let xa = Axis { lo: 0.0, hi: 3.0, a: MARGIN, b: W - MARGIN };
    let mut s = String::new();
    header(&mut s, W, H, &format!("Direction estimates: {} ({})", record.run, record.modalities));
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        xa.a,
        ya.b,
        xa.b - xa.a,
        ya.a - ya.b
    );
    for t in ticks(0.0, 1.0, 4) {
        let py = ya.map(t);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, xa.a - 6.0, py + 4.0);
        let _ = writeln!(s, r##"<line x1="{}" x2="{}" y1="{py:.1}" y2="{py:.1}" stroke="#ddd"/>"##, xa.a, xa.b);
    }
    let grid: Vec<f64> = (0..=120).map(|i| -0.1 + 1.2 * i as f64 / 120.0).collect();
    let colors = palette(3);
    for (k, class) in Direction::ALL.iter().enumerate() {
        let cx = xa.map(k as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{class:?}</text>"#, ya.a + 16.0);
        let v: Vec<f64> = record.rows.iter().filter(|r| r.d == *class).map(|r| r.pred[2]).collect();
        if v.is_empty() {
            continue;
        }
        let dens = density(&v, &grid);
        let peak = dens.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let half = 0.4 * (xa.b - xa.a) / 3.0;
        let mut d = String::new();
        for (g, p) in grid.iter().zip(&dens) {
            let _ = write!(d, "{}{:.2},{:.2} ", if d.is_empty() { "M" } else { "L" }, cx + half * p / peak, ya.map(*g));
        }
        for (g, p) in grid.iter().zip(&dens).rev() {
            let _ = write!(d, "L{:.2},{:.2} ", cx - half * p / peak, ya.map(*g));
        }
        let _ = writeln!(s, r#"<path d="{}Z" fill="{}" fill-opacity="0.5" stroke="black" stroke-width="0.8"/>"#, d, colors[k]);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            ya.map(lo),
            ya.map(hi)
        );
        for (name, val, w) in [("lower", lo, 10.0), ("upper", hi, 10.0), ("mean", mean, 18.0)] {
            let py = ya.map(val);
            let _ = writeln!(
                s,
                r#"<line class="{name}" x1="{:.2}" x2="{:.2}" y1="{py:.2}" y2="{py:.2}" stroke="black" stroke-width="2"><title>{name} {val:.5}</title></line>"#,
                cx - w / 2.0,
                cx + w / 2.0
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">true heading</text>"#, (xa.a + xa.b) / 2.0, ya.a + 36.0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Row-normalized confusion matrix with counts.
pub fn confusion_svg(report: &EvalReport, title: &str) -> String {
    let cell = 90.0;
    let (x0, y0) = (110.0, 70.0);
    let w = x0 + 3.0 * cell + 40.0;
    let h = y0 + 3.0 * cell + 50.0;
    let mut s = String::new();
    header(&mut s, w, h, title);
    for (i, row) in report.confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &c) in row.iter().enumerate() {
            let frac = if total > 0 { c as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x, y) = (x0 + cell * j as f64, y0 + cell * i as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
            );
            let ink = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{c}</text><text x="{}" y="{}" text-anchor="middle" fill="{ink}" font-size="10">{:.1}%</text>"#,
                x + cell / 2.0,
                y + cell / 2.0,
                x + cell / 2.0,
                y + cell / 2.0 + 14.0,
                100.0 * frac
            );
        }
    }
    for (k, class) in Direction::ALL.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">true {class:?}</text>"#, x0 - 8.0, y0 + cell * (k as f64 + 0.5) + 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">pred {class:?}</text>"#,
            x0 + cell * (k as f64 + 0.5),
            y0 + 3.0 * cell + 18.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Writes scatter, violin and confusion figures for every record into `out`.
pub fn emit_plots(records: &[Record], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(HarnessError::Usage("no records to plot".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut files = Vec::new();
    for r in records {
        non_empty(r)?;
        let eval = evaluation_from_record(r)?;
        let stem = r.run.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_");
        let mut figs = vec![
            (format!("{stem}_scatter.svg"), scatter_svg(r)?),
            (format!("{stem}_violin.svg"), violin_svg(r)?),
            (format!("{stem}_confusion.svg"), confusion_svg(&eval.overall, &format!("Confusion: {} (all)", r.run))),
        ];
        if let Some(c) = &eval.close {
            figs.push((format!("{stem}_confusion_close.svg"), confusion_svg(c, &format!("Confusion: {} (close)", r.run))));
        }
        if let Some(f) = &eval.far {
            figs.push((format!("{stem}_confusion_far.svg"), confusion_svg(f, &format!("Confusion: {} (far)", r.run))));
        }
        for (name, body) in figs {
            let p = out.join(name);
            write(&p, body.as_bytes())?;
            files.push(p);
        }
    }
    Ok(files)
}

/// Blue-to-yellow ramp for attention values in `[0, 1]`.
fn heat_color(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [v, 0.2 + 0.7 * v, 0.8 * (1.0 - v) + 0.1]
}

/// Side-by-side PNG: optical frame, attention heatmap, and the two blended.
pub fn fusion_panel(image: &ImageTensor, attention: &Attention) -> Result<Vec<u8>> {
    let hm = &attention.heatmap;
    let (h, w) = (image.height, image.width);
    if image.channels != 3 || hm.height != h || hm.width != w {
        return Err(HarnessError::Usage("image and heatmap sizes differ".into()));
    }
    let mut panel = ImageTensor::zeros(3, h, 3 * w);
    let pw = 3 * w;
    for y in 0..h {
        for x in 0..w {
            let heat = heat_color(hm.field[y * w + x]);
            let a = hm.field[y * w + x].clamp(0.0, 1.0) * 0.6;
            for c in 0..3 {
                let rgb = image.data[c * h * w + y * w + x];
                let base = c * h * pw + y * pw;
                panel.data[base + x] = rgb;
                panel.data[base + w + x] = heat[c];
                panel.data[base + 2 * w + x] = (1.0 - a) * rgb + a * heat[c];
            }
        }
    }
    Ok(encode_png(&panel)?)
}
