//! SVG figures and the text table, rendered from metrics rows only so that
//! they regenerate byte for byte from the CSV.

use std::fmt::Write;

use vrident::evaluation::SweepPoint;
use vrident::models::ModelKind;
use vrident::preprocess::Encoding;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

fn colour(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Mlp => "#7f7f7f",
        ModelKind::Cnn => "#1f77b4",
        ModelKind::Lstm => "#ff7f0e",
        ModelKind::Gru => "#2ca02c",
        ModelKind::Tcn => "#9467bd",
        ModelKind::Transformer => "#8c564b",
        ModelKind::S4d => "#d62728",
        ModelKind::S5 => "#e377c2",
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (x, a, b) = if self.log_x {
            (x.log10(), self.x0.log10(), self.x1.log10())
        } else {
            (x, self.x0, self.x1)
        };
        LEFT + (x - a) / (b - a) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, xticks: &[(f64, String)], yticks: &[(f64, String)], xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    for (y, label) in yticks {
        let py = f.py(*y);
        let _ = writeln!(out, "<line x1=\"{l:.1}\" y1=\"{py:.1}\" x2=\"{r:.1}\" y2=\"{py:.1}\" stroke=\"#e0e0e0\"/>");
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>", l - 6.0, py + 4.0);
    }
    for (x, label) in xticks {
        let px = f.px(*x);
        let _ = writeln!(out, "<line x1=\"{px:.1}\" y1=\"{b:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>", b + 5.0);
        let _ = writeln!(out, "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>", b + 18.0);
    }
    let _ = writeln!(out, "<rect x=\"{l:.1}\" y=\"{t:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, entries: &[ModelKind]) {
    for (i, kind) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 16.0;
        let _ = writeln!(out, "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>", y - 9.0, colour(*kind));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\">{kind}</text>", x + 18.0, y + 1.0);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Models in first-appearance order.
fn models_of<'a>(points: impl Iterator<Item = &'a SweepPoint>) -> Vec<ModelKind> {
    let mut v: Vec<ModelKind> = Vec::new();
    for p in points {
        if !v.contains(&p.model) {
            v.push(p.model);
        }
    }
    v
}

pub fn encodings_of(points: &[SweepPoint]) -> Vec<Encoding> {
    let mut v: Vec<Encoding> = Vec::new();
    for p in points {
        if !v.contains(&p.encoding) {
            v.push(p.encoding);
        }
    }
    v
}

fn nice_max(x: f64) -> f64 {
    let step = if x <= 2.0 { 0.5 } else if x <= 10.0 { 1.0 } else { 5.0 };
    (x / step).ceil().max(1.0) * step
}

/// MRR against test length for one encoding, one line per model.
pub fn mrr_plot(points: &[SweepPoint], enc: Encoding) -> String {
    let rows: Vec<&SweepPoint> = points.iter().filter(|p| p.encoding == enc).collect();
    let x1 = nice_max(rows.iter().map(|p| p.test_minutes).fold(0.0, f64::max));
    let f = Frame {
        x0: 0.0,
        x1,
        y0: 0.0,
        y1: 1.0,
        log_x: false,
    };
    let mut out = String::new();
    header(&mut out, &format!("Test length vs. MRR ({enc})"));
    let step = if x1 <= 2.0 { 0.5 } else if x1 <= 10.0 { 1.0 } else { 5.0 };
    let xticks: Vec<(f64, String)> = (0..=(x1 / step).round() as usize)
        .map(|i| (i as f64 * step, format!("{}", i as f64 * step)))
        .collect();
    let yticks: Vec<(f64, String)> = (0..=5).map(|i| (i as f64 * 0.2, format!("{:.1}", i as f64 * 0.2))).collect();
    axes(&mut out, &f, &xticks, &yticks, "test minutes", "MRR");
    let models = models_of(rows.iter().copied());
    for &kind in &models {
        let mut pts: Vec<&&SweepPoint> = rows.iter().filter(|p| p.model == kind).collect();
        pts.sort_by(|a, b| a.test_minutes.total_cmp(&b.test_minutes));
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", f.px(p.test_minutes), f.py(p.mrr))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>", coords.join(" "), colour(kind));
        for p in pts {
            let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>", f.px(p.test_minutes), f.py(p.mrr), colour(kind));
        }
    }
    legend(&mut out, &models);
    out.push_str("</svg>\n");
    out
}

/// Sample accuracy against GFLOPs, bubble area proportional to parameters.
pub fn bubble_plot(points: &[SweepPoint], enc: Encoding) -> String {
    let mut cells: Vec<&SweepPoint> = Vec::new();
    for p in points.iter().filter(|p| p.encoding == enc) {
        if !cells.iter().any(|c| c.model == p.model) {
            cells.push(p);
        }
    }
    let positive = |v: f64| v.max(1e-9);
    let lo = cells.iter().map(|p| positive(p.gflops)).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|p| positive(p.gflops)).fold(0.0, f64::max);
    let (d0, d1) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));
    let f = Frame {
        x0: 10f64.powf(d0),
        x1: 10f64.powf(d1),
        y0: 0.0,
        y1: 1.0,
        log_x: true,
    };
    let mut out = String::new();
    header(&mut out, &format!("Parameters, sample accuracy and GFLOPs ({enc})"));
    let xticks: Vec<(f64, String)> = (d0 as i32..=d1 as i32).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
    let yticks: Vec<(f64, String)> = (0..=5).map(|i| (i as f64 * 0.2, format!("{:.1}", i as f64 * 0.2))).collect();
    axes(&mut out, &f, &xticks, &yticks, "GFLOPs per window", "sample accuracy");
    let max_params = cells.iter().map(|p| p.params).max().unwrap_or(1).max(1) as f64;
    for p in &cells {
        let r = 4.0 + 22.0 * (p.params as f64 / max_params).sqrt();
        let (x, y) = (f.px(positive(p.gflops)), f.py(p.sample_accuracy));
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"{r:.1}\" fill=\"{}\" fill-opacity=\"0.5\" stroke=\"{}\"/>",
            colour(p.model),
            colour(p.model)
        );
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{:.2}M</text>", y + 3.0, p.params as f64 / 1e6);
    }
    legend(&mut out, &models_of(cells.iter().copied()));
    out.push_str("</svg>\n");
    out
}

/// Parameters, GFLOPs, and per encoding the sample accuracy, session vote
/// accuracy and the MRR at the longest test length.
pub fn table(points: &[SweepPoint]) -> String {
    let encodings = encodings_of(points);
    let models = models_of(points.iter());
    let mut head = format!("{:<12} {:>10} {:>10}", "model", "params (M)", "GFLOPs");
    for e in &encodings {
        let _ = write!(head, " {:>9} {:>9} {:>9}", format!("{e} acc"), format!("{e} vote"), format!("{e} MRR"));
    }
    let mut out = format!("{head}\n{}\n", "-".repeat(head.len()));
    for kind in models {
        let Some(any) = points.iter().find(|p| p.model == kind) else { continue };
        let mut line = format!("{:<12} {:>10.4} {:>10.4}", kind.to_string(), any.params as f64 / 1e6, any.gflops);
        for &e in &encodings {
            let last = points
                .iter()
                .filter(|p| p.model == kind && p.encoding == e)
                .max_by(|a, b| a.test_minutes.total_cmp(&b.test_minutes));
            match last {
                Some(p) => {
                    let _ = write!(line, " {:>9.3} {:>9.3} {:>9.3}", p.sample_accuracy, p.session_vote_accuracy, p.mrr);
                }
                None => {
                    let _ = write!(line, " {:>9} {:>9} {:>9}", "-", "-", "-");
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    let longest = points.iter().map(|p| p.test_minutes).fold(0.0, f64::max);
    let _ = writeln!(out, "\nMRR at {longest} test minutes; vote = majority vote over the whole test session.");
    out
}
