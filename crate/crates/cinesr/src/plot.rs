//! Static SVG figures from report files: CardiacPSNR against the warm-up
//! frame count, against the refinement stage count, and the
//! efficiency/quality scatter.
//!
//! Inputs are JSONL reports; every summary row becomes one point. Bench
//! records pair with summary rows by order of appearance for the
//! efficiency figure.

use crate::error::Result;
use crate::report::{parse_as, read_jsonl_file, BenchRecord, EvalSummary};
use std::fs;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;

#[derive(Debug, Clone)]
struct Point {
    x: f64,
    y: f64,
    label: Option<String>,
}

fn svg_chart(title: &str, xlabel: &str, ylabel: &str, points: &[Point]) -> String {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if (x1 - x0).abs() < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad_x = 0.05 * (x1 - x0);
    let pad_y = 0.1 * (y1 - y0);
    let (x0, x1) = (x0 - pad_x, x1 + pad_x);
    let (y0, y1) = (y0 - pad_y, y1 + pad_y);

    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">{xlabel}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 18 {})\">{ylabel}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    // Min/max tick labels.
    for (value, x, y, anchor) in [
        (x0 + pad_x, sx(x0 + pad_x), HEIGHT - MARGIN + 18.0, "middle"),
        (x1 - pad_x, sx(x1 - pad_x), HEIGHT - MARGIN + 18.0, "middle"),
    ] {
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-size=\"11\" font-family=\"sans-serif\">{value:.3}</text>\n"
        ));
    }
    for value in [y0 + pad_y, y1 - pad_y] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">{value:.3}</text>\n",
            MARGIN - 6.0,
            sy(value) + 4.0
        ));
    }

    let mut sorted: Vec<&Point> = points.iter().collect();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    if sorted.len() > 1 {
        let path: Vec<String> = sorted
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#2a6fb0\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
    }
    for p in &sorted {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#2a6fb0\"/>\n",
            sx(p.x),
            sy(p.y)
        ));
        if let Some(label) = &p.label {
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" font-family=\"sans-serif\">{label}</text>\n",
                sx(p.x) + 6.0,
                sy(p.y) - 6.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn write_figure(out_dir: &Path, name: &str, svg: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let tmp = path.with_extension("svg.tmp");
    fs::write(&tmp, svg)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Read the given reports and emit every figure the records support.
/// Returns the written figure paths.
pub fn generate_figures(reports: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut summaries: Vec<EvalSummary> = Vec::new();
    let mut benches: Vec<BenchRecord> = Vec::new();
    for path in reports {
        for value in read_jsonl_file(path)? {
            if let Some(s) = parse_as::<EvalSummary>(&value) {
                summaries.push(s);
            } else if let Some(b) = parse_as::<BenchRecord>(&value) {
                benches.push(b);
            }
        }
    }

    let mut written = Vec::new();
    if !summaries.is_empty() {
        let n_points: Vec<Point> = summaries
            .iter()
            .map(|s| Point { x: s.warmup_n as f64, y: s.cardiac_psnr, label: None })
            .collect();
        written.push(write_figure(
            out_dir,
            "psnr_vs_n.svg",
            &svg_chart("CardiacPSNR vs warm-up frames", "warm-up frames n", "CardiacPSNR (dB)", &n_points),
        )?);

        let omega_points: Vec<Point> = summaries
            .iter()
            .map(|s| Point { x: s.omega as f64, y: s.cardiac_psnr, label: None })
            .collect();
        written.push(write_figure(
            out_dir,
            "psnr_vs_omega.svg",
            &svg_chart(
                "CardiacPSNR vs refinement stages",
                "refinement stages",
                "CardiacPSNR (dB)",
                &omega_points,
            ),
        )?);
    }
    if !benches.is_empty() && !summaries.is_empty() {
        let points: Vec<Point> = benches
            .iter()
            .zip(&summaries)
            .map(|(b, s)| Point {
                x: b.params as f64,
                y: s.cardiac_psnr,
                label: Some(format!("{:.1} fps", b.fps)),
            })
            .collect();
        written.push(write_figure(
            out_dir,
            "efficiency.svg",
            &svg_chart(
                "Efficiency vs reconstruction quality",
                "parameters",
                "CardiacPSNR (dB)",
                &points,
            ),
        )?);
    }
    Ok(written)
}
