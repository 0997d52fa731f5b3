//! Plain SVG charts. Output bytes depend only on the inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Fixed-precision coordinate so the bytes never depend on float printing
/// heuristics.
fn c(x: f64) -> String {
    format!("{x:.2}")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(svg: &mut String, title: &str, frame: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        c(WIDTH / 2.0),
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        c(x0),
        c(y0),
        c(x0),
        c(y1),
        c(x1),
        c(y1)
    );
    for (v, anchor, x, y) in [
        (frame.x.0, "start", x0, y1 + 16.0),
        (frame.x.1, "end", x1, y1 + 16.0),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{}</text>"#,
            c(x),
            c(y),
            format_tick(v)
        );
    }
    for (v, y) in [(frame.y.0, y1), (frame.y.1, y0 + 10.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
            c(x0 - 4.0),
            c(y),
            format_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        c(WIDTH / 2.0),
        c(HEIGHT - 8.0),
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        c(HEIGHT / 2.0),
        c(HEIGHT / 2.0),
        escape(ylabel)
    );
}

fn legend(svg: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            c(WIDTH - MARGIN - 90.0),
            c(y),
            PALETTE[k % PALETTE.len()],
            c(WIDTH - MARGIN - 76.0),
            c(y + 9.0),
            escape(name)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of the first two coordinates of each named point set.
pub fn scatter_svg(title: &str, sets: &[(&str, &[[f64; 2]])]) -> String {
    let all = sets.iter().flat_map(|(_, pts)| pts.iter());
    let frame = Frame::fit(all.clone().map(|p| p[0]), all.map(|p| p[1]));
    let mut svg = String::new();
    open(&mut svg, title, &frame, "x0", "x1");
    for (k, (_, pts)) in sets.iter().enumerate() {
        let _ = writeln!(svg, r#"<g fill="{}" fill-opacity="0.5">"#, PALETTE[k % PALETTE.len()]);
        for p in pts.iter() {
            if p[0].is_finite() && p[1].is_finite() {
                let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="1.5"/>"#, c(frame.px(p[0])), c(frame.py(p[1])));
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    legend(&mut svg, &sets.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// Polyline chart with markers, one series per name.
pub fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let all = series.iter().flat_map(|(_, s)| s.iter());
    let frame = Frame::fit(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut svg = String::new();
    open(&mut svg, title, &frame, xlabel, ylabel);
    for (k, (_, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}{} {}", if i == 0 { "M" } else { "L" }, c(frame.px(p.0)), c(frame.py(p.1))))
            .collect();
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for p in pts {
            let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, c(frame.px(p.0)), c(frame.py(p.1)));
        }
    }
    legend(&mut svg, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// Histogram with `bins` equal-width bins over the finite values' range.
pub fn histogram_svg(title: &str, xlabel: &str, values: &[f64], bins: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let bins = bins.max(1);
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame { x: (lo, hi), y: (0.0, top) };
    let mut svg = String::new();
    open(&mut svg, title, &frame, xlabel, "count");
    let w = (hi - lo) / bins as f64;
    for (k, &n) in counts.iter().enumerate() {
        let (xa, xb) = (frame.px(lo + w * k as f64), frame.px(lo + w * (k + 1) as f64));
        let (ya, yb) = (frame.py(n as f64), frame.py(0.0));
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="white"/>"#,
            c(xa),
            c(ya),
            c(xb - xa),
            c(yb - ya),
            PALETTE[0]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-sample straightness from a `t,sample,x0,...` trajectory CSV.
pub fn straightness_from_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut paths: BTreeMap<usize, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: malformed row", path.display())))
        };
        let t = num(0)?;
        let sample = num(1)? as usize;
        let x = (2..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        paths.entry(sample).or_default().push((t, x));
    }
    paths
        .into_values()
        .map(|mut steps| {
            steps.sort_by(|a, b| a.0.total_cmp(&b.0));
            let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            let total: f64 = steps.windows(2).map(|w| sq(&w[1].1, &w[0].1)).sum();
            let net = sq(&steps[steps.len() - 1].1, &steps[0].1);
            if steps.len() < 2 || net == 0.0 {
                Err(crate::error::domain("trajectory with no net displacement"))
            } else {
                Ok(total / net)
            }
        })
        .collect()
}

/// Read the `source,x0,x1,...` sample dump written by `eval`.
pub fn read_samples(path: &Path) -> Result<BTreeMap<String, Vec<[f64; 2]>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<String, Vec<[f64; 2]>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(0.0);
        let y = if rec.len() > 2 { parse(2) } else { 0.0 };
        out.entry(rec.get(0).unwrap_or("").to_string()).or_default().push([parse(1), y]);
    }
    Ok(out)
}

/// Energy distance by NFE from a metrics map with `energy_distance_nfe<N>` keys.
pub fn energy_distance_series(metrics: &BTreeMap<String, f64>) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = metrics
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("energy_distance_nfe")
                .and_then(|n| n.parse::<usize>().ok())
                .map(|n| (n as f64, *v))
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Write `plots/*.svg` for a run directory: the sample scatter and the
/// energy-distance curve from `samples.csv` and `metrics.json`, and one
/// straightness histogram per `trajectories/*.csv`.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics_path = run_dir.join("metrics.json");
    let samples_path = run_dir.join("samples.csv");
    for p in [&metrics_path, &samples_path] {
        if !p.exists() {
            return Err(Error::Missing(p.clone()));
        }
    }
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)?;
    let metrics: BTreeMap<String, f64> = serde_json::from_value(doc["metrics"].clone())?;
    let plots = run_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = plots.join(name);
        std::fs::write(&path, svg)?;
        written.push(path);
        Ok(())
    };

    let samples = read_samples(&samples_path)?;
    let sets: Vec<(&str, &[[f64; 2]])> = samples.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    emit("scatter.svg".into(), scatter_svg("generated vs data", &sets))?;
    emit(
        "energy_distance_vs_nfe.svg".into(),
        line_svg(
            "energy distance vs NFE",
            "NFE",
            "energy distance",
            &[("backward EM", energy_distance_series(&metrics))],
        ),
    )?;

    let traj_dir = run_dir.join("trajectories");
    if traj_dir.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&traj_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for f in files {
            let s = straightness_from_csv(&f)?;
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory").to_string();
            emit(
                format!("straightness_{stem}.svg"),
                histogram_svg(&format!("straightness ({stem})"), "S", &s, 20),
            )?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_deterministic() {
        let pts = [[0.0, 1.0], [2.0, -1.0]];
        let a = scatter_svg("t", &[("a", &pts)]);
        assert_eq!(a, scatter_svg("t", &[("a", &pts)]));
        assert_eq!(a.matches("<circle").count(), 2);
        let l = line_svg("t", "x", "y", &[("s", vec![(1.0, 2.0), (3.0, 1.0)])]);
        assert!(l.contains("<path d=\"M"));
        let h = histogram_svg("t", "x", &[0.1, 0.2, 0.2, 0.9], 4);
        assert_eq!(h.matches("<rect x=").count(), 4);
    }

    #[test]
    fn degenerate_inputs_still_render() {
        assert!(scatter_svg("t", &[]).ends_with("</svg>\n"));
        assert!(histogram_svg("t", "x", &[1.0, 1.0], 3).contains("<rect"));
        assert!(line_svg("t", "x", "y", &[("s", vec![])]).ends_with("</svg>\n"));
    }

    #[test]
    fn series_sorted_by_nfe() {
        let mut m = BTreeMap::new();
        m.insert("energy_distance_nfe200".to_string(), 0.01);
        m.insert("energy_distance_nfe20".to_string(), 0.2);
        m.insert("energy_distance".to_string(), 0.2);
        assert_eq!(energy_distance_series(&m), vec![(20.0, 0.2), (200.0, 0.01)]);
    }

    #[test]
    fn straightness_of_straight_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut text = String::from("t,sample,x0,x1\n");
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            text.push_str(&format!("{t},0,{t},{}\n", 2.0 * t));
        }
        std::fs::write(&p, text).unwrap();
        let s = straightness_from_csv(&p).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-12);
    }
}
