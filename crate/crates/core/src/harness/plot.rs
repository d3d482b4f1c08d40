use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::output::{num, read_csv, CsvOut, CsvTable};
use super::runs::{compare_accuracy, RunRecord};
use super::HarnessError;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
/// Longest polyline drawn; longer series are thinned by a fixed stride.
const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub type Series = (String, Vec<(f64, f64)>);

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart with one `<polyline>` per series. Axes and ticks use `<line>` and
/// `<text>` only, so the polyline count equals the series count.
pub fn polyline_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let (ax0, ay0, ax1, ay1) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay0}" x2="{ax1}" y2="{ay0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay0}" x2="{ax0}" y2="{ay1}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#, px(xv), ay0 + 14.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#, ax0 - 4.0, py(yv) + 3.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            ax1 - 120.0,
            ay1 + 14.0 * (k as f64 + 1.0),
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Grayscale grid of a `row,col,value` table, darker for larger values.
fn heatmap_svg(title: &str, t: &CsvTable) -> Result<String, HarnessError> {
    let idx = t.require(&["row", "col", "value"])?;
    let cells: Vec<(usize, usize, f64)> = t
        .numbers(idx[0])?
        .into_iter()
        .zip(t.numbers(idx[1])?)
        .zip(t.numbers(idx[2])?)
        .map(|((r, c), v)| (r.unwrap_or(0.0) as usize, c.unwrap_or(0.0) as usize, v.unwrap_or(0.0)))
        .collect();
    let n_r = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let n_c = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let vmax = cells.iter().map(|c| c.2.abs()).fold(0.0, f64::max);
    let cell = ((H - 2.0 * MARGIN) / n_r.max(n_c) as f64).floor().max(1.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    for (r, c, v) in cells {
        let g = if vmax > 0.0 { 255.0 * (1.0 - v.abs() / vmax) } else { 255.0 };
        let g = g.round() as u8;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
            MARGIN + c as f64 * cell,
            MARGIN + r as f64 * cell
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">max {}</text>"#, MARGIN, H - 12.0, num(vmax));
    s.push_str("</svg>\n");
    Ok(s)
}

fn thin(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points;
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    points.into_iter().step_by(stride).collect()
}

fn xy(t: &CsvTable, x: &str, y: &str) -> Result<Vec<(f64, f64)>, HarnessError> {
    let idx = t.require(&[x, y])?;
    Ok(t.numbers(idx[0])?
        .into_iter()
        .zip(t.numbers(idx[1])?)
        .filter_map(|(a, b)| Some((a?, b?)))
        .collect())
}

/// A run directory with its label.
struct RunDir {
    path: PathBuf,
    label: String,
    record: Option<RunRecord>,
}

fn load_record(dir: &Path) -> Option<RunRecord> {
    let text = fs::read_to_string(dir.join("record.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn discover(dir: &Path) -> Result<Vec<RunDir>, HarnessError> {
    let mut runs = Vec::new();
    let has_csv = |d: &Path| {
        fs::read_dir(d)
            .map(|it| it.flatten().any(|e| e.path().extension().is_some_and(|x| x == "csv")))
            .unwrap_or(false)
    };
    let label = |d: &Path, rec: &Option<RunRecord>| match rec {
        Some(r) => format!("{} seed {}", r.learner.name(), r.seed),
        None => d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into()),
    };
    if has_csv(dir) {
        let record = load_record(dir);
        runs.push(RunDir { path: dir.to_path_buf(), label: label(dir, &record), record });
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("record.json").is_file())
        .collect();
    subdirs.sort();
    for p in subdirs {
        let record = load_record(&p);
        runs.push(RunDir { label: label(&p, &record), path: p, record });
    }
    Ok(runs)
}

/// Step-log file names in a run directory, sorted.
fn step_logs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("steps") && name.ends_with(".csv")
        })
        .collect();
    v.sort();
    Ok(v)
}

fn write(path: PathBuf, text: String, written: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Renders SVG plots for the run in `dir` and for every run subdirectory of `dir`.
///
/// Produces `loss.svg` (one line per step log), and when the inputs exist
/// `heatmap.svg`, `convergence.svg`, `accuracy.svg`, plus `comparison.csv` joining
/// permuted runs that share a seed. Returns the files written.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let runs = discover(dir)?;
    if runs.is_empty() {
        return Err(HarnessError::MissingColumns { file: dir.to_path_buf(), missing: "no run CSVs".into() });
    }
    let mut written = Vec::new();

    let mut loss = Vec::new();
    for r in &runs {
        for log in step_logs(&r.path)? {
            let t = read_csv(&log)?;
            let pts: Vec<(f64, f64)> = xy(&t, "step", "loss")?
                .into_iter()
                .map(|(x, y)| (x, y.max(1e-12).log10()))
                .collect();
            let stem = log.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let name = if stem == "steps" { r.label.clone() } else { format!("{} {}", r.label, &stem[6..]) };
            loss.push((name, thin(pts)));
        }
    }
    if loss.is_empty() {
        return Err(HarnessError::MissingColumns { file: dir.to_path_buf(), missing: "step log".into() });
    }
    write(dir.join("loss.svg"), polyline_svg("Loss", "step", "log10 loss", &loss), &mut written)?;

    if let Some(r) = runs.iter().find(|r| r.path.join("heatmap.csv").is_file()) {
        let t = read_csv(&r.path.join("heatmap.csv"))?;
        write(dir.join("heatmap.svg"), heatmap_svg(&format!("Subspace overlap, {}", r.label), &t)?, &mut written)?;
    }

    let mut conv = Vec::new();
    for r in runs.iter().filter(|r| r.path.join("convergence.csv").is_file()) {
        // Runs that hit the epoch cap are drawn at the cap.
        let t = read_csv(&r.path.join("convergence.csv"))?;
        conv.push((r.label.clone(), xy(&t, "beta1", "epochs_run")?));
    }
    if !conv.is_empty() {
        write(dir.join("convergence.svg"), polyline_svg("Convergence", "beta1", "epochs", &conv), &mut written)?;
    }

    let mut acc = Vec::new();
    for r in runs.iter().filter(|r| r.path.join("average_accuracy.csv").is_file()) {
        let t = read_csv(&r.path.join("average_accuracy.csv"))?;
        acc.push((r.label.clone(), xy(&t, "after_task", "average_accuracy")?));
    }
    if !acc.is_empty() {
        write(
            dir.join("accuracy.svg"),
            polyline_svg("Average accuracy", "tasks trained", "accuracy", &acc),
            &mut written,
        )?;
    }

    let permuted: Vec<&RunDir> = runs
        .iter()
        .filter(|r| r.record.is_some() && r.path.join("average_accuracy.csv").is_file())
        .collect();
    let mut pairs = Vec::new();
    for (i, a) in permuted.iter().enumerate() {
        for b in &permuted[i + 1..] {
            let (ra, rb) = (a.record.as_ref().expect("filtered"), b.record.as_ref().expect("filtered"));
            if ra.seed == rb.seed && ra.learner != rb.learner {
                pairs.push((ra.seed, ra.learner.name(), rb.learner.name(), compare_accuracy(&a.path, &b.path)?));
            }
        }
    }
    if !pairs.is_empty() {
        let path = dir.join("comparison.csv");
        let mut w = CsvOut::create(&path, &["seed", "learner_a", "learner_b", "after_task", "a", "b", "diff"])?;
        for (seed, la, lb, rows) in pairs {
            for c in rows {
                w.row(&[
                    seed.to_string(),
                    la.to_string(),
                    lb.to_string(),
                    c.after_task.to_string(),
                    num(c.a),
                    num(c.b),
                    num(c.diff),
                ])?;
            }
        }
        w.finish()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_one_polyline() {
        let svg = polyline_svg("t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 0.5)])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }

    #[test]
    fn thinning_keeps_ends_bounded() {
        let pts: Vec<(f64, f64)> = (0..10_000).map(|i| (i as f64, 0.0)).collect();
        let t = thin(pts);
        assert!(t.len() <= MAX_POINTS);
        assert_eq!(t[0].0, 0.0);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(esc("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
    }
}
