//! CSV, JSON and SVG writers for evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::plot::{histogram, histogram_svg, line_svg, scatter_svg};
use super::{ClusterResult, DistanceDistributions, EvalError, MetricReport};

const HIST_BINS: usize = 40;

fn write(dir: &Path, file: String, body: &str) -> Result<PathBuf, EvalError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    fs::write(&path, body)?;
    Ok(path)
}

/// `<name>.csv` with the three scores, `<name>_coords.csv` and `<name>.svg`.
pub fn write_cluster_report(dir: &Path, name: &str, result: &ClusterResult) -> Result<Vec<PathBuf>, EvalError> {
    let s = &result.scores;
    let mut coords = String::from("task,pc1,pc2\n");
    for (l, c) in result.labels.iter().zip(&result.coords) {
        let _ = writeln!(coords, "{l},{},{}", c[0], c[1]);
    }
    Ok(vec![
        write(dir, format!("{name}.csv"), &format!("silhouette,dbi,chi\n{},{},{}\n", s.silhouette, s.dbi, s.chi))?,
        write(dir, format!("{name}.json"), &serde_json::to_string_pretty(result)?)?,
        write(dir, format!("{name}_coords.csv"), &coords)?,
        write(dir, format!("{name}.svg"), &scatter_svg(&format!("{name}: model representations"), &result.coords, &result.labels))?,
    ])
}

/// Histogram CSVs on a shared binning, a JSON summary of means and two SVGs.
pub fn write_distance_report(
    dir: &Path,
    name: &str,
    runs: &[(String, &DistanceDistributions)],
) -> Result<Vec<PathBuf>, EvalError> {
    let mut paths = Vec::new();
    let summary: Vec<_> = runs
        .iter()
        .map(|(label, d)| json!({"label": label, "kind": d.kind, "mean_d_in": d.mean_in, "mean_d_out": d.mean_out, "tasks": d.d_in.len()}))
        .collect();
    paths.push(write(dir, format!("{name}.json"), &serde_json::to_string_pretty(&summary)?)?);
    let mut means = String::from("label,mean_d_in,mean_d_out\n");
    for (label, d) in runs {
        let _ = writeln!(means, "{label},{},{}", d.mean_in, d.mean_out);
    }
    paths.push(write(dir, format!("{name}.csv"), &means)?);
    for (which, pick) in [("d_in", (|d: &DistanceDistributions| &d.d_in) as fn(&DistanceDistributions) -> &Vec<f64>), ("d_out", |d| &d.d_out)] {
        let series: Vec<(String, Vec<f64>)> = runs.iter().map(|(l, d)| (l.clone(), pick(d).clone())).collect();
        let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
        let width = (hi - lo) / HIST_BINS as f64;
        let mut csv = String::from("bin_lo,bin_hi");
        for (l, _) in &series {
            let _ = write!(csv, ",{l}");
        }
        csv.push('\n');
        let counts: Vec<Vec<usize>> = series.iter().map(|(_, v)| histogram(v, lo, hi, HIST_BINS)).collect();
        for b in 0..HIST_BINS {
            let _ = write!(csv, "{},{}", lo + b as f64 * width, lo + (b + 1) as f64 * width);
            for c in &counts {
                let _ = write!(csv, ",{}", c[b]);
            }
            csv.push('\n');
        }
        paths.push(write(dir, format!("{name}_{which}_hist.csv"), &csv)?);
        paths.push(write(dir, format!("{name}_{which}.svg"), &histogram_svg(&format!("{which} distribution"), &series, HIST_BINS))?);
    }
    Ok(paths)
}

/// One row per (series, x) with mean and std, a JSON dump and a line plot of the means.
pub fn write_sweep_report(
    dir: &Path,
    name: &str,
    x_label: &str,
    series: &[(String, Vec<(f64, MetricReport)>)],
) -> Result<Vec<PathBuf>, EvalError> {
    let mut csv = format!("series,{x_label},mean,std,count\n");
    for (label, points) in series {
        for (x, r) in points {
            let _ = writeln!(csv, "{label},{x},{},{},{}", r.mean, r.std, r.count);
        }
    }
    let xs: Vec<f64> = series.first().map(|(_, p)| p.iter().map(|(x, _)| *x).collect()).unwrap_or_default();
    let lines: Vec<(String, Vec<f64>)> = series
        .iter()
        .map(|(l, p)| (l.clone(), p.iter().map(|(_, r)| r.mean).collect()))
        .collect();
    let metric = series.first().and_then(|(_, p)| p.first()).map(|(_, r)| r.metric.clone()).unwrap_or_default();
    let dump: Vec<_> = series
        .iter()
        .map(|(l, p)| json!({"series": l, "points": p.iter().map(|(x, r)| json!({x_label: x, "report": r})).collect::<Vec<_>>()}))
        .collect();
    Ok(vec![
        write(dir, format!("{name}.csv"), &csv)?,
        write(dir, format!("{name}.json"), &serde_json::to_string_pretty(&dump)?)?,
        write(dir, format!("{name}.svg"), &line_svg(name, x_label, &metric, &xs, &lines))?,
    ])
}
