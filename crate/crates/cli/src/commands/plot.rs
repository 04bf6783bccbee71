//! Per-group density histograms of the uncertainty scores, over shared bin
//! edges, as CSV (always) and a small SVG rendering (optional).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};

use crate::artifacts::{read_mu_csv, write_metadata, SplitKind, Workspace};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// group name -> densities per bin (integrates to 1 over the edges).
    pub groups: BTreeMap<String, Vec<f64>>,
}

/// Shared-edge histogram of the per-group values.
pub fn density_histogram(values: &BTreeMap<String, Vec<f64>>, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        bail!("bins must be >= 1");
    }
    if values.is_empty() || values.values().any(|v| v.is_empty()) {
        bail!("every group needs at least one value");
    }
    let all: Vec<f64> = values.values().flatten().cloned().collect();
    let mut min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        min -= 0.5;
        max += 0.5;
    }
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| min + i as f64 * width).collect();

    let mut groups = BTreeMap::new();
    for (name, vals) in values {
        let mut counts = vec![0usize; bins];
        for &v in vals {
            let mut bin = ((v - min) / width) as usize;
            if bin >= bins {
                bin = bins - 1; // max lands in the last bin
            }
            counts[bin] += 1;
        }
        let n = vals.len() as f64;
        let densities: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();
        groups.insert(name.clone(), densities);
    }
    Ok(Histogram { edges, groups })
}

/// Fraction of occupied bins where both groups have mass, a scalar view of
/// how much the two densities overlap.
pub fn bin_overlap_fraction(hist: &Histogram, a: &str, b: &str) -> Option<f64> {
    let (da, db) = (hist.groups.get(a)?, hist.groups.get(b)?);
    let occupied = da
        .iter()
        .zip(db)
        .filter(|(x, y)| **x > 0.0 || **y > 0.0)
        .count();
    if occupied == 0 {
        return Some(0.0);
    }
    let both = da
        .iter()
        .zip(db)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .count();
    Some(both as f64 / occupied as f64)
}

fn render_svg(hist: &Histogram) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 45.0;
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let (min, max) = (hist.edges[0], *hist.edges.last().unwrap());
    let peak = hist
        .groups
        .values()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let colors = ["#4878cf", "#d65f5f", "#6acc65", "#956cb4"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MARGIN,
        W - MARGIN,
        H - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MARGIN
    ));
    for (gi, (name, densities)) in hist.groups.iter().enumerate() {
        let color = colors[gi % colors.len()];
        let mut path = String::new();
        let x_of = |v: f64| MARGIN + (v - min) / (max - min) * plot_w;
        let y_of = |d: f64| H - MARGIN - (d / peak) * plot_h;
        path.push_str(&format!("M {} {}", x_of(hist.edges[0]), y_of(0.0)));
        for (i, &d) in densities.iter().enumerate() {
            path.push_str(&format!(
                " L {} {} L {} {}",
                x_of(hist.edges[i]),
                y_of(d),
                x_of(hist.edges[i + 1]),
                y_of(d)
            ));
        }
        path.push_str(&format!(
            " L {} {} Z",
            x_of(*hist.edges.last().unwrap()),
            y_of(0.0)
        ));
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"14\">{name}</text>\n",
            W - MARGIN - 110.0,
            MARGIN + 18.0 * (gi as f64 + 1.0)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">predictive uncertainty</text>\n",
        W / 2.0 - 70.0,
        H - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn run(
    config: &ExperimentConfig,
    config_sha: &str,
    split: SplitKind,
    mu_csv: Option<PathBuf>,
    bins: usize,
    svg: bool,
) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    let path = mu_csv.unwrap_or_else(|| ws.mu_csv(split));
    let rows = read_mu_csv(&path)?;
    if rows.is_empty() {
        bail!("mu file {} is empty", path.display());
    }

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        match &row.group {
            Some(group) => values.entry(group.clone()).or_default().push(row.mu),
            None => bail!(
                "sample {} has no known/unknown tag; density plots need tagged scores",
                row.sample_id
            ),
        }
    }
    let hist = density_histogram(&values, bins)?;

    let mut file = std::fs::File::create(ws.density_csv())?;
    writeln!(file, "# osr density v1")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["group", "bin_left", "bin_right", "density"])?;
    for (name, densities) in &hist.groups {
        for (i, &d) in densities.iter().enumerate() {
            writer.write_record([
                name.clone(),
                hist.edges[i].to_string(),
                hist.edges[i + 1].to_string(),
                d.to_string(),
            ])?;
        }
    }
    writer.flush()?;

    if svg {
        std::fs::write(ws.density_svg(), render_svg(&hist))?;
    }
    write_metadata(&ws, "plot-density", config_sha, config.seed)?;

    if let Some(frac) = bin_overlap_fraction(&hist, "known", "unknown") {
        println!(
            "histogram over {bins} bins written; known/unknown bin overlap {:.3}",
            frac
        );
    } else {
        println!("histogram over {bins} bins written");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(pairs: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        pairs
            .iter()
            .map(|(name, vals)| (name.to_string(), vals.to_vec()))
            .collect()
    }

    #[test]
    fn single_group_single_bin_is_inverse_width() {
        let hist = density_histogram(&groups(&[("only", &[1.0, 2.0, 3.0])]), 1).unwrap();
        let width = hist.edges[1] - hist.edges[0];
        assert!((hist.groups["only"][0] - 1.0 / width).abs() <= 1e-12);
    }

    #[test]
    fn densities_integrate_to_one_per_group() {
        let hist = density_histogram(
            &groups(&[
                ("a", &[0.1, 0.4, 0.9, 2.2, 3.3, 3.3]),
                ("b", &[1.0, 1.5, 2.5]),
            ]),
            7,
        )
        .unwrap();
        let width = hist.edges[1] - hist.edges[0];
        for densities in hist.groups.values() {
            let mass: f64 = densities.iter().map(|d| d * width).sum();
            assert!((mass - 1.0).abs() <= 1e-6, "mass = {mass}");
        }
    }

    #[test]
    fn identical_values_still_bin() {
        let hist = density_histogram(&groups(&[("flat", &[2.0, 2.0, 2.0])]), 4).unwrap();
        let width = hist.edges[1] - hist.edges[0];
        let mass: f64 = hist.groups["flat"].iter().map(|d| d * width).sum();
        assert!((mass - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn overlap_fraction_detects_disjoint_and_mixed() {
        let disjoint = density_histogram(
            &groups(&[("a", &[0.0, 0.1, 0.2]), ("b", &[10.0, 10.1, 10.2])]),
            20,
        )
        .unwrap();
        assert!(bin_overlap_fraction(&disjoint, "a", "b").unwrap() < 0.3);
        let mixed = density_histogram(
            &groups(&[("a", &[0.0, 1.0, 2.0]), ("b", &[0.1, 1.1, 2.1])]),
            3,
        )
        .unwrap();
        assert!(bin_overlap_fraction(&mixed, "a", "b").unwrap() > 0.9);
    }
}
