//! Per-step metrics: populations, collective and per-capita returns,
//! switching costs, archipelago-wide reductions, and their CSV layout.
//!
//! Undefined values (empty islands, disabled features) are `None` and
//! serialize as empty CSV fields, never as zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::UpdateStats;
use crate::population::{Allocation, FitnessReport, IndividualId};

/// Trailing moving average; the first `window - 1` entries average what is
/// available. `None` entries are skipped; an all-`None` window yields `None`.
pub fn smooth(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window == 0 {
        return Err(Error::arg("smoothing window must be at least 1"));
    }
    Ok((0..series.len())
        .map(|n| {
            let lo = (n + 1).saturating_sub(window);
            let (sum, count) = series[lo..=n]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            (count > 0).then(|| sum / count as f64)
        })
        .collect())
}

/// [`smooth`] for a series without gaps.
pub fn smooth_dense(series: &[f64], window: usize) -> Result<Vec<f64>> {
    let wrapped: Vec<Option<f64>> = series.iter().copied().map(Some).collect();
    Ok(smooth(&wrapped, window)?.into_iter().map(|x| x.expect("dense input")).collect())
}

/// Per-island returns and their reductions over the archipelago.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandReductions {
    pub population: Vec<usize>,
    pub collective: Vec<Option<f64>>,
    pub per_capita: Vec<Option<f64>>,
    pub min_switch: Vec<Option<u32>>,
    pub max_collective: Option<f64>,
    pub max_per_capita: Option<f64>,
    pub max_population: Option<usize>,
    pub min_switching: Option<u32>,
}

fn max_f64(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

/// `switch_counts[i]` holds per-agent counters in roster order, or `None`
/// for games without switching costs.
pub fn island_reductions(
    report: &FitnessReport,
    allocation: &Allocation,
    switch_counts: &[Option<Vec<u32>>],
) -> Result<IslandReductions> {
    let n = allocation.num_islands();
    if switch_counts.len() != n {
        return Err(Error::integrity(format!("switch counts for {} islands, expected {n}", switch_counts.len())));
    }
    let mut population = Vec::with_capacity(n);
    let mut collective = Vec::with_capacity(n);
    let mut min_switch = Vec::with_capacity(n);
    for island in 0..n {
        let roster = allocation.island_roster(island);
        population.push(roster.len());
        if let Some(counts) = &switch_counts[island] {
            if counts.len() != roster.len() {
                return Err(Error::integrity(format!(
                    "island {island}: {} switch counters for {} agents",
                    counts.len(),
                    roster.len()
                )));
            }
        }
        if roster.is_empty() {
            collective.push(None);
            min_switch.push(None);
            continue;
        }
        let mut sum = 0.0;
        for id in &roster {
            sum += report
                .per_individual
                .get(id)
                .ok_or_else(|| Error::integrity(format!("no return recorded for {id:?}")))?;
        }
        collective.push(Some(sum));
        min_switch.push(switch_counts[island].as_ref().and_then(|c| c.iter().copied().min()));
    }
    let per_capita: Vec<Option<f64>> = collective
        .iter()
        .zip(&population)
        .map(|(c, &p)| c.map(|c| c / p as f64))
        .collect();
    Ok(IslandReductions {
        max_collective: max_f64(collective.iter().flatten().copied()),
        max_per_capita: max_f64(per_capita.iter().flatten().copied()),
        max_population: population.iter().copied().filter(|&p| p > 0).max(),
        min_switching: min_switch.iter().flatten().copied().min(),
        population,
        collective,
        per_capita,
        min_switch,
    })
}

/// One ecological step's row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub ecological_step: u64,
    /// `mu[species][island]` after the update.
    pub mu: Vec<Vec<f64>>,
    /// `population[species][island]`.
    pub population: Vec<Vec<usize>>,
    pub islands: Option<IslandReductions>,
    /// Mean solitary return per species.
    pub solitary: Vec<Option<f64>>,
    pub learner_updates: Vec<u64>,
    pub losses: Vec<Option<UpdateStats>>,
}

/// Which optional column groups a run emits; fixed for the whole run so
/// every row has the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvShape {
    pub num_species: usize,
    pub num_islands: usize,
    pub solitary: bool,
    pub switching: bool,
}

impl CsvShape {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["ecological_step".to_string()];
        for l in 0..self.num_species {
            h.push(format!("learner_updates_s{l}"));
        }
        for l in 0..self.num_species {
            for i in 0..self.num_islands {
                h.push(format!("mu_s{l}_i{i}"));
            }
        }
        for l in 0..self.num_species {
            for i in 0..self.num_islands {
                h.push(format!("pop_s{l}_i{i}"));
            }
        }
        for i in 0..self.num_islands {
            h.push(format!("collective_i{i}"));
        }
        for i in 0..self.num_islands {
            h.push(format!("per_capita_i{i}"));
        }
        if self.switching {
            for i in 0..self.num_islands {
                h.push(format!("min_switch_i{i}"));
            }
        }
        if self.num_islands > 0 {
            h.extend(["max_collective_return", "max_per_capita_return", "max_population"].map(String::from));
            if self.switching {
                h.push("min_switching_cost".into());
            }
        }
        if self.solitary {
            for l in 0..self.num_species {
                h.push(format!("solitary_return_s{l}"));
            }
        }
        for l in 0..self.num_species {
            h.extend([
                format!("policy_loss_s{l}"),
                format!("value_loss_s{l}"),
                format!("entropy_s{l}"),
                format!("total_loss_s{l}"),
            ]);
        }
        h
    }

    pub fn record(&self, row: &MetricsRow) -> Result<Vec<String>> {
        fn opt<T: ToString>(x: Option<T>) -> String {
            x.map(|v| v.to_string()).unwrap_or_default()
        }
        let (ns, ni) = (self.num_species, self.num_islands);
        let bad = |what: &str| Error::integrity(format!("metrics row does not match the CSV layout: {what}"));
        if row.learner_updates.len() != ns || row.losses.len() != ns {
            return Err(bad("species"));
        }
        let mut r = vec![row.ecological_step.to_string()];
        r.extend(row.learner_updates.iter().map(u64::to_string));
        if ni > 0 {
            if row.mu.len() != ns || row.mu.iter().any(|m| m.len() != ni) || row.population.len() != ns {
                return Err(bad("islands"));
            }
            r.extend(row.mu.iter().flatten().map(f64::to_string));
            r.extend(row.population.iter().flatten().map(usize::to_string));
            let isl = row.islands.as_ref().ok_or_else(|| bad("missing island reductions"))?;
            r.extend(isl.collective.iter().map(|&x| opt(x)));
            r.extend(isl.per_capita.iter().map(|&x| opt(x)));
            if self.switching {
                r.extend(isl.min_switch.iter().map(|&x| opt(x)));
            }
            r.extend([opt(isl.max_collective), opt(isl.max_per_capita), opt(isl.max_population)]);
            if self.switching {
                r.push(opt(isl.min_switching));
            }
        }
        if self.solitary {
            if row.solitary.len() != ns {
                return Err(bad("solitary"));
            }
            r.extend(row.solitary.iter().map(|&x| opt(x)));
        }
        for s in &row.losses {
            r.extend([
                opt(s.map(|s| s.policy_loss)),
                opt(s.map(|s| s.value_loss)),
                opt(s.map(|s| s.entropy)),
                opt(s.map(|s| s.total_loss)),
            ]);
        }
        Ok(r)
    }
}

/// Sum of all individual returns; equals the sum of island collective returns.
pub fn total_return(per_individual: &BTreeMap<IndividualId, f64>) -> f64 {
    per_individual.values().sum()
}

/// A metrics CSV read back as named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let row = rec
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Parse(format!("{} row {}: bad number `{f}`", path.display(), n + 2)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r.get(idx).copied().flatten()).collect())
    }
}

/// Line plot of `ys` against `xs` as a standalone SVG document.
pub fn line_plot_svg(title: &str, xs: &[f64], series: &[(&str, Vec<Option<f64>>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const PAD: f64 = 56.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ys = series.iter().flat_map(|(_, s)| s.iter().flatten().copied());
    let (mut y_min, mut y_max) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min { (x_min, x_max) } else { (0.0, 1.0) };
    let sx = |x: f64| PAD + (x - x_min) / (x_max - x_min) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_min) / (y_max - y_min) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} L{PAD} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = y_min + f * (y_max - y_min);
        let xv = x_min + f * (x_max - x_min);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 6.0, sy(yv) + 4.0, tick(yv));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - PAD + 18.0, tick(xv));
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (x, y) in xs.iter().zip(ys) {
            match y {
                Some(y) => {
                    let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, sx(*x), sy(*y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(svg, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, d.trim_end());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 * k as f64,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
