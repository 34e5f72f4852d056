//! Parameter sweeps over a base scenario: liner depth and measurement
//! uncertainty. Solves run on the ambient rayon pool; rows come back in
//! parameter order whatever the completion order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, Table};
use crate::scenario::{LinerConfig, SamplingMode, ScenarioConfig, Strategy, UncertaintyConfig};
use crate::survey::analytic_wenner_insulating;

/// Fractions of the array length quoted as investigation depths of a
/// Wenner array. Reported with every depth row, not computed.
pub const INVESTIGATION_DEPTH_FACTORS: [f64; 2] = [0.11, 0.17];

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRow {
    pub strategy: Strategy,
    /// Liner depth, or water height of the truncated domain (m).
    pub depth: f64,
    pub config: ScenarioConfig,
    pub cells: usize,
    pub rho: f64,
    pub delta_phi: f64,
    pub analytic: f64,
    pub residual: f64,
    pub max_balance: f64,
}

impl DepthRow {
    pub fn relative_error(&self) -> f64 {
        self.rho / self.analytic - 1.0
    }
}

/// Scenario for one depth under one strategy.
pub fn depth_variant(base: &ScenarioConfig, depth: f64, strategy: Strategy) -> ScenarioConfig {
    let mut c = base.clone();
    c.sweep = None;
    match strategy {
        Strategy::Interface => {
            let mut liner = base.liner.clone().unwrap_or_else(|| LinerConfig::horizontal(depth));
            liner.depth = Some(depth);
            liner.panels.clear();
            liner.open_box = None;
            c.liner = Some(liner);
        }
        Strategy::Truncated => {
            let top = base.domain.origin[2] + base.domain.extents[2];
            c.domain.origin[2] = top - depth;
            c.domain.extents[2] = depth;
            c.liner = None;
        }
    }
    c
}

/// One solve per (strategy, depth), strategies outermost.
pub fn depth_sweep(base: &ScenarioConfig, depths: &[f64], strategies: &[Strategy]) -> Result<Vec<DepthRow>> {
    let top = base.domain.origin[2] + base.domain.extents[2];
    for &d in depths {
        if !(d > 0.0 && d < base.domain.extents[2]) {
            return Err(Error::config("sweep.depths", format!("{d} must lie inside the domain height")));
        }
    }
    let jobs: Vec<(Strategy, f64)> = strategies.iter().flat_map(|&s| depths.iter().map(move |&d| (s, d))).collect();
    jobs.par_iter()
        .map(|&(strategy, depth)| {
            let config = depth_variant(base, depth, strategy);
            let run = config.run()?;
            log::info!("{strategy} depth {depth} m (surface at {top} m): rho_a = {:.6}", run.rho.value);
            Ok(DepthRow {
                strategy,
                depth,
                cells: run.grid.bulk.num_cells(),
                rho: run.rho.value,
                delta_phi: run.rho.delta_phi,
                analytic: analytic_wenner_insulating(1.0 / base.water.sigma, base.survey.spacing, depth, 1e-12),
                residual: run.solution.relative_residual,
                max_balance: run.balance.max_residual,
                config,
            })
        })
        .collect()
}

pub fn depth_table(rows: &[DepthRow]) -> Table {
    let mut t = Table::new(&[
        "strategy",
        "scheme",
        "depth",
        "spacing",
        "center_x",
        "center_y",
        "axis",
        "sigma",
        "domain_bottom",
        "domain_top",
        "cell_size",
        "electrode_cell_size",
        "cells",
        "rho_a",
        "delta_phi",
        "rho_analytic",
        "relative_error",
        "investigation_depth_011",
        "investigation_depth_017",
        "relative_residual",
        "max_cell_imbalance",
    ]);
    for r in rows {
        let c = &r.config;
        let length = 3.0 * c.survey.spacing;
        t.push(vec![
            r.strategy.to_string(),
            c.scheme.to_string(),
            fmt_f64(r.depth),
            fmt_f64(c.survey.spacing),
            fmt_f64(c.survey.center[0]),
            fmt_f64(c.survey.center[1]),
            c.axis_name().to_string(),
            fmt_f64(c.water.sigma),
            fmt_f64(c.domain.origin[2]),
            fmt_f64(c.domain.origin[2] + c.domain.extents[2]),
            fmt_f64(c.mesh.cell_size),
            fmt_f64(c.mesh.electrode_cell_size),
            r.cells.to_string(),
            fmt_f64(r.rho),
            fmt_f64(r.delta_phi),
            fmt_f64(r.analytic),
            fmt_f64(r.relative_error()),
            fmt_f64(INVESTIGATION_DEPTH_FACTORS[0] * length),
            fmt_f64(INVESTIGATION_DEPTH_FACTORS[1] * length),
            fmt_f64(r.residual),
            fmt_f64(r.max_balance),
        ]);
    }
    t
}

/// Offsets of one uncertainty sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Perturbation {
    pub water_level: f64,
    pub resistivity: f64,
    pub hole_radius: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

/// Full grid in factorial mode (water level outermost, shift_y innermost),
/// otherwise `samples` uniform draws between the extreme offsets.
pub fn perturbations(u: &UncertaintyConfig) -> Vec<Perturbation> {
    let lists = [&u.water_level, &u.resistivity, &u.hole_radius, &u.shift_x, &u.shift_y];
    let make = |v: [f64; 5]| Perturbation {
        water_level: v[0],
        resistivity: v[1],
        hole_radius: v[2],
        shift_x: v[3],
        shift_y: v[4],
    };
    match u.mode {
        SamplingMode::Factorial => {
            let mut out = vec![[0.0; 5]];
            for (k, list) in lists.iter().enumerate() {
                out = out
                    .into_iter()
                    .flat_map(|p| {
                        list.iter().map(move |&v| {
                            let mut q = p;
                            q[k] = v;
                            q
                        })
                    })
                    .collect();
            }
            out.into_iter().map(make).collect()
        }
        SamplingMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(u.seed);
            let ranges: Vec<(f64, f64)> = lists
                .iter()
                .map(|l| {
                    let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
                .collect();
            (0..u.samples)
                .map(|_| {
                    let mut v = [0.0; 5];
                    for (k, &(lo, hi)) in ranges.iter().enumerate() {
                        v[k] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                    }
                    make(v)
                })
                .collect()
        }
    }
}

/// Applies a perturbation. The water level moves the surface; a horizontal
/// liner given by its depth stays where it is, box walls follow the surface.
pub fn perturbed(base: &ScenarioConfig, p: &Perturbation) -> Result<ScenarioConfig> {
    let mut c = base.shifted(p.shift_x, p.shift_y);
    c.sweep = None;
    c.domain.extents[2] += p.water_level;
    let rho = 1.0 / base.water.sigma + p.resistivity;
    if !(rho > 0.0) {
        return Err(Error::config(
            "sweep.resistivity",
            format!("offset {} leaves a non-positive resistivity", p.resistivity),
        ));
    }
    if p.resistivity != 0.0 {
        c.water.sigma = 1.0 / rho;
    }
    if let Some(liner) = &mut c.liner {
        if let Some(d) = &mut liner.depth {
            *d += p.water_level;
        }
        for h in &mut liner.holes {
            h.radius += p.hole_radius;
            if !(h.radius > 0.0) {
                return Err(Error::config("sweep.hole_radius", format!("offset {} closes a hole", p.hole_radius)));
            }
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyRow {
    pub sample: usize,
    pub perturbation: Perturbation,
    pub config: ScenarioConfig,
    pub hole_area: f64,
    pub cells: usize,
    pub rho: f64,
    pub delta_phi: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `bins` equal bins over `[min, max]` of the values; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    if values.is_empty() {
        return Histogram { edges: Vec::new(), counts: vec![0; bins] };
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

impl Histogram {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["bin", "lower", "upper", "count"]);
        for (k, &n) in self.counts.iter().enumerate() {
            let (a, b) = match (self.edges.get(k), self.edges.get(k + 1)) {
                (Some(&a), Some(&b)) => (a, b),
                _ => (f64::NAN, f64::NAN),
            };
            t.push(vec![k.to_string(), fmt_f64(a), fmt_f64(b), n.to_string()]);
        }
        t
    }
}

pub fn uncertainty_sweep(base: &ScenarioConfig, u: &UncertaintyConfig) -> Result<(Vec<UncertaintyRow>, Histogram)> {
    let samples = perturbations(u);
    let configs: Vec<ScenarioConfig> = samples.iter().map(|p| perturbed(base, p)).collect::<Result<_>>()?;
    let rows: Vec<UncertaintyRow> = samples
        .par_iter()
        .zip(configs.into_par_iter())
        .enumerate()
        .map(|(sample, (p, config))| {
            let run = config.run()?;
            Ok(UncertaintyRow {
                sample,
                perturbation: *p,
                hole_area: run.grid.liner.as_ref().map_or(0.0, |l| l.hole_area),
                cells: run.grid.bulk.num_cells(),
                rho: run.rho.value,
                delta_phi: run.rho.delta_phi,
                residual: run.solution.relative_residual,
                config,
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    let hist = histogram(&values, u.bins);
    Ok((rows, hist))
}

pub fn uncertainty_table(rows: &[UncertaintyRow]) -> Table {
    let mut t = Table::new(&[
        "sample",
        "scheme",
        "water_level_offset",
        "resistivity_offset",
        "hole_radius_offset",
        "shift_x",
        "shift_y",
        "water_surface",
        "resistivity",
        "hole_radius",
        "hole_area",
        "center_x",
        "center_y",
        "spacing",
        "axis",
        "cells",
        "rho_a",
        "delta_phi",
        "relative_residual",
    ]);
    for r in rows {
        let c = &r.config;
        let p = &r.perturbation;
        let radius = c.liner.as_ref().and_then(|l| l.holes.first()).map_or(f64::NAN, |h| h.radius);
        t.push(vec![
            r.sample.to_string(),
            c.scheme.to_string(),
            fmt_f64(p.water_level),
            fmt_f64(p.resistivity),
            fmt_f64(p.hole_radius),
            fmt_f64(p.shift_x),
            fmt_f64(p.shift_y),
            fmt_f64(c.domain.origin[2] + c.domain.extents[2]),
            fmt_f64(1.0 / c.water.sigma),
            fmt_f64(radius),
            fmt_f64(r.hole_area),
            fmt_f64(c.survey.center[0]),
            fmt_f64(c.survey.center[1]),
            fmt_f64(c.survey.spacing),
            c.axis_name().to_string(),
            r.cells.to_string(),
            fmt_f64(r.rho),
            fmt_f64(r.delta_phi),
            fmt_f64(r.residual),
        ]);
    }
    t
}
