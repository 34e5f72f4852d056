//! Scenario files: one TOML document describing the water body, the liner,
//! the array and the discretization, with SI units throughout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::{assemble_problem, attach_electrodes, Assembly, ElectrodeSpec, MortarForm};
use crate::error::{Error, Result};
use crate::fv::{MaterialField, Scheme};
use crate::mesh::{
    embed_liner, load_msh, BoxMeshBuilder, Hole, LinerSpec, MixedDimGrid, Panel, RefinementRegion, Vec3,
};
use crate::solver::{check_balance, solve, BalanceReport, Gauge, Solution, SolverOptions};
use crate::survey::{apparent_resistivity, build_wenner, ApparentResistivity, Axis, SurveyConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Box extents (m).
    pub extents: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub cell_size: f64,
}

fn default_cell_size() -> f64 {
    0.05
}

fn default_electrode_cell_size() -> f64 {
    0.01
}

fn default_margin() -> f64 {
    0.04
}

fn default_cells_per_piece() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Background cell size (m).
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Cell size around the array (m).
    #[serde(default = "default_electrode_cell_size")]
    pub electrode_cell_size: f64,
    /// Extra refined width around the array, laterally and below the electrode tips (m).
    #[serde(default = "default_margin")]
    pub electrode_margin: f64,
    /// 1D cells per electrode.
    #[serde(default = "default_cells_per_piece")]
    pub electrode_cells: usize,
    #[serde(default)]
    pub refinements: Vec<RefinementConfig>,
    /// Read the bulk mesh from an MSH 4.1 file instead of meshing the box.
    #[serde(default)]
    pub msh: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            cell_size: default_cell_size(),
            electrode_cell_size: default_electrode_cell_size(),
            electrode_margin: default_margin(),
            electrode_cells: default_cells_per_piece(),
            refinements: Vec::new(),
            msh: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterConfig {
    /// Conductivity σ (S/m).
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxLinerConfig {
    pub min: [f64; 3],
    /// Upper corner; the walls always run up to the water surface.
    pub max: [f64; 3],
}

fn default_thickness() -> f64 {
    1e-3
}

fn default_liner_sigma() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinerConfig {
    #[serde(default)]
    pub panels: Vec<Panel>,
    /// Horizontal panel across the whole box at this depth below the surface (m).
    #[serde(default)]
    pub depth: Option<f64>,
    /// Open box: bottom plus four walls.
    #[serde(default, rename = "box")]
    pub open_box: Option<BoxLinerConfig>,
    #[serde(default)]
    pub holes: Vec<Hole>,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    #[serde(default = "default_liner_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub sigma_tangential: Option<f64>,
    /// Cell size around holes; defaults to half the hole radius.
    #[serde(default)]
    pub hole_cell_size: Option<f64>,
}

impl LinerConfig {
    pub fn horizontal(depth: f64) -> Self {
        LinerConfig {
            panels: Vec::new(),
            depth: Some(depth),
            open_box: None,
            holes: Vec::new(),
            thickness: default_thickness(),
            sigma: default_liner_sigma(),
            sigma_tangential: None,
            hole_cell_size: None,
        }
    }

    /// Panels resolved against the water box `[min, max]`.
    pub fn spec(&self, min: Vec3, max: Vec3) -> LinerSpec {
        let mut panels = self.panels.clone();
        if let Some(d) = self.depth {
            panels.push(Panel::horizontal(max.z - d, [min.x, max.x], [min.y, max.y]));
        }
        if let Some(b) = &self.open_box {
            let lo = Vec3::from(b.min);
            let hi = Vec3::new(b.max[0], b.max[1], max.z);
            panels.extend(LinerSpec::open_box(lo, hi, self.thickness, self.sigma).panels);
        }
        LinerSpec {
            panels,
            holes: self.holes.clone(),
            thickness: self.thickness,
            sigma: self.sigma,
            sigma_tangential: self.sigma_tangential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write VTK fields for `solve`.
    #[serde(default = "default_true")]
    pub vtk: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, vtk: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Resistive liner embedded at the given depth.
    #[default]
    Interface,
    /// Water body cut off at the given depth.
    Truncated,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Interface => "interface",
            Strategy::Truncated => "truncated",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Factorial,
    Random,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

fn default_bins() -> usize {
    10
}

/// Perturbation offsets applied to the base scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Water level offsets (m).
    #[serde(default = "zero_list")]
    pub water_level: Vec<f64>,
    /// Water resistivity offsets (Ω·m).
    #[serde(default = "zero_list")]
    pub resistivity: Vec<f64>,
    /// Hole radius offsets (m), applied to every hole.
    #[serde(default = "zero_list")]
    pub hole_radius: Vec<f64>,
    /// Array shifts along x and y (m).
    #[serde(default = "zero_list")]
    pub shift_x: Vec<f64>,
    #[serde(default = "zero_list")]
    pub shift_y: Vec<f64>,
    #[serde(default)]
    pub mode: SamplingMode,
    /// Number of samples in random mode, drawn uniformly between the extreme offsets.
    #[serde(default)]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            water_level: zero_list(),
            resistivity: zero_list(),
            hole_radius: zero_list(),
            shift_x: zero_list(),
            shift_y: zero_list(),
            mode: SamplingMode::Factorial,
            samples: 0,
            seed: 0,
            bins: default_bins(),
        }
    }
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Interface, Strategy::Truncated]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SweepConfig {
    Depth {
        /// Liner depths below the surface (m).
        depths: Vec<f64>,
        #[serde(default = "default_strategies")]
        strategies: Vec<Strategy>,
    },
    Uncertainty(UncertaintyConfig),
}

/// Layer thicknesses for the `analytic` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticConfig {
    /// Layer resistivity; defaults to 1 / water.sigma.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Layer thicknesses (m).
    pub depths: Vec<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub water: WaterConfig,
    #[serde(default)]
    pub liner: Option<LinerConfig>,
    pub survey: SurveyConfig,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub gauge: Gauge,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub analytic: Option<AnalyticConfig>,
}

/// Everything produced by one forward run.
#[derive(Debug)]
pub struct RunResult {
    pub grid: MixedDimGrid,
    pub specs: Vec<ElectrodeSpec>,
    pub assembly: Assembly,
    pub solution: Solution,
    pub rho: ApparentResistivity,
    pub balance: BalanceReport,
}

impl ScenarioConfig {
    /// Parses and validates a scenario. Errors name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.message().to_string()))?;
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(msh), Some(dir)) = (&config.mesh.msh, path.parent()) {
            if msh.is_relative() {
                config.mesh.msh = Some(dir.join(msh));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("{v} must be positive")))
            }
        };
        for (i, &e) in self.domain.extents.iter().enumerate() {
            positive(&format!("domain.extents[{i}]"), e)?;
        }
        positive("mesh.cell_size", self.mesh.cell_size)?;
        positive("mesh.electrode_cell_size", self.mesh.electrode_cell_size)?;
        if !(self.mesh.electrode_margin >= 0.0) {
            return Err(Error::config("mesh.electrode_margin", "must be non-negative"));
        }
        if self.mesh.electrode_cells == 0 {
            return Err(Error::config("mesh.electrode_cells", "must be at least 1"));
        }
        for (i, r) in self.mesh.refinements.iter().enumerate() {
            positive(&format!("mesh.refinements[{i}].cell_size"), r.cell_size)?;
        }
        positive("water.sigma", self.water.sigma)?;
        positive("survey.spacing", self.survey.spacing)?;
        if self.survey.current == 0.0 || !self.survey.current.is_finite() {
            return Err(Error::config("survey.current", "must be finite and non-zero"));
        }
        positive("survey.electrode.radius", self.survey.electrode.radius)?;
        positive("survey.electrode.length", self.survey.electrode.length)?;
        positive("survey.electrode.sigma", self.survey.electrode.sigma)?;
        if let Some(l) = &self.liner {
            positive("liner.thickness", l.thickness)?;
            positive("liner.sigma", l.sigma)?;
            if let Some(d) = l.depth {
                if !(d > 0.0 && d < self.domain.extents[2]) {
                    return Err(Error::config("liner.depth", format!("{d} must lie inside the domain height")));
                }
            }
            if let Some(s) = l.hole_cell_size {
                positive("liner.hole_cell_size", s)?;
            }
            for (i, h) in l.holes.iter().enumerate() {
                positive(&format!("liner.holes[{i}].radius"), h.radius)?;
            }
        }
        match &self.sweep {
            Some(SweepConfig::Depth { depths, .. }) => {
                for (i, &d) in depths.iter().enumerate() {
                    if !(d > 0.0 && d < self.domain.extents[2]) {
                        return Err(Error::config(
                            format!("sweep.depths[{i}]"),
                            format!("{d} must lie inside the domain height"),
                        ));
                    }
                }
            }
            Some(SweepConfig::Uncertainty(u)) => {
                for (name, list) in [
                    ("water_level", &u.water_level),
                    ("resistivity", &u.resistivity),
                    ("hole_radius", &u.hole_radius),
                    ("shift_x", &u.shift_x),
                    ("shift_y", &u.shift_y),
                ] {
                    if list.is_empty() || list.iter().any(|v| !v.is_finite()) {
                        return Err(Error::config(format!("sweep.{name}"), "needs at least one finite offset"));
                    }
                }
                if u.mode == SamplingMode::Random && u.samples == 0 {
                    return Err(Error::config("sweep.samples", "random mode needs samples > 0"));
                }
                if u.bins == 0 {
                    return Err(Error::config("sweep.bins", "must be at least 1"));
                }
            }
            None => {}
        }
        if let Some(a) = &self.analytic {
            if let Some(rho) = a.rho {
                positive("analytic.rho", rho)?;
            }
            for (i, &d) in a.depths.iter().enumerate() {
                positive(&format!("analytic.depths[{i}]"), d)?;
            }
            positive("analytic.rel_tol", a.rel_tol)?;
        }
        Ok(())
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let min = Vec3::from(self.domain.origin);
        (min, min + Vec3::from(self.domain.extents))
    }

    /// Water box with a horizontal liner at `depth`, array centered in the box.
    pub fn layered(extents: [f64; 3], sigma: f64, spacing: f64, depth: f64) -> Self {
        ScenarioConfig {
            domain: DomainConfig { extents, origin: [0.0; 3] },
            mesh: MeshConfig::default(),
            water: WaterConfig { sigma },
            liner: Some(LinerConfig::horizontal(depth)),
            survey: SurveyConfig::new([0.5 * extents[0], 0.5 * extents[1]], spacing),
            scheme: Scheme::Mpfa,
            gauge: Gauge::NullAverage,
            solver: SolverOptions::default(),
            output: OutputConfig::default(),
            sweep: None,
            analytic: None,
        }
    }

    /// The 52 x 34 x 40 cm tank filled with 1/29 S/m water.
    pub fn tank(spacing: f64, depth: f64) -> Self {
        Self::layered([0.52, 0.34, 0.40], 1.0 / 29.0, spacing, depth)
    }

    /// The laterally extended 1 x 1 x 0.4 m box.
    pub fn extended(spacing: f64, depth: f64) -> Self {
        Self::layered([1.0, 1.0, 0.40], 1.0 / 29.0, spacing, depth)
    }

    /// Open box liner in the tank, 1/24 S/m water up to the box rim. The mesh
    /// is refined around the hole position whether or not the hole is open.
    /// `case` 1: a = 3 cm, all electrodes inside the box; 2: a = 6 cm with C1
    /// outside; 3: a = 6 cm with C1 and P1 outside.
    pub fn box_liner(case: u8, hole: bool) -> Self {
        let (spacing, x0) = match case {
            1 => (0.03, 0.26),
            2 => (0.06, 0.26),
            _ => (0.06, 0.20),
        };
        let center = [0.255, 0.185, 0.072];
        let radius = 0.0025;
        let mut liner = LinerConfig::horizontal(0.0);
        liner.depth = None;
        liner.open_box = Some(BoxLinerConfig { min: [0.205, 0.105, 0.072], max: [0.405, 0.245, 0.144] });
        if hole {
            liner.holes.push(Hole { center, radius });
        }
        let mut config = Self::layered([0.52, 0.34, 0.144], 1.0 / 24.0, spacing, 0.1);
        config.liner = Some(liner);
        config.survey.center = [x0, 0.17];
        let r = 3.0 * radius;
        config.mesh.refinements.push(RefinementConfig {
            min: [center[0] - r, center[1] - r, center[2] - r],
            max: [center[0] + r, center[1] + r, center[2] + r],
            cell_size: 0.5 * radius,
        });
        config
    }

    /// Builds the bulk mesh, embeds the liner and maps the array.
    pub fn build_grid(&self) -> Result<(MixedDimGrid, Vec<ElectrodeSpec>)> {
        let (min, max) = self.bounds();
        let specs = build_wenner(&self.survey, min, max)?.to_vec();
        let liner = self.liner.as_ref().map(|l| l.spec(min, max));
        let bulk = match &self.mesh.msh {
            Some(path) => load_msh(path)?,
            None => self.mesh_builder(&specs, liner.as_ref())?.build()?,
        };
        let mut grid = match &liner {
            Some(spec) => embed_liner(bulk, spec)?,
            None => MixedDimGrid::bulk_only(bulk),
        };
        for w in &grid.warnings {
            log::warn!("{w}");
        }
        attach_electrodes(&mut grid, &specs, self.mesh.electrode_cells)?;
        Ok((grid, specs))
    }

    /// Box lattice refined around the array and the holes, with lattice
    /// planes on every liner panel and panel edge.
    pub fn mesh_builder(&self, specs: &[ElectrodeSpec], liner: Option<&LinerSpec>) -> Result<BoxMeshBuilder> {
        let (min, max) = self.bounds();
        let clip = |lo: Vec3, hi: Vec3| (lo.sup(&min), hi.inf(&max));
        let mut builder = BoxMeshBuilder::new(Vec3::from(self.domain.extents), self.mesh.cell_size).origin(min);
        let hf = self.mesh.electrode_cell_size;
        // Electrodes sit in the middle of a refined cell column.
        let pad = ((self.mesh.electrode_margin / hf).ceil() + 0.5) * hf;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in specs {
            for p in s.points() {
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        if !specs.is_empty() {
            let depth = ((hi.z - lo.z + self.mesh.electrode_margin) / hf).ceil().max(1.0) * hf;
            let (a, b) =
                clip(Vec3::new(lo.x - pad, lo.y - pad, max.z - depth), Vec3::new(hi.x + pad, hi.y + pad, max.z));
            builder = builder.refine(RefinementRegion::new(a, b, hf));
        }
        for r in &self.mesh.refinements {
            let (a, b) = clip(Vec3::from(r.min), Vec3::from(r.max));
            builder = builder.refine(RefinementRegion::new(a, b, r.cell_size));
        }
        if let Some(spec) = liner {
            for p in &spec.panels {
                builder = builder.plane(p.normal_axis, p.position);
                let axes = p.in_plane_axes();
                for k in 0..2 {
                    builder = builder.plane(axes[k], p.lower[k]).plane(axes[k], p.upper[k]);
                }
            }
            let hole_size = self.liner.as_ref().and_then(|l| l.hole_cell_size);
            for h in &spec.holes {
                let size = hole_size.unwrap_or(0.5 * h.radius);
                let c = Vec3::from(h.center);
                let (a, b) = clip(c - Vec3::repeat(3.0 * h.radius), c + Vec3::repeat(3.0 * h.radius));
                builder = builder.refine(RefinementRegion::new(a, b, size));
                for axis in 0..3 {
                    builder = builder.plane(axis, c[axis]);
                }
            }
        }
        Ok(builder)
    }

    pub fn run(&self) -> Result<RunResult> {
        let (grid, specs) = self.build_grid()?;
        let material = MaterialField::uniform(grid.bulk.num_cells(), self.water.sigma)?;
        let assembly = assemble_problem(&grid, &material, &specs, self.scheme, MortarForm::Eliminated)?;
        let solution = solve(&assembly, self.gauge, &self.solver)?;
        let rho = apparent_resistivity(&solution, &self.survey, 0)?;
        let balance = check_balance(&assembly, &solution);
        log::info!(
            "{} bulk cells, {} unknowns, rho_a = {:.6} Ohm m, residual {:.2e}",
            grid.bulk.num_cells(),
            assembly.system.rhs.len(),
            rho.value,
            solution.relative_residual
        );
        Ok(RunResult { grid, specs, assembly, solution, rho, balance })
    }

    /// Same scenario with the array moved by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        let mut c = self.clone();
        c.survey.center[0] += dx;
        c.survey.center[1] += dy;
        c
    }

    /// Axis label of the array, for output rows.
    pub fn axis_name(&self) -> &'static str {
        match self.survey.axis {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}
