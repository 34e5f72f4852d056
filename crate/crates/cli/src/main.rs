use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use mdres_core::fv::{cell_current_density, Scheme};
use mdres_core::io::{fmt_f64, write_vtk, CellField, Table};
use mdres_core::mesh::write_msh;
use mdres_core::scenario::{RunResult, ScenarioConfig, SweepConfig};
use mdres_core::spatial::min_boundary_distance;
use mdres_core::survey::analytic_wenner_insulating;
use mdres_core::sweep::{depth_sweep, depth_table, uncertainty_sweep, uncertainty_table};
use mdres_core::Error;

/// Mixed-dimensional DC resistivity forward modeling.
#[derive(Parser)]
#[command(name = "mdres", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the grid, write it as MSH and report mesh diagnostics.
    Mesh(Common),
    /// Solve one scenario and write the summary and field files.
    Solve(Common),
    /// Run the depth or uncertainty sweep given in the config.
    Sweep(Common),
    /// Evaluate the layered-earth reference formula.
    Analytic(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the discretization scheme.
    #[arg(long, value_parser = ["tpfa", "mpfa"])]
    scheme: Option<String>,
    /// Concurrent solves in sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Io(_) => Failure::Io(m),
            Error::Config { .. }
            | Error::Parse { .. }
            | Error::InvalidSurvey(_)
            | Error::InvalidGeometry(_)
            | Error::NonConformingLiner { .. }
            | Error::UnmappedElectrode { .. }
            | Error::UnknownBoundaryTag(_) => Failure::Config(m),
            _ => Failure::Numerical(m),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (common, action): (&Common, fn(&ScenarioConfig, &Path) -> Result<(), Failure>) = match &command {
        Command::Mesh(c) => (c, cmd_mesh),
        Command::Solve(c) => (c, cmd_solve),
        Command::Sweep(c) => (c, cmd_sweep),
        Command::Analytic(c) => (c, cmd_analytic),
    };
    if common.jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let config = load(common)?;
    let out = common.out.clone().or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    pool.install(|| action(&config, &out))
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::load(&common.config).map_err(|e| match e {
        Error::Io(err) => io_failure(&common.config, err),
        other => other.into(),
    })?;
    if let Some(s) = &common.scheme {
        config.scheme = s.parse::<Scheme>().map_err(Failure::Config)?;
    }
    Ok(config)
}

fn write_table(table: &Table, path: &Path) -> Result<(), Failure> {
    std::fs::write(path, table.render()).map_err(|e| io_failure(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_mesh(config: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    let (grid, specs) = config.build_grid()?;
    let report = grid.bulk.check_invariants()?;
    grid.check_invariants()?;
    let path = out.join("mesh.msh");
    std::fs::write(&path, write_msh(&grid.bulk)).map_err(|e| io_failure(&path, e))?;
    info!("wrote {}", path.display());

    let mut t = Table::new(&["quantity", "value"]);
    let mut row = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    row("bulk_cells", report.cells.to_string());
    row("bulk_faces", report.faces.to_string());
    row("boundary_faces", report.boundary_faces.to_string());
    row("volume", fmt_f64(report.total_measure));
    row("min_cell_volume", fmt_f64(report.min_measure));
    row("max_closure", fmt_f64(report.max_closure));
    let (liner_cells, hole_area) = grid.liner.as_ref().map_or((0, 0.0), |l| (l.mesh.num_cells(), l.hole_area));
    row("liner_cells", liner_cells.to_string());
    row("hole_area", fmt_f64(hole_area));
    let mut overall = f64::INFINITY;
    for (i, (e, name)) in grid.electrodes.iter().zip(["C1", "P1", "P2", "C2"]).enumerate() {
        let d = min_boundary_distance(&grid.bulk, e);
        overall = overall.min(d);
        row(&format!("electrode_{i}_{name}_mapped_length"), fmt_f64(e.map.mapped_length()));
        row(&format!("electrode_{i}_{name}_min_boundary_distance"), fmt_f64(d));
    }
    row("min_electrode_boundary_distance", fmt_f64(overall));
    info!(
        "{} cells, {} electrodes, min electrode-to-cell-boundary distance {overall:.3e} m",
        report.cells,
        specs.len()
    );
    write_table(&t, &out.join("mesh_diagnostics.csv"))
}

fn summary_table(config: &ScenarioConfig, run: &RunResult) -> Table {
    let mut t = Table::new(&[
        "scheme",
        "gauge",
        "spacing",
        "center_x",
        "center_y",
        "axis",
        "sigma",
        "current",
        "domain_top",
        "liner_cells",
        "hole_area",
        "bulk_cells",
        "unknowns",
        "rho_a",
        "delta_phi",
        "geometric_factor",
        "injected",
        "extracted",
        "net_balance",
        "max_cell_imbalance",
        "relative_residual",
    ]);
    let (liner_cells, hole_area) = run.grid.liner.as_ref().map_or((0, 0.0), |l| (l.mesh.num_cells(), l.hole_area));
    let gauge = match config.gauge {
        mdres_core::solver::Gauge::Pin => "pin",
        mdres_core::solver::Gauge::NullAverage => "null-average",
    };
    t.push(vec![
        config.scheme.to_string(),
        gauge.to_string(),
        fmt_f64(config.survey.spacing),
        fmt_f64(config.survey.center[0]),
        fmt_f64(config.survey.center[1]),
        config.axis_name().to_string(),
        fmt_f64(config.water.sigma),
        fmt_f64(config.survey.current),
        fmt_f64(config.domain.origin[2] + config.domain.extents[2]),
        liner_cells.to_string(),
        fmt_f64(hole_area),
        run.grid.bulk.num_cells().to_string(),
        run.assembly.system.rhs.len().to_string(),
        fmt_f64(run.rho.value),
        fmt_f64(run.rho.delta_phi),
        fmt_f64(run.rho.k),
        fmt_f64(run.balance.injected),
        fmt_f64(run.balance.extracted),
        fmt_f64(run.balance.net),
        fmt_f64(run.balance.max_residual),
        fmt_f64(run.solution.relative_residual),
    ]);
    t
}

fn write_fields(run: &RunResult, out: &Path) -> Result<(), Failure> {
    let vtk = |name: &str, mesh, phi: &[f64], fluxes: &[f64]| -> Result<(), Failure> {
        let j = cell_current_density(mesh, fluxes);
        let path = out.join(format!("{name}.vtk"));
        write_vtk(&path, mesh, name, &[("phi", CellField::Scalars(phi)), ("current_density", CellField::Vectors(&j))])
            .map_err(|e| match e {
                Error::Io(err) => io_failure(&path, err),
                other => other.into(),
            })?;
        info!("wrote {}", path.display());
        Ok(())
    };
    let s = &run.solution;
    vtk("bulk", &run.grid.bulk, &s.bulk, &s.bulk_face_fluxes)?;
    if let Some(l) = &run.grid.liner {
        vtk("liner", &l.mesh, &s.liner, &s.liner_face_fluxes)?;
    }
    for (i, (e, name)) in run.grid.electrodes.iter().zip(["C1", "P1", "P2", "C2"]).enumerate() {
        vtk(&format!("electrode_{i}_{name}"), &e.mesh, &s.electrodes[i], &s.electrode_face_fluxes[i])?;
    }
    Ok(())
}

fn cmd_solve(config: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    let run = config.run()?;
    info!("{} rho_a = {:.6} Ohm m", config.scheme, run.rho.value);
    if run.balance.max_residual > 1e-8 * config.survey.current.abs() {
        warn!("largest cell imbalance {:.3e} A", run.balance.max_residual);
    }
    write_table(&summary_table(config, &run), &out.join("summary.csv"))?;
    if config.output.vtk {
        write_fields(&run, out)?;
    }
    Ok(())
}

fn cmd_sweep(config: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    match &config.sweep {
        None => Err(Failure::Config("configuration error at `sweep`: the config has no [sweep] table".into())),
        Some(SweepConfig::Depth { depths, strategies }) => {
            let rows = depth_sweep(config, depths, strategies)?;
            write_table(&depth_table(&rows), &out.join("sweep.csv"))
        }
        Some(SweepConfig::Uncertainty(u)) => {
            let (rows, hist) = uncertainty_sweep(config, u)?;
            write_table(&uncertainty_table(&rows), &out.join("sweep.csv"))?;
            write_table(&hist.table(), &out.join("histogram.csv"))
        }
    }
}

fn cmd_analytic(config: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    let Some(a) = &config.analytic else {
        return Err(Failure::Config("configuration error at `analytic`: the config has no [analytic] table".into()));
    };
    let rho = a.rho.unwrap_or(1.0 / config.water.sigma);
    let spacing = config.survey.spacing;
    let mut t = Table::new(&["rho", "spacing", "depth", "depth_over_spacing", "rho_analytic"]);
    for &h in &a.depths {
        t.push(vec![
            fmt_f64(rho),
            fmt_f64(spacing),
            fmt_f64(h),
            fmt_f64(h / spacing),
            fmt_f64(analytic_wenner_insulating(rho, spacing, h, a.rel_tol)),
        ]);
    }
    write_table(&t, &out.join("analytic.csv"))
}
