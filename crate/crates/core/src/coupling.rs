//! Exchange laws between dimensions and the global mixed-dimensional system.
//!
//! Every exchange is a link between a bulk cell and a lower-dimensional cell
//! with conductance `g`; the current `g (phi_bulk - phi_low)` leaves the bulk
//! cell and enters the lower-dimensional cell.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fv::{self, half_transmissibility, DiscreteOperator, MaterialField, Scheme};
use crate::mesh::{LinerGrid, MixedDimGrid, SubdomainMesh, Vec3, NO_CELL};
use crate::sparse::CsrMatrix;
use crate::spatial::{self, ElectrodeGrid, ELECTRODE_TOP_TAG};

/// `2 pi sigma / (ln(r_e / r) + S)` with `r_e = 0.2 h`.
pub fn peaceman_conductance(sigma_bulk: f64, radius: f64, h_cell: f64, skin: f64) -> Result<f64> {
    let equivalent_radius = 0.2 * h_cell;
    let denominator = (equivalent_radius / radius).ln() + skin;
    if !(denominator > 0.0) {
        return Err(Error::NonpositiveDenominator { denominator, equivalent_radius, radius });
    }
    Ok(2.0 * std::f64::consts::PI * sigma_bulk / denominator)
}

fn default_scale() -> f64 {
    1.0
}

/// A reduced cylindrical electrode. The first polyline point is the top end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSpec {
    pub polyline: Vec<[f64; 3]>,
    /// Radius r (m).
    pub radius: f64,
    /// Material conductivity σ_Γ (S/m).
    pub sigma: f64,
    #[serde(default)]
    pub skin: f64,
    /// Current injected at the top end (A); zero for potential electrodes.
    #[serde(default)]
    pub current: f64,
    /// Multiplier on the interface conductance σ_γ.
    #[serde(default = "default_scale")]
    pub exchange_scale: f64,
}

impl ElectrodeSpec {
    /// Vertical electrode hanging down from `top`.
    pub fn vertical(top: Vec3, length: f64, radius: f64, sigma: f64) -> Self {
        ElectrodeSpec {
            polyline: vec![top.into(), (top - Vec3::new(0.0, 0.0, length)).into()],
            radius,
            sigma,
            skin: 0.0,
            current: 0.0,
            exchange_scale: 1.0,
        }
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.polyline.iter().map(|&p| Vec3::from(p)).collect()
    }

    pub fn length(&self) -> f64 {
        self.points().windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.polyline.len() < 2 || !(self.length() > 0.0) {
            return Err(Error::InvalidGeometry("electrode needs a polyline of positive length".into()));
        }
        if !(self.radius > 0.0) || !(self.sigma > 0.0) || !(self.skin >= 0.0) || !(self.exchange_scale > 0.0) {
            return Err(Error::InvalidGeometry(
                "electrode radius, conductivity and exchange scale must be positive and the skin factor non-negative"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Meshes the electrodes and maps them into the bulk of `grid`.
pub fn attach_electrodes(grid: &mut MixedDimGrid, specs: &[ElectrodeSpec], cells_per_piece: usize) -> Result<()> {
    for spec in specs {
        spec.validate()?;
    }
    let lines: Vec<Vec<Vec3>> = specs.iter().map(|s| s.points()).collect();
    let offset = grid.electrodes.len();
    let mut new = spatial::map_electrodes(&grid.bulk, &lines, cells_per_piece).map_err(|e| match e {
        Error::UnmappedElectrode { electrode, residual } => {
            Error::UnmappedElectrode { electrode: electrode + offset, residual }
        }
        other => other,
    })?;
    grid.electrodes.append(&mut new);
    Ok(())
}

/// One exchange link between a bulk cell and a lower-dimensional cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub bulk_cell: usize,
    pub low_cell: usize,
    /// Conductance (S).
    pub conductance: f64,
}

/// The exchange links of one lower-dimensional subdomain.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub links: Vec<Link>,
    /// For liner blocks, the bulk face each link crosses.
    pub faces: Vec<usize>,
}

impl CouplingBlock {
    /// Exchange currents from the bulk into the lower-dimensional cells.
    pub fn currents(&self, bulk_phi: &[f64], low_phi: &[f64]) -> Vec<f64> {
        self.links.iter().map(|l| l.conductance * (bulk_phi[l.bulk_cell] - low_phi[l.low_cell])).collect()
    }
}

pub fn assemble_electrode(
    bulk: &SubdomainMesh,
    bulk_material: &MaterialField,
    electrode: &ElectrodeGrid,
    spec: &ElectrodeSpec,
    id: usize,
) -> Result<CouplingBlock> {
    if electrode.map.entries.is_empty() {
        return Err(Error::UnmappedElectrode { electrode: id, residual: electrode.map.total_length });
    }
    let links = electrode
        .map
        .entries
        .iter()
        .map(|e| {
            let h = bulk.cell_diameter(e.bulk_cell);
            let sigma_gamma = peaceman_conductance(bulk_material.sigma(e.bulk_cell), spec.radius, h, spec.skin)?;
            Ok(Link {
                bulk_cell: e.bulk_cell,
                low_cell: e.electrode_cell,
                conductance: spec.exchange_scale * sigma_gamma * e.length,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CouplingBlock { links, faces: Vec::new() })
}

/// Robin exchange across the liner, `C = sigma_lambda A / eps` in series with
/// the bulk half-transmissibility toward the face, on both sides.
pub fn assemble_liner(bulk: &SubdomainMesh, bulk_material: &MaterialField, liner: &LinerGrid) -> Result<CouplingBlock> {
    let n = liner.mesh.num_cells();
    let mut links = Vec::with_capacity(2 * n);
    let mut faces = Vec::with_capacity(2 * n);
    for side in &liner.sides {
        if side.len() != n {
            return Err(Error::AssemblyMismatch("liner side maps do not cover every liner cell".into()));
        }
        for pair in side {
            let slot = bulk.slot_of(pair.bulk_cell, pair.bulk_face).ok_or(Error::BrokenMortar(pair.bulk_face))?;
            if bulk.face_cells(pair.bulk_face)[1] != NO_CELL {
                return Err(Error::BrokenMortar(pair.bulk_face));
            }
            let alpha = half_transmissibility(bulk, bulk_material.sigma(pair.bulk_cell), pair.bulk_cell, slot);
            let c = liner.spec.sigma * bulk.face_area(pair.bulk_face) / liner.spec.thickness;
            links.push(Link {
                bulk_cell: pair.bulk_cell,
                low_cell: pair.liner_cell,
                conductance: alpha * c / (alpha + c),
            });
            faces.push(pair.bulk_face);
        }
    }
    Ok(CouplingBlock { links, faces })
}

/// Global unknown ranges: bulk cells, liner cells, electrode cells, then
/// (only in the explicit form) one exchange unknown per link.
#[derive(Clone, Debug, PartialEq)]
pub struct DofLayout {
    pub bulk: Range<usize>,
    pub liner: Range<usize>,
    pub electrodes: Vec<Range<usize>>,
    pub mortars: Range<usize>,
}

impl DofLayout {
    pub fn len(&self) -> usize {
        self.mortars.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn potentials(&self) -> usize {
        self.mortars.start
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MortarForm {
    /// Exchange unknowns eliminated; the system holds potentials only.
    #[default]
    Eliminated,
    /// One unknown and one equation per exchange link.
    Explicit,
}

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub layout: DofLayout,
    /// Gauge weights: cell measures for potentials, zero for exchange unknowns.
    pub weights: Vec<f64>,
}

/// Everything assembled for one mixed-dimensional problem.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub system: LinearSystem,
    pub bulk_op: DiscreteOperator,
    pub liner_op: Option<DiscreteOperator>,
    pub electrode_ops: Vec<DiscreteOperator>,
    pub liner_block: Option<CouplingBlock>,
    pub electrode_blocks: Vec<CouplingBlock>,
    pub injections: Vec<Vec<f64>>,
}

/// Top-end injections of each electrode as right-hand sides on its 1D mesh.
pub fn electrode_injections(grid: &MixedDimGrid, specs: &[ElectrodeSpec]) -> Result<Vec<Vec<f64>>> {
    grid.electrodes
        .iter()
        .zip(specs)
        .map(|(e, s)| fv::neumann_rhs(&e.mesh, &BTreeMap::from([(ELECTRODE_TOP_TAG, s.current)])))
        .collect()
}

/// Builds the global system from assembled blocks. Blocks are merged in
/// canonical order, so the result does not depend on how they were computed.
#[allow(clippy::too_many_arguments)]
pub fn assemble_global(
    grid: &MixedDimGrid,
    bulk_op: &DiscreteOperator,
    liner_op: Option<&DiscreteOperator>,
    electrode_ops: &[DiscreteOperator],
    liner_block: Option<&CouplingBlock>,
    electrode_blocks: &[CouplingBlock],
    injections: &[Vec<f64>],
    form: MortarForm,
) -> Result<LinearSystem> {
    let nb = grid.bulk.num_cells();
    if bulk_op.num_cells() != nb {
        return Err(Error::AssemblyMismatch("bulk operator does not match the bulk mesh".into()));
    }
    let nl = grid.liner.as_ref().map_or(0, |l| l.mesh.num_cells());
    if liner_op.map_or(0, |op| op.num_cells()) != nl || liner_block.is_some() != (nl > 0) {
        return Err(Error::AssemblyMismatch("liner operator or coupling does not match the liner mesh".into()));
    }
    let ne = grid.electrodes.len();
    if electrode_ops.len() != ne || electrode_blocks.len() != ne || injections.len() != ne {
        return Err(Error::AssemblyMismatch(format!(
            "{ne} electrodes but mismatched operators, couplings or injections"
        )));
    }
    let mut next = nb + nl;
    let mut electrodes = Vec::with_capacity(ne);
    for (i, e) in grid.electrodes.iter().enumerate() {
        let n = e.mesh.num_cells();
        if electrode_ops[i].num_cells() != n || injections[i].len() != n {
            return Err(Error::AssemblyMismatch(format!("electrode {i} blocks do not match its mesh")));
        }
        electrodes.push(next..next + n);
        next += n;
    }
    let blocks: Vec<(&CouplingBlock, usize, usize)> = liner_block
        .map(|b| (b, nb, nl))
        .into_iter()
        .chain(electrode_blocks.iter().zip(&electrodes).map(|(b, r)| (b, r.start, r.len())))
        .collect();
    let n_links: usize = blocks.iter().map(|b| b.0.links.len()).sum();
    let mortars = match form {
        MortarForm::Eliminated => next..next,
        MortarForm::Explicit => next..next + n_links,
    };
    let layout = DofLayout { bulk: 0..nb, liner: nb..nb + nl, electrodes, mortars };
    let n = layout.len();

    let mut triplets = bulk_op.triplets(0);
    if let Some(op) = liner_op {
        triplets.extend(op.triplets(nb));
    }
    for (op, range) in electrode_ops.iter().zip(&layout.electrodes) {
        triplets.extend(op.triplets(range.start));
    }
    let mut m = layout.mortars.start;
    for &(block, offset, count) in &blocks {
        for link in &block.links {
            if link.bulk_cell >= nb || link.low_cell >= count || !(link.conductance > 0.0) {
                return Err(Error::AssemblyMismatch(format!(
                    "link between bulk cell {} and cell {} is invalid",
                    link.bulk_cell, link.low_cell
                )));
            }
            let (a, b, g) = (link.bulk_cell, offset + link.low_cell, link.conductance);
            match form {
                MortarForm::Eliminated => {
                    triplets.extend([(a, a, g), (a, b, -g), (b, a, -g), (b, b, g)]);
                }
                MortarForm::Explicit => {
                    triplets.extend([(a, m, 1.0), (b, m, -1.0), (m, m, 1.0), (m, a, -g), (m, b, g)]);
                    m += 1;
                }
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n, n, &triplets);

    let mut rhs = vec![0.0; n];
    for (inj, range) in injections.iter().zip(&layout.electrodes) {
        rhs[range.clone()].copy_from_slice(inj);
    }
    let mut weights = vec![0.0; n];
    for c in 0..nb {
        weights[c] = grid.bulk.cell_volume(c);
    }
    if let Some(l) = &grid.liner {
        for c in 0..nl {
            weights[nb + c] = l.mesh.cell_volume(c);
        }
    }
    for (e, range) in grid.electrodes.iter().zip(&layout.electrodes) {
        for c in 0..e.mesh.num_cells() {
            weights[range.start + c] = e.mesh.cell_volume(c);
        }
    }
    Ok(LinearSystem { matrix, rhs, layout, weights })
}

/// Assembles the operators, the couplings and the global system of a grid.
/// `specs[i]` describes `grid.electrodes[i]`.
pub fn assemble_problem(
    grid: &MixedDimGrid,
    bulk_material: &MaterialField,
    specs: &[ElectrodeSpec],
    scheme: Scheme,
    form: MortarForm,
) -> Result<Assembly> {
    if specs.len() != grid.electrodes.len() {
        return Err(Error::AssemblyMismatch(format!(
            "{} electrode specs for {} electrodes",
            specs.len(),
            grid.electrodes.len()
        )));
    }
    let bulk_op = fv::assemble(scheme, &grid.bulk, bulk_material)?;
    let (liner_op, liner_block) = match &grid.liner {
        Some(liner) => {
            let coefficient = liner.spec.thickness * liner.spec.sigma_tangential();
            let material = MaterialField::uniform(liner.mesh.num_cells(), coefficient)?;
            (
                Some(fv::assemble(scheme, &liner.mesh, &material)?),
                Some(assemble_liner(&grid.bulk, bulk_material, liner)?),
            )
        }
        None => (None, None),
    };
    let mut electrode_ops = Vec::with_capacity(specs.len());
    let mut electrode_blocks = Vec::with_capacity(specs.len());
    for (i, (e, spec)) in grid.electrodes.iter().zip(specs).enumerate() {
        let coefficient = std::f64::consts::PI * spec.radius * spec.radius * spec.sigma;
        let material = MaterialField::uniform(e.mesh.num_cells(), coefficient)?;
        electrode_ops.push(fv::assemble(scheme, &e.mesh, &material)?);
        electrode_blocks.push(assemble_electrode(&grid.bulk, bulk_material, e, spec, i)?);
    }
    let injections = electrode_injections(grid, specs)?;
    let system = assemble_global(
        grid,
        &bulk_op,
        liner_op.as_ref(),
        &electrode_ops,
        liner_block.as_ref(),
        &electrode_blocks,
        &injections,
        form,
    )?;
    Ok(Assembly { system, bulk_op, liner_op, electrode_ops, liner_block, electrode_blocks, injections })
}
