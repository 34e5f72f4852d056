//! Cell-centered finite volumes on one subdomain: two-point (TPFA) and
//! multi-point O-method (MPFA-O) fluxes, Neumann data and flux reconstruction.
//!
//! Sign convention: the discrete operator maps cell potentials to the sum of
//! outward face fluxes of each cell, so `M φ = q` with `q` the injected current.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::mesh::{SubdomainMesh, Vec3, NO_CELL};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tpfa,
    #[default]
    Mpfa,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tpfa" => Ok(Scheme::Tpfa),
            "mpfa" => Ok(Scheme::Mpfa),
            other => Err(format!("unknown scheme `{other}` (expected tpfa or mpfa)")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Tpfa => "tpfa",
            Scheme::Mpfa => "mpfa",
        })
    }
}

/// Isotropic per-cell conductivity (S/m, or the reduced coefficient of a
/// lower-dimensional subdomain).
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    sigma: Vec<f64>,
}

impl MaterialField {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(c) = sigma.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!("conductivity of cell {c} must be positive")));
        }
        Ok(MaterialField { sigma })
    }

    pub fn uniform(cells: usize, sigma: f64) -> Result<Self> {
        MaterialField::new(vec![sigma; cells])
    }

    pub fn sigma(&self, c: usize) -> f64 {
        self.sigma[c]
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn tensor(&self, c: usize) -> Matrix3<f64> {
        Matrix3::identity() * self.sigma[c]
    }
}

/// Face flux stencils of one subdomain. The flux of face `f` out of
/// `face_cells(f)[0]` is `sum_k coeff_k * phi[cell_k]`; boundary faces carry no flux.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    num_cells: usize,
    face_cells: Vec<[usize; 2]>,
    face_offsets: Vec<usize>,
    cells: Vec<usize>,
    coeffs: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl DiscreteOperator {
    fn from_contributions(
        mesh: &SubdomainMesh,
        contributions: Vec<(usize, usize, f64)>,
        warnings: Vec<Warning>,
    ) -> Self {
        let n_faces = mesh.num_faces();
        let mut offsets = vec![0usize; n_faces + 1];
        for &(f, _, _) in &contributions {
            offsets[f + 1] += 1;
        }
        for f in 0..n_faces {
            offsets[f + 1] += offsets[f];
        }
        let mut fill = offsets.clone();
        let mut sorted = vec![(0usize, 0.0f64); contributions.len()];
        for &(f, c, t) in &contributions {
            sorted[fill[f]] = (c, t);
            fill[f] += 1;
        }
        let mut face_offsets = Vec::with_capacity(n_faces + 1);
        let mut cells = Vec::with_capacity(contributions.len());
        let mut coeffs = Vec::with_capacity(contributions.len());
        face_offsets.push(0);
        for f in 0..n_faces {
            let entries = &mut sorted[offsets[f]..offsets[f + 1]];
            entries.sort_by_key(|e| e.0);
            let start = cells.len();
            for &(c, t) in entries.iter() {
                if cells.len() > start && *cells.last().unwrap() == c {
                    *coeffs.last_mut().unwrap() += t;
                } else {
                    cells.push(c);
                    coeffs.push(t);
                }
            }
            // Constants carry no flux: the first cell's coefficient closes the
            // stencil exactly instead of up to the roundoff of the local solves.
            let owner = mesh.face_cells(f)[0];
            if let Some(i) = cells[start..].iter().position(|&c| c == owner) {
                let others: f64 = (start..cells.len()).filter(|&j| j != start + i).map(|j| coeffs[j]).sum();
                coeffs[start + i] = -others;
            }
            face_offsets.push(cells.len());
        }
        DiscreteOperator {
            num_cells: mesh.num_cells(),
            face_cells: (0..n_faces).map(|f| mesh.face_cells(f)).collect(),
            face_offsets,
            cells,
            coeffs,
            warnings,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_faces(&self) -> usize {
        self.face_cells.len()
    }

    pub fn face_stencil(&self, f: usize) -> (&[usize], &[f64]) {
        let r = self.face_offsets[f]..self.face_offsets[f + 1];
        (&self.cells[r.clone()], &self.coeffs[r])
    }

    /// Coefficient of `phi[cell]` in the flux of face `f`.
    pub fn coefficient(&self, f: usize, cell: usize) -> f64 {
        let (cells, coeffs) = self.face_stencil(f);
        cells.iter().position(|&c| c == cell).map_or(0.0, |i| coeffs[i])
    }

    /// Flux of every face out of its first cell (A), evaluated on potential
    /// differences to that cell so that a common offset cancels exactly.
    pub fn face_fluxes(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.num_faces())
            .map(|f| {
                let (cells, coeffs) = self.face_stencil(f);
                let owner = self.face_cells[f][0];
                if cells.contains(&owner) {
                    cells
                        .iter()
                        .zip(coeffs)
                        .filter(|(&c, _)| c != owner)
                        .map(|(&c, &t)| t * (phi[c] - phi[owner]))
                        .sum()
                } else {
                    cells.iter().zip(coeffs).map(|(&c, &t)| t * phi[c]).sum()
                }
            })
            .collect()
    }

    /// Net outward flux of every cell.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let fluxes = self.face_fluxes(phi);
        let mut out = vec![0.0; self.num_cells];
        for (f, flux) in fluxes.into_iter().enumerate() {
            let [k, l] = self.face_cells[f];
            out[k] += flux;
            if l != NO_CELL {
                out[l] -= flux;
            }
        }
        out
    }

    /// Matrix triplets with rows and columns shifted by `offset`.
    pub fn triplets(&self, offset: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.coeffs.len());
        for f in 0..self.num_faces() {
            let [k, l] = self.face_cells[f];
            if l == NO_CELL {
                continue;
            }
            let (cells, coeffs) = self.face_stencil(f);
            for (&c, &t) in cells.iter().zip(coeffs) {
                out.push((k + offset, c + offset, t));
                out.push((l + offset, c + offset, -t));
            }
        }
        out
    }

    pub fn matrix(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.num_cells, self.num_cells, &self.triplets(0))
    }
}

/// `sigma_K A_f (d_K . n) / |d_K|^2` for local face `slot` of cell `c`.
pub fn half_transmissibility(mesh: &SubdomainMesh, sigma: f64, c: usize, slot: usize) -> f64 {
    let f = mesh.cell_faces(c)[slot];
    let d = mesh.face_center(f) - mesh.cell_center(c);
    sigma * mesh.face_area(f) * d.dot(&mesh.outward_normal(c, slot)) / d.norm_squared()
}

fn check_material(mesh: &SubdomainMesh, material: &MaterialField) -> Result<()> {
    if material.len() != mesh.num_cells() {
        return Err(Error::AssemblyMismatch(format!(
            "{} conductivities for {} cells",
            material.len(),
            mesh.num_cells()
        )));
    }
    Ok(())
}

pub fn tpfa_assemble(mesh: &SubdomainMesh, material: &MaterialField) -> Result<DiscreteOperator> {
    check_material(mesh, material)?;
    let mut contributions = Vec::with_capacity(2 * mesh.num_faces());
    let mut warnings = Vec::new();
    for f in 0..mesh.num_faces() {
        let [k, l] = mesh.face_cells(f);
        if l == NO_CELL {
            continue;
        }
        let ak = half_transmissibility(mesh, material.sigma(k), k, mesh.slot_of(k, f).unwrap());
        let al = half_transmissibility(mesh, material.sigma(l), l, mesh.slot_of(l, f).unwrap());
        if !(ak > 0.0) || !(al > 0.0) {
            log::warn!("face {f} has a non-positive half-transmissibility");
            warnings.push(Warning::IllConditionedFace(f));
        }
        let t = ak * al / (ak + al);
        if t.is_finite() {
            contributions.push((f, k, t));
            contributions.push((f, l, -t));
        }
    }
    Ok(DiscreteOperator::from_contributions(mesh, contributions, warnings))
}

/// Orthonormal basis of the cell's tangent space, as columns of a 3×dim matrix.
fn tangent_basis(p: &[Vec3]) -> DMatrix<f64> {
    match p.len() - 1 {
        1 => DMatrix::from_column_slice(3, 1, (p[1] - p[0]).normalize().as_slice()),
        2 => {
            let e1 = (p[1] - p[0]).normalize();
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let e2 = n.cross(&e1).normalize();
            DMatrix::from_columns(&[
                nalgebra::DVector::from_column_slice(e1.as_slice()),
                nalgebra::DVector::from_column_slice(e2.as_slice()),
            ])
        }
        _ => DMatrix::identity(3, 3),
    }
}

/// Continuity point of the part of a face that touches vertex `v`: the
/// centroid of that sub-face.
fn continuity_point(v: Vec3, others: &[Vec3]) -> Vec3 {
    match others.len() {
        0 => v,
        1 => 0.75 * v + 0.25 * others[0],
        _ => v * (11.0 / 18.0) + (others[0] + others[1]) * (7.0 / 36.0),
    }
}

/// The corner of cell `k` at vertex `v`: the faces of `k` through `v`, their
/// continuity points, and the matrix `W` giving the outward sub-face fluxes as
/// `F = -W (u - phi_K)` from the continuity-point potentials `u`.
pub struct Subcell {
    pub faces: Vec<usize>,
    pub points: Vec<Vec3>,
    pub w: DMatrix<f64>,
}

pub fn subcell(mesh: &SubdomainMesh, material: &MaterialField, k: usize, v: usize) -> Result<Subcell> {
    let dim = mesh.dim();
    let vx = mesh.node(v);
    let nodes = mesh.cell_nodes(k);
    let p: Vec<Vec3> = nodes.iter().map(|&n| mesh.node(n)).collect();
    let basis = tangent_basis(&p);
    let xk = mesh.cell_center(k);
    let tensor = material.tensor(k);
    let mut faces = Vec::with_capacity(dim);
    let mut points = Vec::with_capacity(dim);
    let mut d = DMatrix::<f64>::zeros(dim, dim);
    let mut n = DMatrix::<f64>::zeros(dim, dim);
    for slot in 0..=dim {
        if nodes[slot] == v {
            continue;
        }
        let row = faces.len();
        let f = mesh.cell_faces(k)[slot];
        let others: Vec<Vec3> = mesh.face_nodes(f).iter().filter(|&&m| m != v).map(|&m| mesh.node(m)).collect();
        let xs = continuity_point(vx, &others);
        let area = mesh.face_area(f) / dim as f64;
        let conormal = tensor * mesh.outward_normal(k, slot);
        for a in 0..dim {
            let e = Vec3::new(basis[(0, a)], basis[(1, a)], basis[(2, a)]);
            d[(row, a)] = e.dot(&(xs - xk));
            n[(row, a)] = area * e.dot(&conormal);
        }
        faces.push(f);
        points.push(xs);
    }
    if faces.len() != dim {
        return Err(Error::AssemblyMismatch(format!("vertex {v} is not a node of cell {k}")));
    }
    let dinv = d.try_inverse().ok_or(Error::SingularInteractionRegion(v))?;
    Ok(Subcell { faces, points, w: n * dinv })
}

/// Face-flux contributions `(face, cell, coefficient)` of the interaction region around one vertex.
fn interaction_region(
    mesh: &SubdomainMesh,
    material: &MaterialField,
    v: usize,
    region_cells: &[usize],
) -> Result<Vec<(usize, usize, f64)>> {
    let dim = mesh.dim();
    let mut subfaces: Vec<usize> = Vec::new();
    let local_of = |f: usize, subfaces: &mut Vec<usize>| match subfaces.iter().position(|&g| g == f) {
        Some(i) => i,
        None => {
            subfaces.push(f);
            subfaces.len() - 1
        }
    };

    let mut per_cell: Vec<(Vec<usize>, DMatrix<f64>)> = Vec::with_capacity(region_cells.len());
    for &k in region_cells {
        let sub = subcell(mesh, material, k, v)?;
        let ids = sub.faces.iter().map(|&f| local_of(f, &mut subfaces)).collect();
        per_cell.push((ids, sub.w));
    }

    let ns = subfaces.len();
    let nc = region_cells.len();
    let mut a = DMatrix::<f64>::zeros(ns, ns);
    let mut b = DMatrix::<f64>::zeros(ns, nc);
    for (ci, (ids, w)) in per_cell.iter().enumerate() {
        for i in 0..dim {
            let mut sum = 0.0;
            for j in 0..dim {
                a[(ids[i], ids[j])] += w[(i, j)];
                sum += w[(i, j)];
            }
            b[(ids[i], ci)] += sum;
        }
    }
    let scale = a.amax();
    let lu = a.lu();
    let u_diag = lu.u().diagonal();
    if !(scale > 0.0) || u_diag.iter().any(|x| !(x.abs() >= 1e-13 * scale)) {
        return Err(Error::SingularInteractionRegion(v));
    }
    let u = lu.solve(&b).ok_or(Error::SingularInteractionRegion(v))?;

    let mut out = Vec::new();
    for (s, &f) in subfaces.iter().enumerate() {
        let [k0, l0] = mesh.face_cells(f);
        if l0 == NO_CELL {
            continue;
        }
        let ci = region_cells.iter().position(|&c| c == k0).expect("owner in region");
        let (ids, w) = &per_cell[ci];
        let i = ids.iter().position(|&x| x == s).unwrap();
        let mut t = vec![0.0; nc];
        let mut sum = 0.0;
        for j in 0..dim {
            let wij = w[(i, j)];
            sum += wij;
            for c in 0..nc {
                t[c] -= wij * u[(ids[j], c)];
            }
        }
        t[ci] += sum;
        for (c, &coef) in t.iter().enumerate() {
            if coef != 0.0 {
                out.push((f, region_cells[c], coef));
            }
        }
    }
    Ok(out)
}

/// Cells around `v`, split into groups that are connected through interior
/// faces containing `v`. Split (liner) faces separate groups.
fn vertex_regions(mesh: &SubdomainMesh, v: usize, cells: &[usize]) -> Vec<Vec<usize>> {
    let mut group: Vec<usize> = (0..cells.len()).collect();
    fn root(g: &mut [usize], mut i: usize) -> usize {
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    for (i, &k) in cells.iter().enumerate() {
        let nodes = mesh.cell_nodes(k);
        for slot in 0..nodes.len() {
            if nodes[slot] == v {
                continue;
            }
            let [a, b] = mesh.face_cells(mesh.cell_faces(k)[slot]);
            let other = if a == k { b } else { a };
            if other == NO_CELL {
                continue;
            }
            if let Some(j) = cells.iter().position(|&c| c == other) {
                let (ri, rj) = (root(&mut group, i), root(&mut group, j));
                group[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut regions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..cells.len() {
        let r = root(&mut group, i);
        regions.entry(r).or_default().push(cells[i]);
    }
    regions.into_values().collect()
}

pub fn mpfa_o_assemble(mesh: &SubdomainMesh, material: &MaterialField) -> Result<DiscreteOperator> {
    mpfa_o_assemble_with(mesh, material, true)
}

/// MPFA-O assembly. The parallel and sequential modes visit the same vertex
/// chunks and merge them in the same order, so they give identical operators.
pub fn mpfa_o_assemble_with(
    mesh: &SubdomainMesh,
    material: &MaterialField,
    parallel: bool,
) -> Result<DiscreteOperator> {
    check_material(mesh, material)?;
    let (offsets, incident) = mesh.node_cells();
    let chunk = 256;
    let starts: Vec<usize> = (0..mesh.num_nodes()).step_by(chunk).collect();
    let work = |&start: &usize| -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for v in start..(start + chunk).min(mesh.num_nodes()) {
            let cells = &incident[offsets[v]..offsets[v + 1]];
            for region in vertex_regions(mesh, v, cells) {
                out.extend(interaction_region(mesh, material, v, &region)?);
            }
        }
        Ok(out)
    };
    let pieces: Vec<Vec<(usize, usize, f64)>> = if parallel {
        starts.par_iter().map(work).collect::<Result<_>>()?
    } else {
        starts.iter().map(work).collect::<Result<_>>()?
    };
    let contributions: Vec<_> = pieces.into_iter().flatten().collect();
    Ok(DiscreteOperator::from_contributions(mesh, contributions, Vec::new()))
}

pub fn assemble(scheme: Scheme, mesh: &SubdomainMesh, material: &MaterialField) -> Result<DiscreteOperator> {
    match scheme {
        Scheme::Tpfa => tpfa_assemble(mesh, material),
        Scheme::Mpfa => mpfa_o_assemble(mesh, material),
    }
}

/// Prescribed boundary inflow: for every boundary face whose tag appears in
/// `spec`, adds `spec[tag] * area` to the incident cell. For 1D subdomains the
/// face measure is 1, so the value is a current in A.
pub fn neumann_rhs(mesh: &SubdomainMesh, spec: &BTreeMap<i32, f64>) -> Result<Vec<f64>> {
    let mut rhs = vec![0.0; mesh.num_cells()];
    for &tag in spec.keys() {
        if !mesh.boundary_tags().values().any(|&t| t == tag) {
            return Err(Error::UnknownBoundaryTag(tag));
        }
    }
    for (&f, tag) in mesh.boundary_tags() {
        if let Some(&value) = spec.get(tag) {
            rhs[mesh.face_cells(f)[0]] += value * mesh.face_area(f);
        }
    }
    Ok(rhs)
}

/// Cell-averaged current density from face fluxes (out of each face's first
/// cell): `J_K = (1/|K|) sum_f F_Kf (x_f - x_K)`, exact for uniform currents.
pub fn cell_current_density(mesh: &SubdomainMesh, face_fluxes: &[f64]) -> Vec<Vec3> {
    (0..mesh.num_cells())
        .map(|k| {
            let xk = mesh.cell_center(k);
            let mut j = Vec3::zeros();
            for &f in mesh.cell_faces(k) {
                let flux = if mesh.face_cells(f)[0] == k { face_fluxes[f] } else { -face_fluxes[f] };
                j += flux * (mesh.face_center(f) - xk);
            }
            j / mesh.cell_volume(k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use approx::assert_relative_eq;

    fn two_segments() -> SubdomainMesh {
        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)];
        SubdomainMesh::new(1, nodes, vec![0, 1, 1, 2], vec![0, 0]).unwrap()
    }

    fn interior_face(mesh: &SubdomainMesh) -> usize {
        (0..mesh.num_faces()).find(|&f| !mesh.is_boundary_face(f)).unwrap()
    }

    #[test]
    fn tpfa_one_dimensional_transmissibility() {
        let mesh = two_segments();
        let f = interior_face(&mesh);
        let op = tpfa_assemble(&mesh, &MaterialField::uniform(2, 1.0).unwrap()).unwrap();
        let k = mesh.face_cells(f)[0];
        assert_relative_eq!(op.coefficient(f, k), 1.0, epsilon = 1e-15);
        let op = tpfa_assemble(&mesh, &MaterialField::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_relative_eq!(op.coefficient(f, k), 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn reconstructed_flux_of_two_cell_example() {
        let mesh = two_segments();
        let op = tpfa_assemble(&mesh, &MaterialField::uniform(2, 1.0).unwrap()).unwrap();
        let f = interior_face(&mesh);
        let mut phi = vec![0.0; 2];
        phi[mesh.face_cells(f)[0]] = 1.0;
        assert_relative_eq!(op.face_fluxes(&phi)[f], 1.0, epsilon = 1e-15);
        assert!(op.face_fluxes(&[3.0, 3.0]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_dimensional_mpfa_equals_tpfa() {
        let nodes: Vec<Vec3> = [0.0, 0.3, 1.0, 1.2, 2.0].iter().map(|&x| Vec3::new(0.0, 0.0, -x)).collect();
        let cells: Vec<usize> = (0..4).flat_map(|i| [i, i + 1]).collect();
        let mesh = SubdomainMesh::new(1, nodes, cells, vec![0; 4]).unwrap();
        let mat = MaterialField::new(vec![1.0, 3.0, 0.5, 2.0]).unwrap();
        let a = tpfa_assemble(&mesh, &mat).unwrap().matrix();
        let b = mpfa_o_assemble(&mesh, &mat).unwrap().matrix();
        for (r, c, v) in a.triplets() {
            assert_relative_eq!(b.get(r, c), v, max_relative = 1e-12);
        }
        assert_eq!(a.nnz(), b.nnz());
    }

    #[test]
    fn mpfa_reference_tet_linear_flux() {
        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let mesh = SubdomainMesh::new(3, nodes, vec![0, 1, 2, 3], vec![0]).unwrap();
        let mat = MaterialField::uniform(1, 1.0).unwrap();
        let phi = |x: Vec3| x.x;
        let phi_k = phi(mesh.cell_center(0));
        let mut flux = vec![0.0; mesh.num_faces()];
        for v in 0..4 {
            let sub = subcell(&mesh, &mat, 0, v).unwrap();
            for (i, &f) in sub.faces.iter().enumerate() {
                for (j, &x) in sub.points.iter().enumerate() {
                    flux[f] -= sub.w[(i, j)] * (phi(x) - phi_k);
                }
            }
        }
        for f in 0..mesh.num_faces() {
            let exact = -mesh.face_area(f) * mesh.face_normal(f).x;
            assert!((flux[f] - exact).abs() < 1e-12);
        }
    }

    /// Nodes that lie on a boundary face.
    pub(crate) fn boundary_nodes(mesh: &SubdomainMesh) -> Vec<bool> {
        let mut on = vec![false; mesh.num_nodes()];
        for f in (0..mesh.num_faces()).filter(|&f| mesh.is_boundary_face(f)) {
            for &n in mesh.face_nodes(f) {
                on[n] = true;
            }
        }
        on
    }

    #[test]
    fn mpfa_cube_linear_field_is_exact() {
        // Interaction regions touching the no-flow boundary impose zero flux on
        // their boundary sub-faces, so exactness is checked away from it.
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.25, &[]).unwrap();
        let mat = MaterialField::uniform(mesh.num_cells(), 1.0).unwrap();
        let op = mpfa_o_assemble(&mesh, &mat).unwrap();
        let phi: Vec<f64> = (0..mesh.num_cells())
            .map(|c| {
                let x = mesh.cell_center(c);
                2.0 * x.x - 3.0 * x.y + x.z
            })
            .collect();
        let grad = Vec3::new(2.0, -3.0, 1.0);
        let fluxes = op.face_fluxes(&phi);
        let on_boundary = boundary_nodes(&mesh);
        let mut checked = 0;
        for f in (0..mesh.num_faces()).filter(|&f| !mesh.is_boundary_face(f)) {
            if mesh.face_nodes(f).iter().any(|&n| on_boundary[n]) {
                continue;
            }
            let exact = -mesh.face_area(f) * grad.dot(&mesh.face_normal(f));
            assert!((fluxes[f] - exact).abs() < 1e-12, "face {f}: {} vs {exact}", fluxes[f]);
            checked += 1;
        }
        assert!(checked > 100);
        let residual = op.apply(&phi);
        for c in 0..mesh.num_cells() {
            if mesh.cell_nodes(c).iter().all(|&n| !on_boundary[n]) {
                assert!(residual[c].abs() < 1e-10 * grad.norm() * mesh.cell_volume(c).powf(2.0 / 3.0));
            }
        }
    }

    #[test]
    fn constant_potential_is_in_the_kernel() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let mat = MaterialField::new((0..mesh.num_cells()).map(|c| 1.0 + c as f64 * 0.1).collect()).unwrap();
        for op in [tpfa_assemble(&mesh, &mat).unwrap(), mpfa_o_assemble(&mesh, &mat).unwrap()] {
            let phi = vec![1.7; mesh.num_cells()];
            assert!(op.face_fluxes(&phi).iter().all(|x| x.abs() < 1e-14));
            // Exactly, whatever the offset.
            let phi = vec![1.234567e5; mesh.num_cells()];
            assert!(op.face_fluxes(&phi).iter().all(|&x| x == 0.0));
            for f in 0..op.num_faces() {
                if !mesh.is_boundary_face(f) {
                    let (cells, coeffs) = op.face_stencil(f);
                    let owner = coeffs[cells.iter().position(|&c| c == mesh.face_cells(f)[0]).unwrap()];
                    let others: f64 =
                        cells.iter().zip(coeffs).filter(|e| *e.0 != mesh.face_cells(f)[0]).map(|e| e.1).sum();
                    assert_eq!(owner, -others);
                }
            }
        }
    }

    #[test]
    fn parallel_and_sequential_mpfa_agree() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.2, &[]).unwrap();
        let mat = MaterialField::uniform(mesh.num_cells(), 0.3).unwrap();
        let a = mpfa_o_assemble_with(&mesh, &mat, true).unwrap();
        let b = mpfa_o_assemble_with(&mesh, &mat, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neumann_data() {
        let mut mesh = two_segments();
        let ends: Vec<usize> = (0..mesh.num_faces()).filter(|&f| mesh.is_boundary_face(f)).collect();
        assert!(neumann_rhs(&mesh, &BTreeMap::new()).unwrap().iter().all(|&x| x == 0.0));
        mesh.set_boundary_tag(ends[0], 1).unwrap();
        mesh.set_boundary_tag(ends[1], 2).unwrap();
        let rhs = neumann_rhs(&mesh, &BTreeMap::from([(1, 0.01), (2, -0.01)])).unwrap();
        assert_eq!(rhs.iter().sum::<f64>(), 0.0);
        assert_eq!(rhs[mesh.face_cells(ends[0])[0]], 0.01);
        assert!(matches!(neumann_rhs(&mesh, &BTreeMap::from([(7, 1.0)])), Err(Error::UnknownBoundaryTag(7))));
    }

    #[test]
    fn uniform_current_is_recovered() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let j = Vec3::new(0.3, -0.2, 0.5);
        let fluxes: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f) * j.dot(&mesh.face_normal(f))).collect();
        for jk in cell_current_density(&mesh, &fluxes) {
            assert_relative_eq!(jk, j, epsilon = 1e-12);
        }
    }
}
