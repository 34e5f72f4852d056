//! Simplicial subdomain meshes of dimension 1, 2 and 3 embedded in 3D space,
//! the built-in box mesher, MSH ingestion and the liner split that produces the
//! mixed-dimensional grid.

pub mod boxmesh;
pub mod liner;
pub mod msh;

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use boxmesh::{build_box_mesh, AxisLattice, BoxMeshBuilder, RefinementRegion};
pub use liner::{embed_liner, Hole, LinerGrid, LinerSpec, MixedDimGrid, MortarPair, Panel};
pub use msh::{load_msh, parse_msh, write_msh};

pub type Vec3 = Vector3<f64>;

/// Marker for the missing second cell of a boundary face.
pub const NO_CELL: usize = usize::MAX;

/// Tag carried by both copies of a bulk face that was split along the liner.
pub const LINER_FACE_TAG: i32 = -1;

#[derive(Clone, Debug, Default)]
pub struct Geometry {
    pub cell_volumes: Vec<f64>,
    pub cell_centers: Vec<Vec3>,
    pub face_areas: Vec<f64>,
    pub face_centers: Vec<Vec3>,
    /// Unit normal of each face, oriented out of `face_cells[f][0]`.
    pub face_normals: Vec<Vec3>,
    /// Outward unit normal for every (cell, local face slot), in the cell's own tangent space.
    pub slot_normals: Vec<Vec3>,
}

/// A conforming simplicial mesh. Local face slot `i` of a cell is the face
/// opposite its local node `i`.
#[derive(Clone, Debug)]
pub struct SubdomainMesh {
    dim: usize,
    nodes: Vec<Vec3>,
    cell_nodes: Vec<usize>,
    cell_tags: Vec<i32>,
    face_nodes: Vec<usize>,
    face_cells: Vec<[usize; 2]>,
    cell_faces: Vec<usize>,
    boundary_tags: BTreeMap<usize, i32>,
    geometry: Geometry,
}

/// Summary of the structural and geometric checks of [`SubdomainMesh::check_invariants`].
#[derive(Clone, Debug, PartialEq)]
pub struct MeshReport {
    pub cells: usize,
    pub faces: usize,
    pub boundary_faces: usize,
    pub total_measure: f64,
    pub min_measure: f64,
    /// Worst `|sum_f A_f n_f| / sum_f A_f` over all cells.
    pub max_closure: f64,
}

fn face_key(nodes: &[usize]) -> [usize; 3] {
    let mut key = [usize::MAX; 3];
    key[..nodes.len()].copy_from_slice(nodes);
    key[..nodes.len()].sort_unstable();
    key
}

impl SubdomainMesh {
    /// Builds the face connectivity and the geometry of a simplicial mesh.
    /// `cells` is flat, `dim + 1` node indices per cell.
    pub fn new(dim: usize, nodes: Vec<Vec3>, cells: Vec<usize>, cell_tags: Vec<i32>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGeometry(format!("unsupported mesh dimension {dim}")));
        }
        let stride = dim + 1;
        if cells.len() % stride != 0 {
            return Err(Error::InvalidGeometry(format!(
                "cell array length {} is not a multiple of {stride}",
                cells.len()
            )));
        }
        let n_cells = cells.len() / stride;
        if cell_tags.len() != n_cells {
            return Err(Error::InvalidGeometry("one tag per cell is required".into()));
        }
        for (c, cell) in cells.chunks_exact(stride).enumerate() {
            for (i, &n) in cell.iter().enumerate() {
                if n >= nodes.len() {
                    return Err(Error::InvalidGeometry(format!("cell {c} references missing node {n}")));
                }
                if cell[..i].contains(&n) {
                    return Err(Error::DegenerateCell(c));
                }
            }
        }

        let mut lookup: HashMap<[usize; 3], usize> = HashMap::with_capacity(n_cells * 2);
        let mut face_nodes = Vec::new();
        let mut face_cells: Vec<[usize; 2]> = Vec::new();
        let mut cell_faces = vec![0; n_cells * stride];
        let mut scratch = Vec::with_capacity(dim);
        for c in 0..n_cells {
            let cell = &cells[c * stride..(c + 1) * stride];
            for slot in 0..stride {
                scratch.clear();
                scratch.extend(cell.iter().enumerate().filter(|&(i, _)| i != slot).map(|(_, &n)| n));
                let key = face_key(&scratch);
                let face = *lookup.entry(key).or_insert_with(|| {
                    face_nodes.extend_from_slice(&key[..dim]);
                    face_cells.push([NO_CELL, NO_CELL]);
                    face_cells.len() - 1
                });
                let pair = &mut face_cells[face];
                if pair[0] == NO_CELL {
                    pair[0] = c;
                } else if pair[1] == NO_CELL {
                    pair[1] = c;
                } else {
                    return Err(Error::InvalidGeometry(format!("face {face} is shared by more than two cells")));
                }
                cell_faces[c * stride + slot] = face;
            }
        }

        let mut mesh = SubdomainMesh {
            dim,
            nodes,
            cell_nodes: cells,
            cell_tags,
            face_nodes,
            face_cells,
            cell_faces,
            boundary_tags: BTreeMap::new(),
            geometry: Geometry::default(),
        };
        mesh.compute_geometry()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cell_tags.len()
    }

    pub fn num_faces(&self) -> usize {
        self.face_cells.len()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> Vec3 {
        self.nodes[n]
    }

    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.cell_nodes[c * s..(c + 1) * s]
    }

    pub fn cell_faces(&self, c: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.cell_faces[c * s..(c + 1) * s]
    }

    pub fn face_nodes(&self, f: usize) -> &[usize] {
        &self.face_nodes[f * self.dim..(f + 1) * self.dim]
    }

    pub fn face_cells(&self, f: usize) -> [usize; 2] {
        self.face_cells[f]
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_cells[f][1] == NO_CELL
    }

    pub fn cell_tag(&self, c: usize) -> i32 {
        self.cell_tags[c]
    }

    pub fn cell_tags(&self) -> &[i32] {
        &self.cell_tags
    }

    pub fn boundary_tags(&self) -> &BTreeMap<usize, i32> {
        &self.boundary_tags
    }

    pub fn boundary_tag(&self, f: usize) -> Option<i32> {
        self.boundary_tags.get(&f).copied()
    }

    /// Tags boundary faces. Faces that are not on the boundary are rejected.
    pub fn set_boundary_tag(&mut self, f: usize, tag: i32) -> Result<()> {
        if f >= self.num_faces() || !self.is_boundary_face(f) {
            return Err(Error::InvalidGeometry(format!("face {f} is not a boundary face")));
        }
        self.boundary_tags.insert(f, tag);
        Ok(())
    }

    /// Looks up a face by its node set.
    pub fn find_face(&self, nodes: &[usize]) -> Option<usize> {
        if nodes.len() != self.dim {
            return None;
        }
        let key = face_key(nodes);
        (0..self.num_faces()).find(|&f| face_key(self.face_nodes(f)) == key)
    }

    /// Map from sorted face node sets to face ids, for bulk lookups.
    pub fn face_index(&self) -> HashMap<[usize; 3], usize> {
        (0..self.num_faces()).map(|f| (face_key(self.face_nodes(f)), f)).collect()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.geometry.cell_volumes[c]
    }

    pub fn cell_center(&self, c: usize) -> Vec3 {
        self.geometry.cell_centers[c]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        self.geometry.face_areas[f]
    }

    pub fn face_center(&self, f: usize) -> Vec3 {
        self.geometry.face_centers[f]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.geometry.face_normals[f]
    }

    /// Outward unit normal of local face `slot` of cell `c`.
    pub fn outward_normal(&self, c: usize, slot: usize) -> Vec3 {
        self.geometry.slot_normals[c * (self.dim + 1) + slot]
    }

    /// Local slot of face `f` in cell `c`.
    pub fn slot_of(&self, c: usize, f: usize) -> Option<usize> {
        self.cell_faces(c).iter().position(|&g| g == f)
    }

    /// Longest edge of the cell.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let nodes = self.cell_nodes(c);
        let mut d: f64 = 0.0;
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                d = d.max((self.nodes[nodes[i]] - self.nodes[nodes[j]]).norm());
            }
        }
        d
    }

    /// Axis-aligned bounding box of a cell.
    pub fn cell_bounds(&self, c: usize) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &n in self.cell_nodes(c) {
            lo = lo.inf(&self.nodes[n]);
            hi = hi.sup(&self.nodes[n]);
        }
        (lo, hi)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Cells incident to every node, in CSR layout (`offsets`, `cells`).
    pub fn node_cells(&self) -> (Vec<usize>, Vec<usize>) {
        let mut counts = vec![0usize; self.num_nodes() + 1];
        for &n in &self.cell_nodes {
            counts[n + 1] += 1;
        }
        for i in 0..self.num_nodes() {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut cells = vec![0; self.cell_nodes.len()];
        for c in 0..self.num_cells() {
            for &n in self.cell_nodes(c) {
                cells[fill[n]] = c;
                fill[n] += 1;
            }
        }
        (offsets, cells)
    }

    /// Connected components under face adjacency: (count, component of each cell).
    pub fn connected_components(&self) -> (usize, Vec<usize>) {
        let mut comp = vec![usize::MAX; self.num_cells()];
        let mut count = 0;
        let mut stack = Vec::new();
        for seed in 0..self.num_cells() {
            if comp[seed] != usize::MAX {
                continue;
            }
            comp[seed] = count;
            stack.push(seed);
            while let Some(c) = stack.pop() {
                for &f in self.cell_faces(c) {
                    for n in self.face_cells[f] {
                        if n != NO_CELL && comp[n] == usize::MAX {
                            comp[n] = count;
                            stack.push(n);
                        }
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    /// Populates volumes, centers, areas and unit normals.
    pub fn compute_geometry(&mut self) -> Result<()> {
        let dim = self.dim;
        let stride = dim + 1;
        let n_cells = self.num_cells();
        let n_faces = self.num_faces();
        let mut g = Geometry {
            cell_volumes: vec![0.0; n_cells],
            cell_centers: vec![Vec3::zeros(); n_cells],
            face_areas: vec![0.0; n_faces],
            face_centers: vec![Vec3::zeros(); n_faces],
            face_normals: vec![Vec3::zeros(); n_faces],
            slot_normals: vec![Vec3::zeros(); n_cells * stride],
        };

        for f in 0..n_faces {
            let nodes = self.face_nodes(f);
            let p: Vec<Vec3> = nodes.iter().map(|&n| self.nodes[n]).collect();
            g.face_centers[f] = p.iter().sum::<Vec3>() / dim as f64;
            g.face_areas[f] = match dim {
                1 => 1.0,
                2 => (p[1] - p[0]).norm(),
                _ => 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm(),
            };
        }

        for c in 0..n_cells {
            let nodes = self.cell_nodes(c);
            let p: Vec<Vec3> = nodes.iter().map(|&n| self.nodes[n]).collect();
            let center = p.iter().sum::<Vec3>() / stride as f64;
            let diameter = self.cell_diameter(c);
            let (volume, plane_normal) = match dim {
                1 => ((p[1] - p[0]).norm(), Vec3::zeros()),
                2 => {
                    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                    (0.5 * n.norm(), n)
                }
                _ => {
                    let det = (p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0])));
                    (det.abs() / 6.0, Vec3::zeros())
                }
            };
            if !(volume > 1e-14 * diameter.powi(dim as i32)) {
                return Err(Error::DegenerateCell(c));
            }
            g.cell_volumes[c] = volume;
            g.cell_centers[c] = center;

            for slot in 0..stride {
                let f = self.cell_faces[c * stride + slot];
                let to_face = g.face_centers[f] - center;
                let raw = match dim {
                    1 => p[1 - slot] - p[slot],
                    2 => {
                        let fnodes = self.face_nodes(f);
                        let edge = self.nodes[fnodes[1]] - self.nodes[fnodes[0]];
                        edge.cross(&plane_normal)
                    }
                    _ => {
                        let fnodes = self.face_nodes(f);
                        let a = self.nodes[fnodes[0]];
                        (self.nodes[fnodes[1]] - a).cross(&(self.nodes[fnodes[2]] - a))
                    }
                };
                let mut n = raw.normalize();
                if n.dot(&to_face) < 0.0 {
                    n = -n;
                }
                g.slot_normals[c * stride + slot] = n;
                if self.face_cells[f][0] == c {
                    g.face_normals[f] = n;
                }
            }
        }
        self.geometry = g;
        Ok(())
    }

    /// Checks the mesh invariants: face incidence, positive measures and the
    /// discrete divergence identity `sum_f A_f n_f = 0` per cell.
    pub fn check_invariants(&self) -> Result<MeshReport> {
        let stride = self.dim + 1;
        let mut incidence = vec![0usize; self.num_faces()];
        for &f in &self.cell_faces {
            incidence[f] += 1;
        }
        for (f, &count) in incidence.iter().enumerate() {
            let expected = if self.is_boundary_face(f) { 1 } else { 2 };
            if count != expected {
                return Err(Error::InvalidGeometry(format!(
                    "face {f} has {count} incident cells, expected {expected}"
                )));
            }
        }
        let mut max_closure: f64 = 0.0;
        let mut total = 0.0;
        let mut min_measure = f64::INFINITY;
        for c in 0..self.num_cells() {
            let vol = self.cell_volume(c);
            if !(vol > 0.0) {
                return Err(Error::DegenerateCell(c));
            }
            total += vol;
            min_measure = min_measure.min(vol);
            let mut sum = Vec3::zeros();
            let mut area = 0.0;
            for slot in 0..stride {
                let f = self.cell_faces[c * stride + slot];
                sum += self.face_area(f) * self.outward_normal(c, slot);
                area += self.face_area(f);
            }
            max_closure = max_closure.max(sum.norm() / area);
        }
        if max_closure > 1e-12 {
            return Err(Error::InvalidGeometry(format!("discrete divergence identity violated: {max_closure:.3e}")));
        }
        Ok(MeshReport {
            cells: self.num_cells(),
            faces: self.num_faces(),
            boundary_faces: (0..self.num_faces()).filter(|&f| self.is_boundary_face(f)).count(),
            total_measure: total,
            min_measure,
            max_closure,
        })
    }

    /// Detaches cell `face_cells[f][1]` from face `f` by giving it a fresh copy
    /// of the face. Returns the id of the copy. Geometry of both copies is kept
    /// consistent; the copy's stored normal is outward from its new owner.
    pub(crate) fn split_face(&mut self, f: usize, tag: i32) -> usize {
        let [k, l] = self.face_cells[f];
        debug_assert!(l != NO_CELL);
        let stride = self.dim + 1;
        let copy = self.face_cells.len();
        let nodes = self.face_nodes(f).to_vec();
        self.face_nodes.extend_from_slice(&nodes);
        self.face_cells.push([l, NO_CELL]);
        self.face_cells[f] = [k, NO_CELL];
        let slot = self.slot_of(l, f).expect("face incident to its cell");
        self.cell_faces[l * stride + slot] = copy;
        let g = &mut self.geometry;
        g.face_areas.push(g.face_areas[f]);
        g.face_centers.push(g.face_centers[f]);
        g.face_normals.push(g.slot_normals[l * stride + slot]);
        self.boundary_tags.insert(f, tag);
        self.boundary_tags.insert(copy, tag);
        copy
    }

    /// Mutable node access for tests that perturb geometry; geometry must be recomputed afterwards.
    pub fn nodes_mut(&mut self) -> &mut [Vec3] {
        &mut self.nodes
    }
}
