//! Liner embedding: bulk faces on the liner panels are split, and a 2D liner
//! mesh with one cell per split face is extracted together with the two
//! mortar side maps.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{SubdomainMesh, Vec3, LINER_FACE_TAG};
use crate::error::{Error, Result, Warning};
use crate::spatial::ElectrodeGrid;

/// Axis-aligned planar rectangle. The in-plane bounds refer to the two axes
/// other than `normal_axis`, in increasing axis order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub normal_axis: usize,
    pub position: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Panel {
    pub fn in_plane_axes(&self) -> [usize; 2] {
        match self.normal_axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    /// Horizontal panel spanning `[x0, x1] × [y0, y1]` at height `z`.
    pub fn horizontal(z: f64, x: [f64; 2], y: [f64; 2]) -> Self {
        Panel { normal_axis: 2, position: z, lower: [x[0], y[0]], upper: [x[1], y[1]] }
    }

    pub fn area(&self) -> f64 {
        (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])
    }

    fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let [a, b] = self.in_plane_axes();
        (p[self.normal_axis] - self.position).abs() <= tol
            && p[a] >= self.lower[0] - tol
            && p[a] <= self.upper[0] + tol
            && p[b] >= self.lower[1] - tol
            && p[b] <= self.upper[1] + tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinerSpec {
    pub panels: Vec<Panel>,
    #[serde(default)]
    pub holes: Vec<Hole>,
    /// Thickness ε (m).
    pub thickness: f64,
    /// Conductivity σ_λ across the liner (S/m).
    pub sigma: f64,
    /// In-plane conductivity σ_Λ (S/m); defaults to `sigma`.
    #[serde(default)]
    pub sigma_tangential: Option<f64>,
}

impl LinerSpec {
    pub fn new(panels: Vec<Panel>, thickness: f64, sigma: f64) -> Self {
        LinerSpec { panels, holes: Vec::new(), thickness, sigma, sigma_tangential: None }
    }

    /// Open box liner: the bottom at `min.z` and four walls up to `max.z`.
    pub fn open_box(min: Vec3, max: Vec3, thickness: f64, sigma: f64) -> Self {
        let panels = vec![
            Panel::horizontal(min.z, [min.x, max.x], [min.y, max.y]),
            Panel { normal_axis: 0, position: min.x, lower: [min.y, min.z], upper: [max.y, max.z] },
            Panel { normal_axis: 0, position: max.x, lower: [min.y, min.z], upper: [max.y, max.z] },
            Panel { normal_axis: 1, position: min.y, lower: [min.x, min.z], upper: [max.x, max.z] },
            Panel { normal_axis: 1, position: max.y, lower: [min.x, min.z], upper: [max.x, max.z] },
        ];
        LinerSpec::new(panels, thickness, sigma)
    }

    pub fn with_hole(mut self, center: Vec3, radius: f64) -> Self {
        self.holes.push(Hole { center: center.into(), radius });
        self
    }

    pub fn sigma_tangential(&self) -> f64 {
        self.sigma_tangential.unwrap_or(self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness > 0.0) {
            return Err(Error::InvalidGeometry(format!("liner thickness {} must be positive", self.thickness)));
        }
        if !(self.sigma > 0.0) || !(self.sigma_tangential() > 0.0) {
            return Err(Error::InvalidGeometry("liner conductivities must be positive".into()));
        }
        for (i, p) in self.panels.iter().enumerate() {
            if p.normal_axis > 2 || !(p.upper[0] > p.lower[0]) || !(p.upper[1] > p.lower[1]) {
                return Err(Error::InvalidGeometry(format!("liner panel {i} is not a proper rectangle")));
            }
        }
        for (i, h) in self.holes.iter().enumerate() {
            let c = Vec3::from(h.center);
            if !(h.radius > 0.0) {
                return Err(Error::InvalidGeometry(format!("hole {i} has non-positive radius")));
            }
            let tol = 1e-9 * (1.0 + c.norm());
            if !self.panels.iter().any(|p| p.contains(&c, tol)) {
                return Err(Error::InvalidGeometry(format!("hole {i} center does not lie on a liner panel")));
            }
        }
        Ok(())
    }
}

/// One liner cell paired with a bulk face on one side of the liner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MortarPair {
    pub liner_cell: usize,
    pub bulk_face: usize,
    pub bulk_cell: usize,
}

#[derive(Clone, Debug)]
pub struct LinerGrid {
    pub mesh: SubdomainMesh,
    pub spec: LinerSpec,
    /// Side 0 holds the bulk cells on the lower-coordinate side of each panel, side 1 the upper.
    pub sides: [Vec<MortarPair>; 2],
    /// Area of the panel faces excluded by holes.
    pub hole_area: f64,
}

#[derive(Clone, Debug)]
pub struct MixedDimGrid {
    pub bulk: SubdomainMesh,
    pub liner: Option<LinerGrid>,
    pub electrodes: Vec<ElectrodeGrid>,
    pub warnings: Vec<Warning>,
}

impl MixedDimGrid {
    pub fn bulk_only(bulk: SubdomainMesh) -> Self {
        MixedDimGrid { bulk, liner: None, electrodes: Vec::new(), warnings: Vec::new() }
    }

    /// Checks the conforming-mortar and split invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let Some(liner) = &self.liner else {
            return Ok(());
        };
        let n = liner.mesh.num_cells();
        for side in &liner.sides {
            if side.len() != n {
                return Err(Error::AssemblyMismatch(format!(
                    "liner side has {} mortar pairs for {n} liner cells",
                    side.len()
                )));
            }
            for (i, pair) in side.iter().enumerate() {
                if pair.liner_cell != i {
                    return Err(Error::BrokenMortar(pair.bulk_face));
                }
                let a = liner.mesh.cell_volume(i);
                let b = self.bulk.face_area(pair.bulk_face);
                let dc = (liner.mesh.cell_center(i) - self.bulk.face_center(pair.bulk_face)).norm();
                let scale = a.sqrt();
                if (a - b).abs() > 1e-12 * a || dc > 1e-12 * scale.max(liner.mesh.cell_center(i).norm()) {
                    return Err(Error::BrokenMortar(pair.bulk_face));
                }
                if self.bulk.face_cells(pair.bulk_face) != [pair.bulk_cell, super::NO_CELL] {
                    return Err(Error::BrokenMortar(pair.bulk_face));
                }
            }
        }
        Ok(())
    }
}

/// Splits the bulk mesh along the liner panels and builds the liner subdomain.
pub fn embed_liner(mut bulk: SubdomainMesh, spec: &LinerSpec) -> Result<MixedDimGrid> {
    spec.validate()?;
    if bulk.dim() != 3 {
        return Err(Error::InvalidGeometry("the liner is embedded in a 3D mesh".into()));
    }
    let (lo, hi) = bulk.bounds();
    let tol = 1e-9 * (hi - lo).norm();
    let mut warnings = Vec::new();
    let mut selected: BTreeSet<usize> = BTreeSet::new();
    let mut panel_of: HashMap<usize, usize> = HashMap::new();
    let mut hole_area = 0.0;

    for (pi, panel) in spec.panels.iter().enumerate() {
        let axis = panel.normal_axis;
        let mut on_panel = 0usize;
        let mut kept = 0usize;
        for f in 0..bulk.num_faces() {
            if bulk.is_boundary_face(f) {
                continue;
            }
            let flat = bulk.face_nodes(f).iter().all(|&n| (bulk.node(n)[axis] - panel.position).abs() <= tol);
            if !flat {
                continue;
            }
            let center = bulk.face_center(f);
            if !panel.contains(&center, tol) {
                continue;
            }
            on_panel += 1;
            let in_hole = spec.holes.iter().any(|h| (center - Vec3::from(h.center)).norm() < h.radius);
            if in_hole {
                if !selected.contains(&f) {
                    hole_area += bulk.face_area(f);
                }
                continue;
            }
            kept += 1;
            if selected.insert(f) {
                panel_of.insert(f, pi);
            }
        }
        if on_panel == 0 {
            return Err(Error::NonConformingLiner { panel: pi });
        }
        if kept == 0 {
            log::warn!("liner panel {pi} selected no faces");
            warnings.push(Warning::EmptyLiner { panel: pi });
        }
    }

    let faces: Vec<usize> = selected.into_iter().collect();
    let mut node_map: HashMap<usize, usize> = HashMap::new();
    let mut liner_nodes = Vec::new();
    let mut liner_cells = Vec::with_capacity(faces.len() * 3);
    let mut liner_tags = Vec::with_capacity(faces.len());
    let mut sides: [Vec<MortarPair>; 2] = [Vec::with_capacity(faces.len()), Vec::with_capacity(faces.len())];
    for (i, &f) in faces.iter().enumerate() {
        for &n in bulk.face_nodes(f) {
            let id = *node_map.entry(n).or_insert_with(|| {
                liner_nodes.push(bulk.node(n));
                liner_nodes.len() - 1
            });
            liner_cells.push(id);
        }
        let panel = &spec.panels[panel_of[&f]];
        liner_tags.push(panel_of[&f] as i32);
        let [k, _] = bulk.face_cells(f);
        let copy = bulk.split_face(f, LINER_FACE_TAG);
        let l = bulk.face_cells(copy)[0];
        let pk = MortarPair { liner_cell: i, bulk_face: f, bulk_cell: k };
        let pl = MortarPair { liner_cell: i, bulk_face: copy, bulk_cell: l };
        if bulk.cell_center(k)[panel.normal_axis] < panel.position {
            sides[0].push(pk);
            sides[1].push(pl);
        } else {
            sides[0].push(pl);
            sides[1].push(pk);
        }
    }

    let liner = if faces.is_empty() {
        None
    } else {
        let mesh = SubdomainMesh::new(2, liner_nodes, liner_cells, liner_tags)?;
        Some(LinerGrid { mesh, spec: spec.clone(), sides, hole_area })
    };
    let grid = MixedDimGrid { bulk, liner, electrodes: Vec::new(), warnings };
    grid.check_invariants()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;

    fn tank() -> SubdomainMesh {
        build_box_mesh([0.52, 0.34, 0.40], 0.05, &[]).unwrap()
    }

    fn full_panel(z: f64) -> LinerSpec {
        LinerSpec::new(vec![Panel::horizontal(z, [0.0, 0.52], [0.0, 0.34])], 1e-3, 1e-9)
    }

    fn faces_on_plane(mesh: &SubdomainMesh, z: f64) -> usize {
        (0..mesh.num_faces())
            .filter(|&f| !mesh.is_boundary_face(f))
            .filter(|&f| mesh.face_nodes(f).iter().all(|&n| (mesh.node(n).z - z).abs() < 1e-12))
            .count()
    }

    #[test]
    fn full_footprint_panel_separates_the_tank() {
        let mesh = tank();
        let expected = faces_on_plane(&mesh, 0.20);
        let grid = embed_liner(mesh, &full_panel(0.20)).unwrap();
        let liner = grid.liner.as_ref().unwrap();
        assert_eq!(liner.mesh.num_cells(), expected);
        assert_eq!(expected, 2 * 11 * 7);
        assert_eq!(grid.bulk.connected_components().0, 2);
        for pair in &liner.sides[0] {
            assert!(grid.bulk.cell_center(pair.bulk_cell).z < 0.20);
        }
        for pair in &liner.sides[1] {
            assert!(grid.bulk.cell_center(pair.bulk_cell).z > 0.20);
        }
        grid.bulk.check_invariants().unwrap();
        liner.mesh.check_invariants().unwrap();
    }

    fn first_face_on_plane(mesh: &SubdomainMesh, z: f64) -> usize {
        (0..mesh.num_faces())
            .find(|&f| {
                !mesh.is_boundary_face(f) && mesh.face_nodes(f).iter().all(|&n| (mesh.node(n).z - z).abs() < 1e-12)
            })
            .unwrap()
    }

    #[test]
    fn hole_on_a_face_center_reconnects() {
        // The two triangles of a lattice square have centroids sqrt(2)/3 of the
        // spacing apart, so a hole of half the cell size removes the square.
        let mesh = tank();
        let center = mesh.face_center(first_face_on_plane(&mesh, 0.20));
        let total = faces_on_plane(&mesh, 0.20);
        let spec = full_panel(0.20).with_hole(center, 0.5 * 0.05);
        let grid = embed_liner(mesh, &spec).unwrap();
        let liner = grid.liner.as_ref().unwrap();
        assert_eq!(liner.mesh.num_cells(), total - 2);
        assert_eq!(grid.bulk.connected_components().0, 1);
        assert!(liner.hole_area > 0.0);
    }

    #[test]
    fn small_hole_removes_a_single_face() {
        let mesh = tank();
        let f = first_face_on_plane(&mesh, 0.20);
        let center = mesh.face_center(f);
        let area = mesh.face_area(f);
        let total = faces_on_plane(&mesh, 0.20);
        let spec = full_panel(0.20).with_hole(center, 0.3 * 0.05);
        let grid = embed_liner(mesh, &spec).unwrap();
        let liner = grid.liner.as_ref().unwrap();
        assert_eq!(liner.mesh.num_cells(), total - 1);
        assert_eq!(liner.hole_area, area);
        assert_eq!(grid.bulk.connected_components().0, 1);
    }

    #[test]
    fn misaligned_panel_is_rejected() {
        let err = embed_liner(tank(), &full_panel(0.21)).unwrap_err();
        assert!(matches!(err, Error::NonConformingLiner { panel: 0 }));
    }

    #[test]
    fn fully_perforated_panel_warns() {
        let spec = LinerSpec::new(vec![Panel::horizontal(0.2, [0.1, 0.15], [0.1, 0.15])], 1e-3, 1e-9)
            .with_hole(Vec3::new(0.125, 0.125, 0.2), 0.1);
        let grid = embed_liner(tank(), &spec).unwrap();
        assert!(grid.liner.is_none());
        assert_eq!(grid.warnings, vec![Warning::EmptyLiner { panel: 0 }]);
    }

    #[test]
    fn open_box_is_one_connected_liner() {
        let spec = LinerSpec::open_box(Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.3, 0.25, 0.35), 1e-3, 1e-9);
        let mesh = build_box_mesh([0.5, 0.35, 0.4], 0.05, &[]).unwrap();
        let grid = embed_liner(mesh, &spec).unwrap();
        let liner = grid.liner.as_ref().unwrap();
        assert_eq!(liner.mesh.connected_components().0, 1);
        // Top of the box is open, so water inside still connects to the rest.
        assert_eq!(grid.bulk.connected_components().0, 1);
        let area: f64 = (0..liner.mesh.num_cells()).map(|c| liner.mesh.cell_volume(c)).sum();
        let expected = 0.2 * 0.15 + 2.0 * 0.25 * (0.2 + 0.15);
        assert!((area - expected).abs() < 1e-12);
    }

    #[test]
    fn hole_off_panel_is_invalid() {
        let spec = full_panel(0.2).with_hole(Vec3::new(0.1, 0.1, 0.3), 0.01);
        assert!(matches!(embed_liner(tank(), &spec), Err(Error::InvalidGeometry(_))));
    }
}
