//! Structured tensor-product lattices over a box, graded toward refinement
//! regions, with every hexahedron split into six tetrahedra (Kuhn split).

use super::{SubdomainMesh, Vec3};
use crate::error::{Error, Result};

/// Boundary tags assigned by the box mesher, one per box side.
pub mod side {
    pub const X_MIN: i32 = 1;
    pub const X_MAX: i32 = 2;
    pub const Y_MIN: i32 = 3;
    pub const Y_MAX: i32 = 4;
    pub const Z_MIN: i32 = 5;
    pub const Z_MAX: i32 = 6;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRegion {
    pub min: Vec3,
    pub max: Vec3,
    pub cell_size: f64,
}

impl RefinementRegion {
    pub fn new(min: Vec3, max: Vec3, cell_size: f64) -> Self {
        RefinementRegion { min, max, cell_size }
    }
}

/// Breakpoints along one axis of the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisLattice {
    pub points: Vec<f64>,
}

impl AxisLattice {
    /// Builds the breakpoints of `[lo, hi]` with target spacing `h`, finer
    /// spacing inside each `(start, end, size)` interval, and every position in
    /// `required` present as a lattice plane. A coarse interval that borders a
    /// much finer one gets a single transition layer of the geometric-mean size.
    pub fn build(lo: f64, hi: f64, h: f64, fine: &[(f64, f64, f64)], required: &[f64]) -> Result<Self> {
        if !(hi > lo) || !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGeometry(format!("invalid axis [{lo}, {hi}] with spacing {h}")));
        }
        let tol = 1e-9 * (hi - lo);
        let mut hard = vec![lo, hi];
        for &(a, b, size) in fine {
            if !(size > 0.0) || !(b > a) {
                return Err(Error::InvalidGeometry(format!("invalid refinement interval [{a}, {b}] size {size}")));
            }
            if a < lo - tol || b > hi + tol {
                return Err(Error::InvalidGeometry(format!(
                    "refinement interval [{a}, {b}] leaves the domain [{lo}, {hi}]"
                )));
            }
            hard.push(a.max(lo));
            hard.push(b.min(hi));
        }
        for &p in required {
            if p > lo + tol && p < hi - tol {
                hard.push(p);
            }
        }
        hard.sort_by(f64::total_cmp);
        hard.dedup_by(|b, a| (*b - *a).abs() <= tol);
        if let Some(last) = hard.last_mut() {
            *last = hi;
        }

        let target = |p: f64, q: f64| {
            let mid = 0.5 * (p + q);
            fine.iter().filter(|&&(a, b, _)| mid > a && mid < b).map(|&(_, _, s)| s).fold(h, f64::min)
        };
        let intervals: Vec<(f64, f64, f64)> = hard.windows(2).map(|w| (w[0], w[1], target(w[0], w[1]))).collect();

        let mut graded: Vec<(f64, f64, f64)> = Vec::with_capacity(intervals.len() + 4);
        for (i, &(p, q, size)) in intervals.iter().enumerate() {
            let left = i.checked_sub(1).map(|j| intervals[j].2).filter(|&s| size > 2.0 * s);
            let right = intervals.get(i + 1).map(|iv| iv.2).filter(|&s| size > 2.0 * s);
            let mut p = p;
            let mut q = q;
            let mut tail = None;
            if let Some(s) = left {
                let w = (s * size).sqrt();
                if q - p > w + 0.5 * size {
                    graded.push((p, p + w, w));
                    p += w;
                }
            }
            if let Some(s) = right {
                let w = (s * size).sqrt();
                if q - p > w + 0.5 * size {
                    tail = Some((q - w, q, w));
                    q -= w;
                }
            }
            graded.push((p, q, size));
            graded.extend(tail);
        }

        let mut points = vec![lo];
        for (p, q, size) in graded {
            let n = ((q - p) / size - 1e-9).ceil().max(1.0) as usize;
            for k in 1..n {
                points.push(p + (q - p) * k as f64 / n as f64);
            }
            points.push(q);
        }
        Ok(AxisLattice { points })
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }
}

/// Box mesher with optional origin offset, refinement regions and forced lattice planes.
#[derive(Clone, Debug)]
pub struct BoxMeshBuilder {
    pub origin: Vec3,
    pub extents: Vec3,
    pub cell_size: f64,
    pub refinements: Vec<RefinementRegion>,
    pub planes: [Vec<f64>; 3],
}

impl BoxMeshBuilder {
    pub fn new(extents: Vec3, cell_size: f64) -> Self {
        BoxMeshBuilder {
            origin: Vec3::zeros(),
            extents,
            cell_size,
            refinements: Vec::new(),
            planes: Default::default(),
        }
    }

    pub fn origin(mut self, origin: Vec3) -> Self {
        self.origin = origin;
        self
    }

    pub fn refine(mut self, region: RefinementRegion) -> Self {
        self.refinements.push(region);
        self
    }

    /// Forces `position` (absolute coordinate) to be a lattice plane normal to `axis`.
    pub fn plane(mut self, axis: usize, position: f64) -> Self {
        self.planes[axis].push(position);
        self
    }

    pub fn lattice(&self) -> Result<[AxisLattice; 3]> {
        if self.extents.iter().any(|&e| !(e > 0.0)) || !(self.cell_size > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "extents {:?} and cell size {} must be positive",
                self.extents.as_slice(),
                self.cell_size
            )));
        }
        let axis = |a: usize| {
            let lo = self.origin[a];
            let hi = lo + self.extents[a];
            let fine: Vec<(f64, f64, f64)> =
                self.refinements.iter().map(|r| (r.min[a], r.max[a], r.cell_size)).collect();
            AxisLattice::build(lo, hi, self.cell_size, &fine, &self.planes[a])
        };
        Ok([axis(0)?, axis(1)?, axis(2)?])
    }

    pub fn build(&self) -> Result<SubdomainMesh> {
        let lattice = self.lattice()?;
        mesh_from_lattice(&lattice)
    }
}

/// Unrefined or refined box `[0, extents]`, six tetrahedra per lattice hexahedron.
pub fn build_box_mesh(extents: [f64; 3], cell_size: f64, refinements: &[RefinementRegion]) -> Result<SubdomainMesh> {
    let mut builder = BoxMeshBuilder::new(Vec3::from(extents), cell_size);
    builder.refinements = refinements.to_vec();
    builder.build()
}

const KUHN_PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn mesh_from_lattice(lattice: &[AxisLattice; 3]) -> Result<SubdomainMesh> {
    let [xs, ys, zs] = [&lattice[0].points, &lattice[1].points, &lattice[2].points];
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
    let node = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut nodes = Vec::with_capacity(nx * ny * nz);
    for &z in zs {
        for &y in ys {
            for &x in xs {
                nodes.push(Vec3::new(x, y, z));
            }
        }
    }

    let hexes = (nx - 1) * (ny - 1) * (nz - 1);
    let mut cells = Vec::with_capacity(hexes * 24);
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |bits: usize| node(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1));
                for path in KUHN_PATHS {
                    let b1 = 1 << path[0];
                    let b2 = b1 | (1 << path[1]);
                    let mut tet = [corner(0), corner(b1), corner(b2), corner(7)];
                    let p: Vec<Vec3> = tet.iter().map(|&n| nodes[n]).collect();
                    if (p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0]))) < 0.0 {
                        tet.swap(2, 3);
                    }
                    cells.extend_from_slice(&tet);
                }
            }
        }
    }
    let n_cells = cells.len() / 4;
    let mut mesh = SubdomainMesh::new(3, nodes, cells, vec![0; n_cells])?;

    let bounds = [(xs[0], xs[nx - 1]), (ys[0], ys[ny - 1]), (zs[0], zs[nz - 1])];
    let boundary: Vec<usize> = (0..mesh.num_faces()).filter(|&f| mesh.is_boundary_face(f)).collect();
    for f in boundary {
        let pts: Vec<Vec3> = mesh.face_nodes(f).iter().map(|&n| mesh.node(n)).collect();
        let tag = (0..3).find_map(|a| {
            let (lo, hi) = bounds[a];
            if pts.iter().all(|p| p[a] == lo) {
                Some(2 * a as i32 + 1)
            } else if pts.iter().all(|p| p[a] == hi) {
                Some(2 * a as i32 + 2)
            } else {
                None
            }
        });
        if let Some(tag) = tag {
            mesh.set_boundary_tag(f, tag)?;
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_hex_gives_six_equal_tets() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 1.0, &[]).unwrap();
        assert_eq!(mesh.num_cells(), 6);
        for c in 0..6 {
            assert_relative_eq!(mesh.cell_volume(c), 1.0 / 6.0, epsilon = 1e-15);
        }
        mesh.check_invariants().unwrap();
    }

    #[test]
    fn unit_cube_half_spacing_counts() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        assert_eq!(mesh.num_cells(), 48);
        let report = mesh.check_invariants().unwrap();
        assert_relative_eq!(report.total_measure, 1.0, max_relative = 1e-12);
        assert_eq!(mesh.boundary_tags().len(), report.boundary_faces);
    }

    #[test]
    fn tank_volume() {
        let mesh = build_box_mesh([0.52, 0.34, 0.40], 0.05, &[]).unwrap();
        let report = mesh.check_invariants().unwrap();
        assert_relative_eq!(report.total_measure, 0.070720, max_relative = 1e-10);
    }

    #[test]
    fn non_positive_sizes_are_rejected() {
        assert!(matches!(build_box_mesh([1.0, 0.0, 1.0], 0.5, &[]), Err(Error::InvalidGeometry(_))));
        assert!(matches!(build_box_mesh([1.0, 1.0, 1.0], -0.5, &[]), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn refinement_grades_the_lattice() {
        let lat = AxisLattice::build(0.0, 1.0, 0.1, &[(0.4, 0.6, 0.02)], &[]).unwrap();
        let spacing: Vec<f64> = lat.points.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(spacing.iter().all(|&s| s <= 0.1 + 1e-12));
        let fine = lat.points.iter().filter(|&&p| p > 0.4 - 1e-12 && p < 0.6 + 1e-12).count();
        assert_eq!(fine, 11);
        // one transition layer on each side
        let transition = (0.02f64 * 0.1).sqrt();
        assert!(spacing.iter().any(|&s| (s - transition).abs() < 1e-12));
    }

    #[test]
    fn required_planes_are_lattice_planes() {
        let lat = AxisLattice::build(0.0, 0.4, 0.05, &[], &[0.37, 0.123]).unwrap();
        assert!(lat.points.iter().any(|&p| (p - 0.37).abs() < 1e-15));
        assert!(lat.points.iter().any(|&p| (p - 0.123).abs() < 1e-15));
    }

    #[test]
    fn refined_mesh_passes_invariants() {
        let region = RefinementRegion::new(Vec3::new(0.2, 0.1, 0.3), Vec3::new(0.3, 0.2, 0.4), 0.01);
        let mesh = build_box_mesh([0.52, 0.34, 0.40], 0.05, &[region]).unwrap();
        let report = mesh.check_invariants().unwrap();
        assert_relative_eq!(report.total_measure, 0.52 * 0.34 * 0.40, max_relative = 1e-10);
    }
}
