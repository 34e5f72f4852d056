//! Alternating digital tree over cell bounding boxes, segment clipping
//! against tetrahedra, and the electrode-to-bulk segment maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{SubdomainMesh, Vec3};

const NONE: usize = usize::MAX;

/// Boundary tag of the top end (first polyline point) of an electrode mesh.
pub const ELECTRODE_TOP_TAG: i32 = 1;
/// Boundary tag of the buried tip of an electrode mesh.
pub const ELECTRODE_TIP_TAG: i32 = 2;

#[derive(Clone, Debug)]
struct AdtNode {
    item: usize,
    key: [f64; 6],
    children: [usize; 2],
}

/// Alternating digital tree keyed by the six bounding-box coordinates
/// `(xmin, ymin, zmin, xmax, ymax, zmax)`. Level `d` splits key `d % 6` at the
/// midpoint of the region reached so far.
#[derive(Clone, Debug)]
pub struct Adt {
    nodes: Vec<AdtNode>,
    lo: [f64; 6],
    hi: [f64; 6],
}

impl Adt {
    pub fn build(boxes: &[(Vec3, Vec3)]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for (a, b) in boxes {
            lo = lo.inf(a);
            hi = hi.sup(b);
        }
        let mut tree = Adt {
            nodes: Vec::with_capacity(boxes.len()),
            lo: [lo.x, lo.y, lo.z, lo.x, lo.y, lo.z],
            hi: [hi.x, hi.y, hi.z, hi.x, hi.y, hi.z],
        };
        for (i, (a, b)) in boxes.iter().enumerate() {
            tree.insert(i, [a.x, a.y, a.z, b.x, b.y, b.z]);
        }
        tree
    }

    pub fn for_mesh(mesh: &SubdomainMesh) -> Self {
        let boxes: Vec<(Vec3, Vec3)> = (0..mesh.num_cells()).map(|c| mesh.cell_bounds(c)).collect();
        Adt::build(&boxes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn insert(&mut self, item: usize, key: [f64; 6]) {
        let id = self.nodes.len();
        self.nodes.push(AdtNode { item, key, children: [NONE; 2] });
        if id == 0 {
            return;
        }
        let (mut lo, mut hi) = (self.lo, self.hi);
        let mut node = 0;
        let mut depth = 0;
        loop {
            let k = depth % 6;
            let mid = 0.5 * (lo[k] + hi[k]);
            let side = usize::from(key[k] >= mid);
            if side == 0 {
                hi[k] = mid;
            } else {
                lo[k] = mid;
            }
            let next = self.nodes[node].children[side];
            if next == NONE {
                self.nodes[node].children[side] = id;
                return;
            }
            node = next;
            depth += 1;
        }
    }

    /// Items whose box intersects the closed box `[qlo, qhi]`, in ascending order.
    pub fn candidates(&self, qlo: Vec3, qhi: Vec3) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        // Key ranges that intersect: min keys <= qhi, max keys >= qlo.
        let range_lo = [f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, qlo.x, qlo.y, qlo.z];
        let range_hi = [qhi.x, qhi.y, qhi.z, f64::INFINITY, f64::INFINITY, f64::INFINITY];
        let mut stack = vec![(0usize, 0usize, self.lo, self.hi)];
        while let Some((node, depth, lo, hi)) = stack.pop() {
            let n = &self.nodes[node];
            if (0..6).all(|k| n.key[k] >= range_lo[k] && n.key[k] <= range_hi[k]) {
                out.push(n.item);
            }
            let k = depth % 6;
            let mid = 0.5 * (lo[k] + hi[k]);
            if n.children[0] != NONE && range_lo[k] < mid {
                let mut h = hi;
                h[k] = mid;
                stack.push((n.children[0], depth + 1, lo, h));
            }
            if n.children[1] != NONE && range_hi[k] >= mid {
                let mut l = lo;
                l[k] = mid;
                stack.push((n.children[1], depth + 1, l, hi));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Parameter interval `[t0, t1]` of the segment `a + t (b - a)`, `t` in `[0, 1]`,
/// inside the closed tetrahedron, or `None` when they do not meet.
pub fn tet_segment_interval(tet: &[Vec3; 4], a: Vec3, b: Vec3) -> Result<Option<(f64, f64)>> {
    let volume = (tet[1] - tet[0]).dot(&(tet[2] - tet[0]).cross(&(tet[3] - tet[0]))).abs() / 6.0;
    let mut diameter: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            diameter = diameter.max((tet[i] - tet[j]).norm());
        }
    }
    if !(volume > 1e-14 * diameter.powi(3)) {
        return Err(Error::DegenerateCell(0));
    }
    let eps = 1e-12 * diameter;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..4 {
        let p = tet[(i + 1) % 4];
        let q = tet[(i + 2) % 4];
        let r = tet[(i + 3) % 4];
        let mut n = (q - p).cross(&(r - p)).normalize();
        if n.dot(&(tet[i] - p)) < 0.0 {
            n = -n;
        }
        // inside: n . (x - p) >= -eps
        let fa = n.dot(&(a - p)) + eps;
        let fb = n.dot(&(b - p)) + eps;
        if fa < 0.0 && fb < 0.0 {
            return Ok(None);
        }
        if fa < 0.0 {
            t0 = t0.max(fa / (fa - fb));
        } else if fb < 0.0 {
            t1 = t1.min(fa / (fa - fb));
        }
        if t0 > t1 {
            return Ok(None);
        }
    }
    Ok(Some((t0, t1)))
}

/// Length of the segment `[a, b]` inside the closed tetrahedron.
pub fn tet_segment_clip(tet: &[Vec3; 4], a: Vec3, b: Vec3) -> Result<f64> {
    Ok(tet_segment_interval(tet, a, b)?.map_or(0.0, |(t0, t1)| (t1 - t0) * (b - a).norm()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentEntry {
    pub electrode_cell: usize,
    pub bulk_cell: usize,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeSegmentMap {
    /// Sorted by electrode cell, then bulk cell.
    pub entries: Vec<SegmentEntry>,
    pub total_length: f64,
}

impl ElectrodeSegmentMap {
    pub fn mapped_length(&self) -> f64 {
        self.entries.iter().map(|e| e.length).sum()
    }
}

fn tet_of(mesh: &SubdomainMesh, c: usize) -> [Vec3; 4] {
    let n = mesh.cell_nodes(c);
    [mesh.node(n[0]), mesh.node(n[1]), mesh.node(n[2]), mesh.node(n[3])]
}

/// Entries for one straight piece. The piece is cut at every candidate
/// interval end point; each elementary sub-interval goes to the lowest cell id
/// whose closed interval contains its midpoint, so pieces running inside a
/// shared face are counted once.
fn map_piece(mesh: &SubdomainMesh, adt: &Adt, a: Vec3, b: Vec3) -> Result<Vec<(usize, f64)>> {
    let len = (b - a).norm();
    let pad = Vec3::repeat(1e-9 * len.max(1e-300));
    let lo = a.inf(&b) - pad;
    let hi = a.sup(&b) + pad;
    let mut intervals = Vec::new();
    for c in adt.candidates(lo, hi) {
        let iv = tet_segment_interval(&tet_of(mesh, c), a, b).map_err(|_| Error::DegenerateCell(c))?;
        if let Some((t0, t1)) = iv {
            if t1 > t0 {
                intervals.push((c, t0, t1));
            }
        }
    }
    let mut cuts: Vec<f64> = intervals.iter().flat_map(|&(_, t0, t1)| [t0, t1]).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (s0, s1) = (w[0].max(0.0), w[1].min(1.0));
        if s1 <= s0 {
            continue;
        }
        let mid = 0.5 * (s0 + s1);
        if let Some(&(c, _, _)) = intervals.iter().filter(|&&(_, t0, t1)| t0 <= mid && mid <= t1).min_by_key(|iv| iv.0)
        {
            let piece = (s1 - s0) * len;
            match out.iter_mut().find(|e| e.0 == c) {
                Some(e) => e.1 += piece,
                None => out.push((c, piece)),
            }
        }
    }
    Ok(out)
}

/// Maps every cell of the 1D electrode mesh onto the bulk cells it crosses.
pub fn map_electrode(
    electrode: &SubdomainMesh,
    bulk: &SubdomainMesh,
    adt: &Adt,
    id: usize,
) -> Result<ElectrodeSegmentMap> {
    if electrode.dim() != 1 || bulk.dim() != 3 {
        return Err(Error::InvalidGeometry("electrode maps join a 1D mesh to a 3D mesh".into()));
    }
    let mut entries = Vec::new();
    let mut total = 0.0;
    for e in 0..electrode.num_cells() {
        let n = electrode.cell_nodes(e);
        let (a, b) = (electrode.node(n[0]), electrode.node(n[1]));
        total += (b - a).norm();
        let mut pieces = map_piece(bulk, adt, a, b)?;
        pieces.sort_by_key(|p| p.0);
        entries.extend(pieces.into_iter().filter(|p| p.1 > 0.0).map(|(c, length)| SegmentEntry {
            electrode_cell: e,
            bulk_cell: c,
            length,
        }));
    }
    let map = ElectrodeSegmentMap { entries, total_length: total };
    let residual = total - map.mapped_length();
    if map.entries.is_empty() || residual.abs() > 1e-10 * total {
        return Err(Error::UnmappedElectrode { electrode: id, residual });
    }
    Ok(map)
}

/// A reduced electrode: its 1D mesh (node 0 is the top end) and its map into the bulk.
#[derive(Clone, Debug)]
pub struct ElectrodeGrid {
    pub mesh: SubdomainMesh,
    pub map: ElectrodeSegmentMap,
}

/// 1D mesh along a polyline, with the top and tip ends tagged, each polyline piece split into `cells_per_piece` equal cells.
pub fn electrode_mesh(polyline: &[Vec3], cells_per_piece: usize) -> Result<SubdomainMesh> {
    if polyline.len() < 2 || cells_per_piece == 0 {
        return Err(Error::InvalidGeometry("an electrode needs at least one segment".into()));
    }
    let mut nodes = vec![polyline[0]];
    for w in polyline.windows(2) {
        for k in 1..=cells_per_piece {
            nodes.push(w[0] + (w[1] - w[0]) * (k as f64 / cells_per_piece as f64));
        }
    }
    let cells: Vec<usize> = (0..nodes.len() - 1).flat_map(|i| [i, i + 1]).collect();
    let n = nodes.len() - 1;
    let mut mesh = SubdomainMesh::new(1, nodes, cells, vec![0; n])?;
    let top = mesh.cell_faces(0)[1];
    let tip = mesh.cell_faces(n - 1)[0];
    mesh.set_boundary_tag(top, ELECTRODE_TOP_TAG)?;
    mesh.set_boundary_tag(tip, ELECTRODE_TIP_TAG)?;
    Ok(mesh)
}

/// Builds the electrode meshes and maps them into the bulk, one electrode per rayon task.
pub fn map_electrodes(
    bulk: &SubdomainMesh,
    polylines: &[Vec<Vec3>],
    cells_per_piece: usize,
) -> Result<Vec<ElectrodeGrid>> {
    let adt = Adt::for_mesh(bulk);
    polylines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let mesh = electrode_mesh(line, cells_per_piece)?;
            let map = map_electrode(&mesh, bulk, &adt, i)?;
            Ok(ElectrodeGrid { mesh, map })
        })
        .collect()
}

/// Smallest distance from the midpoint of any mapped piece to the boundary of its host cell.
pub fn min_boundary_distance(bulk: &SubdomainMesh, electrode: &ElectrodeGrid) -> f64 {
    let mut best = f64::INFINITY;
    let clipped_midpoint = |c: usize, a: Vec3, b: Vec3| -> Option<Vec3> {
        let (t0, t1) = tet_segment_interval(&tet_of(bulk, c), a, b).ok()??;
        Some(a + (b - a) * (0.5 * (t0 + t1)))
    };
    for entry in &electrode.map.entries {
        let n = electrode.mesh.cell_nodes(entry.electrode_cell);
        let (a, b) = (electrode.mesh.node(n[0]), electrode.mesh.node(n[1]));
        let Some(mid) = clipped_midpoint(entry.bulk_cell, a, b) else {
            continue;
        };
        for slot in 0..4 {
            let f = bulk.cell_faces(entry.bulk_cell)[slot];
            let d = (bulk.face_center(f) - mid).dot(&bulk.outward_normal(entry.bulk_cell, slot));
            best = best.min(d.abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> [Vec3; 4] {
        [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]
    }

    fn overlaps(a: &(Vec3, Vec3), lo: Vec3, hi: Vec3) -> bool {
        (0..3).all(|k| a.0[k] <= hi[k] && a.1[k] >= lo[k])
    }

    #[test]
    fn empty_and_single() {
        let empty = Adt::build(&[]);
        assert!(empty.candidates(Vec3::zeros(), Vec3::repeat(1.0)).is_empty());
        let one = Adt::build(&[(Vec3::zeros(), Vec3::repeat(1.0))]);
        assert_eq!(one.candidates(Vec3::repeat(0.5), Vec3::repeat(2.0)), vec![0]);
        assert!(one.candidates(Vec3::repeat(1.5), Vec3::repeat(2.0)).is_empty());
    }

    #[test]
    fn candidates_match_brute_force() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let boxes: Vec<_> = (0..mesh.num_cells()).map(|c| mesh.cell_bounds(c)).collect();
        let adt = Adt::build(&boxes);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = Vec3::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2));
            let b = Vec3::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2));
            let (lo, hi) = (a.inf(&b), a.sup(&b));
            let brute: Vec<usize> = (0..boxes.len()).filter(|&i| overlaps(&boxes[i], lo, hi)).collect();
            assert_eq!(adt.candidates(lo, hi), brute);
        }
        assert_eq!(adt.candidates(Vec3::repeat(-1.0), Vec3::repeat(2.0)).len(), 48);
        assert!(adt.candidates(Vec3::repeat(3.0), Vec3::repeat(4.0)).is_empty());
    }

    #[test]
    fn clip_inside_and_disjoint() {
        let tet = reference();
        let len = tet_segment_clip(&tet, Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.2, 0.1, 0.1)).unwrap();
        assert!((len - 0.1).abs() < 1e-15);
        let len = tet_segment_clip(&tet, Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(len, 0.0);
    }

    #[test]
    fn clip_matches_monte_carlo() {
        let tet = reference();
        let (a, b) = (Vec3::new(-1.0, 0.25, 0.25), Vec3::new(2.0, 0.25, 0.25));
        let exact = tet_segment_clip(&tet, a, b).unwrap();
        let samples = 1_000_000;
        let inside = (0..samples)
            .filter(|&i| {
                let p = a + (b - a) * ((i as f64 + 0.5) / samples as f64);
                p.x >= 0.0 && p.y >= 0.0 && p.z >= 0.0 && p.x + p.y + p.z <= 1.0
            })
            .count();
        let estimate = inside as f64 / samples as f64 * 3.0;
        assert!((exact - estimate).abs() < 1e-4);
        assert!((exact - 0.5).abs() < 1e-11);
    }

    #[test]
    fn degenerate_tet_is_rejected() {
        let flat = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        assert!(matches!(tet_segment_clip(&flat, Vec3::zeros(), Vec3::x()), Err(Error::DegenerateCell(_))));
    }

    #[test]
    fn electrode_inside_one_tet() {
        let mesh = SubdomainMesh::new(3, reference().to_vec(), vec![0, 1, 2, 3], vec![0]).unwrap();
        let adt = Adt::for_mesh(&mesh);
        let e = electrode_mesh(&[Vec3::new(0.2, 0.2, 0.3), Vec3::new(0.2, 0.2, 0.295)], 1).unwrap();
        let map = map_electrode(&e, &mesh, &adt, 0).unwrap();
        assert_eq!(map.entries.len(), 1);
        assert!((map.entries[0].length - 0.005).abs() < 1e-15);
    }

    #[test]
    fn electrode_crossing_cells_partitions_length() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let adt = Adt::for_mesh(&mesh);
        let e = electrode_mesh(&[Vec3::new(0.3, 0.6, 0.9), Vec3::new(0.35, 0.62, 0.2)], 1).unwrap();
        let map = map_electrode(&e, &mesh, &adt, 0).unwrap();
        assert!(map.entries.len() >= 2);
        assert!((map.mapped_length() - map.total_length).abs() <= 1e-10 * map.total_length);
    }

    #[test]
    fn electrode_in_shared_face_is_counted_once() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let adt = Adt::for_mesh(&mesh);
        // Runs along the x = y diagonal plane shared by two Kuhn tetrahedra.
        let e = electrode_mesh(&[Vec3::new(0.25, 0.25, 1.0), Vec3::new(0.25, 0.25, 0.1)], 3).unwrap();
        let map = map_electrode(&e, &mesh, &adt, 0).unwrap();
        assert!((map.mapped_length() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn electrode_outside_is_unmapped() {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.5, &[]).unwrap();
        let adt = Adt::for_mesh(&mesh);
        let e = electrode_mesh(&[Vec3::new(0.5, 0.5, 1.5), Vec3::new(0.5, 0.5, 1.2)], 1).unwrap();
        assert!(matches!(map_electrode(&e, &mesh, &adt, 3), Err(Error::UnmappedElectrode { electrode: 3, .. })));
    }
}
