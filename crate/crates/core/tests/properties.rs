use std::collections::VecDeque;

use proptest::prelude::*;

use mdres_core::coupling::{assemble_problem, MortarForm};
use mdres_core::fv::{assemble, MaterialField, Scheme};
use mdres_core::mesh::{build_box_mesh, embed_liner, LinerSpec, Panel, RefinementRegion, SubdomainMesh, Vec3};
use mdres_core::scenario::{RefinementConfig, ScenarioConfig};
use mdres_core::solver::{solve, solve_gauged, Gauge, Solution, SolverOptions};
use mdres_core::spatial::{electrode_mesh, map_electrode, tet_segment_clip, Adt};
use mdres_core::survey::{analytic_wenner_insulating, apparent_resistivity};

fn direct() -> SolverOptions {
    SolverOptions { method: mdres_core::solver::Method::Direct, ..Default::default() }
}

/// Small water box with a horizontal liner; every solve takes well under a second.
fn small(scheme: Scheme, spacing: f64, depth: f64, dx: f64, dy: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::layered([0.3, 0.2, 0.12], 1.0 / 29.0, spacing, depth);
    c.mesh.cell_size = 0.04;
    c.mesh.electrode_cell_size = 0.02;
    c.mesh.electrode_margin = 0.02;
    c.survey.center = [0.15 + dx, 0.1 + dy];
    c.scheme = scheme;
    c.solver = direct();
    c
}

fn solve_with(config: &ScenarioConfig, currents: [f64; 4], gauge: Gauge) -> Solution {
    let (grid, mut specs) = config.build_grid().unwrap();
    for (s, i) in specs.iter_mut().zip(currents) {
        s.current = i;
    }
    let material = MaterialField::uniform(grid.bulk.num_cells(), config.water.sigma).unwrap();
    let assembly = assemble_problem(&grid, &material, &specs, config.scheme, MortarForm::Eliminated).unwrap();
    solve(&assembly, gauge, &config.solver).unwrap()
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Tpfa), Just(Scheme::Mpfa)]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Geometry

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn box_mesh_closure_and_measure(
        ex in 0.2f64..1.0, ey in 0.2f64..1.0, ez in 0.2f64..1.0,
        h in 0.08f64..0.3, fine in 0.03f64..0.08, f0 in 0.0f64..0.5,
    ) {
        let lo = Vec3::new(f0 * ex, f0 * ey, f0 * ez);
        let hi = lo + Vec3::new(0.4 * ex, 0.4 * ey, 0.4 * ez);
        let mesh = build_box_mesh([ex, ey, ez], h, &[RefinementRegion::new(lo, hi, fine)]).unwrap();
        let mut volume = 0.0;
        for c in 0..mesh.num_cells() {
            let v = mesh.cell_volume(c);
            prop_assert!(v > 0.0);
            volume += v;
            let mut sum = Vec3::zeros();
            let mut area = 0.0;
            for (slot, &f) in mesh.cell_faces(c).iter().enumerate() {
                sum += mesh.face_area(f) * mesh.outward_normal(c, slot);
                area += mesh.face_area(f);
            }
            prop_assert!(sum.norm() <= 1e-12 * area);
        }
        prop_assert!(rel(volume, ex * ey * ez) <= 1e-10);
        for f in 0..mesh.num_faces() {
            let cells = mesh.face_cells(f);
            prop_assert!(cells[0] != usize::MAX);
            if !mesh.is_boundary_face(f) {
                prop_assert!(cells[0] != cells[1]);
            }
        }
    }

    #[test]
    fn liner_splits_and_mortars_conform(k in 1usize..8, h in prop_oneof![Just(0.05), Just(0.1)]) {
        let mesh = build_box_mesh([0.5, 0.3, 0.4], h, &[]).unwrap();
        let z = (k as f64 * h).min(0.4 - h);
        let spec = LinerSpec::new(vec![Panel::horizontal(z, [0.0, 0.5], [0.0, 0.3])], 1e-3, 1e-9);
        let grid = embed_liner(mesh, &spec).unwrap();
        let liner = grid.liner.as_ref().unwrap();
        for side in &liner.sides {
            prop_assert_eq!(side.len(), liner.mesh.num_cells());
            for p in side {
                let a = grid.bulk.face_area(p.bulk_face);
                prop_assert!(rel(liner.mesh.cell_volume(p.liner_cell), a) <= 1e-12);
                let d = (liner.mesh.cell_center(p.liner_cell) - grid.bulk.face_center(p.bulk_face)).norm();
                prop_assert!(d <= 1e-12 * grid.bulk.face_center(p.bulk_face).norm());
            }
        }
        // Breadth-first search through bulk faces never crosses the liner.
        let bulk = &grid.bulk;
        let start = (0..bulk.num_cells()).find(|&c| bulk.cell_center(c).z > z).unwrap();
        let mut seen = vec![false; bulk.num_cells()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = queue.pop_front() {
            prop_assert!(bulk.cell_center(c).z > z);
            for &f in bulk.cell_faces(c) {
                for n in bulk.face_cells(f) {
                    if n != usize::MAX && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        let above = (0..bulk.num_cells()).filter(|&c| bulk.cell_center(c).z > z).count();
        prop_assert_eq!(seen.iter().filter(|&&s| s).count(), above);
    }
}

// Spatial search and electrode maps

fn unit_box() -> impl Strategy<Value = (Vec3, Vec3)> {
    (prop::array::uniform3(-0.2f64..1.2), prop::array::uniform3(0.0f64..0.4))
        .prop_map(|(a, w)| (Vec3::from(a), Vec3::from(a) + Vec3::from(w)))
}

fn overlaps(b: &(Vec3, Vec3), lo: Vec3, hi: Vec3) -> bool {
    (0..3).all(|k| b.0[k] <= hi[k] && b.1[k] >= lo[k])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adt_candidates_equal_brute_force(
        boxes in prop::collection::vec(unit_box(), 1..300),
        queries in prop::collection::vec(unit_box(), 1000),
    ) {
        let adt = Adt::build(&boxes);
        prop_assert_eq!(adt.len(), boxes.len());
        for (lo, hi) in queries {
            let brute: Vec<usize> = (0..boxes.len()).filter(|&i| overlaps(&boxes[i], lo, hi)).collect();
            prop_assert_eq!(adt.candidates(lo, hi), brute);
        }
    }

    #[test]
    fn electrode_lengths_partition(
        a in prop::array::uniform3(0.01f64..0.99),
        b in prop::array::uniform3(0.01f64..0.99),
        pieces in 1usize..5,
    ) {
        let (a, b) = (Vec3::from(a), Vec3::from(b));
        prop_assume!((b - a).norm() > 1e-3);
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.25, &[]).unwrap();
        let adt = Adt::for_mesh(&mesh);
        let e = electrode_mesh(&[a, b], pieces).unwrap();
        let map = map_electrode(&e, &mesh, &adt, 0).unwrap();
        let total = (b - a).norm();
        prop_assert!(rel(map.total_length, total) <= 1e-14);
        prop_assert!(rel(map.mapped_length(), total) <= 1e-10);
        // Generic segments meet shared faces in isolated points only, so the
        // per-cell clip lengths of a brute-force scan partition the length too.
        let mut brute = vec![0.0; mesh.num_cells()];
        for c in 0..mesh.num_cells() {
            let n = mesh.cell_nodes(c);
            let tet = [mesh.node(n[0]), mesh.node(n[1]), mesh.node(n[2]), mesh.node(n[3])];
            brute[c] = tet_segment_clip(&tet, a, b).unwrap();
        }
        prop_assert!(rel(brute.iter().sum::<f64>(), total) <= 1e-9);
        let mut mapped = vec![0.0; mesh.num_cells()];
        for entry in &map.entries {
            mapped[entry.bulk_cell] += entry.length;
        }
        for c in 0..mesh.num_cells() {
            prop_assert!((mapped[c] - brute[c]).abs() <= 1e-9 * total);
        }
    }
}

// Reference formula

/// `2 pi a (phi_P1 - phi_P2) / I` for point electrodes on the surface of a
/// layer of thickness `h` between two insulators: images of every source at
/// depths `2 n h`, `n = -N..=N`, summed from the far images inward.
fn image_charge_rho(rho: f64, a: f64, h: f64) -> f64 {
    const N: i64 = 1_000_000;
    let sources = [(0.0, 1.0), (3.0 * a, -1.0)];
    let receivers = [a, 2.0 * a];
    let potential_difference = |z: f64| -> f64 {
        let mut d = 0.0;
        for &(xs, q) in &sources {
            let g = |x: f64| 1.0 / ((x - xs) * (x - xs) + z * z).sqrt();
            d += q * (g(receivers[0]) - g(receivers[1]));
        }
        d
    };
    let mut sum = 0.0;
    for n in (1..=N).rev() {
        sum += 2.0 * potential_difference(2.0 * n as f64 * h);
    }
    sum += potential_difference(0.0);
    // phi = rho I / (2 pi r) per source at the surface of a half-space.
    2.0 * std::f64::consts::PI * a * rho / (2.0 * std::f64::consts::PI) * sum
}

#[test]
fn analytic_matches_image_charges_at_tank_geometry() {
    let series = analytic_wenner_insulating(29.0, 0.03, 0.03, 1e-12);
    let images = image_charge_rho(29.0, 0.03, 0.03);
    assert!(rel(series, images) <= 1e-8, "{series} vs {images}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_matches_image_charges(log_ratio in -1.0f64..2.0, a in 0.01f64..0.2, rho in 1.0f64..100.0) {
        let h = a * 10f64.powf(log_ratio);
        let series = analytic_wenner_insulating(rho, a, h, 1e-12);
        let images = image_charge_rho(rho, a, h);
        prop_assert!(rel(series, images) <= 1e-8, "h/a = {}: {} vs {}", h / a, series, images);
    }

    #[test]
    fn analytic_is_monotone_and_bounded_below(a in 0.01f64..0.2, h1 in 0.005f64..1.0, f in 1.01f64..3.0) {
        let r1 = analytic_wenner_insulating(29.0, a, h1, 1e-12);
        let r2 = analytic_wenner_insulating(29.0, a, h1 * f, 1e-12);
        prop_assert!(r2 < r1 && r2 > 29.0);
    }
}

// Discretization and solver

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mpfa_reproduces_linear_fields(g in prop::array::uniform3(-5.0f64..5.0), sigma in 0.01f64..10.0, c0 in -1.0f64..1.0) {
        let mesh = build_box_mesh([1.0, 1.0, 1.0], 0.25, &[]).unwrap();
        let mat = MaterialField::uniform(mesh.num_cells(), sigma).unwrap();
        let op = assemble(Scheme::Mpfa, &mesh, &mat).unwrap();
        let g = Vec3::from(g);
        let phi: Vec<f64> = (0..mesh.num_cells()).map(|c| c0 + g.dot(&mesh.cell_center(c))).collect();
        let fluxes = op.face_fluxes(&phi);
        let interior = interior_nodes(&mesh);
        let mut checked = 0;
        for f in 0..mesh.num_faces() {
            if mesh.is_boundary_face(f) || !mesh.face_nodes(f).iter().all(|&n| interior[n]) {
                continue;
            }
            let exact = -sigma * mesh.face_area(f) * g.dot(&mesh.face_normal(f));
            prop_assert!((fluxes[f] - exact).abs() <= 1e-10 * sigma * g.norm().max(1.0) * mesh.face_area(f));
            checked += 1;
        }
        prop_assert!(checked > 100);
    }

    #[test]
    fn constants_span_the_nullspace(s in scheme(), depth in prop_oneof![Just(0.04), Just(0.08)]) {
        let config = small(s, 0.04, depth, 0.0, 0.0);
        let (grid, specs) = config.build_grid().unwrap();
        let material = MaterialField::uniform(grid.bulk.num_cells(), config.water.sigma).unwrap();
        let asm = assemble_problem(&grid, &material, &specs, s, MortarForm::Eliminated).unwrap();
        let m = &asm.system.matrix;
        let ones = vec![1.0; m.rows];
        let scale = (0..m.rows).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
        prop_assert!(m.mul_vec(&ones).iter().all(|v| v.abs() <= 1e-12 * scale));
        // Different gauges differ by a constant only, so the kernel has no other direction.
        let a = solve_gauged(&asm.system, Gauge::Pin, &direct()).unwrap().x;
        let b = solve_gauged(&asm.system, Gauge::NullAverage, &direct()).unwrap().x;
        let range = b.iter().copied().fold(f64::NEG_INFINITY, f64::max) - b.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = a[0] - b[0];
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y - shift).abs() <= 1e-8 * range));
    }

    #[test]
    fn gauge_and_current_do_not_change_rho(s in scheme(), i in 1e-4f64..1.0, dx in -0.02f64..0.02) {
        let config = small(s, 0.04, 0.05, dx, 0.0);
        let pinned = solve_with(&config, [i, 0.0, 0.0, -i], Gauge::Pin);
        let mut c = config.clone();
        c.survey.current = i;
        let r_pin = apparent_resistivity(&pinned, &c.survey, 0).unwrap().value;
        let averaged = solve_with(&config, [i, 0.0, 0.0, -i], Gauge::NullAverage);
        let r_avg = apparent_resistivity(&averaged, &c.survey, 0).unwrap().value;
        prop_assert!(rel(r_pin, r_avg) <= 1e-10);
        let doubled = solve_with(&config, [2.0 * i, 0.0, 0.0, -2.0 * i], Gauge::NullAverage);
        c.survey.current = 2.0 * i;
        let r_double = apparent_resistivity(&doubled, &c.survey, 0).unwrap().value;
        prop_assert!(rel(r_double, r_avg) <= 1e-12);
    }

    #[test]
    fn every_cell_balances(s in scheme(), dx in -0.02f64..0.02, dy in -0.02f64..0.02) {
        let config = small(s, 0.04, 0.05, dx, dy);
        let run = config.run().unwrap();
        let i = config.survey.current;
        prop_assert!(run.balance.max_residual <= 1e-10 * i);
        prop_assert!((run.balance.injected - i).abs() <= 1e-12 * i);
        prop_assert!((run.balance.extracted - i).abs() <= 1e-12 * i);
    }

    #[test]
    fn reciprocity(s in scheme(), cells in 2usize..4, dy in -0.02f64..0.02) {
        // Spacings that are whole multiples of the refined cell size, so that
        // all four electrodes sit in the middle of a cell column.
        let spacing = cells as f64 * 0.02;
        let config = small(s, spacing, 0.05, 0.0, dy);
        let i = 0.01;
        let k = 2.0 * std::f64::consts::PI * spacing / i;
        let normal = solve_with(&config, [i, 0.0, 0.0, -i], Gauge::NullAverage);
        let swapped = solve_with(&config, [0.0, i, -i, 0.0], Gauge::NullAverage);
        let r1 = k * (normal.electrodes[1][0] - normal.electrodes[2][0]);
        let r2 = k * (swapped.electrodes[0][0] - swapped.electrodes[3][0]);
        prop_assert!(rel(r2, r1) < 1e-3, "{} vs {}", r1, r2);
    }

    #[test]
    fn translation_invariance(s in scheme(), t in prop::array::uniform3(-2.0f64..2.0)) {
        let config = small(s, 0.04, 0.05, 0.0, 0.0);
        let base = config.run().unwrap().rho.value;
        let mut moved = config.clone();
        for k in 0..3 {
            moved.domain.origin[k] += t[k];
        }
        moved.survey.center[0] += t[0];
        moved.survey.center[1] += t[1];
        let shifted = moved.run().unwrap().rho.value;
        prop_assert!(rel(shifted, base) <= 1e-10, "{} vs {}", base, shifted);
    }
}

fn interior_nodes(mesh: &SubdomainMesh) -> Vec<bool> {
    let mut interior = vec![true; mesh.num_nodes()];
    for f in 0..mesh.num_faces() {
        if mesh.is_boundary_face(f) {
            for &n in mesh.face_nodes(f) {
                interior[n] = false;
            }
        }
    }
    interior
}

#[test]
fn transparent_liner_is_invisible() {
    // A very conductive sheet without in-plane conduction: the series
    // coupling reduces to the two-point transmissibility of the uncut face.
    let mut with = small(Scheme::Tpfa, 0.04, 0.05, 0.0, 0.0);
    let liner = with.liner.as_mut().unwrap();
    liner.sigma = 1e12;
    liner.sigma_tangential = Some(1e-30);
    // Same lattice with and without the sheet.
    with.mesh.refinements.push(RefinementConfig { min: [0.0, 0.0, 0.07], max: [0.3, 0.2, 0.12], cell_size: 0.04 });
    let mut without = with.clone();
    without.liner = None;
    let a = with.run().unwrap();
    let b = without.run().unwrap();
    assert_eq!(a.grid.bulk.num_cells(), b.grid.bulk.num_cells());
    // The null-average gauge also weighs the liner cells, so compare
    // potentials relative to the first bulk cell.
    let (a0, b0) = (a.solution.bulk[0], b.solution.bulk[0]);
    let range = b.solution.bulk.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - b.solution.bulk.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = a.solution.bulk.iter().zip(&b.solution.bulk).map(|(x, y)| (x - a0 - y + b0).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6 * range, "{worst:e} of {range:e}");
    for (x, y) in a.solution.electrodes.iter().flatten().zip(b.solution.electrodes.iter().flatten()) {
        assert!((x - a0 - y + b0).abs() <= 1e-6 * range);
    }
}
