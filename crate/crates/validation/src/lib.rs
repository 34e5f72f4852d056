//! Reference values computed without the finite-volume machinery, and the
//! bookkeeping of the acceptance run.

use std::io::Write;

use mdres_core::mesh::SubdomainMesh;

/// Wenner apparent resistivity of point electrodes on the surface of a layer
/// of thickness `h` between two insulators, by images of every source at
/// depths `2 n h` for `n = -N..=N`, summed from the far images inward.
pub fn image_charge_rho(rho: f64, a: f64, h: f64, images: i64) -> f64 {
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
    for n in (1..=images).rev() {
        sum += 2.0 * potential_difference(2.0 * n as f64 * h);
    }
    sum += potential_difference(0.0);
    // A surface source of current I gives rho I / (2 pi r); K = 2 pi a.
    a * rho * sum
}

/// Nodes not touching the boundary.
pub fn interior_nodes(mesh: &SubdomainMesh) -> Vec<bool> {
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

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Result lines of the acceptance run.
#[derive(Default)]
pub struct Report {
    results: Vec<(String, bool)>,
}

impl Report {
    /// Prints an indented detail line.
    pub fn detail(&self, line: impl AsRef<str>) {
        println!("    {}", line.as_ref());
        std::io::stdout().flush().ok();
    }

    /// Prints the verdict line of one criterion.
    pub fn verdict(&mut self, id: u32, title: &str, pass: bool, summary: impl AsRef<str>) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {title}: {}", summary.as_ref());
        std::io::stdout().flush().ok();
        self.results.push((format!("[{id}] {title}"), pass));
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}
