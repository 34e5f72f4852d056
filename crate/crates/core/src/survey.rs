//! Wenner-α arrays, apparent resistivity and the layered reference formula.

use serde::{Deserialize, Serialize};

use crate::coupling::ElectrodeSpec;
use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::solver::Solution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    X,
    Y,
}

/// Geometry and material of every electrode of an array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeTemplate {
    pub radius: f64,
    pub length: f64,
    pub sigma: f64,
    #[serde(default)]
    pub skin: f64,
}

impl Default for ElectrodeTemplate {
    fn default() -> Self {
        ElectrodeTemplate { radius: 1e-3, length: 5e-3, sigma: 1.45e6, skin: 0.0 }
    }
}

fn default_current() -> f64 {
    0.01
}

/// A Wenner-α array: C1, P1, P2, C2 at offsets -3a/2, -a/2, a/2, 3a/2 along `axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyConfig {
    /// Horizontal array center (m).
    pub center: [f64; 2],
    /// Electrode spacing a (m).
    pub spacing: f64,
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub electrode: ElectrodeTemplate,
    /// Current injected at C1 and extracted at C2 (A).
    #[serde(default = "default_current")]
    pub current: f64,
}

impl SurveyConfig {
    pub fn new(center: [f64; 2], spacing: f64) -> Self {
        SurveyConfig {
            center,
            spacing,
            axis: Axis::X,
            electrode: ElectrodeTemplate::default(),
            current: default_current(),
        }
    }

    /// Horizontal electrode positions in the order C1, P1, P2, C2.
    pub fn positions(&self) -> [[f64; 2]; 4] {
        let a = self.spacing;
        [-1.5 * a, -0.5 * a, 0.5 * a, 1.5 * a].map(|d| match self.axis {
            Axis::X => [self.center[0] + d, self.center[1]],
            Axis::Y => [self.center[0], self.center[1] + d],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidSurvey(format!("spacing {} must be positive", self.spacing)));
        }
        if !(self.current != 0.0) || !self.current.is_finite() {
            return Err(Error::InvalidSurvey("injected current must be finite and non-zero".into()));
        }
        let e = &self.electrode;
        if !(e.radius > 0.0) || !(e.length > 0.0) || !(e.sigma > 0.0) || !(e.skin >= 0.0) {
            return Err(Error::InvalidSurvey("electrode radius, length and conductivity must be positive".into()));
        }
        Ok(())
    }
}

/// Vertical electrodes hanging from the top of the box `[min, max]`, in the
/// order C1, P1, P2, C2, carrying `+i, 0, 0, -i`.
pub fn build_wenner(config: &SurveyConfig, min: Vec3, max: Vec3) -> Result<[ElectrodeSpec; 4]> {
    config.validate()?;
    let e = &config.electrode;
    if e.length >= max.z - min.z {
        return Err(Error::InvalidSurvey(format!(
            "electrodes of length {} do not fit in a domain of height {}",
            e.length,
            max.z - min.z
        )));
    }
    let currents = [config.current, 0.0, 0.0, -config.current];
    let mut out = Vec::with_capacity(4);
    for (i, p) in config.positions().into_iter().enumerate() {
        let inside = p[0] > min.x && p[0] < max.x && p[1] > min.y && p[1] < max.y;
        if !inside {
            return Err(Error::InvalidSurvey(format!(
                "electrode {} at ({}, {}) lies outside the domain",
                ["C1", "P1", "P2", "C2"][i],
                p[0],
                p[1]
            )));
        }
        let mut spec = ElectrodeSpec::vertical(Vec3::new(p[0], p[1], max.z), e.length, e.radius, e.sigma);
        spec.skin = e.skin;
        spec.current = currents[i];
        out.push(spec);
    }
    Ok(out.try_into().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApparentResistivity {
    /// ρ_a (Ω·m).
    pub value: f64,
    /// φ(P1) - φ(P2) (V).
    pub delta_phi: f64,
    /// Geometric factor 2πa (m).
    pub k: f64,
}

/// `2πa (φ_P1 - φ_P2) / i` with the electrode potentials taken in the topmost
/// 1D cells. The array must occupy electrodes `first..first + 4`.
pub fn apparent_resistivity(solution: &Solution, config: &SurveyConfig, first: usize) -> Result<ApparentResistivity> {
    let top = |i: usize| -> Result<f64> {
        solution
            .electrodes
            .get(first + i)
            .and_then(|phi| phi.first().copied())
            .ok_or_else(|| Error::InvalidSurvey(format!("the solution has no electrode {}", first + i)))
    };
    let delta_phi = top(1)? - top(2)?;
    let k = 2.0 * std::f64::consts::PI * config.spacing;
    Ok(ApparentResistivity { value: k * delta_phi / config.current, delta_phi, k })
}

/// Apparent resistivity of a Wenner-α array on a layer of resistivity `rho`
/// and thickness `h` over an insulating basement:
///
/// `rho (1 + 4a Σ_{n≥1} [1/sqrt(a² + 4n²h²) - 1/sqrt(4a² + 4n²h²)])`.
///
/// Terms are summed until one drops below `rel_tol` times the partial
/// bracket. The remainder is then added as the midpoint-rule integral
/// `∫_{N+1/2}^∞`, which has the closed form below and differs from the
/// remaining sum by O(N⁻²) of itself.
pub fn analytic_wenner_insulating(rho: f64, a: f64, h: f64, rel_tol: f64) -> f64 {
    let term = |n: f64| {
        let d = 4.0 * n * n * h * h;
        1.0 / (a * a + d).sqrt() - 1.0 / (4.0 * a * a + d).sqrt()
    };
    // ∫_x^∞ term = (ln 2 - asinh(2hx/a) + asinh(hx/a)) / (2h)
    let tail = |x: f64| {
        let u = h * x / a;
        (std::f64::consts::LN_2 - (2.0 * u).asinh() + u.asinh()) / (2.0 * h)
    };
    let mut bracket = 1.0;
    let mut n = 1u64;
    loop {
        let t = 4.0 * a * term(n as f64);
        bracket += t;
        if t < rel_tol * bracket {
            break;
        }
        n += 1;
    }
    bracket += 4.0 * a * tail(n as f64 + 0.5).max(0.0);
    rho * bracket
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wenner_positions() {
        let c = SurveyConfig::new([0.26, 0.17], 0.03);
        let xs: Vec<f64> = c.positions().iter().map(|p| p[0]).collect();
        for (x, e) in xs.iter().zip([0.215, 0.245, 0.275, 0.305]) {
            assert!((x - e).abs() < 1e-15);
        }
        let c = SurveyConfig::new([0.26, 0.17], 0.06);
        for (p, e) in c.positions().iter().zip([0.17, 0.23, 0.29, 0.35]) {
            assert!((p[0] - e).abs() < 1e-15);
            assert_eq!(p[1], 0.17);
        }
    }

    #[test]
    fn wenner_currents_balance() {
        let c = SurveyConfig::new([0.26, 0.17], 0.03);
        let specs = build_wenner(&c, Vec3::zeros(), Vec3::new(0.52, 0.34, 0.4)).unwrap();
        assert_eq!(specs.iter().map(|s| s.current).sum::<f64>(), 0.0);
        assert_eq!(specs[0].current, 0.01);
        assert_eq!(specs[1].current, 0.0);
        let top = specs[0].polyline[0];
        assert!((top[0] - 0.215).abs() < 1e-15 && top[1] == 0.17 && top[2] == 0.4);
        assert!((specs[0].length() - 0.005).abs() < 1e-15);
        let wide = SurveyConfig::new([0.26, 0.17], 0.2);
        assert!(matches!(build_wenner(&wide, Vec3::zeros(), Vec3::new(0.52, 0.34, 0.4)), Err(Error::InvalidSurvey(_))));
    }

    #[test]
    fn half_space_limit() {
        let v = analytic_wenner_insulating(29.0, 0.03, 300.0, 1e-12);
        assert!((v / 29.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_decreases_with_depth() {
        let mut last = f64::INFINITY;
        for h in [0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 1.0] {
            let v = analytic_wenner_insulating(29.0, 0.03, h, 1e-12);
            assert!(v < last);
            last = v;
        }
    }
}
