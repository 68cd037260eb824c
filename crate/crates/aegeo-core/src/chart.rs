//! Coordinate charts and quadrature grids.
//!
//! Spherical charts (annuli and punctured balls) use logarithmically spaced
//! radial shells and a Gauss–Legendre × uniform-azimuth angular rule that is
//! antipodally symmetric, so flux integrals of odd integrands cancel in exact
//! pairs. Torus charts use a uniform periodic lattice.

use crate::error::{AeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartKind {
    AsymptoticZ,
    InvertedX,
    HarmonicY,
    NormalYbar,
    DecompactifiedZbar,
    Torus,
}

impl ChartKind {
    pub fn label(&self) -> &'static str {
        match self {
            ChartKind::AsymptoticZ => "asymptotic_z",
            ChartKind::InvertedX => "inverted_x",
            ChartKind::HarmonicY => "harmonic_y",
            ChartKind::NormalYbar => "normal_ybar",
            ChartKind::DecompactifiedZbar => "decompactified_zbar",
            ChartKind::Torus => "torus",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum ChartDomain {
    Annulus { r_in: f64, r_out: f64 },
    PuncturedBall { radius: f64, puncture: f64 },
    Torus { period: f64 },
}

/// Gauss–Legendre nodes/weights on [-1,1], symmetrized so that
/// `x[n-1-i] = -x[i]` exactly.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p0 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Angular quadrature on the unit sphere: Gauss–Legendre in cos(theta),
/// uniform trapezoid in phi (phi count even so the rule is antipodally
/// symmetric: node `a` pairs with `antipode[a]` at the same weight).
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Unit direction per node.
    pub dirs: Vec<[f64; 3]>,
    /// Quadrature weight per node; weights sum to 4*pi.
    pub weights: Vec<f64>,
    /// Index of the antipodal node.
    pub antipode: Vec<usize>,
}

impl SphereRule {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 4 || n_phi < 4 {
            return Err(AeError::InvalidChart(
                "angular node counts must be >= 4".into(),
            ));
        }
        if n_phi % 2 != 0 {
            return Err(AeError::InvalidChart(
                "phi node count must be even (antipodal symmetry)".into(),
            ));
        }
        let (mu, wmu) = gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        // Azimuth table with the upper half an exact negation of the lower
        // half, so antipodal directions are exact negatives.
        let half = n_phi / 2;
        let mut cos_sin = Vec::with_capacity(n_phi);
        for j in 0..half {
            let phi = dphi * j as f64;
            cos_sin.push((phi.cos(), phi.sin()));
        }
        for j in 0..half {
            let (c, s) = cos_sin[j];
            cos_sin.push((-c, -s));
        }
        let mut dirs = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let mut antipode = vec![0usize; n_theta * n_phi];
        for (i, &m) in mu.iter().enumerate() {
            let s = (1.0 - m * m).max(0.0).sqrt();
            for j in 0..n_phi {
                let (cp, sp) = cos_sin[j];
                dirs.push([s * cp, s * sp, m]);
                weights.push(wmu[i] * dphi);
                let ia = n_theta - 1 - i;
                let ja = (j + half) % n_phi;
                antipode[i * n_phi + j] = ia * n_phi + ja;
            }
        }
        Ok(SphereRule {
            n_theta,
            n_phi,
            dirs,
            weights,
            antipode,
        })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Integral of `f` over the sphere of radius `r` with the Euclidean area
    /// element. Antipodal pairs are summed first so odd integrands cancel
    /// exactly.
    pub fn integrate(&self, r: f64, mut f: impl FnMut([f64; 3]) -> f64) -> f64 {
        let mut total = 0.0;
        for a in 0..self.len() {
            let b = self.antipode[a];
            if a < b {
                let pa = [self.dirs[a][0] * r, self.dirs[a][1] * r, self.dirs[a][2] * r];
                let pb = [self.dirs[b][0] * r, self.dirs[b][1] * r, self.dirs[b][2] * r];
                total += self.weights[a] * (f(pa) + f(pb));
            }
        }
        total * r * r
    }

    /// Supremum of `f` over the quadrature node set at radius `r`.
    pub fn sup(&self, r: f64, mut f: impl FnMut([f64; 3]) -> f64) -> f64 {
        self.dirs
            .iter()
            .map(|d| f([d[0] * r, d[1] * r, d[2] * r]))
            .fold(0.0f64, |m, v| m.max(v))
    }
}

/// A coordinate domain with its quadrature grid.
#[derive(Clone, Debug)]
pub struct Chart {
    pub name: String,
    pub kind: ChartKind,
    pub domain: ChartDomain,
    /// Radial shells (log-spaced), empty for torus charts.
    pub radial: Vec<f64>,
    pub sphere: Option<SphereRule>,
    /// Lattice nodes per axis for torus charts.
    pub nodes_per_axis: usize,
}

impl Chart {
    pub fn annulus(
        name: &str,
        kind: ChartKind,
        r_in: f64,
        r_out: f64,
        n_radial: usize,
        n_theta: usize,
        n_phi: usize,
    ) -> Result<Self> {
        if !(r_in > 0.0 && r_in < r_out) {
            return Err(AeError::InvalidChart(format!(
                "annulus requires 0 < r_in < r_out, got [{r_in}, {r_out}]"
            )));
        }
        if n_radial < 4 {
            return Err(AeError::InvalidChart("radial node count must be >= 4".into()));
        }
        let radial = log_spaced(r_in, r_out, n_radial);
        Ok(Chart {
            name: name.to_string(),
            kind,
            domain: ChartDomain::Annulus { r_in, r_out },
            radial,
            sphere: Some(SphereRule::new(n_theta, n_phi)?),
            nodes_per_axis: 0,
        })
    }

    /// Punctured ball: the node at the origin is excluded; values at the
    /// puncture are defined by radial extrapolation.
    pub fn punctured_ball(
        name: &str,
        kind: ChartKind,
        radius: f64,
        puncture: f64,
        n_radial: usize,
        n_theta: usize,
        n_phi: usize,
    ) -> Result<Self> {
        if !(puncture >= 0.0 && puncture < radius) {
            return Err(AeError::InvalidChart(format!(
                "punctured ball requires 0 <= puncture < radius, got [{puncture}, {radius}]"
            )));
        }
        let inner = if puncture > 0.0 {
            puncture
        } else {
            // one grid spacing, log scale
            radius * (radius / 1e-3).powf(-1.0 / (n_radial as f64 - 1.0))
        };
        let radial = log_spaced(inner, radius, n_radial);
        Ok(Chart {
            name: name.to_string(),
            kind,
            domain: ChartDomain::PuncturedBall { radius, puncture: inner },
            radial,
            sphere: Some(SphereRule::new(n_theta, n_phi)?),
            nodes_per_axis: 0,
        })
    }

    pub fn torus(name: &str, period: f64, nodes_per_axis: usize) -> Result<Self> {
        if period <= 0.0 {
            return Err(AeError::InvalidChart("torus period must be positive".into()));
        }
        if nodes_per_axis < 4 {
            return Err(AeError::InvalidChart("torus node count must be >= 4".into()));
        }
        Ok(Chart {
            name: name.to_string(),
            kind: ChartKind::Torus,
            domain: ChartDomain::Torus { period },
            radial: Vec::new(),
            sphere: None,
            nodes_per_axis,
        })
    }

    pub fn node_count(&self) -> usize {
        match self.domain {
            ChartDomain::Torus { .. } => self.nodes_per_axis.pow(3),
            _ => self.radial.len() * self.sphere.as_ref().map_or(0, |s| s.len()),
        }
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        match self.domain {
            ChartDomain::Torus { period } => {
                let n = self.nodes_per_axis;
                let h = period / n as f64;
                let k = idx % n;
                let j = (idx / n) % n;
                let i = idx / (n * n);
                [i as f64 * h, j as f64 * h, k as f64 * h]
            }
            _ => {
                let sphere = self.sphere.as_ref().expect("spherical chart");
                let na = sphere.len();
                let r = self.radial[idx / na];
                let d = sphere.dirs[idx % na];
                [d[0] * r, d[1] * r, d[2] * r]
            }
        }
    }

    pub fn nodes(&self) -> Vec<[f64; 3]> {
        (0..self.node_count()).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        match self.domain {
            ChartDomain::Annulus { r_in, r_out } => {
                r >= r_in * (1.0 - 1e-12) && r <= r_out * (1.0 + 1e-12)
            }
            ChartDomain::PuncturedBall { radius, .. } => r > 0.0 && r <= radius * (1.0 + 1e-12),
            ChartDomain::Torus { .. } => true,
        }
    }

    /// Radii of the dyadic shell boundaries available inside the chart.
    pub fn dyadic_radii(&self) -> Vec<f64> {
        match self.domain {
            ChartDomain::Annulus { r_in, r_out } => {
                let mut out = Vec::new();
                let mut r = r_in;
                while r <= r_out * (1.0 + 1e-12) {
                    out.push(r);
                    r *= 2.0;
                }
                out
            }
            _ => self.radial.clone(),
        }
    }

    pub fn same_grid(&self, other: &Chart) -> bool {
        self.node_count() == other.node_count()
            && match (&self.domain, &other.domain) {
                (ChartDomain::Torus { period: a }, ChartDomain::Torus { period: b }) => a == b,
                _ => {
                    self.radial.len() == other.radial.len()
                        && self
                            .sphere
                            .as_ref()
                            .zip(other.sphere.as_ref())
                            .map_or(false, |(s, o)| {
                                s.n_theta == o.n_theta && s.n_phi == o.n_phi
                            })
                }
            }
    }
}

pub fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    let la = a.ln();
    let lb = b.ln();
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n as f64 - 1.0)).exp())
        .collect()
}

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]`, subdividing
/// logarithmically with `per_octave` panels per factor of two.
pub fn radial_quadrature(a: f64, b: f64, per_octave: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    assert!(a > 0.0 && b > a);
    let octaves = (b / a).log2();
    let panels = ((octaves * per_octave as f64).ceil() as usize).max(1);
    let (x, w) = gauss_legendre(8);
    let mut total = 0.0;
    let edges = log_spaced(a, b, panels + 1);
    for k in 0..panels {
        let (lo, hi) = (edges[k], edges[k + 1]);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for i in 0..x.len() {
            total += w[i] * half * f(mid + half * x[i]);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sphere_weights_sum_to_full_area() {
        for (nt, np) in [(6, 8), (12, 24), (16, 32)] {
            let rule = SphereRule::new(nt, np).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!(
                (total - 4.0 * PI).abs() / (4.0 * PI) < 1e-12,
                "weights sum {total} for {nt}x{np}"
            );
            let area = rule.integrate(3.0, |_| 1.0);
            assert!((area - 4.0 * PI * 9.0).abs() / (4.0 * PI * 9.0) < 1e-12);
        }
    }

    #[test]
    fn odd_integrands_cancel_exactly() {
        let rule = SphereRule::new(12, 24).unwrap();
        for k in 0..3 {
            let v = rule.integrate(2.0, |p| p[k]);
            assert_eq!(v, 0.0, "component {k}");
        }
    }

    #[test]
    fn quadratic_moments_are_exact() {
        // int_{S_r} x_i x_j dS = (4 pi / 3) r^4 delta_ij
        let rule = SphereRule::new(8, 12).unwrap();
        let r = 1.7;
        for i in 0..3 {
            for j in 0..3 {
                let v = rule.integrate(r, |p| p[i] * p[j]);
                let expect = if i == j { 4.0 * PI / 3.0 * r.powi(4) } else { 0.0 };
                assert!((v - expect).abs() < 1e-10 * r.powi(4), "({i},{j}): {v}");
            }
        }
    }

    #[test]
    fn antipode_table_is_involutive() {
        let rule = SphereRule::new(9, 10).unwrap();
        for a in 0..rule.len() {
            let b = rule.antipode[a];
            assert_eq!(rule.antipode[b], a);
            for k in 0..3 {
                assert!((rule.dirs[a][k] + rule.dirs[b][k]).abs() < 1e-15);
            }
            assert_eq!(rule.weights[a], rule.weights[b]);
        }
    }

    #[test]
    fn chart_invariants_are_enforced() {
        assert!(Chart::annulus("a", ChartKind::AsymptoticZ, 2.0, 1.0, 8, 6, 8).is_err());
        assert!(Chart::annulus("a", ChartKind::AsymptoticZ, 1.0, 2.0, 2, 6, 8).is_err());
        assert!(Chart::torus("t", -1.0, 8).is_err());
        let c = Chart::annulus("a", ChartKind::AsymptoticZ, 1.0, 16.0, 9, 6, 8).unwrap();
        assert_eq!(c.node_count(), 9 * 48);
        assert_eq!(c.dyadic_radii(), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
    }

    #[test]
    fn radial_quadrature_matches_closed_form() {
        // int_1^128 dr / (1+r^2) = atan(128) - atan(1)
        let v = radial_quadrature(1.0, 128.0, 8, |r| 1.0 / (1.0 + r * r));
        let expect = 128.0f64.atan() - 1.0f64.atan();
        assert!((v - expect).abs() < 1e-12);
    }
}
