//! Weighted-norm evaluation, decay-exponent fitting, Kelvin coordinate maps,
//! coordinate-change classification and the Cotton admissibility criterion.
//!
//! Weighted norms follow sum over |alpha| <= k of
//! || sigma^{-delta - 3/p + |alpha|} d^alpha u ||_{L^p} with
//! sigma(x) = (1 + |x|^2)^{1/2}. Norms over the non-compact end are computed
//! on the truncated chart with a shell-ratio divergence test over the last
//! dyadic shells.

use std::sync::Arc;

use crate::chart::{radial_quadrature, Chart, ChartDomain, ChartKind};
use crate::curvature::{cotton, DerivativeSource};
use crate::error::{AeError, Result};
use crate::field::{MetricField, TensorField};
use crate::linalg::{frobenius, norm3, Mat3};
use crate::map::{CoordinateMap, KelvinInversion, MapClassification};

/// Weighted Sobolev norm specification W^{k,p}_delta.
#[derive(Clone, Copy, Debug)]
pub struct WeightedNormSpec {
    pub k: usize,
    pub p: f64,
    pub delta: f64,
}

impl WeightedNormSpec {
    pub fn new(k: usize, p: f64, delta: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(AeError::InvalidParams("p must satisfy 1 < p < inf".into()));
        }
        if k > 2 {
            return Err(AeError::InvalidParams("k must be in 0..=2".into()));
        }
        Ok(WeightedNormSpec { k, p, delta })
    }

    /// Is delta one of the exceptional integer weights Z \ {3-n, ..., -1}
    /// (n = 3: the non-exceptional integers are exactly {-2, -1})?
    pub fn is_exceptional(&self) -> bool {
        let d = self.delta;
        d.fract() == 0.0 && !(-2.0..=-1.0).contains(&d)
    }
}

#[derive(Clone, Debug)]
pub struct WeightedNormValue {
    pub value: f64,
    pub divergence_flag: bool,
    /// Per-dyadic-shell contributions to the k = 0 term of value^p.
    pub shell_contributions: Vec<f64>,
    /// Exceptional-weight bookkeeping (metadata only).
    pub exceptional_weight: bool,
}

fn sigma(r: f64) -> f64 {
    (1.0 + r * r).sqrt()
}

fn shell_ratio_flag(shells: &[f64]) -> bool {
    let n = shells.len();
    if n < 2 {
        return false;
    }
    let tail = &shells[n.saturating_sub(4)..];
    tail.windows(2)
        .all(|w| w[0] > 0.0 && w[1] / w[0] >= 1.0 - 1e-3)
}

/// Weighted norm of a scalar profile given by closures for the pointwise
/// magnitudes of u and (optionally) its derivative levels. Smooth integrands
/// are integrated by dedicated radial Gauss panels and the chart's angular
/// rule.
pub fn weighted_norm_closure(
    chart: &Chart,
    spec: &WeightedNormSpec,
    levels: &[&dyn Fn([f64; 3]) -> f64],
) -> Result<WeightedNormValue> {
    if levels.len() < spec.k + 1 {
        return Err(AeError::InsufficientDerivatives {
            need: spec.k,
            have: levels.len().saturating_sub(1),
        });
    }
    let (r_in, r_out) = match chart.domain {
        ChartDomain::Annulus { r_in, r_out } => (r_in, r_out),
        ChartDomain::PuncturedBall { radius, puncture } => (puncture, radius),
        ChartDomain::Torus { .. } => {
            return Err(AeError::InvalidChart(
                "weighted norms require an annulus or punctured-ball chart".into(),
            ))
        }
    };
    let sphere = chart.sphere.as_ref().unwrap();
    let p = spec.p;

    let mut value = 0.0;
    let mut shell_contributions = Vec::new();
    for (alpha, f) in levels.iter().enumerate().take(spec.k + 1) {
        let weight_exp = -spec.delta - 3.0 / p + alpha as f64;
        let integrand = |r: f64| -> f64 {
            let ang = sphere.integrate(r, |q| f(q).abs().powf(p));
            sigma(r).powf(weight_exp * p) * ang
        };
        let total = radial_quadrature(r_in, r_out, 12, integrand);
        value += total.powf(1.0 / p);
        if alpha == 0 {
            let mut r = r_in;
            while r * 2.0 <= r_out * (1.0 + 1e-12) {
                shell_contributions.push(radial_quadrature(r, r * 2.0, 12, integrand));
                r *= 2.0;
            }
        }
    }
    let divergence_flag = shell_ratio_flag(&shell_contributions);
    Ok(WeightedNormValue {
        value,
        divergence_flag,
        shell_contributions,
        exceptional_weight: spec.is_exceptional(),
    })
}

/// Weighted norm of a node-sampled tensor field (k = 0: sampled fields have
/// no derivative levels). The radial profile of the per-shell angular
/// integrals is interpolated by local power laws, exact for power-law fields.
pub fn weighted_norm(f: &TensorField, spec: &WeightedNormSpec) -> Result<WeightedNormValue> {
    if spec.k > 0 {
        return Err(AeError::InsufficientDerivatives { need: spec.k, have: 0 });
    }
    let chart = &f.chart;
    let sphere = chart
        .sphere
        .as_ref()
        .ok_or_else(|| AeError::InvalidChart("weighted norms need a spherical chart".into()))?;
    let na = sphere.len();
    let p = spec.p;
    let prof: Vec<f64> = chart
        .radial
        .iter()
        .enumerate()
        .map(|(k, _)| {
            (0..na)
                .map(|a| sphere.weights[a] * f.norm_at(k * na + a).powf(p))
                .sum::<f64>()
        })
        .collect();
    let radial = &chart.radial;
    let weight_exp = (-spec.delta - 3.0 / p) * p;
    let mut total = 0.0;
    let mut segs: Vec<(f64, f64)> = Vec::new();
    for w in 0..radial.len() - 1 {
        let (r0, r1) = (radial[w], radial[w + 1]);
        let (p0, p1) = (prof[w], prof[w + 1]);
        let seg = if p0 > 0.0 && p1 > 0.0 {
            let slope = (p1 / p0).ln() / (r1 / r0).ln();
            radial_quadrature(r0, r1, 16, |r| {
                let pr = p0 * (r / r0).powf(slope);
                sigma(r).powf(weight_exp) * pr * r * r
            })
        } else {
            radial_quadrature(r0, r1, 16, |r| {
                let t = (r.ln() - r0.ln()) / (r1.ln() - r0.ln());
                let pr = p0 * (1.0 - t) + p1 * t;
                sigma(r).powf(weight_exp) * pr * r * r
            })
        };
        total += seg;
        segs.push((r1, seg));
    }
    // aggregate to dyadic shells for the ratio test
    let mut shell_contributions = Vec::new();
    let mut edge = radial[0] * 2.0;
    let mut acc = 0.0;
    for (r, s) in segs {
        acc += s;
        if r >= edge * (1.0 - 1e-9) {
            shell_contributions.push(acc);
            acc = 0.0;
            edge *= 2.0;
        }
    }
    if acc > 0.0 {
        shell_contributions.push(acc);
    }
    let divergence_flag = shell_ratio_flag(&shell_contributions);
    Ok(WeightedNormValue {
        value: total.powf(1.0 / p),
        divergence_flag,
        shell_contributions,
        exceptional_weight: spec.is_exceptional(),
    })
}

/// Least-squares decay fit of sup_{S_r}|f| against r.
#[derive(Clone, Debug)]
pub struct DecayFit {
    /// Fitted exponent tau (f ~ amplitude * r^{-tau}); +inf sentinel when
    /// the field vanishes on some shell.
    pub exponent: f64,
    pub amplitude: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub radii: Vec<f64>,
    /// Optional per-derivative-level exponents.
    pub per_derivative: Vec<f64>,
}

/// Fit from explicit (radius, sup) pairs.
pub fn decay_fit_values(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 2 {
        return Err(AeError::InvalidParams(
            "decay fit needs at least two shells".into(),
        ));
    }
    let radii: Vec<f64> = samples.iter().map(|s| s.0).collect();
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AeError::InvalidParams(
            "radii must be strictly increasing".into(),
        ));
    }
    if samples.iter().any(|s| s.1 == 0.0) {
        return Ok(DecayFit {
            exponent: f64::INFINITY,
            amplitude: 0.0,
            residual: 0.0,
            radii,
            per_derivative: Vec::new(),
        });
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DecayFit {
        exponent: -slope,
        amplitude: intercept.exp(),
        residual,
        radii,
        per_derivative: Vec::new(),
    })
}

/// Decay fit of a node-sampled tensor field over the given shell radii
/// (sup taken over the quadrature node set per shell).
pub fn decay_fit(f: &TensorField, radii: &[f64]) -> Result<DecayFit> {
    let sups = f.shell_sups();
    let mut samples = Vec::new();
    for &r in radii {
        let nearest = sups
            .iter()
            .min_by(|a, b| (a.0 - r).abs().partial_cmp(&(b.0 - r).abs()).unwrap())
            .ok_or_else(|| AeError::InvalidParams("no shells".into()))?;
        if (nearest.0 - r).abs() > 1e-9 * r {
            return Err(AeError::InvalidParams(format!(
                "radius {r} not on the chart shell grid"
            )));
        }
        samples.push(*nearest);
    }
    decay_fit_values(&samples)
}

/// Decay fit of an analytic profile: sup over the sphere rule per radius.
pub fn decay_fit_profile(
    chart: &Chart,
    radii: &[f64],
    f: &dyn Fn([f64; 3]) -> f64,
) -> Result<DecayFit> {
    let sphere = chart
        .sphere
        .as_ref()
        .ok_or_else(|| AeError::InvalidChart("need a spherical chart".into()))?;
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| (r, sphere.sup(r, |q| f(q).abs())))
        .collect();
    decay_fit_values(&samples)
}

/// Cotton admissibility record: p1 = 3/(6 + sigma_weight), -6 < sigma_weight
/// < -4, admissible when the truncated weighted norm shows geometric shell
/// decay.
#[derive(Clone, Debug)]
pub struct CottonAdmissibility {
    pub sigma_weight: f64,
    pub p1: f64,
    pub admissible: bool,
    pub norm: f64,
}

pub fn cotton_admissible(g: &MetricField, sigma_weight: f64) -> Result<CottonAdmissibility> {
    if !(-6.0 < sigma_weight && sigma_weight < -4.0) {
        return Err(AeError::WeightOutOfRange(sigma_weight, -6.0, -4.0));
    }
    let p1 = 3.0 / (6.0 + sigma_weight);
    let c = cotton(g, DerivativeSource::Analytic)?;
    let spec = WeightedNormSpec::new(0, p1, sigma_weight)?;
    let norm = weighted_norm(&c.field, &spec)?;
    // conformally flat inputs: the Cotton field sits at the rounding floor
    // and its "decay" is meaningless; sup below 1e-8 counts as vanishing
    let sup = (0..c.field.chart.node_count())
        .map(|n| c.field.norm_at(n))
        .fold(0.0f64, f64::max);
    Ok(CottonAdmissibility {
        sigma_weight,
        p1,
        admissible: !norm.divergence_flag || sup <= 1e-8,
        norm: norm.value,
    })
}

/// Kelvin coordinate map between an asymptotic annulus and the inverted
/// punctured ball (either direction). The forward map is x -> x/|x|^2 and
/// the involution is attached as the backward map.
pub fn kelvin_map(source: Arc<Chart>, target: Arc<Chart>) -> Result<CoordinateMap> {
    let ok = match (&source.domain, &target.domain) {
        (ChartDomain::Annulus { r_in, r_out }, ChartDomain::PuncturedBall { radius, puncture }) => {
            rel_close(*radius, 1.0 / r_in) && rel_close(*puncture, 1.0 / r_out)
        }
        (ChartDomain::PuncturedBall { radius, puncture }, ChartDomain::Annulus { r_in, r_out }) => {
            rel_close(*r_in, 1.0 / radius) && rel_close(*r_out, 1.0 / puncture)
        }
        (
            ChartDomain::Annulus { r_in, r_out },
            ChartDomain::Annulus {
                r_in: s_in,
                r_out: s_out,
            },
        ) => rel_close(*s_in, 1.0 / r_out) && rel_close(*s_out, 1.0 / r_in),
        _ => false,
    };
    if !ok {
        return Err(AeError::ChartMismatch {
            expected: "Kelvin-paired domains (annulus [a,b] <-> ball/annulus [1/b,1/a])".into(),
            got: format!("{:?} -> {:?}", source.domain, target.domain),
        });
    }
    let mut map = CoordinateMap::analytic(source, target, Arc::new(KelvinInversion));
    map.backward = Some(crate::map::MapEvaluator::Analytic(Arc::new(
        KelvinInversion,
    )));
    Ok(map)
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Classify a near-identity coordinate change on an asymptotic annulus:
/// fits |map(z) - z| ~ r^{1 - alpha} and |J - Id| ~ r^{-alpha}; compatible
/// when some alpha > 0.05 bounds both.
pub fn classify_map(map: &CoordinateMap, radii: &[f64]) -> Result<MapClassification> {
    if radii.len() < 4 {
        return Err(AeError::InvalidParams(
            "classification needs at least 4 shells".into(),
        ));
    }
    let sphere = map
        .source
        .sphere
        .as_ref()
        .ok_or_else(|| AeError::InvalidChart("need a spherical source chart".into()))?;
    let id = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mut disp_samples = Vec::new();
    let mut jac_samples = Vec::new();
    for &r in radii {
        let disp = sphere.sup(r, |p| {
            let q = map.value(p);
            norm3(&[q[0] - p[0], q[1] - p[1], q[2] - p[2]])
        });
        let jac = sphere.sup(r, |p| {
            let j = map.jacobian(p);
            let mut d: Mat3 = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    d[a][b] = j[a][b] - id(a, b);
                }
            }
            frobenius(&d)
        });
        disp_samples.push((r, disp));
        jac_samples.push((r, jac));
    }
    let disp_fit = decay_fit_values(&disp_samples)?;
    let jac_fit = decay_fit_values(&jac_samples)?;
    // |map - id| ~ r^{1-alpha} has decay exponent alpha - 1, so
    // alpha = 1 + fitted exponent; |J - Id| ~ r^{-alpha} directly.
    let alpha_disp = if disp_fit.exponent.is_infinite() {
        f64::INFINITY
    } else {
        1.0 + disp_fit.exponent
    };
    let alpha_jac = jac_fit.exponent;
    let alpha = alpha_disp.min(alpha_jac);
    let residual = disp_fit.residual.max(if jac_fit.exponent.is_infinite() {
        0.0
    } else {
        jac_fit.residual
    });
    Ok(MapClassification {
        alpha: if alpha.is_infinite() { 1.0 } else { alpha },
        displacement_exponent: disp_fit.exponent,
        jacobian_exponent: jac_fit.exponent,
        residual,
        compatible: alpha > 0.05,
    })
}

/// Sample the deviation g - delta on the chart (for AE decay checks).
pub fn metric_deviation_field(g: &MetricField) -> Result<TensorField> {
    let values = g.sample()?;
    let mut data = Vec::with_capacity(9 * values.len());
    for v in &values {
        for i in 0..3 {
            for j in 0..3 {
                data.push(v[i][j] - if i == j { 1.0 } else { 0.0 });
            }
        }
    }
    TensorField::new(g.chart.clone(), (2, 0), data)
}

/// Build the inverted punctured-ball chart paired with an asymptotic annulus.
pub fn inverted_chart_for(annulus: &Chart, n_radial: usize) -> Result<Chart> {
    match annulus.domain {
        ChartDomain::Annulus { r_in, r_out } => Chart::punctured_ball(
            &format!("{}_inverted", annulus.name),
            ChartKind::InvertedX,
            1.0 / r_in,
            1.0 / r_out,
            n_radial,
            annulus.sphere.as_ref().unwrap().n_theta,
            annulus.sphere.as_ref().unwrap().n_phi,
        ),
        _ => Err(AeError::InvalidChart("expected an annulus".into())),
    }
}
