//! Analytic metric catalog.
//!
//! Every family ships exact first, second and third derivative closures
//! built from jet arithmetic, so curvature and Cotton evaluations carry no
//! finite-difference noise.

use std::sync::Arc;

use crate::chart::{Chart, ChartKind};
use crate::error::{AeError, Result};
use crate::field::{MetricClosure, MetricField, MetricJet, ScalarClosure};
use crate::jet::Jet3;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricFamily {
    /// g = delta.
    Euclidean,
    /// g = (1 + C/sigma(z))^4 delta with sigma = (1+|z|^2)^{1/2}.
    ConformallyFlatAe { c: f64 },
    /// Same conformal factor centered at `center`.
    ConformallyFlatTranslated { c: f64, center: [f64; 3] },
    /// g = (1 + A/sigma(z)) delta + eps * h(z), h a fixed smooth symmetric
    /// perturbation of order O_2(|z|^{-2}).
    FirstOrderSchwarzschildian { a: f64, eps: f64 },
    /// g = (1 + a s(x))^4 delta on the torus, s a smooth periodic bump.
    TorusConformal { a: f64 },
    /// g = (1 + A/r) delta exactly (monopole flux is constant in radius).
    PlantedMonopole { a: f64 },
    /// g = (1 + a z^1/sigma^2) delta: odd part decays only like 1/r, so the
    /// center of mass surface integrals fail to converge.
    RtViolating { a: f64 },
    /// g = delta + a B_ij / sigma with a fixed traceless B: genuinely not
    /// conformally flat, Cotton decays like r^{-4}, too slow for the
    /// admissibility window.
    AnisotropicAe { a: f64 },
    /// Conformally flat with u = 1 + a(1 + ln sigma)/sigma, giving scalar
    /// curvature decaying like r^{-3} exactly (moment integrals diverge).
    SlowScalarDecay { a: f64 },
}

impl MetricFamily {
    pub fn parse(name: &str, params: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if params.len() < n {
                Err(AeError::InvalidParams(format!(
                    "family `{name}` needs {n} parameter(s), got {}",
                    params.len()
                )))
            } else {
                Ok(())
            }
        };
        let fam = match name {
            "euclidean" => MetricFamily::Euclidean,
            "conformally_flat_ae" => {
                need(1)?;
                MetricFamily::ConformallyFlatAe { c: params[0] }
            }
            "conformally_flat_translated" => {
                need(4)?;
                MetricFamily::ConformallyFlatTranslated {
                    c: params[0],
                    center: [params[1], params[2], params[3]],
                }
            }
            "first_order_schwarzschildian" => {
                need(2)?;
                MetricFamily::FirstOrderSchwarzschildian {
                    a: params[0],
                    eps: params[1],
                }
            }
            "torus_conformal" => {
                need(1)?;
                MetricFamily::TorusConformal { a: params[0] }
            }
            "planted_monopole" => {
                need(1)?;
                MetricFamily::PlantedMonopole { a: params[0] }
            }
            "rt_violating" => {
                need(1)?;
                MetricFamily::RtViolating { a: params[0] }
            }
            "anisotropic_ae" => {
                need(1)?;
                MetricFamily::AnisotropicAe { a: params[0] }
            }
            "slow_scalar_decay" => {
                need(1)?;
                MetricFamily::SlowScalarDecay { a: params[0] }
            }
            other => return Err(AeError::UnknownFamily(other.to_string())),
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(AeError::InvalidParams(format!("{what} must be finite")))
            }
        };
        match self {
            MetricFamily::Euclidean => Ok(()),
            MetricFamily::ConformallyFlatAe { c } => {
                finite(*c, "C")?;
                if 1.0 + *c <= 0.0 {
                    return Err(AeError::InvalidParams(
                        "conformal factor 1 + C/sigma must stay positive".into(),
                    ));
                }
                Ok(())
            }
            MetricFamily::ConformallyFlatTranslated { c, center } => {
                finite(*c, "C")?;
                for v in center {
                    finite(*v, "center")?;
                }
                if 1.0 + *c <= 0.0 {
                    return Err(AeError::InvalidParams(
                        "conformal factor 1 + C/sigma must stay positive".into(),
                    ));
                }
                Ok(())
            }
            MetricFamily::FirstOrderSchwarzschildian { a, eps } => {
                finite(*a, "A")?;
                finite(*eps, "eps")
            }
            MetricFamily::TorusConformal { a } => {
                finite(*a, "a")?;
                if a.abs() >= 1.0 {
                    return Err(AeError::InvalidParams("|a s| < 1 required".into()));
                }
                Ok(())
            }
            MetricFamily::PlantedMonopole { a }
            | MetricFamily::RtViolating { a }
            | MetricFamily::AnisotropicAe { a }
            | MetricFamily::SlowScalarDecay { a } => finite(*a, "a"),
        }
    }

    /// Declared decay order tau of g - delta for the AE families.
    pub fn decay_tag(&self) -> Option<f64> {
        match self {
            MetricFamily::Euclidean => None,
            MetricFamily::TorusConformal { .. } => None,
            _ => Some(1.0),
        }
    }

    pub fn default_chart(&self) -> Result<Chart> {
        match self {
            MetricFamily::TorusConformal { .. } => {
                Chart::torus("torus", 2.0 * std::f64::consts::PI, 16)
            }
            _ => Chart::annulus("asymptotic", ChartKind::AsymptoticZ, 1.0, 128.0, 57, 12, 24),
        }
    }
}

/// Construct a catalog metric on the given chart (default chart when `None`).
/// The metric is rejected at construction if the positive-definiteness scan
/// fails anywhere on the chart.
pub fn make_catalog_metric(family: &MetricFamily, chart: Option<Arc<Chart>>) -> Result<MetricField> {
    family.validate()?;
    let chart = match chart {
        Some(c) => c,
        None => Arc::new(family.default_chart()?),
    };
    let closure: Arc<dyn MetricClosure> = match family {
        MetricFamily::Euclidean => Arc::new(ScaledFlat),
        MetricFamily::ConformallyFlatAe { c } => Arc::new(ConformalToFlat {
            factor: SigmaFactor {
                c: *c,
                center: [0.0; 3],
            },
        }),
        MetricFamily::ConformallyFlatTranslated { c, center } => Arc::new(ConformalToFlat {
            factor: SigmaFactor {
                c: *c,
                center: *center,
            },
        }),
        MetricFamily::FirstOrderSchwarzschildian { a, eps } => {
            Arc::new(Schwarzschildian { a: *a, eps: *eps })
        }
        MetricFamily::TorusConformal { a } => {
            let period = match chart.domain {
                crate::chart::ChartDomain::Torus { period } => period,
                _ => {
                    return Err(AeError::ChartMismatch {
                        expected: "torus".into(),
                        got: chart.kind.label().into(),
                    })
                }
            };
            Arc::new(TorusBump { a: *a, period })
        }
        MetricFamily::PlantedMonopole { a } => Arc::new(Monopole { a: *a }),
        MetricFamily::RtViolating { a } => Arc::new(RtOdd { a: *a }),
        MetricFamily::AnisotropicAe { a } => Arc::new(Anisotropic { a: *a }),
        MetricFamily::SlowScalarDecay { a } => Arc::new(SlowScalar { a: *a }),
    };
    let mut field = MetricField::analytic(chart, closure)?;
    field.decay_tag = family.decay_tag();
    Ok(field)
}

fn diag_metric(f: &Jet3, order: usize) -> MetricJet {
    let zero = Jet3::constant(0.0);
    let jets = [
        [*f, zero, zero],
        [zero, *f, zero],
        [zero, zero, *f],
    ];
    MetricJet::from_jets(&jets, order)
}

/// sigma(z - c)^{-1} as a jet.
pub fn sigma_inv_jet(p: [f64; 3], center: [f64; 3]) -> Jet3 {
    Jet3::radius2(p, center).add(&Jet3::constant(1.0)).powf(-0.5)
}

struct ScaledFlat;

impl MetricClosure for ScaledFlat {
    fn jet(&self, _p: [f64; 3], order: usize) -> MetricJet {
        diag_metric(&Jet3::constant(1.0), order)
    }
}

/// Conformal factor psi = 1 + C / sigma(z - center); metric psi^4 delta.
pub struct SigmaFactor {
    pub c: f64,
    pub center: [f64; 3],
}

impl ScalarClosure for SigmaFactor {
    fn jet(&self, p: [f64; 3], _order: usize) -> Jet3 {
        sigma_inv_jet(p, self.center)
            .scale(self.c)
            .add(&Jet3::constant(1.0))
    }
}

struct ConformalToFlat {
    factor: SigmaFactor,
}

impl MetricClosure for ConformalToFlat {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let psi4 = self.factor.jet(p, order).powi(4);
        diag_metric(&psi4, order)
    }
}

/// Fixed symmetric coefficient matrix for the Schwarzschildian perturbation.
const PERT_B: [[f64; 3]; 3] = [
    [0.6, 0.2, 0.0],
    [0.2, -0.4, 0.1],
    [0.0, 0.1, 0.3],
];

struct Schwarzschildian {
    a: f64,
    eps: f64,
}

impl MetricClosure for Schwarzschildian {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let w = sigma_inv_jet(p, [0.0; 3]);
        let f = w.scale(self.a).add(&Jet3::constant(1.0));
        // h_ij = B_ij w^2 + z_i z_j w^4 : O_2(|z|^{-2})
        let w2 = w.mul(&w);
        let w4 = w2.mul(&w2);
        let z = [
            Jet3::coordinate(p, 0),
            Jet3::coordinate(p, 1),
            Jet3::coordinate(p, 2),
        ];
        let mut jets = [[Jet3::constant(0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut v = if i == j { f } else { Jet3::constant(0.0) };
                if self.eps != 0.0 {
                    let h = w2
                        .scale(PERT_B[i][j])
                        .add(&z[i].mul(&z[j]).mul(&w4));
                    v = v.add(&h.scale(self.eps));
                }
                jets[i][j] = v;
            }
        }
        MetricJet::from_jets(&jets, order)
    }
}

struct TorusBump {
    a: f64,
    period: f64,
}

impl MetricClosure for TorusBump {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let k = 2.0 * std::f64::consts::PI / self.period;
        let cx = Jet3::coordinate(p, 0).scale(k).cos();
        let cy = Jet3::coordinate(p, 1).scale(k).cos();
        let cz = Jet3::coordinate(p, 2).scale(k).cos();
        let s = cx.mul(&cy).mul(&cz);
        let psi4 = s.scale(self.a).add(&Jet3::constant(1.0)).powi(4);
        diag_metric(&psi4, order)
    }
}

struct Monopole {
    a: f64,
}

impl MetricClosure for Monopole {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let rinv = Jet3::radius2(p, [0.0; 3]).powf(-0.5);
        let f = rinv.scale(self.a).add(&Jet3::constant(1.0));
        diag_metric(&f, order)
    }
}

struct RtOdd {
    a: f64,
}

impl MetricClosure for RtOdd {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let w2 = Jet3::radius2(p, [0.0; 3]).add(&Jet3::constant(1.0)).recip();
        let odd = Jet3::coordinate(p, 0).mul(&w2).scale(self.a);
        let f = odd.add(&Jet3::constant(1.0));
        diag_metric(&f, order)
    }
}

/// Traceless direction matrix for the anisotropic tail. A spherically
/// symmetric tail would stay conformally flat, so the matrix is constant.
const ANISO_B: [[f64; 3]; 3] = [
    [0.6, 0.2, 0.0],
    [0.2, -0.4, 0.1],
    [0.0, 0.1, -0.2],
];

struct Anisotropic {
    a: f64,
}

impl MetricClosure for Anisotropic {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let w = sigma_inv_jet(p, [0.0; 3]);
        let mut jets = [[Jet3::constant(0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut v = w.scale(self.a * ANISO_B[i][j]);
                if i == j {
                    v = v.add(&Jet3::constant(1.0));
                }
                jets[i][j] = v;
            }
        }
        MetricJet::from_jets(&jets, order)
    }
}

struct SlowScalar {
    a: f64,
}

impl MetricClosure for SlowScalar {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        // u = 1 + a (1 + ln sigma) / sigma  =>  Delta u ~ -a/r^3
        let sigma = Jet3::radius2(p, [0.0; 3]).add(&Jet3::constant(1.0)).sqrt();
        let u = sigma
            .ln()
            .add(&Jet3::constant(1.0))
            .mul(&sigma.recip())
            .scale(self.a)
            .add(&Jet3::constant(1.0));
        diag_metric(&u.powi(4), order)
    }
}

/// g' = omega^4 g for a positive scalar closure omega.
pub struct ConformalMetric {
    pub base: Arc<dyn MetricClosure>,
    pub factor: Arc<dyn ScalarClosure>,
}

impl MetricClosure for ConformalMetric {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let base = self.base.jet(p, order);
        let om4 = self.factor.jet(p, order).powi(4);
        let mut jets = [[Jet3::constant(0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut gij = Jet3::constant(base.g[i][j]);
                for k in 0..3 {
                    gij.grad[k] = base.dg[k][i][j];
                    for l in 0..3 {
                        gij.hess[k][l] = base.d2g[k][l][i][j];
                        for q in 0..3 {
                            gij.third[k][l][q] = base.d3g[k][l][q][i][j];
                        }
                    }
                }
                jets[i][j] = om4.mul(&gij);
            }
        }
        MetricJet::from_jets(&jets, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::fd_consistency;

    #[test]
    fn euclidean_is_identity_everywhere() {
        let g = make_catalog_metric(&MetricFamily::Euclidean, None).unwrap();
        let v = g.value([3.0, -4.0, 5.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(v[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn schwarzschildian_value_at_radius_ten() {
        // A=2, eps=0 at |z|=10: g_ij = (1 + 2/sqrt(101)) delta_ij
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a: 2.0, eps: 0.0 },
            None,
        )
        .unwrap();
        let v = g.value([10.0, 0.0, 0.0]).unwrap();
        let expect = 1.0 + 2.0 / 101.0f64.sqrt();
        assert!((v[0][0] - expect).abs() < 1e-15);
        assert!((v[1][1] - expect).abs() < 1e-15);
        assert!(v[0][1].abs() < 1e-15);
    }

    #[test]
    fn conformally_flat_value_matches_hand_evaluation() {
        // u = 1 + 0.5/sqrt(26) at z = (3,4,0), g = u^4 delta
        let g = make_catalog_metric(&MetricFamily::ConformallyFlatAe { c: 0.5 }, None).unwrap();
        let v = g.value([3.0, 4.0, 0.0]).unwrap();
        let u = 1.0 + 0.5 / 26.0f64.sqrt();
        assert!((v[0][0] - u.powi(4)).abs() < 1e-14);
    }

    #[test]
    fn conformally_flat_tail_expands_like_two_c_over_r() {
        // (1 + C/sigma)^4 = 1 + 4C/|z| + O(|z|^{-2}); with C = 0.5 the
        // coefficient is 2. Oracle: series expansion of the closure.
        let g = make_catalog_metric(&MetricFamily::ConformallyFlatAe { c: 0.5 }, None).unwrap();
        for r in [32.0, 64.0, 128.0] {
            let v = g.value([r, 0.0, 0.0]).unwrap();
            let lead = (v[0][0] - 1.0) * r;
            assert!(
                (lead - 2.0).abs() < 4.0 / r,
                "r={r}: leading coefficient {lead}"
            );
        }
    }

    #[test]
    fn derivative_closures_pass_centered_difference_check() {
        for fam in [
            MetricFamily::ConformallyFlatAe { c: 0.5 },
            MetricFamily::FirstOrderSchwarzschildian { a: 1.0, eps: 0.3 },
            MetricFamily::AnisotropicAe { a: 0.4 },
            MetricFamily::SlowScalarDecay { a: 0.2 },
        ] {
            let g = make_catalog_metric(&fam, None).unwrap();
            let closure = g.closure().unwrap();
            let p = [2.0, 1.0, -1.5];
            let e1 = fd_consistency(closure.as_ref(), p, 1e-2);
            let e2 = fd_consistency(closure.as_ref(), p, 5e-3);
            // centered differences: error ratio ~ 4 under halving
            assert!(e1 < 1e-4, "{fam:?}: coarse error {e1}");
            assert!(e2 < e1 / 3.0, "{fam:?}: ratio {}", e1 / e2);
        }
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(
            MetricFamily::parse("kerr", &[1.0]),
            Err(AeError::UnknownFamily(_))
        ));
    }

    #[test]
    fn non_positive_factor_is_rejected() {
        assert!(MetricFamily::parse("conformally_flat_ae", &[-1.5]).is_err());
    }
}
