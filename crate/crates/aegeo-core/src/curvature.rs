//! Christoffel symbols, Riemann, Ricci, scalar curvature and the Cotton
//! tensor.
//!
//! Conventions: R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj
//! + Gamma^i_ku Gamma^u_jl - Gamma^i_lu Gamma^u_jk, Ric_ij = R^l_ilj, and
//!
//!   C_ijk = nabla_k Ric_ij - nabla_j Ric_ik
//!           + (1/4)(nabla_j R g_ik - nabla_k R g_ij),
//!
//! antisymmetric in (j,k) by construction.

use std::sync::Arc;

use rayon::prelude::*;

use crate::chart::{Chart, ChartDomain};
use crate::error::{AeError, Result};
use crate::field::{MetricField, MetricJet, ScalarClosure, TensorField};
use crate::linalg::{inv3, Sym3};

/// Derivative source for curvature evaluation.
#[derive(Clone, Copy, Debug)]
pub enum DerivativeSource {
    /// Exact analytic jets.
    Analytic,
    /// Centered second-order differences of the metric values with Cartesian
    /// stencil spacing `h` (refinement studies).
    FdOfValues { h: f64 },
}

/// Pointwise curvature data.
#[derive(Clone, Debug)]
pub struct CurvaturePoint {
    /// gamma[k][i][j] = Gamma^k_ij.
    pub gamma: [[[f64; 3]; 3]; 3],
    /// dgamma[m][k][i][j] = d_m Gamma^k_ij.
    pub dgamma: [[[[f64; 3]; 3]; 3]; 3],
    /// riemann[i][j][k][l] = R^i_jkl.
    pub riemann: [[[[f64; 3]; 3]; 3]; 3],
    pub ricci: Sym3,
    pub scalar: f64,
    pub ginv: Sym3,
}

fn christoffel_from(g_inv: &Sym3, dg: &[Sym3; 3]) -> [[[f64; 3]; 3]; 3] {
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..=i {
                let mut s = 0.0;
                for b in 0..3 {
                    s += g_inv[k][b] * (dg[i][b][j] + dg[j][b][i] - dg[b][i][j]);
                }
                let v = 0.5 * s;
                gamma[k][i][j] = v;
                gamma[k][j][i] = v;
            }
        }
    }
    gamma
}

/// Curvature at a point from a metric jet of order >= 2.
pub fn curvature_point(jet: &MetricJet) -> Result<CurvaturePoint> {
    if jet.order < 2 {
        return Err(AeError::InsufficientDerivatives {
            need: 2,
            have: jet.order,
        });
    }
    let ginv = inv3(&jet.g).ok_or(AeError::SingularMetric([f64::NAN; 3]))?;

    // d(g^{-1})_m = -ginv dg_m ginv
    let mut dginv = [[[0.0; 3]; 3]; 3];
    for m in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s -= ginv[i][a] * jet.dg[m][a][b] * ginv[b][j];
                    }
                }
                dginv[m][i][j] = s;
            }
        }
    }

    let gamma = christoffel_from(&ginv, &jet.dg);

    // d_m Gamma^k_ij
    let mut dgamma = [[[[0.0; 3]; 3]; 3]; 3];
    for m in 0..3 {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for b in 0..3 {
                        s += dginv[m][k][b] * (jet.dg[i][b][j] + jet.dg[j][b][i] - jet.dg[b][i][j]);
                        s += ginv[k][b]
                            * (jet.d2g[m][i][b][j] + jet.d2g[m][j][b][i] - jet.d2g[m][b][i][j]);
                    }
                    dgamma[m][k][i][j] = 0.5 * s;
                }
            }
        }
    }

    // R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj + Gamma^i_ku Gamma^u_jl - Gamma^i_lu Gamma^u_jk
    let mut riemann = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut s = dgamma[k][i][l][j] - dgamma[l][i][k][j];
                    for u in 0..3 {
                        s += gamma[i][k][u] * gamma[u][j][l] - gamma[i][l][u] * gamma[u][j][k];
                    }
                    riemann[i][j][k][l] = s;
                }
            }
        }
    }

    // Ric_ij = R^l_ilj
    let mut ricci = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for l in 0..3 {
                s += riemann[l][i][l][j];
            }
            ricci[i][j] = s;
        }
    }
    let mut scalar = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            scalar += ginv[i][j] * ricci[i][j];
        }
    }
    Ok(CurvaturePoint {
        gamma,
        dgamma,
        riemann,
        ricci,
        scalar,
        ginv,
    })
}

/// Cotton tensor at a point from a metric jet of order 3. Built explicitly
/// antisymmetrized in (j,k).
pub fn cotton_point(jet: &MetricJet) -> Result<[[[f64; 3]; 3]; 3]> {
    if jet.order < 3 {
        return Err(AeError::InsufficientDerivatives {
            need: 3,
            have: jet.order,
        });
    }
    let cp = curvature_point(jet)?;

    // d(g^{-1}) and d2(g^{-1}) for the Ricci derivative.
    let ginv = cp.ginv;
    let mut dginv = [[[0.0; 3]; 3]; 3];
    for m in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s -= ginv[i][a] * jet.dg[m][a][b] * ginv[b][j];
                    }
                }
                dginv[m][i][j] = s;
            }
        }
    }
    // d_n d_m Gamma^k_ij (needs third metric derivatives)
    let mut d2ginv = [[[[0.0; 3]; 3]; 3]; 3];
    for n in 0..3 {
        for m in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s -= dginv[n][i][a] * jet.dg[m][a][b] * ginv[b][j]
                                + ginv[i][a] * jet.d2g[n][m][a][b] * ginv[b][j]
                                + ginv[i][a] * jet.dg[m][a][b] * dginv[n][b][j];
                        }
                    }
                    d2ginv[n][m][i][j] = s;
                }
            }
        }
    }
    let mut d2gamma = [[[[[0.0; 3]; 3]; 3]; 3]; 3];
    for n in 0..3 {
        for m in 0..3 {
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut s = 0.0;
                        for b in 0..3 {
                            s += d2ginv[n][m][k][b]
                                * (jet.dg[i][b][j] + jet.dg[j][b][i] - jet.dg[b][i][j]);
                            s += dginv[m][k][b]
                                * (jet.d2g[n][i][b][j] + jet.d2g[n][j][b][i]
                                    - jet.d2g[n][b][i][j]);
                            s += dginv[n][k][b]
                                * (jet.d2g[m][i][b][j] + jet.d2g[m][j][b][i]
                                    - jet.d2g[m][b][i][j]);
                            s += ginv[k][b]
                                * (jet.d3g[n][m][i][b][j] + jet.d3g[n][m][j][b][i]
                                    - jet.d3g[n][m][b][i][j]);
                        }
                        d2gamma[n][m][k][i][j] = 0.5 * s;
                    }
                }
            }
        }
    }

    // d_m Ric_ij = d_m d_l Gamma^l_ji - d_m d_j Gamma^l_li
    //   + d_m(Gamma^l_lu) Gamma^u_ij + Gamma^l_lu d_m(Gamma^u_ij)
    //   - d_m(Gamma^l_ju) Gamma^u_il - Gamma^l_ju d_m(Gamma^u_il)
    let mut dricci = [[[0.0; 3]; 3]; 3];
    for m in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += d2gamma[m][l][l][j][i] - d2gamma[m][j][l][l][i];
                    for u in 0..3 {
                        s += cp.dgamma[m][l][l][u] * cp.gamma[u][i][j]
                            + cp.gamma[l][l][u] * cp.dgamma[m][u][i][j]
                            - cp.dgamma[m][l][j][u] * cp.gamma[u][i][l]
                            - cp.gamma[l][j][u] * cp.dgamma[m][u][i][l];
                    }
                }
                dricci[m][i][j] = s;
            }
        }
    }

    // d_m R = d_m(g^{ij}) Ric_ij + g^{ij} d_m Ric_ij
    let mut dscal = [0.0; 3];
    for m in 0..3 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += dginv[m][i][j] * cp.ricci[i][j] + ginv[i][j] * dricci[m][i][j];
            }
        }
        dscal[m] = s;
    }

    // nabla_k Ric_ij = d_k Ric_ij - Gamma^u_ki Ric_uj - Gamma^u_kj Ric_iu
    let cov = |k: usize, i: usize, j: usize| -> f64 {
        let mut s = dricci[k][i][j];
        for u in 0..3 {
            s -= cp.gamma[u][k][i] * cp.ricci[u][j] + cp.gamma[u][k][j] * cp.ricci[i][u];
        }
        s
    };

    let mut cotton = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..=j {
                // antisymmetric pair (j,k)
                let v = cov(k, i, j) - cov(j, i, k)
                    + 0.25 * (dscal[j] * jet.g[i][k] - dscal[k] * jet.g[i][j]);
                cotton[i][j][k] = v;
                cotton[i][k][j] = -v;
            }
        }
    }
    Ok(cotton)
}

/// Metric jet by centered second-order differences of the value closure.
pub fn fd_metric_jet(g: &MetricField, p: [f64; 3], h: f64, order: usize) -> Result<MetricJet> {
    let val = |q: [f64; 3]| g.value(q);
    let mut jet = MetricJet::zero(order);
    jet.g = val(p)?;
    if order >= 1 {
        for k in 0..3 {
            let (pp, pm) = shift2(p, k, h);
            let gp = val(pp)?;
            let gm = val(pm)?;
            for i in 0..3 {
                for j in 0..3 {
                    jet.dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
                }
            }
        }
    }
    if order >= 2 {
        for k in 0..3 {
            for l in 0..=k {
                let d2 = if k == l {
                    let (pp, pm) = shift2(p, k, h);
                    let gp = val(pp)?;
                    let gm = val(pm)?;
                    let g0 = jet.g;
                    sym3_map(|i, j| (gp[i][j] - 2.0 * g0[i][j] + gm[i][j]) / (h * h))
                } else {
                    let gpp = val(shift_two(p, k, h, l, h))?;
                    let gpm = val(shift_two(p, k, h, l, -h))?;
                    let gmp = val(shift_two(p, k, -h, l, h))?;
                    let gmm = val(shift_two(p, k, -h, l, -h))?;
                    sym3_map(|i, j| {
                        (gpp[i][j] - gpm[i][j] - gmp[i][j] + gmm[i][j]) / (4.0 * h * h)
                    })
                };
                jet.d2g[k][l] = d2;
                jet.d2g[l][k] = d2;
            }
        }
    }
    if order >= 3 {
        // centered difference of the second-derivative stencil
        for m in 0..3 {
            let (pp, pm) = shift2(p, m, h);
            let jp = fd_metric_jet(g, pp, h, 2)?;
            let jm = fd_metric_jet(g, pm, h, 2)?;
            for k in 0..3 {
                for l in 0..3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            jet.d3g[m][k][l][i][j] =
                                (jp.d2g[k][l][i][j] - jm.d2g[k][l][i][j]) / (2.0 * h);
                        }
                    }
                }
            }
        }
    }
    Ok(jet)
}

fn shift2(p: [f64; 3], k: usize, h: f64) -> ([f64; 3], [f64; 3]) {
    let mut pp = p;
    let mut pm = p;
    pp[k] += h;
    pm[k] -= h;
    (pp, pm)
}

fn shift_two(p: [f64; 3], k: usize, hk: f64, l: usize, hl: f64) -> [f64; 3] {
    let mut q = p;
    q[k] += hk;
    q[l] += hl;
    q
}

fn sym3_map(f: impl Fn(usize, usize) -> f64) -> Sym3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = f(i, j);
        }
    }
    m
}

fn metric_jet_at(g: &MetricField, p: [f64; 3], src: DerivativeSource, order: usize) -> Result<MetricJet> {
    match src {
        DerivativeSource::Analytic => g.jet(p, order),
        DerivativeSource::FdOfValues { h } => fd_metric_jet(g, p, h, order),
    }
}

/// Curvature data sampled over a chart.
pub struct CurvatureBundle {
    pub chart: Arc<Chart>,
    /// Gamma^k_ij per node, [k][i][j] flattened.
    pub gamma: TensorField,
    /// R^i_jkl per node.
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: TensorField,
    pub stencil_spacing: Option<f64>,
}

/// Gamma^k_ij of a metric field sampled on its chart.
pub fn christoffel(g: &MetricField, src: DerivativeSource) -> Result<TensorField> {
    let chart = g.chart.clone();
    let nodes = chart.nodes();
    let rows: Result<Vec<Vec<f64>>> = nodes
        .par_iter()
        .map(|&p| {
            let jet = metric_jet_at(g, p, src, 1)?;
            let ginv = inv3(&jet.g).ok_or(AeError::SingularMetric(p))?;
            let gamma = christoffel_from(&ginv, &jet.dg);
            let mut row = Vec::with_capacity(27);
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        row.push(gamma[k][i][j]);
                    }
                }
            }
            Ok(row)
        })
        .collect();
    TensorField::new(chart, (2, 1), rows?.concat())
}

/// Full curvature bundle of a metric field.
pub fn curvature_bundle(g: &MetricField, src: DerivativeSource) -> Result<CurvatureBundle> {
    let chart = g.chart.clone();
    let nodes = chart.nodes();
    let pts: Result<Vec<CurvaturePoint>> = nodes
        .par_iter()
        .map(|&p| {
            let jet = metric_jet_at(g, p, src, 2)?;
            curvature_point(&jet)
        })
        .collect();
    let pts = pts?;
    let mut gamma = Vec::with_capacity(27 * pts.len());
    let mut riemann = Vec::with_capacity(81 * pts.len());
    let mut ricci = Vec::with_capacity(9 * pts.len());
    let mut scalar = Vec::with_capacity(pts.len());
    for cp in &pts {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    gamma.push(cp.gamma[k][i][j]);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        riemann.push(cp.riemann[i][j][k][l]);
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                ricci.push(cp.ricci[i][j]);
            }
        }
        scalar.push(cp.scalar);
    }
    Ok(CurvatureBundle {
        chart: chart.clone(),
        gamma: TensorField::new(chart.clone(), (2, 1), gamma)?,
        riemann: TensorField::new(chart.clone(), (3, 1), riemann)?,
        ricci: TensorField::new(chart.clone(), (2, 0), ricci)?,
        scalar: TensorField::new(chart, (0, 0), scalar)?,
        stencil_spacing: match src {
            DerivativeSource::Analytic => None,
            DerivativeSource::FdOfValues { h } => Some(h),
        },
    })
}

/// Cotton tensor sampled on the chart. On spherical charts with the FD
/// source, the first and last radial shells are dropped (stencil leaves the
/// resolved region) and reported in `dropped_shells`.
pub struct CottonField {
    pub field: TensorField,
    pub dropped_shells: Vec<f64>,
}

pub fn cotton(g: &MetricField, src: DerivativeSource) -> Result<CottonField> {
    let chart = g.chart.clone();
    if !g.is_analytic() {
        return Err(AeError::InsufficientDerivatives { need: 3, have: 0 });
    }
    let (keep_chart, dropped): (Arc<Chart>, Vec<f64>) = match (&src, &chart.domain) {
        (DerivativeSource::FdOfValues { .. }, ChartDomain::Annulus { .. }) => {
            let r = &chart.radial;
            if r.len() < 6 {
                return Err(AeError::InvalidChart(
                    "need at least 6 radial shells for the FD Cotton stencil".into(),
                ));
            }
            let inner = Chart::annulus(
                &format!("{}_interior", chart.name),
                chart.kind,
                r[1],
                r[r.len() - 2],
                r.len() - 2,
                chart.sphere.as_ref().unwrap().n_theta,
                chart.sphere.as_ref().unwrap().n_phi,
            )?;
            (Arc::new(inner), vec![r[0], r[r.len() - 1]])
        }
        _ => (chart.clone(), Vec::new()),
    };
    let nodes = keep_chart.nodes();
    let rows: Result<Vec<Vec<f64>>> = nodes
        .par_iter()
        .map(|&p| {
            let jet = metric_jet_at(g, p, src, 3)?;
            let c = cotton_point(&jet)?;
            let mut row = Vec::with_capacity(27);
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        row.push(c[i][j][k]);
                    }
                }
            }
            Ok(row)
        })
        .collect();
    Ok(CottonField {
        field: TensorField::new(keep_chart, (3, 0), rows?.concat())?,
        dropped_shells: dropped,
    })
}

/// Scalar curvature of u^4 g via the conformal covariance
/// R' = u^{-5} (-8 Delta_g u + R_g u), with the Laplacian evaluated
/// analytically from the jets of u.
pub fn conformal_scalar(
    g: &MetricField,
    u: &dyn ScalarClosure,
    points: &[[f64; 3]],
) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&p| {
            let uj = u.jet(p, 2);
            if uj.val <= 0.0 {
                return Err(AeError::NonPositiveFactor(p));
            }
            let jet = g.jet(p, 2)?;
            let cp = curvature_point(&jet)?;
            // Delta_g u = g^{ij} (d_ij u - Gamma^k_ij d_k u)
            let mut lap = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let mut hij = uj.hess[i][j];
                    for k in 0..3 {
                        hij -= cp.gamma[k][i][j] * uj.grad[k];
                    }
                    lap += cp.ginv[i][j] * hij;
                }
            }
            Ok(uj.val.powi(-5) * (-8.0 * lap + cp.scalar * uj.val))
        })
        .collect()
}

/// Sup norm over interior nodes of the contracted Bianchi (Schur) residual
/// nabla^i (Ric_ij - (1/2) R g_ij).
pub fn schur_residual(g: &MetricField, src: DerivativeSource) -> Result<f64> {
    let chart = g.chart.clone();
    let nodes = chart.nodes();
    let worst = nodes
        .par_iter()
        .map(|&p| -> Result<f64> {
            let (jet, d_ricci, d_scal, cp) = match src {
                DerivativeSource::Analytic => {
                    let jet = g.jet(p, 3)?;
                    let cp = curvature_point(&jet)?;
                    let (dr, ds) = ricci_derivatives(g, p, src, &cp)?;
                    (jet, dr, ds, cp)
                }
                DerivativeSource::FdOfValues { h } => {
                    let jet = fd_metric_jet(g, p, h, 2)?;
                    let cp = curvature_point(&jet)?;
                    let (dr, ds) = ricci_derivatives(g, p, src, &cp)?;
                    (jet, dr, ds, cp)
                }
            };
            // E_ij = Ric_ij - (1/2) R g_ij ; residual_j = g^{ik} nabla_k E_ij
            let mut sup: f64 = 0.0;
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    for i in 0..3 {
                        // nabla_k E_ij
                        let mut cov = d_ricci[k][i][j]
                            - 0.5 * (d_scal[k] * jet.g[i][j] + cp.scalar * jet.dg[k][i][j]);
                        for u in 0..3 {
                            let e_uj = cp.ricci[u][j] - 0.5 * cp.scalar * jet.g[u][j];
                            let e_iu = cp.ricci[i][u] - 0.5 * cp.scalar * jet.g[i][u];
                            cov -= cp.gamma[u][k][i] * e_uj + cp.gamma[u][k][j] * e_iu;
                        }
                        s += cp.ginv[i][k] * cov;
                    }
                }
                sup = sup.max(s.abs());
            }
            Ok(sup)
        })
        .try_reduce(|| 0.0f64, |a, b| Ok(a.max(b)))?;
    Ok(worst)
}

/// First derivatives of Ricci and scalar curvature at a point, matching the
/// requested derivative source.
fn ricci_derivatives(
    g: &MetricField,
    p: [f64; 3],
    src: DerivativeSource,
    cp: &CurvaturePoint,
) -> Result<([[[f64; 3]; 3]; 3], [f64; 3])> {
    match src {
        DerivativeSource::Analytic => {
            // recompute from the exact third-order jet via the Cotton path
            let jet = g.jet(p, 3)?;
            exact_ricci_derivatives(&jet, cp)
        }
        DerivativeSource::FdOfValues { h } => {
            let mut dr = [[[0.0; 3]; 3]; 3];
            let mut ds = [0.0; 3];
            for m in 0..3 {
                let (pp, pm) = shift2(p, m, h);
                let cpp = curvature_point(&fd_metric_jet(g, pp, h, 2)?)?;
                let cpm = curvature_point(&fd_metric_jet(g, pm, h, 2)?)?;
                for i in 0..3 {
                    for j in 0..3 {
                        dr[m][i][j] = (cpp.ricci[i][j] - cpm.ricci[i][j]) / (2.0 * h);
                    }
                }
                ds[m] = (cpp.scalar - cpm.scalar) / (2.0 * h);
            }
            Ok((dr, ds))
        }
    }
}

fn exact_ricci_derivatives(
    jet: &MetricJet,
    cp: &CurvaturePoint,
) -> Result<([[[f64; 3]; 3]; 3], [f64; 3])> {
    // Shares the heavy lifting with cotton_point; reimplemented here to keep
    // the Cotton path self-contained.
    let ginv = cp.ginv;
    let mut dginv = [[[0.0; 3]; 3]; 3];
    for m in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s -= ginv[i][a] * jet.dg[m][a][b] * ginv[b][j];
                    }
                }
                dginv[m][i][j] = s;
            }
        }
    }
    let mut d2ginv = [[[[0.0; 3]; 3]; 3]; 3];
    for n in 0..3 {
        for m in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s -= dginv[n][i][a] * jet.dg[m][a][b] * ginv[b][j]
                                + ginv[i][a] * jet.d2g[n][m][a][b] * ginv[b][j]
                                + ginv[i][a] * jet.dg[m][a][b] * dginv[n][b][j];
                        }
                    }
                    d2ginv[n][m][i][j] = s;
                }
            }
        }
    }
    let mut d2gamma = [[[[[0.0; 3]; 3]; 3]; 3]; 3];
    for n in 0..3 {
        for m in 0..3 {
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut s = 0.0;
                        for b in 0..3 {
                            s += d2ginv[n][m][k][b]
                                * (jet.dg[i][b][j] + jet.dg[j][b][i] - jet.dg[b][i][j]);
                            s += dginv[m][k][b]
                                * (jet.d2g[n][i][b][j] + jet.d2g[n][j][b][i]
                                    - jet.d2g[n][b][i][j]);
                            s += dginv[n][k][b]
                                * (jet.d2g[m][i][b][j] + jet.d2g[m][j][b][i]
                                    - jet.d2g[m][b][i][j]);
                            s += ginv[k][b]
                                * (jet.d3g[n][m][i][b][j] + jet.d3g[n][m][j][b][i]
                                    - jet.d3g[n][m][b][i][j]);
                        }
                        d2gamma[n][m][k][i][j] = 0.5 * s;
                    }
                }
            }
        }
    }
    let mut dricci = [[[0.0; 3]; 3]; 3];
    for m in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += d2gamma[m][l][l][j][i] - d2gamma[m][j][l][l][i];
                    for u in 0..3 {
                        s += cp.dgamma[m][l][l][u] * cp.gamma[u][i][j]
                            + cp.gamma[l][l][u] * cp.dgamma[m][u][i][j]
                            - cp.dgamma[m][l][j][u] * cp.gamma[u][i][l]
                            - cp.gamma[l][j][u] * cp.dgamma[m][u][i][l];
                    }
                }
                dricci[m][i][j] = s;
            }
        }
    }
    let mut dscal = [0.0; 3];
    for m in 0..3 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += dginv[m][i][j] * cp.ricci[i][j] + ginv[i][j] * dricci[m][i][j];
            }
        }
        dscal[m] = s;
    }
    Ok((dricci, dscal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_catalog_metric, sigma_inv_jet, MetricFamily, SigmaFactor};
    use crate::chart::ChartKind;
    use crate::jet::Jet3;

    fn annulus(r_in: f64, r_out: f64) -> Arc<Chart> {
        Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, r_in, r_out, 12, 8, 12).unwrap())
    }

    #[test]
    fn flat_metric_has_vanishing_curvature() {
        let g = make_catalog_metric(&MetricFamily::Euclidean, Some(annulus(1.0, 64.0))).unwrap();
        let bundle = curvature_bundle(&g, DerivativeSource::Analytic).unwrap();
        for n in 0..bundle.chart.node_count() {
            assert!(bundle.gamma.norm_at(n) <= 1e-12);
            assert!(bundle.riemann.norm_at(n) <= 1e-12);
            assert!(bundle.ricci.norm_at(n) <= 1e-12);
            assert!(bundle.scalar.at(n)[0].abs() <= 1e-12);
        }
        let c = cotton(&g, DerivativeSource::Analytic).unwrap();
        for n in 0..c.field.chart.node_count() {
            assert!(c.field.norm_at(n) <= 1e-12);
        }
    }

    #[test]
    fn christoffel_is_symmetric_in_lower_indices() {
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a: 1.0, eps: 0.2 },
            Some(annulus(2.0, 32.0)),
        )
        .unwrap();
        let gam = christoffel(&g, DerivativeSource::Analytic).unwrap();
        for n in 0..gam.chart.node_count() {
            let row = gam.at(n);
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let a = row[(k * 3 + i) * 3 + j];
                        let b = row[(k * 3 + j) * 3 + i];
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn schwarzschildian_christoffel_matches_leading_order() {
        // Gamma^a_kl ~ (A/2)(-delta_al z^k - delta_ak z^l + delta_kl z^a)/|z|^3
        let a = 1.3;
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a, eps: 0.0 },
            Some(annulus(2.0, 128.0)),
        )
        .unwrap();
        let p = [30.0, 30.0, 20.0];
        let r = crate::linalg::norm3(&p);
        let jet = g.jet(p, 1).unwrap();
        let ginv = inv3(&jet.g).unwrap();
        let gamma = christoffel_from(&ginv, &jet.dg);
        for aa in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let lead = 0.5 * a / r.powi(3)
                        * (-delta(aa, l) * p[k] - delta(aa, k) * p[l] + delta(k, l) * p[aa]);
                    let tol = (3.0 / r) * (a / r.powi(2)).max(lead.abs());
                    assert!(
                        (gamma[aa][k][l] - lead).abs() <= tol,
                        "Gamma^{aa}_{k}{l}: {} vs {}",
                        gamma[aa][k][l],
                        lead
                    );
                }
            }
        }
    }

    fn delta(i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn conformal_christoffel_matches_symbolic_form() {
        // For g = psi^4 delta: Gamma^k_ij = 2(delta^k_i d_j ln psi
        //   + delta^k_j d_i ln psi - delta_ij d_k ln psi)
        let c = 0.5;
        let g = make_catalog_metric(
            &MetricFamily::ConformallyFlatAe { c },
            Some(annulus(1.0, 64.0)),
        )
        .unwrap();
        for p in [
            [2.0, 1.0, 0.5],
            [5.0, -3.0, 2.0],
            [1.5, 1.5, -1.0],
            [10.0, 0.0, 4.0],
            [3.0, -4.0, 12.0],
        ] {
            let jet = g.jet(p, 1).unwrap();
            let ginv = inv3(&jet.g).unwrap();
            let gamma = christoffel_from(&ginv, &jet.dg);
            let psi = sigma_inv_jet(p, [0.0; 3]).scale(c).add(&Jet3::constant(1.0));
            let dlnpsi = [
                psi.grad[0] / psi.val,
                psi.grad[1] / psi.val,
                psi.grad[2] / psi.val,
            ];
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let expect = 2.0
                            * (delta(k, i) * dlnpsi[j] + delta(k, j) * dlnpsi[i]
                                - delta(i, j) * dlnpsi[k]);
                        assert!(
                            (gamma[k][i][j] - expect).abs() < 1e-10,
                            "at {p:?}: Gamma^{k}_{i}{j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn schwarzschildian_ricci_matches_monopole_formula() {
        // Ric of (1 + A/sigma) delta is (A/2)(delta_ij/r^3 - 3 z^i z^j/r^5)
        // to leading order. The orientation (radial eigenvalue -A/r^3,
        // tangential +A/2r^3) is pinned by the conventions R^i_jkl =
        // d_k Gamma^i_lj - ... and Ric_ij = R^l_ilj, independently verified
        // by symbolic recomputation.
        let a = 1.0;
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a, eps: 0.0 },
            Some(annulus(8.0, 128.0)),
        )
        .unwrap();
        let p = [30.0, -30.0, 20.0];
        let r = crate::linalg::norm3(&p);
        let cp = curvature_point(&g.jet(p, 2).unwrap()).unwrap();
        let mut num2 = 0.0;
        let mut den2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let expect =
                    0.5 * a * (delta(i, j) / r.powi(3) - 3.0 * p[i] * p[j] / r.powi(5));
                num2 += (cp.ricci[i][j] - expect).powi(2);
                den2 += expect * expect;
            }
        }
        assert!(num2.sqrt() / den2.sqrt() <= 5.0 / r);
    }

    #[test]
    fn first_bianchi_identity_holds_pointwise() {
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a: 1.0, eps: 0.4 },
            Some(annulus(2.0, 32.0)),
        )
        .unwrap();
        for p in [[3.0, 1.0, -2.0], [6.0, -5.0, 2.0], [10.0, 10.0, 10.0]] {
            let cp = curvature_point(&g.jet(p, 2).unwrap()).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            let cyc = cp.riemann[i][j][k][l]
                                + cp.riemann[i][k][l][j]
                                + cp.riemann[i][l][j][k];
                            assert!(cyc.abs() <= 1e-10, "Bianchi at {p:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cotton_is_exactly_antisymmetric_and_tracefree() {
        let g = make_catalog_metric(
            &MetricFamily::AnisotropicAe { a: 0.5 },
            Some(annulus(2.0, 32.0)),
        )
        .unwrap();
        for p in [[3.0, 1.0, -2.0], [6.0, -5.0, 2.0], [4.0, 4.0, 4.0]] {
            let jet = g.jet(p, 3).unwrap();
            let c = cotton_point(&jet).unwrap();
            let ginv = inv3(&jet.g).unwrap();
            let mut scale = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        assert_eq!(c[i][j][k], -c[i][k][j]);
                        scale = scale.max(c[i][j][k].abs());
                    }
                }
            }
            // g^{ij} C_ijk = 0 by contracted Bianchi; exact jets realize it
            // to rounding.
            for k in 0..3 {
                let mut tr = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        tr += ginv[i][j] * c[i][j][k];
                    }
                }
                assert!(tr.abs() <= 1e-10 * scale.max(1e-30), "trace at {p:?}");
            }
        }
    }

    #[test]
    fn conformally_flat_metrics_have_vanishing_cotton() {
        for fam in [
            MetricFamily::ConformallyFlatAe { c: 0.5 },
            MetricFamily::PlantedMonopole { a: 1.0 },
            MetricFamily::SlowScalarDecay { a: 0.3 },
        ] {
            let g = make_catalog_metric(&fam, Some(annulus(2.0, 64.0))).unwrap();
            let c = cotton(&g, DerivativeSource::Analytic).unwrap();
            for n in 0..c.field.chart.node_count() {
                assert!(c.field.norm_at(n) <= 1e-8, "{fam:?} node {n}");
            }
        }
    }

    #[test]
    fn conformal_scalar_matches_symbolic_value_at_origin() {
        // g = delta, u = 1 + C/sigma: R(0) = 24 C (1+C)^{-5}
        let chart = Arc::new(
            Chart::punctured_ball("b", ChartKind::InvertedX, 2.0, 1e-4, 12, 8, 12).unwrap(),
        );
        let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
        let c = 0.5;
        let u = SigmaFactor { c, center: [0.0; 3] };
        let vals = conformal_scalar(&g, &u, &[[1e-7, 0.0, 0.0]]).unwrap();
        let expect = 24.0 * c * (1.0 + c).powi(-5);
        assert!(
            (vals[0] - expect).abs() < 1e-6 * expect.abs(),
            "{} vs {}",
            vals[0],
            expect
        );
    }

    #[test]
    fn conformal_scalar_cross_checks_direct_bundle() {
        // R_{u^4 g} from the covariance formula equals the scalar of the
        // conformally transformed metric computed directly.
        let chart = annulus(1.0, 32.0);
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a: 0.7, eps: 0.1 },
            Some(chart.clone()),
        )
        .unwrap();
        let factor = Arc::new(SigmaFactor {
            c: 0.3,
            center: [0.0; 3],
        });
        let transformed = MetricField::analytic(
            chart,
            Arc::new(crate::catalog::ConformalMetric {
                base: g.closure().unwrap(),
                factor: factor.clone(),
            }),
        )
        .unwrap();
        for p in [[2.0, 1.0, 0.0], [4.0, -2.0, 3.0], [8.0, 0.0, 1.0]] {
            let via_formula = conformal_scalar(&g, factor.as_ref(), &[p]).unwrap()[0];
            let direct = curvature_point(&transformed.jet(p, 2).unwrap())
                .unwrap()
                .scalar;
            assert!(
                (via_formula - direct).abs() <= 1e-9 * (1.0 + direct.abs()),
                "at {p:?}: {via_formula} vs {direct}"
            );
        }
    }

    #[test]
    fn schur_residual_vanishes_on_flat_and_converges_at_second_order() {
        let flat =
            make_catalog_metric(&MetricFamily::Euclidean, Some(annulus(1.0, 16.0))).unwrap();
        assert!(schur_residual(&flat, DerivativeSource::Analytic).unwrap() <= 1e-12);

        let chart = Arc::new(
            Chart::annulus("z", ChartKind::AsymptoticZ, 5.0, 20.0, 6, 6, 8).unwrap(),
        );
        let g = make_catalog_metric(&MetricFamily::ConformallyFlatAe { c: 0.5 }, Some(chart))
            .unwrap();
        let r1 = schur_residual(&g, DerivativeSource::FdOfValues { h: 0.2 }).unwrap();
        let r2 = schur_residual(&g, DerivativeSource::FdOfValues { h: 0.1 }).unwrap();
        let ratio = r1 / r2;
        assert!(
            (3.4..=4.6).contains(&ratio),
            "refinement ratio {ratio} (residuals {r1}, {r2})"
        );
    }

    #[test]
    fn cotton_conformal_invariance_on_analytic_path() {
        let chart = annulus(2.0, 64.0);
        let g = make_catalog_metric(
            &MetricFamily::FirstOrderSchwarzschildian { a: 1.0, eps: 0.05 },
            Some(chart.clone()),
        )
        .unwrap();
        let omega = Arc::new(SigmaFactor {
            c: 0.2,
            center: [0.0; 3],
        });
        let transformed = MetricField::analytic(
            chart.clone(),
            Arc::new(crate::catalog::ConformalMetric {
                base: g.closure().unwrap(),
                factor: omega,
            }),
        )
        .unwrap();
        let c0 = cotton(&g, DerivativeSource::Analytic).unwrap().field;
        let c1 = cotton(&transformed, DerivativeSource::Analytic).unwrap().field;
        let mut sup0 = 0.0f64;
        let mut supd = 0.0f64;
        for n in 0..chart.node_count() {
            sup0 = sup0.max(c0.norm_at(n));
            let d: f64 = c0
                .at(n)
                .iter()
                .zip(c1.at(n))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            supd = supd.max(d);
        }
        assert!(sup0 > 1e-8, "perturbation failed to break conformal flatness");
        assert!(supd / sup0 <= 1e-6, "relative discrepancy {}", supd / sup0);
    }
}
