//! First eigenvalue of the conformal Laplacian -8 Delta_g + R_g on the
//! torus, by inverse power iteration on the shifted operator with positivity
//! projection, a_n = 8 for n = 3.

use crate::curvature::curvature_point;
use crate::elliptic::cube::{torus_laplacian, torus_weights, CubeLaplacian};
use crate::elliptic::sparse::{cg_solve, Csr, Triplets};
use crate::error::{AeError, Result};
use crate::field::MetricField;

pub struct YamabeResult {
    /// First eigenvalue lambda_gamma of -8 Delta + R.
    pub lambda: f64,
    /// Positive eigenfunction, L^2(dV_gamma)-normalized.
    pub eigenfunction: Vec<f64>,
    /// |J(phi) - lambda| for the returned eigenfunction.
    pub rayleigh_residual: f64,
    /// sup |(-8 Delta + R) phi - lambda phi| over nodes.
    pub pde_residual: f64,
    /// Conformally transformed scalar curvature samples R' = lambda phi^{-4}.
    pub new_scalar: Vec<f64>,
    pub iterations: usize,
}

/// Discrete conformal-Laplacian pencil (A, W): A = 8 S + diag(R sqrt(g) h^3),
/// W = diag(sqrt(g) h^3).
pub struct YamabePencil {
    pub lap: CubeLaplacian,
    pub a: Csr,
    pub w: Vec<f64>,
    pub scalar: Vec<f64>,
}

pub fn yamabe_pencil(g: &MetricField, scalar_override: Option<&[f64]>) -> Result<YamabePencil> {
    let lap = torus_laplacian(g)?;
    let w = torus_weights(&lap);
    let n = lap.grid.len();
    let scalar: Vec<f64> = match scalar_override {
        Some(r) => {
            if r.len() != n {
                return Err(AeError::InvalidParams("scalar override length".into()));
            }
            r.to_vec()
        }
        None => (0..n)
            .map(|i| -> Result<f64> {
                let jet = g.jet(lap.grid.point(i), 2)?;
                Ok(curvature_point(&jet)?.scalar)
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    let mut t = Triplets::new(n);
    for i in 0..n {
        for k in lap.stiffness.row_ptr[i]..lap.stiffness.row_ptr[i + 1] {
            t.push(i, lap.stiffness.cols[k], 8.0 * lap.stiffness.vals[k]);
        }
        t.push(i, i, scalar[i] * w[i]);
    }
    let a = t.build();
    Ok(YamabePencil { lap, a, w, scalar })
}

fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(x, wi)| x * x * wi)
        .sum::<f64>()
        .sqrt()
}

fn rayleigh(a: &Csr, w: &[f64], v: &[f64]) -> f64 {
    let mut av = vec![0.0; v.len()];
    a.apply(v, &mut av);
    let num: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
    let den: f64 = v.iter().zip(w).map(|(x, wi)| x * x * wi).sum();
    num / den
}

/// Minimize the Rayleigh quotient J(phi) = (8|grad phi|^2 + R phi^2) / phi^2
/// by inverse power iteration on (A + s W) with s = max(0, -min R) + 1.
/// The iterate is replaced by |phi| each sweep (the modulus of a minimizer
/// is a minimizer) and sign-normalized positive.
pub fn yamabe_first_eigen(
    g: &MetricField,
    scalar_override: Option<&[f64]>,
    tol: f64,
    max_outer: usize,
) -> Result<YamabeResult> {
    let pencil = yamabe_pencil(g, scalar_override)?;
    let n = pencil.lap.grid.len();
    let min_r = pencil.scalar.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = (-min_r).max(0.0) + 1.0;

    // shifted operator A + s W
    let mut t = Triplets::new(n);
    for i in 0..n {
        for k in pencil.a.row_ptr[i]..pencil.a.row_ptr[i + 1] {
            t.push(i, pencil.a.cols[k], pencil.a.vals[k]);
        }
        t.push(i, i, shift * pencil.w[i]);
    }
    let shifted = t.build();
    let free = vec![true; n];

    let mut phi = vec![1.0; n];
    let nrm = weighted_norm(&phi, &pencil.w);
    phi.iter_mut().for_each(|v| *v /= nrm);
    let mut lambda = rayleigh(&pencil.a, &pencil.w, &phi);
    let mut iterations = 0;
    let mut pde_residual = f64::INFINITY;
    for outer in 0..max_outer {
        iterations = outer + 1;
        let rhs: Vec<f64> = phi.iter().zip(&pencil.w).map(|(p, w)| p * w).collect();
        let mut next = phi.clone();
        cg_solve(&shifted, &rhs, &mut next, &free, 1e-13, 10 * n)?;
        // positivity projection
        for v in next.iter_mut() {
            *v = v.abs();
        }
        let nrm = weighted_norm(&next, &pencil.w);
        if nrm == 0.0 {
            return Err(AeError::SolverFailure {
                iterations: outer,
                residual: f64::INFINITY,
            });
        }
        next.iter_mut().for_each(|v| *v /= nrm);
        lambda = rayleigh(&pencil.a, &pencil.w, &next);
        // residual (A - lambda W) phi, normalized per node by W
        let mut av = vec![0.0; n];
        pencil.a.apply(&next, &mut av);
        pde_residual = (0..n)
            .map(|i| ((av[i] - lambda * pencil.w[i] * next[i]) / pencil.w[i]).abs())
            .fold(0.0f64, f64::max);
        phi = next;
        if pde_residual <= tol {
            break;
        }
    }
    if pde_residual > tol {
        return Err(AeError::SolverFailure {
            iterations,
            residual: pde_residual,
        });
    }
    if phi.iter().any(|&v| v <= 0.0) {
        return Err(AeError::Invalid(
            "eigenfunction has a non-positive node after positivity projection \
             (discretization too coarse)"
                .into(),
        ));
    }
    let rayleigh_residual = (rayleigh(&pencil.a, &pencil.w, &phi) - lambda).abs();
    let new_scalar = phi.iter().map(|&p| lambda * p.powi(-4)).collect();
    Ok(YamabeResult {
        lambda,
        eigenfunction: phi,
        rayleigh_residual,
        pde_residual,
        new_scalar,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_catalog_metric, MetricFamily};
    use crate::chart::Chart;
    use std::sync::Arc;

    #[test]
    fn flat_torus_has_zero_eigenvalue_and_constant_eigenfunction() {
        for period in [1.0, 2.0 * std::f64::consts::PI, 7.5] {
            let chart = Arc::new(Chart::torus("t", period, 8).unwrap());
            let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
            let res = yamabe_first_eigen(&g, None, 1e-8, 60).unwrap();
            assert!(res.lambda.abs() <= 1e-8, "lambda {} at L={period}", res.lambda);
            let mean = res.eigenfunction.iter().sum::<f64>() / res.eigenfunction.len() as f64;
            for v in &res.eigenfunction {
                assert!((v - mean).abs() <= 1e-8 * mean.abs());
            }
        }
    }

    #[test]
    fn synthetic_constant_potential_shifts_the_eigenvalue() {
        // R == c with flat metric: lambda = c, phi constant.
        let chart = Arc::new(Chart::torus("t", 1.0, 8).unwrap());
        let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
        let c = 0.37;
        let n = 8usize.pow(3);
        let res = yamabe_first_eigen(&g, Some(&vec![c; n]), 1e-8, 60).unwrap();
        assert!((res.lambda - c).abs() <= 1e-8, "lambda {}", res.lambda);
    }

    #[test]
    fn eigenfunction_is_positive_normalized_with_small_residuals() {
        let g = make_catalog_metric(&MetricFamily::TorusConformal { a: 0.1 }, None).unwrap();
        let res = yamabe_first_eigen(&g, None, 1e-8, 200).unwrap();
        assert!(res.eigenfunction.iter().all(|&v| v > 0.0));
        let pencil = yamabe_pencil(&g, None).unwrap();
        let nrm = weighted_norm(&res.eigenfunction, &pencil.w);
        assert!((nrm - 1.0).abs() <= 1e-10);
        assert!(res.rayleigh_residual <= 1e-10);
        assert!(res.pde_residual <= 1e-8);
    }

    #[test]
    fn rayleigh_quotient_is_locally_minimal() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let g = make_catalog_metric(&MetricFamily::TorusConformal { a: 0.1 }, None).unwrap();
        let res = yamabe_first_eigen(&g, None, 1e-8, 200).unwrap();
        let pencil = yamabe_pencil(&g, None).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let v: Vec<f64> = res
                .eigenfunction
                .iter()
                .map(|&p| p + 0.01 * (rng.gen::<f64>() - 0.5))
                .collect();
            let j = rayleigh(&pencil.a, &pencil.w, &v);
            assert!(j >= res.lambda - 1e-8, "perturbed J {} < lambda {}", j, res.lambda);
        }
    }

    #[test]
    fn matches_dense_generalized_eigensolver_on_16_cubed() {
        use nalgebra::DMatrix;
        let g = make_catalog_metric(&MetricFamily::TorusConformal { a: 0.1 }, None).unwrap();
        assert_eq!(g.chart.nodes_per_axis, 16);
        let res = yamabe_first_eigen(&g, None, 1e-9, 400).unwrap();
        let pencil = yamabe_pencil(&g, None).unwrap();
        let n = pencil.lap.grid.len();
        // C = W^{-1/2} A W^{-1/2}, symmetric; lambda_min(C) = lambda_min(A, W)
        let wi: Vec<f64> = pencil.w.iter().map(|w| 1.0 / w.sqrt()).collect();
        let mut c = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for k in pencil.a.row_ptr[i]..pencil.a.row_ptr[i + 1] {
                let j = pencil.a.cols[k];
                c[(i, j)] += wi[i] * pencil.a.vals[k] * wi[j];
            }
        }
        // enforce exact symmetry against assembly rounding
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let eig = c.symmetric_eigenvalues();
        let lambda_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (res.lambda - lambda_min).abs() <= 1e-8 * lambda_min.abs().max(1.0),
            "power iteration {} vs dense {}",
            res.lambda,
            lambda_min
        );
    }
}
