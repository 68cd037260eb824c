//! Flux-conservative finite differences on uniform Cartesian lattices:
//! periodic boxes (torus charts) and Dirichlet problems on embedded balls.
//!
//! The divergence-form operator Delta_g u = (1/sqrt(det g)) d_i
//! (sqrt(det g) g^{ij} d_j u) is discretized with face-averaged diagonal
//! coefficients and centered cross terms, assembled symmetrically.

use crate::elliptic::sparse::{cg_solve, Csr, Triplets};
use crate::error::{AeError, Result};
use crate::field::MetricField;
use crate::linalg::{det3, inv3, Sym3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CubeTopology {
    Periodic,
    /// Dirichlet data on every node with |x - center| >= radius and on the
    /// box faces.
    Ball { center: [f64; 3], radius: f64 },
}

/// Uniform n^3 lattice over [origin, origin + extent]^3.
pub struct CubeGrid {
    pub n: usize,
    pub h: f64,
    pub origin: [f64; 3],
    pub topology: CubeTopology,
}

impl CubeGrid {
    pub fn periodic(period: f64, n: usize) -> Self {
        CubeGrid {
            n,
            h: period / n as f64,
            origin: [0.0; 3],
            topology: CubeTopology::Periodic,
        }
    }

    pub fn ball(center: [f64; 3], radius: f64, n: usize) -> Self {
        // box side 2 radius, nodes at the faces included
        let h = 2.0 * radius / (n as f64 - 1.0);
        CubeGrid {
            n,
            h,
            origin: [center[0] - radius, center[1] - radius, center[2] - radius],
            topology: CubeTopology::Ball { center, radius },
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
            self.origin[2] + k as f64 * self.h,
        ]
    }

    /// Neighbor in direction d (+1/-1); None at a non-periodic edge.
    pub fn neighbor(&self, idx: usize, d: usize, step: isize) -> Option<usize> {
        let n = self.n as isize;
        let k = (idx % self.n) as isize;
        let j = ((idx / self.n) % self.n) as isize;
        let i = (idx / (self.n * self.n)) as isize;
        let mut c = [i, j, k];
        c[d] += step;
        match self.topology {
            CubeTopology::Periodic => {
                let c = [c[0].rem_euclid(n), c[1].rem_euclid(n), c[2].rem_euclid(n)];
                Some(((c[0] * n + c[1]) * n + c[2]) as usize)
            }
            CubeTopology::Ball { .. } => {
                if c.iter().any(|&v| v < 0 || v >= n) {
                    None
                } else {
                    Some(((c[0] * n + c[1]) * n + c[2]) as usize)
                }
            }
        }
    }

    /// Interior (free) nodes for the Dirichlet topology.
    pub fn free_mask(&self) -> Vec<bool> {
        match self.topology {
            CubeTopology::Periodic => vec![true; self.len()],
            CubeTopology::Ball { center, radius } => (0..self.len())
                .map(|idx| {
                    let p = self.point(idx);
                    let n = self.n;
                    let k = idx % n;
                    let j = (idx / n) % n;
                    let i = idx / (n * n);
                    let on_face = i == 0
                        || j == 0
                        || k == 0
                        || i == n - 1
                        || j == n - 1
                        || k == n - 1;
                    let r = ((p[0] - center[0]).powi(2)
                        + (p[1] - center[1]).powi(2)
                        + (p[2] - center[2]).powi(2))
                    .sqrt();
                    !(on_face || r >= radius * (1.0 - 1e-12))
                })
                .collect(),
        }
    }
}

/// sqrt(det g) g^{ij} and sqrt(det g) sampled at every node.
pub struct CubeCoefficients {
    pub sigma: Vec<Sym3>,
    pub sqrt_det: Vec<f64>,
}

pub fn sample_coefficients(grid: &CubeGrid, g: &MetricField) -> Result<CubeCoefficients> {
    let mut sigma = Vec::with_capacity(grid.len());
    let mut sqrt_det = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let p = grid.point(idx);
        let gv = g.value(p)?;
        let d = det3(&gv);
        if d <= 0.0 {
            return Err(AeError::SingularMetric(p));
        }
        let gi = inv3(&gv).ok_or(AeError::SingularMetric(p))?;
        let s = d.sqrt();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = s * gi[i][j];
            }
        }
        sigma.push(m);
        sqrt_det.push(s);
    }
    Ok(CubeCoefficients { sigma, sqrt_det })
}

/// Symmetric stiffness for -div(sigma grad u) scaled by the cell volume:
/// (S u)_i ~ -h^3 [div(sigma grad u)]_i. Constants are in the kernel.
pub fn assemble_stiffness(grid: &CubeGrid, coeff: &CubeCoefficients) -> Csr {
    let h = grid.h;
    let mut t = Triplets::new(grid.len());
    for idx in 0..grid.len() {
        // diagonal fluxes: faces in +d direction only (each face once)
        for d in 0..3 {
            if let Some(nb) = grid.neighbor(idx, d, 1) {
                let c = 0.5 * (coeff.sigma[idx][d][d] + coeff.sigma[nb][d][d]) * h;
                t.push(idx, idx, c);
                t.push(nb, nb, c);
                t.push(idx, nb, -c);
                t.push(nb, idx, -c);
            }
        }
        // cross terms: sigma^{de}, d != e, centered differences
        for d in 0..3 {
            for e in 0..3 {
                if d == e {
                    continue;
                }
                let s = coeff.sigma[idx][d][e];
                if s == 0.0 {
                    continue;
                }
                let (Some(pd), Some(md), Some(pe), Some(me)) = (
                    grid.neighbor(idx, d, 1),
                    grid.neighbor(idx, d, -1),
                    grid.neighbor(idx, e, 1),
                    grid.neighbor(idx, e, -1),
                ) else {
                    continue;
                };
                // 0.5 [ (D_d u)(D_e v) + (D_e u)(D_d v) ] sigma h^3, with
                // D centered over 2h
                let c = 0.5 * s * h / 4.0;
                for (ur, uc, sign) in [
                    (pe, pd, 1.0),
                    (pe, md, -1.0),
                    (me, pd, -1.0),
                    (me, md, 1.0),
                    (pd, pe, 1.0),
                    (pd, me, -1.0),
                    (md, pe, -1.0),
                    (md, me, 1.0),
                ] {
                    t.push(ur, uc, sign * c);
                }
            }
        }
    }
    t.build()
}

/// The Laplace-Beltrami operator applied to node samples:
/// (Delta_g u)_i = -(S u)_i / (sqrt(det g)_i h^3).
pub struct CubeLaplacian {
    pub grid: CubeGrid,
    pub stiffness: Csr,
    pub sqrt_det: Vec<f64>,
}

impl CubeLaplacian {
    pub fn new(grid: CubeGrid, g: &MetricField) -> Result<Self> {
        let coeff = sample_coefficients(&grid, g)?;
        let stiffness = assemble_stiffness(&grid, &coeff);
        Ok(CubeLaplacian {
            grid,
            stiffness,
            sqrt_det: coeff.sqrt_det,
        })
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut su = vec![0.0; u.len()];
        self.stiffness.apply(u, &mut su);
        let h3 = self.grid.h.powi(3);
        su.iter()
            .zip(&self.sqrt_det)
            .map(|(s, sd)| -s / (sd * h3))
            .collect()
    }

    /// Total divergence-form flux sum: exactly zero on the torus.
    pub fn total_flux(&self, u: &[f64]) -> f64 {
        let mut su = vec![0.0; u.len()];
        self.stiffness.apply(u, &mut su);
        su.iter().sum()
    }
}

/// Dirichlet problem on a cube/ball grid.
pub struct DirichletProblem<'a> {
    pub metric: &'a MetricField,
    pub grid: CubeGrid,
    /// Right-hand side f of Delta_g u = f at nodes (interior values used).
    pub rhs: Vec<f64>,
    /// Boundary values at constrained nodes.
    pub boundary: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

pub struct DirichletSolution {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Sup norm of the discrete operator residual |Delta_g u - f| over the
    /// interior.
    pub operator_residual: f64,
    pub failed: bool,
}

pub fn dirichlet_solve(problem: &DirichletProblem) -> Result<DirichletSolution> {
    let grid = &problem.grid;
    let lap = CubeLaplacian::new(
        CubeGrid {
            n: grid.n,
            h: grid.h,
            origin: grid.origin,
            topology: grid.topology,
        },
        problem.metric,
    )?;
    let free = lap.grid.free_mask();
    let h3 = lap.grid.h.powi(3);
    let mut x: Vec<f64> = problem.boundary.clone();
    let b: Vec<f64> = (0..lap.grid.len())
        .map(|i| -problem.rhs[i] * lap.sqrt_det[i] * h3)
        .collect();
    let solve = cg_solve(
        &lap.stiffness,
        &b,
        &mut x,
        &free,
        problem.tolerance,
        problem.max_iterations,
    );
    let (iterations, residual, failed) = match solve {
        Ok((it, res)) => (it, res, false),
        Err(AeError::SolverFailure {
            iterations,
            residual,
        }) => (iterations, residual, true),
        Err(e) => return Err(e),
    };
    let applied = lap.apply(&x);
    let operator_residual = applied
        .iter()
        .zip(&problem.rhs)
        .zip(&free)
        .filter(|(_, &f)| f)
        .map(|((a, r), _)| (a - r).abs())
        .fold(0.0f64, f64::max);
    Ok(DirichletSolution {
        u: x,
        iterations,
        residual,
        operator_residual,
        failed,
    })
}

/// Torus Laplacian for a metric field on a torus chart (node layout shared
/// with `Chart::torus`).
pub fn torus_laplacian(g: &MetricField) -> Result<CubeLaplacian> {
    let (period, n) = match g.chart.domain {
        crate::chart::ChartDomain::Torus { period } => (period, g.chart.nodes_per_axis),
        _ => {
            return Err(AeError::ChartMismatch {
                expected: "torus".into(),
                got: g.chart.kind.label().into(),
            })
        }
    };
    CubeLaplacian::new(CubeGrid::periodic(period, n), g)
}

/// Weight (lumped mass) entries sqrt(det g) h^3 for the torus L^2 pairing.
pub fn torus_weights(lap: &CubeLaplacian) -> Vec<f64> {
    let h3 = lap.grid.h.powi(3);
    lap.sqrt_det.iter().map(|s| s * h3).collect()
}

pub fn ball_boundary_values(
    grid: &CubeGrid,
    data: impl Fn([f64; 3]) -> f64,
) -> Vec<f64> {
    (0..grid.len()).map(|i| data(grid.point(i))).collect()
}

// keep Clone-ish construction ergonomic for callers that reuse a grid
impl Clone for CubeGrid {
    fn clone(&self) -> Self {
        CubeGrid {
            n: self.n,
            h: self.h,
            origin: self.origin,
            topology: self.topology,
        }
    }
}
