//! Trilinear finite elements on logarithmic spherical shells.
//!
//! The parameter box is (ell, theta, phi) = (log r, colatitude, azimuth)
//! with uniform spacing, phi periodic and the two polar node rows merged
//! into single degrees of freedom per radial level. Log-radial spacing keeps
//! cell aspect ratios uniform all the way down to the puncture, which is
//! what the compactified solves near p_infinity need.

use rayon::prelude::*;

use crate::elliptic::sparse::{cg_solve, Csr, Triplets};
use crate::error::{AeError, Result};
use crate::jet::Jet3;
use crate::linalg::{det3, inv3, norm3, Mat3, Sym3};
use crate::map::NumericMap;

#[derive(Clone, Debug)]
pub struct ShellGrid {
    /// Uniform log-radius node coordinates (n_ell + 1 of them).
    pub ell: Vec<f64>,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl ShellGrid {
    pub fn new(r_in: f64, r_out: f64, n_ell: usize, n_theta: usize, n_phi: usize) -> Result<Self> {
        if !(r_in > 0.0 && r_in < r_out) {
            return Err(AeError::InvalidChart("need 0 < r_in < r_out".into()));
        }
        if n_ell < 2 || n_theta < 4 || n_phi < 4 {
            return Err(AeError::InvalidChart("shell grid too coarse".into()));
        }
        let (l0, l1) = (r_in.ln(), r_out.ln());
        let ell = (0..=n_ell)
            .map(|i| l0 + (l1 - l0) * i as f64 / n_ell as f64)
            .collect();
        Ok(ShellGrid {
            ell,
            n_theta,
            n_phi,
        })
    }

    pub fn n_ell(&self) -> usize {
        self.ell.len() - 1
    }

    pub fn h_theta(&self) -> f64 {
        std::f64::consts::PI / self.n_theta as f64
    }

    pub fn h_phi(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_phi as f64
    }

    pub fn h_ell(&self) -> f64 {
        self.ell[1] - self.ell[0]
    }

    /// Degrees of freedom per radial level: two poles plus the interior rows.
    pub fn dofs_per_level(&self) -> usize {
        2 + (self.n_theta - 1) * self.n_phi
    }

    pub fn dof_count(&self) -> usize {
        self.ell.len() * self.dofs_per_level()
    }

    /// Lattice node (il, it, ip) -> degree of freedom.
    pub fn dof(&self, il: usize, it: usize, ip: usize) -> usize {
        let base = il * self.dofs_per_level();
        if it == 0 {
            base
        } else if it == self.n_theta {
            base + 1
        } else {
            base + 2 + (it - 1) * self.n_phi + (ip % self.n_phi)
        }
    }

    pub fn theta(&self, it: usize) -> f64 {
        self.h_theta() * it as f64
    }

    pub fn phi(&self, ip: usize) -> f64 {
        self.h_phi() * ip as f64
    }

    pub fn position(&self, il: usize, it: usize, ip: usize) -> [f64; 3] {
        let r = self.ell[il].exp();
        let th = self.theta(it);
        let ph = self.phi(ip);
        [
            r * th.sin() * ph.cos(),
            r * th.sin() * ph.sin(),
            r * th.cos(),
        ]
    }

    /// Representative position for a degree of freedom.
    pub fn dof_position(&self, dof: usize) -> [f64; 3] {
        let per = self.dofs_per_level();
        let il = dof / per;
        let rem = dof % per;
        if rem == 0 {
            self.position(il, 0, 0)
        } else if rem == 1 {
            self.position(il, self.n_theta, 0)
        } else {
            let it = (rem - 2) / self.n_phi + 1;
            let ip = (rem - 2) % self.n_phi;
            self.position(il, it, ip)
        }
    }
}

/// Radial levels safely away from both boundaries: discrete boundary modes
/// (natural-condition responses decaying like powers of r) have died off
/// there while the radius is still small.
pub fn mid_band_levels(grid: &ShellGrid) -> Vec<usize> {
    let n = grid.n_ell();
    let lo = (n / 6).max(5).min(n.saturating_sub(3));
    let hi = (n / 2).max(lo + 3).min(n.saturating_sub(2));
    (lo..=hi).step_by(2).collect()
}

fn ds_matrix(ell: f64, theta: f64, phi: f64) -> Mat3 {
    let r = ell.exp();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // columns: d/d ell, d/d theta, d/d phi
    [
        [r * st * cp, r * ct * cp, -r * st * sp],
        [r * st * sp, r * ct * sp, r * st * cp],
        [r * ct, -r * st, 0.0],
    ]
}

/// Assembled operator pieces on a shell grid.
pub struct ShellFem {
    pub grid: ShellGrid,
    /// Stiffness int (grad_param v)^T sqrt(det G) G^{-1} (grad_param u).
    pub stiffness: Csr,
    /// Lumped metric volume per dof: int N_a sqrt(det G).
    pub lumped_volume: Vec<f64>,
}

const GAUSS_1D: [f64; 2] = [-0.577350269189625764509148780502, 0.577350269189625764509148780502];

/// Assemble stiffness and lumped volumes for the metric given by a pointwise
/// value closure (Cartesian components).
pub fn assemble(
    grid: &ShellGrid,
    metric_value: &(dyn Fn([f64; 3]) -> Result<Sym3> + Sync),
) -> Result<ShellFem> {
    let n_ell = grid.n_ell();
    let (h_l, h_t, h_p) = (grid.h_ell(), grid.h_theta(), grid.h_phi());
    let cell_count = n_ell * grid.n_theta * grid.n_phi;

    struct CellOut {
        dofs: [usize; 8],
        k: [[f64; 8]; 8],
        vol: [f64; 8],
    }

    let cells: Result<Vec<CellOut>> = (0..cell_count)
        .into_par_iter()
        .map(|c| {
            let cp = c % grid.n_phi;
            let ct = (c / grid.n_phi) % grid.n_theta;
            let cl = c / (grid.n_phi * grid.n_theta);
            let l0 = grid.ell[cl];
            let t0 = grid.theta(ct);
            let p0 = grid.phi(cp);
            // corner ordering: bit 0 -> ell, bit 1 -> theta, bit 2 -> phi
            let mut dofs = [0usize; 8];
            for corner in 0..8 {
                let il = cl + (corner & 1);
                let it = ct + ((corner >> 1) & 1);
                let ip = (cp + ((corner >> 2) & 1)) % grid.n_phi;
                dofs[corner] = grid.dof(il, it, ip);
            }
            let mut k = [[0.0f64; 8]; 8];
            let mut vol = [0.0f64; 8];
            for &gx in &GAUSS_1D {
                for &gy in &GAUSS_1D {
                    for &gz in &GAUSS_1D {
                        let xi = [gx, gy, gz];
                        let l = l0 + 0.5 * (xi[0] + 1.0) * h_l;
                        let t = t0 + 0.5 * (xi[1] + 1.0) * h_t;
                        let p = p0 + 0.5 * (xi[2] + 1.0) * h_p;
                        let pos = [
                            l.exp() * t.sin() * p.cos(),
                            l.exp() * t.sin() * p.sin(),
                            l.exp() * t.cos(),
                        ];
                        let gv = metric_value(pos)?;
                        let ds = ds_matrix(l, t, p);
                        // G = DS^T g DS
                        let mut gpar = [[0.0; 3]; 3];
                        for a in 0..3 {
                            for b in 0..3 {
                                let mut s = 0.0;
                                for u in 0..3 {
                                    for v in 0..3 {
                                        s += ds[u][a] * gv[u][v] * ds[v][b];
                                    }
                                }
                                gpar[a][b] = s;
                            }
                        }
                        let dg = det3(&gpar);
                        if dg <= 0.0 {
                            return Err(AeError::SingularMetric(pos));
                        }
                        let gi = inv3(&gpar).ok_or(AeError::SingularMetric(pos))?;
                        let sq = dg.sqrt();
                        // shape values and reference gradients
                        let mut nval = [0.0f64; 8];
                        let mut grad = [[0.0f64; 3]; 8];
                        for corner in 0..8 {
                            let s = [
                                if corner & 1 == 0 { -1.0 } else { 1.0 },
                                if (corner >> 1) & 1 == 0 { -1.0 } else { 1.0 },
                                if (corner >> 2) & 1 == 0 { -1.0 } else { 1.0 },
                            ];
                            nval[corner] = 0.125
                                * (1.0 + s[0] * xi[0])
                                * (1.0 + s[1] * xi[1])
                                * (1.0 + s[2] * xi[2]);
                            // d/d param = d/d ref * 2/h
                            grad[corner] = [
                                0.125 * s[0] * (1.0 + s[1] * xi[1]) * (1.0 + s[2] * xi[2]) * 2.0
                                    / h_l,
                                0.125 * s[1] * (1.0 + s[0] * xi[0]) * (1.0 + s[2] * xi[2]) * 2.0
                                    / h_t,
                                0.125 * s[2] * (1.0 + s[0] * xi[0]) * (1.0 + s[1] * xi[1]) * 2.0
                                    / h_p,
                            ];
                        }
                        let w = h_l * h_t * h_p / 8.0;
                        for a in 0..8 {
                            for b in 0..8 {
                                let mut s = 0.0;
                                for u in 0..3 {
                                    for v in 0..3 {
                                        s += grad[a][u] * sq * gi[u][v] * grad[b][v];
                                    }
                                }
                                k[a][b] += w * s;
                            }
                            vol[a] += w * sq * nval[a];
                        }
                    }
                }
            }
            Ok(CellOut { dofs, k, vol })
        })
        .collect();
    let cells = cells?;

    let mut t = Triplets::new(grid.dof_count());
    let mut lumped = vec![0.0; grid.dof_count()];
    for cell in &cells {
        for a in 0..8 {
            lumped[cell.dofs[a]] += cell.vol[a];
            for b in 0..8 {
                t.push(cell.dofs[a], cell.dofs[b], cell.k[a][b]);
            }
        }
    }
    Ok(ShellFem {
        grid: grid.clone(),
        stiffness: t.build(),
        lumped_volume: lumped,
    })
}

/// Solve (stiff_scale * K + diag(reaction * V)) u = 0 with Dirichlet data on
/// the outer radial level and natural (zero-flux) inner boundary.
pub fn solve_outer_dirichlet(
    fem: &ShellFem,
    stiff_scale: f64,
    reaction: Option<&[f64]>,
    outer_values: &dyn Fn([f64; 3]) -> f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let grid = &fem.grid;
    let n = grid.dof_count();
    let mut a = Triplets::new(n);
    for i in 0..n {
        for k in fem.stiffness.row_ptr[i]..fem.stiffness.row_ptr[i + 1] {
            a.push(i, fem.stiffness.cols[k], stiff_scale * fem.stiffness.vals[k]);
        }
        if let Some(r) = reaction {
            a.push(i, i, r[i] * fem.lumped_volume[i]);
        }
    }
    let a = a.build();
    let per = grid.dofs_per_level();
    let outer_base = grid.n_ell() * per;
    let mut free = vec![true; n];
    let mut x = vec![0.0; n];
    for dof in outer_base..outer_base + per {
        free[dof] = false;
        x[dof] = outer_values(grid.dof_position(dof));
    }
    // initial guess: propagate the outer data inward
    for il in 0..grid.n_ell() {
        for d in 0..per {
            x[il * per + d] = x[outer_base + d];
        }
    }
    let b = vec![0.0; n];
    cg_solve(&a, &b, &mut x, &free, tol, max_iter)?;
    Ok(x)
}

/// Value table on the full node lattice (poles duplicated) plus first and
/// second parameter-derivative tables, interpolated trilinearly and chained
/// to Cartesian derivatives through the analytic inverse parametrization.
pub struct GridScalar {
    grid: ShellGrid,
    /// [il][it][ip] row-major; it in 0..=n_theta, ip in 0..n_phi.
    value: Vec<f64>,
    dparam: [Vec<f64>; 3],
    d2param: [Vec<f64>; 6], // ll, lt, lp, tt, tp, pp
}

impl GridScalar {
    pub fn from_dofs(grid: &ShellGrid, dofs: &[f64]) -> Self {
        let (nl, nt, np) = (grid.ell.len(), grid.n_theta + 1, grid.n_phi);
        let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip };
        let mut value = vec![0.0; nl * nt * np];
        for il in 0..nl {
            for it in 0..nt {
                for ip in 0..np {
                    value[lat(il, it, ip)] = dofs[grid.dof(il, it, ip)];
                }
            }
        }
        let (hl, ht, hp) = (grid.h_ell(), grid.h_theta(), grid.h_phi());
        // first derivatives
        let dl = derive_l(&value, nl, nt, np, hl);
        let dt = derive_t(&value, nl, nt, np, ht);
        let dp = derive_p(&value, nl, nt, np, hp);
        // second derivatives
        let dll = derive_l(&dl, nl, nt, np, hl);
        let dlt = derive_t(&dl, nl, nt, np, ht);
        let dlp = derive_p(&dl, nl, nt, np, hp);
        let dtt = derive_t(&dt, nl, nt, np, ht);
        let dtp = derive_p(&dt, nl, nt, np, hp);
        let dpp = derive_p(&dp, nl, nt, np, hp);
        GridScalar {
            grid: grid.clone(),
            value,
            dparam: [dl, dt, dp],
            d2param: [dll, dlt, dlp, dtt, dtp, dpp],
        }
    }

    fn interp(&self, table: &[f64], l: f64, t: f64, p: f64) -> f64 {
        let grid = &self.grid;
        let (nl, nt, np) = (grid.ell.len(), grid.n_theta + 1, grid.n_phi);
        let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip % np };
        let tl = ((l - grid.ell[0]) / grid.h_ell()).clamp(0.0, (nl - 1) as f64 - 1e-12);
        let tt = (t / grid.h_theta()).clamp(0.0, (nt - 1) as f64 - 1e-12);
        let tp = (p / grid.h_phi()).rem_euclid(np as f64);
        let (il, ft) = (tl.floor() as usize, tl - tl.floor());
        let (it, gt) = (tt.floor() as usize, tt - tt.floor());
        let (ip, hpf) = (tp.floor() as usize % np, tp - tp.floor());
        let mut s = 0.0;
        for (dl, wl) in [(0usize, 1.0 - ft), (1, ft)] {
            for (dt, wt) in [(0usize, 1.0 - gt), (1, gt)] {
                for (dp, wp) in [(0usize, 1.0 - hpf), (1, hpf)] {
                    s += wl * wt * wp * table[lat(il + dl, it + dt, ip + dp)];
                }
            }
        }
        s
    }

    /// Cartesian 2-jet at a point (third level zero).
    pub fn jet2(&self, pos: [f64; 3]) -> Jet3 {
        let (l, t, p) = cartesian_to_params(pos);
        // jet of the scalar in parameter space
        let mut f = Jet3::constant(self.interp(&self.value, l, t, p));
        f.grad = [
            self.interp(&self.dparam[0], l, t, p),
            self.interp(&self.dparam[1], l, t, p),
            self.interp(&self.dparam[2], l, t, p),
        ];
        let d2 = [
            self.interp(&self.d2param[0], l, t, p),
            self.interp(&self.d2param[1], l, t, p),
            self.interp(&self.d2param[2], l, t, p),
            self.interp(&self.d2param[3], l, t, p),
            self.interp(&self.d2param[4], l, t, p),
            self.interp(&self.d2param[5], l, t, p),
        ];
        f.hess = [
            [d2[0], d2[1], d2[2]],
            [d2[1], d2[3], d2[4]],
            [d2[2], d2[4], d2[5]],
        ];
        let params = param_jets(pos);
        f.compose(&params)
    }

    pub fn value_at(&self, pos: [f64; 3]) -> f64 {
        let (l, t, p) = cartesian_to_params(pos);
        self.interp(&self.value, l, t, p)
    }

    /// Angular mean of the stored values on a radial level.
    pub fn level_mean(&self, il: usize) -> f64 {
        let grid = &self.grid;
        let np = grid.n_phi;
        let nt = grid.n_theta + 1;
        let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip };
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for it in 0..nt {
            let w = (grid.theta(it)).sin().max(1e-9);
            for ip in 0..np {
                sum += w * self.value[lat(il, it, ip)];
                wsum += w;
            }
        }
        sum / wsum
    }

    /// Value at the puncture: v(r) = v0 + a r + b r^2 fitted over mid-band
    /// levels (the innermost levels carry boundary-excited grid modes).
    pub fn extrapolate_origin(&self) -> f64 {
        let grid = &self.grid;
        let levels = mid_band_levels(grid);
        let samples: Vec<(f64, f64)> = levels
            .iter()
            .map(|&il| (grid.ell[il].exp(), self.level_mean(il)))
            .collect();
        fit_origin_quadratic(&samples)
    }
}

/// Least-squares fit of v(r) = v0 + a r + b r^2 over the samples,
/// returning v0. Stable against boundary-excited grid modes when fed
/// mid-band shells.
pub fn fit_origin_quadratic(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len();
    if n < 3 {
        return samples.first().map(|s| s.1).unwrap_or(0.0);
    }
    // normal equations for the basis {1, r, r^2}
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(r, v) in samples {
        let basis = [1.0, r, r * r];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += basis[i] * basis[j];
            }
            b[i] += basis[i] * v;
        }
    }
    match crate::linalg::inv3(&a) {
        Some(ai) => ai[0][0] * b[0] + ai[0][1] * b[1] + ai[0][2] * b[2],
        None => samples[0].1,
    }
}

/// Fit v(r) = v0 + a r + b r^2 through three samples and return v0.
pub fn richardson_origin(radii: &[f64], values: &[f64]) -> f64 {
    if radii.len() < 3 {
        return values[0];
    }
    let (r0, r1, r2) = (radii[0], radii[1], radii[2]);
    let (v0, v1, v2) = (values[0], values[1], values[2]);
    // Lagrange evaluation at r = 0
    let l0 = (0.0 - r1) * (0.0 - r2) / ((r0 - r1) * (r0 - r2));
    let l1 = (0.0 - r0) * (0.0 - r2) / ((r1 - r0) * (r1 - r2));
    let l2 = (0.0 - r0) * (0.0 - r1) / ((r2 - r0) * (r2 - r1));
    v0 * l0 + v1 * l1 + v2 * l2
}

fn derive_l(v: &[f64], nl: usize, nt: usize, np: usize, h: f64) -> Vec<f64> {
    let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip };
    let mut out = vec![0.0; v.len()];
    for it in 0..nt {
        for ip in 0..np {
            for il in 0..nl {
                out[lat(il, it, ip)] = if il == 0 {
                    (-3.0 * v[lat(0, it, ip)] + 4.0 * v[lat(1, it, ip)] - v[lat(2, it, ip)])
                        / (2.0 * h)
                } else if il == nl - 1 {
                    (3.0 * v[lat(nl - 1, it, ip)] - 4.0 * v[lat(nl - 2, it, ip)]
                        + v[lat(nl - 3, it, ip)])
                        / (2.0 * h)
                } else {
                    (v[lat(il + 1, it, ip)] - v[lat(il - 1, it, ip)]) / (2.0 * h)
                };
            }
        }
    }
    out
}

fn derive_t(v: &[f64], nl: usize, nt: usize, np: usize, h: f64) -> Vec<f64> {
    let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip };
    let mut out = vec![0.0; v.len()];
    for il in 0..nl {
        for ip in 0..np {
            for it in 0..nt {
                out[lat(il, it, ip)] = if it == 0 {
                    // across the pole: theta -> -theta lands at phi + pi
                    let ipo = (ip + np / 2) % np;
                    (v[lat(il, 1, ip)] - v[lat(il, 1, ipo)]) / (2.0 * h)
                } else if it == nt - 1 {
                    let ipo = (ip + np / 2) % np;
                    (v[lat(il, nt - 2, ipo)] - v[lat(il, nt - 2, ip)]) / (2.0 * h)
                } else {
                    (v[lat(il, it + 1, ip)] - v[lat(il, it - 1, ip)]) / (2.0 * h)
                };
            }
        }
    }
    out
}

fn derive_p(v: &[f64], nl: usize, nt: usize, np: usize, h: f64) -> Vec<f64> {
    let lat = |il: usize, it: usize, ip: usize| -> usize { (il * nt + it) * np + ip };
    let mut out = vec![0.0; v.len()];
    for il in 0..nl {
        for it in 0..nt {
            for ip in 0..np {
                let ipp = (ip + 1) % np;
                let ipm = (ip + np - 1) % np;
                out[lat(il, it, ip)] =
                    (v[lat(il, it, ipp)] - v[lat(il, it, ipm)]) / (2.0 * h);
            }
        }
    }
    out
}

pub fn cartesian_to_params(p: [f64; 3]) -> (f64, f64, f64) {
    let r = norm3(&p).max(1e-300);
    let l = r.ln();
    let t = (p[2] / r).clamp(-1.0, 1.0).acos();
    let ph = p[1].atan2(p[0]).rem_euclid(2.0 * std::f64::consts::PI);
    (l, t, ph)
}

/// Exact 2-jets of the inverse parametrization (log r, theta, phi) as
/// functions of Cartesian position (third level zero).
pub fn param_jets(p: [f64; 3]) -> [Jet3; 3] {
    let (x, y, z) = (p[0], p[1], p[2]);
    let r2j = Jet3::radius2(p, [0.0; 3]);
    // log r = (1/2) ln(r^2)
    let ell = r2j.ln().scale(0.5);
    // theta = acos(z / r): build via jets
    let zj = Jet3::coordinate(p, 2);
    let rinv = r2j.powf(-0.5);
    let u = zj.mul(&rinv); // z/r in (-1, 1) away from the axis
    let uv = u.val.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let s = (1.0 - uv * uv).sqrt();
    // acos derivatives: f' = -1/s, f'' = -u/s^3, f''' = -(1 + 2u^2)/s^5
    let theta = u.chain([
        uv.acos(),
        -1.0 / s,
        -uv / (s * s * s),
        -(1.0 + 2.0 * uv * uv) / (s * s * s * s * s),
    ]);
    // phi = atan2(y, x): explicit first/second derivatives
    let s2 = x * x + y * y;
    let mut phi = Jet3::constant(y.atan2(x).rem_euclid(2.0 * std::f64::consts::PI));
    phi.grad = [-y / s2, x / s2, 0.0];
    let s4 = s2 * s2;
    phi.hess = [
        [2.0 * x * y / s4, (y * y - x * x) / s4, 0.0],
        [(y * y - x * x) / s4, -2.0 * x * y / s4, 0.0],
        [0.0, 0.0, 0.0],
    ];
    let _ = z;
    [ell, theta, phi]
}

/// Vector-valued grid map y(x) stored as the deviation from the identity,
/// y = x + v(x): the interpolation error scales with the small deviation
/// rather than with the coordinates themselves.
pub struct GridMap {
    pub deviation: [GridScalar; 3],
}

impl GridMap {
    /// Build from the three solved coordinate functions at the grid dofs.
    pub fn from_solutions(grid: &ShellGrid, sols: [&[f64]; 3]) -> Self {
        let mut dev = Vec::with_capacity(3);
        for (axis, sol) in sols.iter().enumerate() {
            let d: Vec<f64> = (0..grid.dof_count())
                .map(|dof| sol[dof] - grid.dof_position(dof)[axis])
                .collect();
            dev.push(GridScalar::from_dofs(grid, &d));
        }
        GridMap {
            deviation: [dev.remove(0), dev.remove(0), dev.remove(0)],
        }
    }

    pub fn jets(&self, p: [f64; 3]) -> [Jet3; 3] {
        [
            Jet3::coordinate(p, 0).add(&self.deviation[0].jet2(p)),
            Jet3::coordinate(p, 1).add(&self.deviation[1].jet2(p)),
            Jet3::coordinate(p, 2).add(&self.deviation[2].jet2(p)),
        ]
    }
}

impl NumericMap for GridMap {
    fn value(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] + self.deviation[0].value_at(p),
            p[1] + self.deviation[1].value_at(p),
            p[2] + self.deviation[2].value_at(p),
        ]
    }

    fn jacobian(&self, p: [f64; 3]) -> Mat3 {
        let j = self.jets(p);
        let mut out = [[0.0; 3]; 3];
        for u in 0..3 {
            for a in 0..3 {
                out[u][a] = j[u].grad[a];
            }
        }
        out
    }

    fn invert(&self, y: [f64; 3]) -> Option<[f64; 3]> {
        let mut x = y;
        for _ in 0..40 {
            let v = self.value(x);
            let r = [v[0] - y[0], v[1] - y[1], v[2] - y[2]];
            if norm3(&r) < 1e-13 * (1.0 + norm3(&y)) {
                return Some(x);
            }
            let j = self.jacobian(x);
            let ji = inv3(&j)?;
            for i in 0..3 {
                for k in 0..3 {
                    x[i] -= ji[i][k] * r[k];
                }
            }
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_value(_p: [f64; 3]) -> Result<Sym3> {
        Ok([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
    }

    #[test]
    fn flat_harmonic_solve_converges_at_second_order() {
        // x^axis is harmonic; the trilinear solution carries an O(h^2)
        // representation error that must shrink by ~4 under refinement.
        let mut errs = Vec::new();
        for (ne, nt, np) in [(12usize, 6usize, 8usize), (24, 12, 16)] {
            let grid = ShellGrid::new(0.01, 1.0, ne, nt, np).unwrap();
            let fem = assemble(&grid, &flat_value).unwrap();
            let sol = solve_outer_dirichlet(
                &fem,
                1.0,
                None,
                &|p: [f64; 3]| p[0],
                1e-12,
                40000,
            )
            .unwrap();
            let mut worst = 0.0f64;
            for dof in 0..grid.dof_count() {
                let p = grid.dof_position(dof);
                worst = worst.max((sol[dof] - p[0]).abs());
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            ratio > 2.8 && ratio < 6.0,
            "expected ~second-order convergence, got ratio {ratio} ({errs:?})"
        );
    }

    #[test]
    fn grid_scalar_reproduces_smooth_fields_and_gradients() {
        let grid = ShellGrid::new(0.05, 1.0, 32, 16, 24).unwrap();
        // f = x + 0.3 y^2 sampled at dofs
        let f = |p: [f64; 3]| p[0] + 0.3 * p[1] * p[1];
        let mut dofs = vec![0.0; grid.dof_count()];
        for d in 0..grid.dof_count() {
            dofs[d] = f(grid.dof_position(d));
        }
        let gs = GridScalar::from_dofs(&grid, &dofs);
        for p in [[0.4, 0.1, 0.2], [-0.2, 0.3, -0.4], [0.1, -0.5, 0.3]] {
            let jet = gs.jet2(p);
            assert!((jet.val - f(p)).abs() < 2e-3, "value at {p:?}: {}", jet.val);
            assert!((jet.grad[0] - 1.0).abs() < 0.05, "df/dx {}", jet.grad[0]);
            assert!(
                (jet.grad[1] - 0.6 * p[1]).abs() < 0.05,
                "df/dy {}",
                jet.grad[1]
            );
            assert!((jet.hess[1][1] - 0.6).abs() < 0.2, "d2f/dy2 {}", jet.hess[1][1]);
        }
    }

    #[test]
    fn param_jets_match_finite_differences() {
        let p = [0.3, -0.2, 0.5];
        let jets = param_jets(p);
        let h = 1e-6;
        for (pi, f) in [
            (0usize, &(|q: [f64; 3]| cartesian_to_params(q).0) as &dyn Fn([f64; 3]) -> f64),
            (1, &|q: [f64; 3]| cartesian_to_params(q).1),
            (2, &|q: [f64; 3]| cartesian_to_params(q).2),
        ] {
            for d in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[d] += h;
                pm[d] -= h;
                let fd = (f(pp) - f(pm)) / (2.0 * h);
                assert!(
                    (jets[pi].grad[d] - fd).abs() < 1e-6,
                    "param {pi} grad[{d}]: {} vs {}",
                    jets[pi].grad[d],
                    fd
                );
            }
        }
    }

    #[test]
    fn richardson_extrapolation_recovers_quadratic_limits() {
        let radii = [0.01, 0.02, 0.04];
        let values: Vec<f64> = radii.iter().map(|r| 3.0 - 2.0 * r + 5.0 * r * r).collect();
        let v0 = richardson_origin(&radii, &values);
        assert!((v0 - 3.0).abs() < 1e-12);
    }
}
