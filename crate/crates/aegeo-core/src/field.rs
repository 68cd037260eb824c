//! Metric and tensor fields on charts.

use std::sync::Arc;

use crate::chart::{Chart, ChartDomain};
use crate::error::{AeError, Result};
use crate::jet::Jet3;
use crate::linalg::{min_eigenvalue_sym3, Sym3};

/// Metric value and derivatives at a point. Index convention:
/// `dg[k][i][j] = d_k g_ij`, `d2g[k][l][i][j] = d_k d_l g_ij`,
/// `d3g[k][l][m][i][j] = d_k d_l d_m g_ij`.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub order: usize,
    pub g: Sym3,
    pub dg: [Sym3; 3],
    pub d2g: [[Sym3; 3]; 3],
    pub d3g: [[[Sym3; 3]; 3]; 3],
}

impl MetricJet {
    pub fn zero(order: usize) -> Self {
        MetricJet {
            order,
            g: [[0.0; 3]; 3],
            dg: [[[0.0; 3]; 3]; 3],
            d2g: [[[[0.0; 3]; 3]; 3]; 3],
            d3g: [[[[[0.0; 3]; 3]; 3]; 3]; 3],
        }
    }

    pub fn from_jets(jets: &[[Jet3; 3]; 3], order: usize) -> Self {
        let mut m = MetricJet::zero(order);
        for i in 0..3 {
            for j in 0..3 {
                m.g[i][j] = jets[i][j].val;
                if order >= 1 {
                    for k in 0..3 {
                        m.dg[k][i][j] = jets[i][j].grad[k];
                    }
                }
                if order >= 2 {
                    for k in 0..3 {
                        for l in 0..3 {
                            m.d2g[k][l][i][j] = jets[i][j].hess[k][l];
                        }
                    }
                }
                if order >= 3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            for q in 0..3 {
                                m.d3g[k][l][q][i][j] = jets[i][j].third[k][l][q];
                            }
                        }
                    }
                }
            }
        }
        m
    }
}

/// Analytic metric evaluator: exact component jets at any point of the chart.
pub trait MetricClosure: Send + Sync {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet;
    fn value(&self, p: [f64; 3]) -> Sym3 {
        self.jet(p, 0).g
    }
}

/// Scalar field evaluator with exact derivatives (conformal factors, test
/// functions).
pub trait ScalarClosure: Send + Sync {
    fn jet(&self, p: [f64; 3], order: usize) -> Jet3;
    fn value(&self, p: [f64; 3]) -> f64 {
        self.jet(p, 0).val
    }
}

pub struct ConstantScalar(pub f64);

impl ScalarClosure for ConstantScalar {
    fn jet(&self, _p: [f64; 3], _order: usize) -> Jet3 {
        Jet3::constant(self.0)
    }
}

/// Metric samples at the chart nodes.
#[derive(Clone, Debug)]
pub struct GridSamples {
    pub values: Vec<Sym3>,
}

#[derive(Clone)]
pub enum MetricEvaluator {
    Analytic(Arc<dyn MetricClosure>),
    Grid(GridSamples),
}

/// A symmetric positive-definite 3x3 matrix field on a chart.
#[derive(Clone)]
pub struct MetricField {
    pub chart: Arc<Chart>,
    pub eval: MetricEvaluator,
    /// Declared decay order tau, when known.
    pub decay_tag: Option<f64>,
}

impl MetricField {
    pub fn analytic(chart: Arc<Chart>, closure: Arc<dyn MetricClosure>) -> Result<Self> {
        let field = MetricField {
            chart,
            eval: MetricEvaluator::Analytic(closure),
            decay_tag: None,
        };
        field.spd_scan()?;
        Ok(field)
    }

    pub fn from_grid(chart: Arc<Chart>, values: Vec<Sym3>) -> Result<Self> {
        if values.len() != chart.node_count() {
            return Err(AeError::Invalid(format!(
                "grid sample count {} does not match chart node count {}",
                values.len(),
                chart.node_count()
            )));
        }
        for (idx, v) in values.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    if (v[i][j] - v[j][i]).abs() > 1e-14 {
                        return Err(AeError::Invalid(format!(
                            "grid metric asymmetric at node {idx}"
                        )));
                    }
                }
            }
        }
        let field = MetricField {
            chart,
            eval: MetricEvaluator::Grid(GridSamples { values }),
            decay_tag: None,
        };
        field.spd_scan()?;
        Ok(field)
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.eval, MetricEvaluator::Analytic(_))
    }

    pub fn closure(&self) -> Option<Arc<dyn MetricClosure>> {
        match &self.eval {
            MetricEvaluator::Analytic(c) => Some(c.clone()),
            MetricEvaluator::Grid(_) => None,
        }
    }

    /// Metric value at a point: exact closure or trilinear interpolation.
    pub fn value(&self, p: [f64; 3]) -> Result<Sym3> {
        match &self.eval {
            MetricEvaluator::Analytic(c) => Ok(c.value(p)),
            MetricEvaluator::Grid(samples) => interpolate_sym3(&self.chart, &samples.values, p),
        }
    }

    pub fn jet(&self, p: [f64; 3], order: usize) -> Result<MetricJet> {
        match &self.eval {
            MetricEvaluator::Analytic(c) => Ok(c.jet(p, order)),
            MetricEvaluator::Grid(_) => Err(AeError::InsufficientDerivatives { need: order, have: 0 }),
        }
    }

    /// Sample the metric at every chart node.
    pub fn sample(&self) -> Result<Vec<Sym3>> {
        match &self.eval {
            MetricEvaluator::Analytic(c) => {
                Ok(self.chart.nodes().iter().map(|&p| c.value(p)).collect())
            }
            MetricEvaluator::Grid(s) => Ok(s.values.clone()),
        }
    }

    /// Reject metrics that fail positive definiteness anywhere on the chart.
    pub fn spd_scan(&self) -> Result<()> {
        let values = self.sample()?;
        for (idx, v) in values.iter().enumerate() {
            let min_eig = min_eigenvalue_sym3(v);
            if !(min_eig > 0.0) {
                return Err(AeError::NotPositiveDefinite {
                    point: self.chart.node(idx),
                    min_eig,
                });
            }
        }
        Ok(())
    }
}

/// A tensor field sampled at chart nodes, stored `[node][component]` with
/// components in row-major index order.
#[derive(Clone)]
pub struct TensorField {
    pub chart: Arc<Chart>,
    pub valence: (usize, usize),
    pub data: Vec<f64>,
}

impl TensorField {
    pub fn new(chart: Arc<Chart>, valence: (usize, usize), data: Vec<f64>) -> Result<Self> {
        let comps = 3usize.pow((valence.0 + valence.1) as u32);
        if data.len() != comps * chart.node_count() {
            return Err(AeError::Invalid(format!(
                "tensor data length {} != 3^rank ({comps}) x node count ({})",
                data.len(),
                chart.node_count()
            )));
        }
        Ok(TensorField { chart, valence, data })
    }

    pub fn components(&self) -> usize {
        3usize.pow((self.valence.0 + self.valence.1) as u32)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let c = self.components();
        &self.data[node * c..(node + 1) * c]
    }

    /// Frobenius norm of the component array at a node.
    pub fn norm_at(&self, node: usize) -> f64 {
        self.at(node).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sup of the Frobenius norm over each radial shell (spherical charts).
    pub fn shell_sups(&self) -> Vec<(f64, f64)> {
        let sphere = self.chart.sphere.as_ref().expect("spherical chart");
        let na = sphere.len();
        self.chart
            .radial
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let sup = (0..na)
                    .map(|a| self.norm_at(k * na + a))
                    .fold(0.0f64, f64::max);
                (r, sup)
            })
            .collect()
    }

    /// Value by trilinear interpolation off-node (component-wise).
    pub fn interpolate(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        let c = self.components();
        let mut out = vec![0.0; c];
        let (idx, wts) = interpolation_stencil(&self.chart, p)?;
        for (&node, &w) in idx.iter().zip(wts.iter()) {
            for k in 0..c {
                out[k] += w * self.data[node * c + k];
            }
        }
        Ok(out)
    }
}

/// Evaluate a field at arbitrary points: exact closure values for analytic
/// fields, trilinear interpolation for grid fields.
pub fn evaluate_metric(f: &MetricField, points: &[[f64; 3]]) -> Result<Vec<Sym3>> {
    points
        .iter()
        .map(|&p| {
            if !f.chart.contains(p) {
                return Err(AeError::OutsideDomain(p));
            }
            f.value(p)
        })
        .collect()
}

fn interpolate_sym3(chart: &Chart, values: &[Sym3], p: [f64; 3]) -> Result<Sym3> {
    let (idx, wts) = interpolation_stencil(chart, p)?;
    let mut out = [[0.0; 3]; 3];
    for (&node, &w) in idx.iter().zip(wts.iter()) {
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += w * values[node][i][j];
            }
        }
    }
    Ok(out)
}

/// Trilinear interpolation stencil in the chart's parameter box:
/// (log r, cos theta, phi) for spherical charts, the periodic lattice for
/// torus charts. Returns up to 8 node indices with weights.
fn interpolation_stencil(chart: &Chart, p: [f64; 3]) -> Result<(Vec<usize>, Vec<f64>)> {
    match chart.domain {
        ChartDomain::Torus { period } => {
            let n = chart.nodes_per_axis;
            let h = period / n as f64;
            let mut idx = Vec::with_capacity(8);
            let mut wts = Vec::with_capacity(8);
            let cell: Vec<(usize, usize, f64)> = (0..3)
                .map(|d| {
                    let t = (p[d] / h).rem_euclid(n as f64);
                    let i0 = t.floor() as usize % n;
                    let frac = t - t.floor();
                    (i0, (i0 + 1) % n, frac)
                })
                .collect();
            for di in 0..2 {
                for dj in 0..2 {
                    for dk in 0..2 {
                        let (i, wi) = pick(cell[0], di);
                        let (j, wj) = pick(cell[1], dj);
                        let (k, wk) = pick(cell[2], dk);
                        idx.push((i * n + j) * n + k);
                        wts.push(wi * wj * wk);
                    }
                }
            }
            Ok((idx, wts))
        }
        _ => {
            if !chart.contains(p) {
                return Err(AeError::OutsideDomain(p));
            }
            let sphere = chart.sphere.as_ref().unwrap();
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let mu = p[2] / r;
            let phi = p[1].atan2(p[0]).rem_euclid(2.0 * std::f64::consts::PI);

            // radial bracket in log space
            let radial = &chart.radial;
            let lr = r.ln();
            let k1 = radial
                .iter()
                .position(|&x| x.ln() >= lr - 1e-14)
                .unwrap_or(radial.len() - 1)
                .max(1);
            let (k0, k1) = (k1 - 1, k1.min(radial.len() - 1));
            let (l0, l1) = (radial[k0].ln(), radial[k1].ln());
            let tr = if l1 > l0 { ((lr - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 0.0 };

            // mu bracket over the Gauss-Legendre latitudes (clamped to the belt)
            let nt = sphere.n_theta;
            let np = sphere.n_phi;
            let mus: Vec<f64> = (0..nt).map(|i| sphere.dirs[i * np][2]).collect();
            let i1 = mus
                .iter()
                .position(|&m| m >= mu)
                .unwrap_or(nt - 1)
                .max(1);
            let (i0, i1) = (i1 - 1, i1.min(nt - 1));
            let tm = if mus[i1] > mus[i0] {
                ((mu - mus[i0]) / (mus[i1] - mus[i0])).clamp(0.0, 1.0)
            } else {
                0.0
            };

            let dphi = 2.0 * std::f64::consts::PI / np as f64;
            let tph = phi / dphi;
            let j0 = (tph.floor() as usize) % np;
            let j1 = (j0 + 1) % np;
            let tp = tph - tph.floor();

            let mut idx = Vec::with_capacity(8);
            let mut wts = Vec::with_capacity(8);
            let na = sphere.len();
            for (kk, wr) in [(k0, 1.0 - tr), (k1, tr)] {
                for (ii, wm) in [(i0, 1.0 - tm), (i1, tm)] {
                    for (jj, wp) in [(j0, 1.0 - tp), (j1, tp)] {
                        idx.push(kk * na + ii * np + jj);
                        wts.push(wr * wm * wp);
                    }
                }
            }
            Ok((idx, wts))
        }
    }
}

fn pick(cell: (usize, usize, f64), side: usize) -> (usize, f64) {
    if side == 0 {
        (cell.0, 1.0 - cell.2)
    } else {
        (cell.1, cell.2)
    }
}

/// Finite-difference check of an analytic closure: centered differences of
/// the value must converge at second order to the gradient closure.
pub fn fd_consistency(closure: &dyn MetricClosure, p: [f64; 3], h: f64) -> f64 {
    let jet = closure.jet(p, 1);
    let mut worst = 0.0f64;
    for k in 0..3 {
        let mut pp = p;
        let mut pm = p;
        pp[k] += h;
        pm[k] -= h;
        let gp = closure.value(pp);
        let gm = closure.value(pm);
        for i in 0..3 {
            for j in 0..3 {
                let fd = (gp[i][j] - gm[i][j]) / (2.0 * h);
                worst = worst.max((fd - jet.dg[k][i][j]).abs());
            }
        }
    }
    worst
}



#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartKind;

    struct Flat;
    impl MetricClosure for Flat {
        fn jet(&self, _p: [f64; 3], order: usize) -> MetricJet {
            let mut m = MetricJet::zero(order);
            for i in 0..3 {
                m.g[i][i] = 1.0;
            }
            m
        }
    }

    #[test]
    fn grid_sampled_identity_interpolates_exactly() {
        let chart = Arc::new(
            Chart::annulus("a", ChartKind::AsymptoticZ, 1.0, 8.0, 8, 6, 8).unwrap(),
        );
        let flat = MetricField::analytic(chart.clone(), Arc::new(Flat)).unwrap();
        let grid = MetricField::from_grid(chart.clone(), flat.sample().unwrap()).unwrap();
        let p = [2.3, 1.1, -0.7];
        let v = grid.value(p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v[i][j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn evaluate_rejects_points_outside_domain() {
        let chart = Arc::new(
            Chart::annulus("a", ChartKind::AsymptoticZ, 1.0, 8.0, 8, 6, 8).unwrap(),
        );
        let flat = MetricField::analytic(chart, Arc::new(Flat)).unwrap();
        let err = evaluate_metric(&flat, &[[20.0, 0.0, 0.0]]);
        assert!(matches!(err, Err(AeError::OutsideDomain(_))));
    }

    #[test]
    fn non_spd_grid_is_rejected_at_construction() {
        let chart = Arc::new(
            Chart::annulus("a", ChartKind::AsymptoticZ, 1.0, 8.0, 4, 6, 8).unwrap(),
        );
        let mut vals = vec![[[0.0f64; 3]; 3]; chart.node_count()];
        for v in &mut vals {
            v[0][0] = 1.0;
            v[1][1] = 1.0;
            v[2][2] = -1.0;
        }
        assert!(matches!(
            MetricField::from_grid(chart, vals),
            Err(AeError::NotPositiveDefinite { .. })
        ));
    }
}
