//! Coordinate maps between charts and metric pullback.

use std::sync::Arc;

use crate::chart::Chart;
use crate::error::{AeError, Result};
use crate::field::{MetricClosure, MetricField, MetricJet};
use crate::jet::Jet3;
use crate::linalg::{det3, inv3, norm3, Mat3};

/// Analytic map evaluator: component jets at a point (order <= 3).
pub trait MapClosure: Send + Sync {
    fn jet(&self, p: [f64; 3], order: usize) -> [Jet3; 3];

    fn value(&self, p: [f64; 3]) -> [f64; 3] {
        let j = self.jet(p, 0);
        [j[0].val, j[1].val, j[2].val]
    }

    fn jacobian(&self, p: [f64; 3]) -> Mat3 {
        let j = self.jet(p, 1);
        let mut out = [[0.0; 3]; 3];
        for u in 0..3 {
            for a in 0..3 {
                out[u][a] = j[u].grad[a];
            }
        }
        out
    }
}

/// Numeric map evaluator (grid-backed solutions of elliptic problems).
pub trait NumericMap: Send + Sync {
    fn value(&self, p: [f64; 3]) -> [f64; 3];
    fn jacobian(&self, p: [f64; 3]) -> Mat3;
    /// Inverse by Newton iteration when available.
    fn invert(&self, y: [f64; 3]) -> Option<[f64; 3]>;
}

#[derive(Clone)]
pub enum MapEvaluator {
    Analytic(Arc<dyn MapClosure>),
    Numeric(Arc<dyn NumericMap>),
}

/// Leading behaviour and fitted correction exponent of a near-identity map.
#[derive(Clone, Copy, Debug)]
pub struct MapClassification {
    pub alpha: f64,
    pub displacement_exponent: f64,
    pub jacobian_exponent: f64,
    pub residual: f64,
    pub compatible: bool,
}

#[derive(Clone)]
pub struct CoordinateMap {
    pub source: Arc<Chart>,
    pub target: Arc<Chart>,
    pub forward: MapEvaluator,
    pub backward: Option<MapEvaluator>,
    pub classification: Option<MapClassification>,
}

impl CoordinateMap {
    pub fn analytic(
        source: Arc<Chart>,
        target: Arc<Chart>,
        fwd: Arc<dyn MapClosure>,
    ) -> CoordinateMap {
        CoordinateMap {
            source,
            target,
            forward: MapEvaluator::Analytic(fwd),
            backward: None,
            classification: None,
        }
    }

    pub fn value(&self, p: [f64; 3]) -> [f64; 3] {
        match &self.forward {
            MapEvaluator::Analytic(m) => m.value(p),
            MapEvaluator::Numeric(m) => m.value(p),
        }
    }

    pub fn jacobian(&self, p: [f64; 3]) -> Mat3 {
        match &self.forward {
            MapEvaluator::Analytic(m) => m.jacobian(p),
            MapEvaluator::Numeric(m) => m.jacobian(p),
        }
    }

    pub fn backward_value(&self, y: [f64; 3]) -> Option<[f64; 3]> {
        match &self.backward {
            Some(MapEvaluator::Analytic(m)) => Some(m.value(y)),
            Some(MapEvaluator::Numeric(m)) => m.invert(y),
            None => match &self.forward {
                MapEvaluator::Numeric(m) => m.invert(y),
                _ => None,
            },
        }
    }

    /// Check that the jacobian is invertible on every source node.
    pub fn jacobian_scan(&self) -> Result<()> {
        for p in self.source.nodes() {
            let j = self.jacobian(p);
            let d = det3(&j);
            if d.abs() <= 1e-12 {
                return Err(AeError::SingularJacobian { point: p, det: d });
            }
        }
        Ok(())
    }
}

pub struct IdentityMap;

impl MapClosure for IdentityMap {
    fn jet(&self, p: [f64; 3], _order: usize) -> [Jet3; 3] {
        [
            Jet3::coordinate(p, 0),
            Jet3::coordinate(p, 1),
            Jet3::coordinate(p, 2),
        ]
    }
}

/// The inversion x -> x/|x|^2 with exact jets.
pub struct KelvinInversion;

impl MapClosure for KelvinInversion {
    fn jet(&self, p: [f64; 3], _order: usize) -> [Jet3; 3] {
        let winv = Jet3::radius2(p, [0.0; 3]).recip();
        [
            Jet3::coordinate(p, 0).mul(&winv),
            Jet3::coordinate(p, 1).mul(&winv),
            Jet3::coordinate(p, 2).mul(&winv),
        ]
    }
}

/// Affine map p -> A p + b.
pub struct AffineMap {
    pub a: Mat3,
    pub b: [f64; 3],
}

impl MapClosure for AffineMap {
    fn jet(&self, p: [f64; 3], _order: usize) -> [Jet3; 3] {
        let mut out = [Jet3::constant(0.0); 3];
        for u in 0..3 {
            let mut j = Jet3::constant(self.b[u]);
            for a in 0..3 {
                j.val += self.a[u][a] * p[a];
                j.grad[a] = self.a[u][a];
            }
            out[u] = j;
        }
        out
    }
}

/// Quadratic normal-coordinate correction y -> y + (1/2) G[y,y].
pub struct QuadraticMap {
    /// gamma[i][j][k] symmetric in (j,k).
    pub gamma: [[[f64; 3]; 3]; 3],
}

impl MapClosure for QuadraticMap {
    fn jet(&self, p: [f64; 3], _order: usize) -> [Jet3; 3] {
        let mut out = [Jet3::constant(0.0); 3];
        for i in 0..3 {
            let mut j = Jet3::coordinate(p, i);
            for a in 0..3 {
                for b in 0..3 {
                    let c = 0.5 * self.gamma[i][a][b];
                    if c != 0.0 {
                        j.val += c * p[a] * p[b];
                        j.grad[a] += c * p[b];
                        j.grad[b] += c * p[a];
                        j.hess[a][b] += c;
                        j.hess[b][a] += c;
                    }
                }
            }
            out[i] = j;
        }
        out
    }
}

/// Composition m2 after m1 with exact jet chaining.
pub struct ComposedMap {
    pub first: Arc<dyn MapClosure>,
    pub second: Arc<dyn MapClosure>,
}

impl MapClosure for ComposedMap {
    fn jet(&self, p: [f64; 3], order: usize) -> [Jet3; 3] {
        let m1 = self.first.jet(p, order);
        let q = [m1[0].val, m1[1].val, m1[2].val];
        let m2 = self.second.jet(q, order);
        [
            m2[0].compose(&m1),
            m2[1].compose(&m1),
            m2[2].compose(&m1),
        ]
    }
}

/// Pullback closure: g'_{ab}(x) = J^u_a J^v_b g_{uv}(phi(x)).
///
/// First and second derivatives of the pulled-back components are exact
/// (they consume map jets to third order); third derivatives are filled by
/// centered differences of the exact second derivatives.
pub struct PullbackClosure {
    pub metric: Arc<dyn MetricClosure>,
    pub map: Arc<dyn MapClosure>,
}

impl PullbackClosure {
    fn jet2(&self, p: [f64; 3]) -> MetricJet {
        let m = self.map.jet(p, 3);
        let q = [m[0].val, m[1].val, m[2].val];
        let gj = self.metric.jet(q, 2);

        let phi = |u: usize, a: usize| m[u].grad[a];
        let phi2 = |u: usize, a: usize, b: usize| m[u].hess[a][b];
        let phi3 = |u: usize, a: usize, b: usize, c: usize| m[u].third[a][b][c];

        let mut out = MetricJet::zero(2);
        for a in 0..3 {
            for b in 0..3 {
                let mut v = 0.0;
                for u in 0..3 {
                    for w in 0..3 {
                        v += phi(u, a) * phi(w, b) * gj.g[u][w];
                    }
                }
                out.g[a][b] = v;
            }
        }
        // dG_uv / dx^c = dg[w][u][v] * phi(w, c)
        let dgix = |u: usize, v: usize, c: usize| -> f64 {
            (0..3).map(|w| gj.dg[w][u][v] * phi(w, c)).sum()
        };
        let d2gix = |u: usize, v: usize, c: usize, d: usize| -> f64 {
            let mut s = 0.0;
            for w in 0..3 {
                for x in 0..3 {
                    s += gj.d2g[w][x][u][v] * phi(w, c) * phi(x, d);
                }
                s += gj.dg[w][u][v] * phi2(w, c, d);
            }
            s
        };
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let mut v = 0.0;
                    for u in 0..3 {
                        for w in 0..3 {
                            v += phi2(u, a, c) * phi(w, b) * gj.g[u][w]
                                + phi(u, a) * phi2(w, b, c) * gj.g[u][w]
                                + phi(u, a) * phi(w, b) * dgix(u, w, c);
                        }
                    }
                    out.dg[c][a][b] = v;
                }
            }
        }
        for c in 0..3 {
            for d in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let mut v = 0.0;
                        for u in 0..3 {
                            for w in 0..3 {
                                v += phi3(u, a, c, d) * phi(w, b) * gj.g[u][w]
                                    + phi2(u, a, c) * phi2(w, b, d) * gj.g[u][w]
                                    + phi2(u, a, c) * phi(w, b) * dgix(u, w, d)
                                    + phi2(u, a, d) * phi2(w, b, c) * gj.g[u][w]
                                    + phi(u, a) * phi3(w, b, c, d) * gj.g[u][w]
                                    + phi(u, a) * phi2(w, b, c) * dgix(u, w, d)
                                    + phi2(u, a, d) * phi(w, b) * dgix(u, w, c)
                                    + phi(u, a) * phi2(w, b, d) * dgix(u, w, c)
                                    + phi(u, a) * phi(w, b) * d2gix(u, w, c, d);
                            }
                        }
                        out.d2g[c][d][a][b] = v;
                    }
                }
            }
        }
        out
    }
}

impl MetricClosure for PullbackClosure {
    fn jet(&self, p: [f64; 3], order: usize) -> MetricJet {
        let mut jet = self.jet2(p);
        jet.order = order.min(3);
        if order >= 3 {
            // Step scaled to the point; Richardson-refined centered difference
            // of the exact second derivatives.
            let scale = norm3(&p).max(1.0);
            let h = 1e-3 * scale;
            for k in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[k] += h;
                pm[k] -= h;
                let jp = self.jet2(pp);
                let jm = self.jet2(pm);
                let mut pp2 = p;
                let mut pm2 = p;
                pp2[k] += 2.0 * h;
                pm2[k] -= 2.0 * h;
                let jp2 = self.jet2(pp2);
                let jm2 = self.jet2(pm2);
                for l in 0..3 {
                    for q in 0..3 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let d1 = (jp.d2g[l][q][i][j] - jm.d2g[l][q][i][j]) / (2.0 * h);
                                let d2 = (jp2.d2g[l][q][i][j] - jm2.d2g[l][q][i][j]) / (4.0 * h);
                                jet.d3g[k][l][q][i][j] = (4.0 * d1 - d2) / 3.0;
                            }
                        }
                    }
                }
            }
        }
        jet
    }
}

/// Pull a metric back along `map`: the result lives on `map.source`.
pub fn pullback_metric(g: &MetricField, map: &CoordinateMap) -> Result<MetricField> {
    if !std::ptr::eq(g.chart.as_ref(), map.target.as_ref())
        && g.chart.name != map.target.name
    {
        return Err(AeError::ChartMismatch {
            expected: map.target.name.clone(),
            got: g.chart.name.clone(),
        });
    }
    match (&g.eval, &map.forward) {
        (crate::field::MetricEvaluator::Analytic(gc), MapEvaluator::Analytic(mc)) => {
            MetricField::analytic(
                map.source.clone(),
                Arc::new(PullbackClosure {
                    metric: gc.clone(),
                    map: mc.clone(),
                }),
            )
        }
        _ => {
            // Sampled pullback on the source nodes.
            let mut values = Vec::with_capacity(map.source.node_count());
            for p in map.source.nodes() {
                let j = map.jacobian(p);
                if det3(&j).abs() <= 1e-12 {
                    return Err(AeError::SingularJacobian {
                        point: p,
                        det: det3(&j),
                    });
                }
                let q = map.value(p);
                let gv = g.value(q)?;
                let mut out = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        let mut s = 0.0;
                        for u in 0..3 {
                            for v in 0..3 {
                                s += j[u][a] * j[v][b] * gv[u][v];
                            }
                        }
                        out[a][b] = s;
                    }
                }
                values.push(out);
            }
            MetricField::from_grid(map.source.clone(), values)
        }
    }
}

/// Pull back metric values only (no chart bookkeeping): used by evaluation
/// chains through numeric maps.
pub fn pullback_value(
    g_value: &dyn Fn([f64; 3]) -> Result<[[f64; 3]; 3]>,
    map_value: [f64; 3],
    jacobian: &Mat3,
) -> Result<[[f64; 3]; 3]> {
    let gv = g_value(map_value)?;
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for u in 0..3 {
                for v in 0..3 {
                    s += jacobian[u][a] * jacobian[v][b] * gv[u][v];
                }
            }
            out[a][b] = s;
        }
    }
    Ok(out)
}

/// Newton inversion of an analytic map.
pub fn invert_analytic(map: &dyn MapClosure, y: [f64; 3], guess: [f64; 3]) -> Option<[f64; 3]> {
    let mut x = guess;
    for _ in 0..50 {
        let v = map.value(x);
        let r = [v[0] - y[0], v[1] - y[1], v[2] - y[2]];
        if norm3(&r) < 1e-14 * (1.0 + norm3(&y)) {
            return Some(x);
        }
        let j = map.jacobian(x);
        let ji = inv3(&j)?;
        for i in 0..3 {
            for k in 0..3 {
                x[i] -= ji[i][k] * r[k];
            }
        }
    }
    None
}
