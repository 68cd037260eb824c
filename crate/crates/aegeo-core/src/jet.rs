//! Truncated third-order jet arithmetic in three variables.
//!
//! A `Jet3` carries a scalar value together with its gradient, Hessian and
//! third derivative tensor at a point. Products and smooth compositions
//! propagate all levels exactly, which lets the metric catalog expose exact
//! derivative closures without hand-differentiating every family.

/// Value and derivatives up to third order of a scalar function at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet3 {
    pub val: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
    pub third: [[[f64; 3]; 3]; 3],
}

impl Jet3 {
    pub fn constant(c: f64) -> Self {
        Jet3 {
            val: c,
            grad: [0.0; 3],
            hess: [[0.0; 3]; 3],
            third: [[[0.0; 3]; 3]; 3],
        }
    }

    /// The coordinate function `p -> p[i]`.
    pub fn coordinate(p: [f64; 3], i: usize) -> Self {
        let mut j = Jet3::constant(p[i]);
        j.grad[i] = 1.0;
        j
    }

    /// `|p - c|^2` with exact derivatives.
    pub fn radius2(p: [f64; 3], c: [f64; 3]) -> Self {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let mut j = Jet3::constant(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for i in 0..3 {
            j.grad[i] = 2.0 * d[i];
            j.hess[i][i] = 2.0;
        }
        j
    }

    pub fn add(&self, o: &Jet3) -> Jet3 {
        let mut r = *self;
        r.val += o.val;
        for a in 0..3 {
            r.grad[a] += o.grad[a];
            for b in 0..3 {
                r.hess[a][b] += o.hess[a][b];
                for c in 0..3 {
                    r.third[a][b][c] += o.third[a][b][c];
                }
            }
        }
        r
    }

    pub fn sub(&self, o: &Jet3) -> Jet3 {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Jet3 {
        let mut r = *self;
        r.val *= s;
        for a in 0..3 {
            r.grad[a] *= s;
            for b in 0..3 {
                r.hess[a][b] *= s;
                for c in 0..3 {
                    r.third[a][b][c] *= s;
                }
            }
        }
        r
    }

    /// Leibniz product through third order.
    pub fn mul(&self, o: &Jet3) -> Jet3 {
        let mut r = Jet3::constant(self.val * o.val);
        for a in 0..3 {
            r.grad[a] = self.grad[a] * o.val + self.val * o.grad[a];
        }
        for a in 0..3 {
            for b in 0..3 {
                r.hess[a][b] = self.hess[a][b] * o.val
                    + self.grad[a] * o.grad[b]
                    + self.grad[b] * o.grad[a]
                    + self.val * o.hess[a][b];
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    r.third[a][b][c] = self.third[a][b][c] * o.val
                        + self.hess[a][b] * o.grad[c]
                        + self.hess[a][c] * o.grad[b]
                        + self.hess[b][c] * o.grad[a]
                        + self.grad[a] * o.hess[b][c]
                        + self.grad[b] * o.hess[a][c]
                        + self.grad[c] * o.hess[a][b]
                        + self.val * o.third[a][b][c];
                }
            }
        }
        r
    }

    /// Compose with a scalar function given by `f = [f(u), f'(u), f''(u), f'''(u)]`
    /// evaluated at `u = self.val` (Faa di Bruno through third order).
    pub fn chain(&self, f: [f64; 4]) -> Jet3 {
        let u = self;
        let mut r = Jet3::constant(f[0]);
        for a in 0..3 {
            r.grad[a] = f[1] * u.grad[a];
        }
        for a in 0..3 {
            for b in 0..3 {
                r.hess[a][b] = f[2] * u.grad[a] * u.grad[b] + f[1] * u.hess[a][b];
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    r.third[a][b][c] = f[3] * u.grad[a] * u.grad[b] * u.grad[c]
                        + f[2]
                            * (u.hess[a][b] * u.grad[c]
                                + u.hess[a][c] * u.grad[b]
                                + u.hess[b][c] * u.grad[a])
                        + f[1] * u.third[a][b][c];
                }
            }
        }
        r
    }

    /// `self^e` for real exponent (requires `val > 0`).
    pub fn powf(&self, e: f64) -> Jet3 {
        let u = self.val;
        let f0 = u.powf(e);
        let f1 = e * u.powf(e - 1.0);
        let f2 = e * (e - 1.0) * u.powf(e - 2.0);
        let f3 = e * (e - 1.0) * (e - 2.0) * u.powf(e - 3.0);
        self.chain([f0, f1, f2, f3])
    }

    pub fn powi(&self, n: i32) -> Jet3 {
        match n {
            0 => Jet3::constant(1.0),
            1 => *self,
            _ if n > 1 => {
                let mut r = *self;
                for _ in 1..n {
                    r = r.mul(self);
                }
                r
            }
            _ => self.recip().powi(-n),
        }
    }

    pub fn recip(&self) -> Jet3 {
        let u = self.val;
        self.chain([
            1.0 / u,
            -1.0 / (u * u),
            2.0 / (u * u * u),
            -6.0 / (u * u * u * u),
        ])
    }

    pub fn sqrt(&self) -> Jet3 {
        self.powf(0.5)
    }

    pub fn ln(&self) -> Jet3 {
        let u = self.val;
        self.chain([u.ln(), 1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u)])
    }

    pub fn cos(&self) -> Jet3 {
        let (s, c) = self.val.sin_cos();
        self.chain([c, -s, -c, s])
    }

    pub fn sin(&self) -> Jet3 {
        let (s, c) = self.val.sin_cos();
        self.chain([s, c, -s, -c])
    }

    /// Composition `self ∘ m` where `m` is the jet of a coordinate map at the
    /// base point and `self` is the jet at `m.val`. Multivariate Faa di Bruno
    /// through third order.
    pub fn compose(&self, m: &[Jet3; 3]) -> Jet3 {
        let f = self;
        let mut r = Jet3::constant(f.val);
        // first derivatives
        for a in 0..3 {
            let mut s = 0.0;
            for u in 0..3 {
                s += f.grad[u] * m[u].grad[a];
            }
            r.grad[a] = s;
        }
        // second derivatives
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for u in 0..3 {
                    for v in 0..3 {
                        s += f.hess[u][v] * m[u].grad[a] * m[v].grad[b];
                    }
                    s += f.grad[u] * m[u].hess[a][b];
                }
                r.hess[a][b] = s;
            }
        }
        // third derivatives
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let mut s = 0.0;
                    for u in 0..3 {
                        for v in 0..3 {
                            for w in 0..3 {
                                s += f.third[u][v][w]
                                    * m[u].grad[a]
                                    * m[v].grad[b]
                                    * m[w].grad[c];
                            }
                            s += f.hess[u][v]
                                * (m[u].hess[a][b] * m[v].grad[c]
                                    + m[u].hess[a][c] * m[v].grad[b]
                                    + m[u].hess[b][c] * m[v].grad[a]);
                        }
                        s += f.grad[u] * m[u].third[a][b][c];
                    }
                    r.third[a][b][c] = s;
                }
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: impl Fn([f64; 3]) -> f64, p: [f64; 3], i: usize, h: f64) -> f64 {
        let mut pp = p;
        let mut pm = p;
        pp[i] += h;
        pm[i] -= h;
        (f(pp) - f(pm)) / (2.0 * h)
    }

    #[test]
    fn jet_of_sigma_inverse_matches_finite_differences() {
        // w = (1+|p|^2)^{-1/2}
        let w = |p: [f64; 3]| (1.0 + p.iter().map(|x| x * x).sum::<f64>()).powf(-0.5);
        let p = [0.7, -1.3, 2.1];
        let jet = Jet3::radius2(p, [0.0; 3])
            .add(&Jet3::constant(1.0))
            .powf(-0.5);
        assert!((jet.val - w(p)).abs() < 1e-15);
        for i in 0..3 {
            let g = fd_grad(w, p, i, 1e-5);
            assert!((jet.grad[i] - g).abs() < 1e-9, "grad[{i}]");
        }
        // spot check one mixed second derivative by nesting
        let dw0 = |q: [f64; 3]| {
            Jet3::radius2(q, [0.0; 3])
                .add(&Jet3::constant(1.0))
                .powf(-0.5)
                .grad[0]
        };
        let h01 = fd_grad(dw0, p, 1, 1e-5);
        assert!((jet.hess[0][1] - h01).abs() < 1e-9);
        // and one third derivative
        let h00 = |q: [f64; 3]| {
            Jet3::radius2(q, [0.0; 3])
                .add(&Jet3::constant(1.0))
                .powf(-0.5)
                .hess[0][0]
        };
        let t001 = fd_grad(h00, p, 1, 1e-5);
        assert!((jet.third[0][0][1] - t001).abs() < 1e-8);
    }

    #[test]
    fn product_and_chain_agree_on_powers() {
        let p = [0.3, 0.4, -0.2];
        let u = Jet3::radius2(p, [0.1, 0.0, 0.0]).add(&Jet3::constant(1.0));
        let via_mul = u.mul(&u).mul(&u);
        let via_pow = u.powi(3);
        assert!((via_mul.val - via_pow.val).abs() < 1e-14);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    assert!((via_mul.third[a][b][c] - via_pow.third[a][b][c]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn compose_matches_direct_evaluation() {
        // f(z) = (1+|z|^2)^{-1/2} composed with the Kelvin map z = x/|x|^2.
        let x = [0.4, -0.3, 0.5];
        let r2 = Jet3::radius2(x, [0.0; 3]);
        let winv = r2.recip();
        let m = [
            Jet3::coordinate(x, 0).mul(&winv),
            Jet3::coordinate(x, 1).mul(&winv),
            Jet3::coordinate(x, 2).mul(&winv),
        ];
        let z = [m[0].val, m[1].val, m[2].val];
        let f_at_z = Jet3::radius2(z, [0.0; 3])
            .add(&Jet3::constant(1.0))
            .powf(-0.5);
        let comp = f_at_z.compose(&m);

        // direct closure of the composite
        let direct = |x: [f64; 3]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let z = [x[0] / r2, x[1] / r2, x[2] / r2];
            (1.0 + z.iter().map(|v| v * v).sum::<f64>()).powf(-0.5)
        };
        assert!((comp.val - direct(x)).abs() < 1e-15);
        for i in 0..3 {
            let g = fd_grad(direct, x, i, 1e-6);
            assert!((comp.grad[i] - g).abs() < 1e-8, "grad[{i}]");
        }
    }
}
