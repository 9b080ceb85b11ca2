//! Forward-mode dual numbers with a runtime number of derivative slots.
//!
//! A dual carrying an empty slot vector is a constant; binary operations
//! pad the shorter operand with zeros, so constants never need to know
//! how many slots the computation is seeded with.

/// Value plus first derivatives with respect to the seeded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub derivs: Vec<f64>,
}

impl Dual {
    pub fn constant(value: f64) -> Self {
        Dual {
            value,
            derivs: Vec::new(),
        }
    }

    /// Independent variable occupying `slot` of `slots`.
    pub fn variable(value: f64, slot: usize, slots: usize) -> Self {
        let mut derivs = vec![0.0; slots];
        derivs[slot] = 1.0;
        Dual { value, derivs }
    }

    pub fn is_constant(&self) -> bool {
        self.derivs.iter().all(|d| *d == 0.0)
    }

    /// Derivative in `slot`, zero for slots beyond the stored length.
    pub fn deriv(&self, slot: usize) -> f64 {
        self.derivs.get(slot).copied().unwrap_or(0.0)
    }

    /// Derivative vector padded to `slots` entries.
    pub fn gradient(&self, slots: usize) -> Vec<f64> {
        (0..slots).map(|i| self.deriv(i)).collect()
    }

    fn chain(&self, value: f64, slope: f64) -> Dual {
        Dual {
            value,
            derivs: self.derivs.iter().map(|d| slope * d).collect(),
        }
    }

    /// `a * self' + b * other'` slot by slot.
    fn combine(&self, a: f64, other: &Dual, b: f64, value: f64) -> Dual {
        let n = self.derivs.len().max(other.derivs.len());
        let derivs = (0..n)
            .map(|i| a * self.deriv(i) + b * other.deriv(i))
            .collect();
        Dual { value, derivs }
    }

    pub fn add(&self, o: &Dual) -> Dual {
        self.combine(1.0, o, 1.0, self.value + o.value)
    }

    pub fn sub(&self, o: &Dual) -> Dual {
        self.combine(1.0, o, -1.0, self.value - o.value)
    }

    pub fn mul(&self, o: &Dual) -> Dual {
        self.combine(o.value, o, self.value, self.value * o.value)
    }

    pub fn div(&self, o: &Dual) -> Dual {
        let inv = 1.0 / o.value;
        self.combine(inv, o, -self.value * inv * inv, self.value / o.value)
    }

    pub fn neg(&self) -> Dual {
        self.chain(-self.value, -1.0)
    }

    pub fn powi(&self, n: i32) -> Dual {
        let slope = if n == 0 {
            0.0
        } else {
            f64::from(n) * self.value.powi(n - 1)
        };
        self.chain(self.value.powi(n), slope)
    }

    /// General power `self^o` for a positive base.
    pub fn powf(&self, o: &Dual) -> Dual {
        let value = self.value.powf(o.value);
        let d_base = o.value * self.value.powf(o.value - 1.0);
        let d_exp = value * self.value.ln();
        self.combine(d_base, o, d_exp, value)
    }

    pub fn sin(&self) -> Dual {
        self.chain(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> Dual {
        self.chain(self.value.cos(), -self.value.sin())
    }

    pub fn exp(&self) -> Dual {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn sqrt(&self) -> Dual {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn abs(&self) -> Dual {
        let sign = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.value.abs(), sign)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_have_zero_slots() {
        let c = Dual::constant(3.0);
        assert!(c.is_constant());
        assert_eq!(c.gradient(3), vec![0.0; 3]);
        let x = Dual::variable(2.0, 1, 3);
        let y = c.mul(&x);
        assert_eq!(y.value, 6.0);
        assert_eq!(y.gradient(3), vec![0.0, 3.0, 0.0]);
    }

    #[test]
    fn product_rule_pointwise() {
        // f = sin(x) * y, g = exp(x*y); check d(fg) = f dg + g df
        for &(x0, y0) in &[(0.3, -1.2), (1.7, 0.4), (-2.0, 2.0)] {
            let x = Dual::variable(x0, 0, 2);
            let y = Dual::variable(y0, 1, 2);
            let f = x.sin().mul(&y);
            let g = x.mul(&y).exp();
            let fg = f.mul(&g);
            for s in 0..2 {
                let expect = f.value * g.deriv(s) + g.value * f.deriv(s);
                assert!((fg.deriv(s) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn chain_rule_pointwise() {
        // h(u) = u^3 with u = cos(x)^2: h' = 3u^2 * (-2 cos x sin x)
        for &x0 in &[0.1, 0.9, -1.4] {
            let x = Dual::variable(x0, 0, 1);
            let u = x.cos().powi(2);
            let h = u.powi(3);
            let expect = 3.0 * u.value.powi(2) * (-2.0 * x0.cos() * x0.sin());
            assert!((h.deriv(0) - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn general_power_matches_exp_log() {
        let x = Dual::variable(1.3, 0, 2);
        let y = Dual::variable(0.7, 1, 2);
        let p = x.powf(&y);
        assert!((p.value - (0.7 * 1.3f64.ln()).exp()).abs() < 1e-14);
        assert!((p.deriv(0) - 0.7 * 1.3f64.powf(-0.3)).abs() < 1e-12);
        assert!((p.deriv(1) - p.value * 1.3f64.ln()).abs() < 1e-12);
    }
}
