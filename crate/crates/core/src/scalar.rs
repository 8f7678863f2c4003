//! Forward-mode dual numbers, nestable for higher derivatives.
//!
//! The evaluator is generic over `Scalar`; `Dual<f64>` carries first partials,
//! deeper nestings appear when a derivative node sits inside a derivative
//! context. Nesting is capped at a fixed depth through the `Lifted` chain so
//! the generic evaluator terminates at monomorphization; the cap is far above
//! anything the calculus layer produces. Guard checks happen in the evaluator
//! on the primal value, so the arithmetic here can assume its inputs are
//! clear of the singular loci.

pub trait Scalar: Clone {
    /// One more derivative layer; `Lifted = Self` at the saturation cap.
    type Lifted: Scalar;
    const SATURATED: bool;

    /// Innermost f64 value (the actual point on the chart).
    fn primal(&self) -> f64;
    /// Constant with the same dual shape as `proto`.
    fn constant(c: f64, proto: &Self) -> Self;
    /// Wrap in a width-1 derivative layer, seeded when `active`.
    fn lift(&self, active: bool) -> Self::Lifted;
    /// Extract the single derivative slot of a lifted value.
    fn lower(l: Self::Lifted) -> Self;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn powi(&self, k: i32) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn sgn(&self) -> Self;
}

impl Scalar for f64 {
    type Lifted = Dual<f64>;
    const SATURATED: bool = false;

    fn primal(&self) -> f64 {
        *self
    }
    fn constant(c: f64, _proto: &Self) -> Self {
        c
    }
    fn lift(&self, active: bool) -> Dual<f64> {
        Dual::seeded(*self, 1, active.then_some(0))
    }
    fn lower(l: Dual<f64>) -> f64 {
        l.grad[0]
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn powi(&self, k: i32) -> Self {
        f64::powi(*self, k)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sgn(&self) -> Self {
        if *self >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Value plus directional derivatives (one slot per seeded direction).
#[derive(Debug, Clone)]
pub struct Dual<S> {
    pub re: S,
    pub grad: Vec<S>,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, grad: Vec<S>) -> Self {
        Dual { re, grad }
    }

    /// Seed a point for a gradient of width `width`, direction `dir`.
    pub fn seeded(re: S, width: usize, dir: Option<usize>) -> Self {
        let grad = (0..width)
            .map(|i| {
                let v = if Some(i) == dir { 1.0 } else { 0.0 };
                S::constant(v, &re)
            })
            .collect();
        Dual { re, grad }
    }

    fn zip(&self, o: &Self, f: impl Fn(&S, &S) -> S) -> Vec<S> {
        debug_assert_eq!(self.grad.len(), o.grad.len());
        self.grad.iter().zip(&o.grad).map(|(a, b)| f(a, b)).collect()
    }

    fn map(&self, f: impl Fn(&S) -> S) -> Vec<S> {
        self.grad.iter().map(f).collect()
    }

    fn c(c: f64, proto: &Self) -> Self {
        let re = S::constant(c, &proto.re);
        let grad = proto.grad.iter().map(|g| S::constant(0.0, g)).collect();
        Dual { re, grad }
    }

    fn op_add(&self, o: &Self) -> Self {
        Dual::new(self.re.add(&o.re), self.zip(o, |a, b| a.add(b)))
    }

    fn op_sub(&self, o: &Self) -> Self {
        Dual::new(self.re.sub(&o.re), self.zip(o, |a, b| a.sub(b)))
    }

    fn op_neg(&self) -> Self {
        Dual::new(self.re.neg(), self.map(|a| a.neg()))
    }

    fn op_mul(&self, o: &Self) -> Self {
        let grad = self.zip(o, |a, b| a.mul(&o.re).add(&b.mul(&self.re)));
        Dual::new(self.re.mul(&o.re), grad)
    }

    fn op_div(&self, o: &Self) -> Self {
        let re = self.re.div(&o.re);
        let grad = self.zip(o, |a, b| a.sub(&re.mul(b)).div(&o.re));
        Dual::new(re, grad)
    }

    fn op_powi(&self, k: i32) -> Self {
        if k == 0 {
            return Self::c(1.0, self);
        }
        let dcoef = S::constant(k as f64, &self.re).mul(&self.re.powi(k - 1));
        Dual::new(self.re.powi(k), self.map(|a| a.mul(&dcoef)))
    }

    fn op_sin(&self) -> Self {
        let c = self.re.cos();
        Dual::new(self.re.sin(), self.map(|a| a.mul(&c)))
    }

    fn op_cos(&self) -> Self {
        let s = self.re.sin().neg();
        Dual::new(self.re.cos(), self.map(|a| a.mul(&s)))
    }

    fn op_exp(&self) -> Self {
        let e = self.re.exp();
        Dual::new(e.clone(), self.map(|a| a.mul(&e)))
    }

    fn op_sqrt(&self) -> Self {
        let r = self.re.sqrt();
        let d = r.mul(&S::constant(2.0, &r));
        Dual::new(r.clone(), self.map(|a| a.div(&d)))
    }

    fn op_abs(&self) -> Self {
        if self.re.primal() >= 0.0 {
            self.clone()
        } else {
            self.op_neg()
        }
    }

    fn op_sgn(&self) -> Self {
        Self::c(if self.re.primal() >= 0.0 { 1.0 } else { -1.0 }, self)
    }
}

/// One `Scalar` impl per nesting level; the chain ends in a self-lifting cap
/// so the generic evaluator has finitely many instantiations.
macro_rules! dual_scalar {
    ($inner:ty => lifted $lifted:ty) => {
        impl Scalar for Dual<$inner> {
            type Lifted = $lifted;
            const SATURATED: bool = false;
            dual_scalar!(@body);
            fn lift(&self, active: bool) -> Self::Lifted {
                Dual::seeded(self.clone(), 1, active.then_some(0))
            }
            fn lower(l: Self::Lifted) -> Self {
                l.grad.into_iter().next().expect("width-1 dual")
            }
        }
    };
    ($inner:ty => cap) => {
        impl Scalar for Dual<$inner> {
            type Lifted = Dual<$inner>;
            const SATURATED: bool = true;
            dual_scalar!(@body);
            fn lift(&self, _active: bool) -> Self::Lifted {
                unreachable!("lift past the dual depth cap")
            }
            fn lower(_l: Self::Lifted) -> Self {
                unreachable!("lower past the dual depth cap")
            }
        }
    };
    (@body) => {
        fn primal(&self) -> f64 {
            self.re.primal()
        }
        fn constant(c: f64, proto: &Self) -> Self {
            Self::c(c, proto)
        }
        fn add(&self, o: &Self) -> Self {
            self.op_add(o)
        }
        fn sub(&self, o: &Self) -> Self {
            self.op_sub(o)
        }
        fn neg(&self) -> Self {
            self.op_neg()
        }
        fn mul(&self, o: &Self) -> Self {
            self.op_mul(o)
        }
        fn div(&self, o: &Self) -> Self {
            self.op_div(o)
        }
        fn powi(&self, k: i32) -> Self {
            self.op_powi(k)
        }
        fn sin(&self) -> Self {
            self.op_sin()
        }
        fn cos(&self) -> Self {
            self.op_cos()
        }
        fn exp(&self) -> Self {
            self.op_exp()
        }
        fn sqrt(&self) -> Self {
            self.op_sqrt()
        }
        fn abs(&self) -> Self {
            self.op_abs()
        }
        fn sgn(&self) -> Self {
            self.op_sgn()
        }
    };
}

type D1 = Dual<f64>;
type D2 = Dual<D1>;
type D3 = Dual<D2>;
type D4 = Dual<D3>;
type D5 = Dual<D4>;

dual_scalar!(f64 => lifted D2);
dual_scalar!(D1 => lifted D3);
dual_scalar!(D2 => lifted D4);
dual_scalar!(D3 => lifted D5);
dual_scalar!(D4 => cap);

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(x: f64) -> Dual<f64> {
        Dual::seeded(x, 1, Some(0))
    }

    #[test]
    fn first_derivatives() {
        // d/dx [x^2 * sin(x)] = 2x sin x + x^2 cos x
        let x = d1(0.7);
        let y = x.powi(2).mul(&x.sin());
        let expect = 2.0 * 0.7 * 0.7f64.sin() + 0.49 * 0.7f64.cos();
        assert!((y.grad[0] - expect).abs() < 1e-15);

        // quotient rule at a generic point
        let q = x.sin().div(&x.cos()); // tan
        assert!((q.grad[0] - 1.0 / 0.7f64.cos().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // f = exp(2x): f'' = 4 exp(2x)
        let inner = d1(0.3);
        let x: Dual<Dual<f64>> = Dual::seeded(inner, 1, Some(0));
        let two = Scalar::constant(2.0, &x);
        let f = x.mul(&two).exp();
        let second = f.grad[0].grad[0];
        assert!((second - 4.0 * (0.6f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn lift_lower_round_trip() {
        let x = 0.4f64;
        let l = x.lift(true);
        assert_eq!(l.re, 0.4);
        assert_eq!(f64::lower(l.sin()), 0.4f64.cos());
        assert!(!<f64 as Scalar>::SATURATED);
        assert!(D5::SATURATED);
    }

    #[test]
    fn abs_and_sgn_away_from_zero() {
        let x = d1(-0.5);
        let a = x.abs();
        assert_eq!(a.re, 0.5);
        assert_eq!(a.grad[0], -1.0);
        let s = x.sgn();
        assert_eq!(s.re, -1.0);
        assert_eq!(s.grad[0], 0.0);
    }
}
