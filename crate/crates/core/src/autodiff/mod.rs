//! Reverse-mode differentiation of scalar losses over flat parameter vectors.
//!
//! A loss is written once as a [`ScalarField`], generic over [`Scalar`].
//! [`grad`] evaluates it over tape variables; [`hvp`] evaluates it over tape
//! variables carrying [`Dual`] values (forward-over-reverse), so the tangent
//! part of the resulting gradient is the Hessian-vector product. The Hessian
//! is never formed.

mod scalar;
mod tape;

pub mod fd;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

pub use scalar::{Dual, Scalar};
pub use tape::{Tape, Var};

use crate::error::{check_dim, check_finite, Error, Result};

/// Flat parameter vector `u ∈ ℝᵈ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Rejects empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("parameter vector must be non-empty"));
        }
        check_finite("parameter", &values)?;
        Ok(ParamVector(values))
    }

    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A real-valued map `ℝᵈ → ℝ`, closed over whatever data it needs.
///
/// `eval` must be a pure function of `u`; the same input yields a
/// bit-identical output, and `dim` never changes.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;

    fn eval<S: Scalar>(&self, u: &[S]) -> S;
}

impl<F: ScalarField + ?Sized> ScalarField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval<S: Scalar>(&self, u: &[S]) -> S {
        (**self).eval(u)
    }
}

/// Plain evaluation with an overflow check.
pub fn value<F: ScalarField>(f: &F, u: &[f64]) -> Result<f64> {
    check_dim("field input", f.dim(), u.len())?;
    let v = f.eval(u);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite("field value", v))
    }
}

/// `∇f(u)`.
pub fn grad<F: ScalarField>(f: &F, u: &[f64]) -> Result<ParamVector> {
    value_and_grad(f, u).map(|(_, g)| g)
}

/// `(f(u), ∇f(u))` from a single reverse pass.
pub fn value_and_grad<F: ScalarField>(f: &F, u: &[f64]) -> Result<(f64, ParamVector)> {
    check_dim("gradient input", f.dim(), u.len())?;
    check_finite("gradient input", u)?;
    let tape = Tape::<f64>::new();
    let x = tape.vars(u.iter().copied());
    let y = f.eval(&x);
    if !y.val().is_finite() {
        return Err(Error::non_finite("field value", y.val()));
    }
    let mut adj = tape.adjoints(&y);
    adj.truncate(u.len());
    check_finite("gradient", &adj)?;
    Ok((y.val(), ParamVector(adj)))
}

/// Exact Hessian-vector product `∇²f(u)·v`.
pub fn hvp<F: ScalarField>(f: &F, u: &[f64], v: &[f64]) -> Result<ParamVector> {
    check_dim("hvp point", f.dim(), u.len())?;
    check_dim("hvp direction", f.dim(), v.len())?;
    check_finite("hvp point", u)?;
    check_finite("hvp direction", v)?;
    let tape = Tape::<Dual>::new();
    let x = tape.vars(u.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)));
    let y = f.eval(&x);
    if !y.value().is_finite() {
        return Err(Error::non_finite("field value", y.value()));
    }
    let adj = tape.adjoints(&y);
    let out: Vec<f64> = adj[..u.len()].iter().map(|d| d.eps).collect();
    check_finite("hessian-vector product", &out)?;
    Ok(ParamVector(out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `½‖u − c‖²`, scaled by `scale`. Used as a closed-form test field.
#[derive(Debug, Clone)]
pub struct HalfSquaredNorm {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl HalfSquaredNorm {
    pub fn new(d: usize) -> Self {
        HalfSquaredNorm {
            center: vec![0.0; d],
            scale: 1.0,
        }
    }
}

impl ScalarField for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval<S: Scalar>(&self, u: &[S]) -> S {
        let r: Vec<S> = u
            .iter()
            .zip(&self.center)
            .map(|(&x, &c)| x - S::from_f64(c))
            .collect();
        S::from_f64(0.5 * self.scale) * S::dot(&r, &r)
    }
}

/// `½ (u − c)ᵀ A (u − c) + bᵀu` with a dense symmetric `A` (row-major).
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub matrix: Vec<f64>,
    pub center: Vec<f64>,
    pub linear: Vec<f64>,
}

impl Quadratic {
    pub fn new(matrix: Vec<f64>, center: Vec<f64>, linear: Vec<f64>) -> Result<Self> {
        let d = center.len();
        check_dim("quadratic matrix", d * d, matrix.len())?;
        check_dim("quadratic linear term", d, linear.len())?;
        Ok(Quadratic {
            matrix,
            center,
            linear,
        })
    }

    /// Purely linear field `bᵀu` (zero Hessian).
    pub fn linear(b: Vec<f64>) -> Self {
        let d = b.len();
        Quadratic {
            matrix: vec![0.0; d * d],
            center: vec![0.0; d],
            linear: b,
        }
    }
}

impl ScalarField for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval<S: Scalar>(&self, u: &[S]) -> S {
        let d = self.center.len();
        let r: Vec<S> = u
            .iter()
            .zip(&self.center)
            .map(|(&x, &c)| x - S::from_f64(c))
            .collect();
        let mut quad = S::zero();
        for i in 0..d {
            let row: Vec<S> = self.matrix[i * d..(i + 1) * d]
                .iter()
                .map(|&a| S::from_f64(a))
                .collect();
            quad = quad + r[i] * S::dot(&row, &r);
        }
        let b: Vec<S> = self.linear.iter().map(|&c| S::from_f64(c)).collect();
        S::from_f64(0.5) * quad + S::dot(&b, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Cubic;

    // u₁² u₂
    impl ScalarField for Cubic {
        fn dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, u: &[S]) -> S {
            u[0] * u[0] * u[1]
        }
    }

    struct Constant;

    impl ScalarField for Constant {
        fn dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, _u: &[S]) -> S {
            S::from_f64(7.0)
        }
    }

    struct Blowup;

    impl ScalarField for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, u: &[S]) -> S {
            (u[0] * S::from_f64(1e3)).exp()
        }
    }

    #[test]
    fn grad_examples() {
        let g = grad(&HalfSquaredNorm::new(2), &[1.0, 2.0]).unwrap();
        assert_eq!(&*g, &[1.0, 2.0]);
        // symbolic: (2 u₁ u₂, u₁²) at (1, 2)
        let g = grad(&Cubic, &[1.0, 2.0]).unwrap();
        assert_eq!(&*g, &[4.0, 1.0]);
        let g = grad(&Constant, &[3.0, -1.0]).unwrap();
        assert_eq!(&*g, &[0.0, 0.0]);
    }

    #[test]
    fn hvp_examples() {
        let h = hvp(&HalfSquaredNorm::new(2), &[0.3, -4.0], &[1.5, -2.5]).unwrap();
        assert_eq!(&*h, &[1.5, -2.5]);
        // symbolic Hessian [[2u₂, 2u₁], [2u₁, 0]] at (1, 2) times (1, 0)
        let h = hvp(&Cubic, &[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(&*h, &[4.0, 2.0]);
        let h = hvp(&Cubic, &[0.4, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(&*h, &[0.0, 0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let err = grad(&Blowup, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(err.to_string().contains("inf"));
        let err = hvp(&Blowup, &[1.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            grad(&Cubic, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            hvp(&Cubic, &[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
        assert!(ParamVector::new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn quadratic_gradient_and_hessian() {
        let q = Quadratic::new(vec![2.0, 1.0, 1.0, 3.0], vec![1.0, -1.0], vec![0.5, 0.0]).unwrap();
        // ∇ = A(u − c) + b
        let g = grad(&q, &[0.0, 0.0]).unwrap();
        assert!((g[0] - (-2.0 + 1.0 + 0.5)).abs() < 1e-15);
        assert!((g[1] - (-1.0 + 3.0)).abs() < 1e-15);
        let h = hvp(&q, &[0.2, 0.1], &[1.0, 2.0]).unwrap();
        assert_eq!(&*h, &[4.0, 7.0]);
    }
}
