use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Wengert list for one reverse-mode pass.
///
/// Node `i` owns the edge range `edges[starts[i]..starts[i + 1]]`; each edge
/// is `(parent, ∂node/∂parent)`. Values are of type `T`, so a tape over
/// [`Dual`](super::Dual) yields gradients together with their directional
/// derivatives.
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

struct Inner<T> {
    starts: Vec<u32>,
    edges: Vec<(u32, T)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                starts: vec![0],
                edges: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn var(&self, value: T) -> Var<'_, T> {
        let idx = self.push(std::iter::empty());
        Var {
            val: value,
            node: Some((self, idx)),
        }
    }

    pub fn vars(&self, values: impl IntoIterator<Item = T>) -> Vec<Var<'_, T>> {
        values.into_iter().map(|v| self.var(v)).collect()
    }

    fn push(&self, edges: impl IntoIterator<Item = (u32, T)>) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let idx = (inner.starts.len() - 1) as u32;
        inner.edges.extend(edges);
        let end = inner.edges.len() as u32;
        inner.starts.push(end);
        idx
    }

    /// Adjoints of every node for the given output, seeded with `d out = 1`.
    pub fn adjoints(&self, output: &Var<'_, T>) -> Vec<T> {
        let inner = self.inner.borrow();
        let n = inner.starts.len() - 1;
        let mut adj = vec![T::zero(); n];
        let Some((tape, out)) = output.node else {
            return adj;
        };
        debug_assert!(std::ptr::eq(tape, self), "output recorded on another tape");
        adj[out as usize] = T::from_f64(1.0);
        for i in (0..=out as usize).rev() {
            let a = adj[i];
            if a.is_zero() {
                continue;
            }
            let (lo, hi) = (inner.starts[i] as usize, inner.starts[i + 1] as usize);
            for &(p, w) in &inner.edges[lo..hi] {
                adj[p as usize] = adj[p as usize] + a * w;
            }
        }
        adj
    }
}

/// A value recorded on a [`Tape`], or a constant when `node` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    val: T,
    node: Option<(&'t Tape<T>, u32)>,
}

impl<T: fmt::Debug> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some((_, i)) => write!(f, "Var#{i}({:?})", self.val),
            None => write!(f, "Const({:?})", self.val),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn constant(val: T) -> Self {
        Var { val, node: None }
    }

    pub fn val(&self) -> T {
        self.val
    }

    /// Tape index, `None` for constants.
    pub fn index(&self) -> Option<usize> {
        self.node.map(|(_, i)| i as usize)
    }

    #[inline]
    fn unary(self, val: T, partial: T) -> Self {
        match self.node {
            None => Var::constant(val),
            Some((tape, i)) => Var {
                val,
                node: Some((tape, tape.push([(i, partial)]))),
            },
        }
    }

    #[inline]
    fn binary(a: Self, b: Self, val: T, da: T, db: T) -> Self {
        let tape = match (a.node, b.node) {
            (None, None) => return Var::constant(val),
            (Some((t, _)), _) | (None, Some((t, _))) => t,
        };
        let edges = a
            .node
            .map(|(_, i)| (i, da))
            .into_iter()
            .chain(b.node.map(|(_, i)| (i, db)));
        Var {
            val,
            node: Some((tape, tape.push(edges))),
        }
    }
}

impl<T: Scalar> Add for Var<'_, T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let one = T::from_f64(1.0);
        Var::binary(self, rhs, self.val + rhs.val, one, one)
    }
}

impl<T: Scalar> Sub for Var<'_, T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Var::binary(
            self,
            rhs,
            self.val - rhs.val,
            T::from_f64(1.0),
            T::from_f64(-1.0),
        )
    }
}

impl<T: Scalar> Mul for Var<'_, T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<T: Scalar> Div for Var<'_, T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        let inv = T::from_f64(1.0) / rhs.val;
        Var::binary(self, rhs, q, inv, -q * inv)
    }
}

impl<T: Scalar> Neg for Var<'_, T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, T::from_f64(-1.0))
    }
}

impl<T: Scalar> Scalar for Var<'_, T> {
    fn from_f64(c: f64) -> Self {
        Var::constant(T::from_f64(c))
    }
    fn value(&self) -> f64 {
        self.val.value()
    }
    fn is_zero(&self) -> bool {
        self.node.is_none() && self.val.is_zero()
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, T::from_f64(1.0) - t * t)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), T::from_f64(1.0) / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, T::from_f64(0.5) / s)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Var::constant(T::from_f64(1.0));
        }
        let d = T::from_f64(f64::from(n)) * self.val.powi(n - 1);
        self.unary(self.val.powi(n), d)
    }

    /// Records the whole inner product as a single node. Terms whose other
    /// factor is an exact constant zero (one-hot inputs) contribute no edge.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut val = T::zero();
        let mut tape = None;
        for (x, y) in a.iter().zip(b) {
            if x.is_zero() || y.is_zero() {
                continue;
            }
            val = val + x.val * y.val;
            tape = tape.or(x.node.map(|n| n.0)).or(y.node.map(|n| n.0));
        }
        let Some(tape) = tape else {
            return Var::constant(val);
        };
        let edges = a
            .iter()
            .zip(b)
            .filter(|(x, y)| !x.is_zero() && !y.is_zero())
            .flat_map(|(x, y)| {
                let ex = x.node.map(|(_, i)| (i, y.val));
                let ey = y.node.map(|(_, i)| (i, x.val));
                ex.into_iter().chain(ey)
            });
        Var {
            val,
            node: Some((tape, tape.push(edges))),
        }
    }

    fn sum(xs: &[Self]) -> Self {
        let mut val = T::zero();
        let mut tape = None;
        for x in xs {
            val = val + x.val;
            tape = tape.or(x.node.map(|n| n.0));
        }
        let Some(tape) = tape else {
            return Var::constant(val);
        };
        let one = T::from_f64(1.0);
        let edges = xs.iter().filter_map(|x| x.node.map(|(_, i)| (i, one)));
        Var {
            val,
            node: Some((tape, tape.push(edges))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_stay_off_the_tape() {
        let tape = Tape::<f64>::new();
        let x = tape.var(2.0);
        let c = Var::from_f64(3.0);
        let y = c * c + x;
        assert_eq!(tape.len(), 2);
        assert_eq!(y.val(), 11.0);
    }

    #[test]
    fn dot_records_one_node_and_skips_zero_constants() {
        let tape = Tape::<f64>::new();
        let w = tape.vars([1.0, 2.0, 3.0]);
        let x = [Var::from_f64(0.0), Var::from_f64(1.0), Var::from_f64(0.0)];
        let y = Scalar::dot(&w, &x);
        assert_eq!(y.val(), 2.0);
        assert_eq!(tape.len(), 4);
        let adj = tape.adjoints(&y);
        assert_eq!(&adj[..3], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.var(3.0);
        let y = x * x + x.sin();
        let adj = tape.adjoints(&y);
        assert!((adj[0] - (6.0 + 3.0f64.cos())).abs() < 1e-15);
    }
}
