use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{Field, Real};

#[derive(Clone, Copy)]
struct Node<T> {
    deps: [usize; 2],
    partials: [T; 2],
    arity: u8,
}

/// Reverse-mode tape. Every operation on a [`Var`] appends one node holding
/// the local partial derivatives with respect to its (at most two) inputs.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Field> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Field> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    /// A new independent variable.
    pub fn var(&self, value: T) -> Var<'_, T> {
        self.push(value, 0, [0, 0], [T::from_f64(0.0); 2])
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: T, arity: u8, deps: [usize; 2], partials: [T; 2]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { deps, partials, arity });
        Var { tape: self, index, value }
    }

    /// Adjoints `∂out/∂w` for each of `wrt`.
    pub fn gradient(&self, out: &Var<'_, T>, wrt: &[Var<'_, T>]) -> Vec<T> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![T::from_f64(0.0); out.index + 1];
        adj[out.index] = T::from_f64(1.0);
        for i in (0..=out.index).rev() {
            let node = nodes[i];
            let a = adj[i];
            for k in 0..node.arity as usize {
                let dep = node.deps[k];
                adj[dep] = adj[dep] + node.partials[k] * a;
            }
        }
        wrt.iter()
            .map(|v| if v.index <= out.index { adj[v.index] } else { T::from_f64(0.0) })
            .collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    index: usize,
    value: T,
}

impl<T: fmt::Debug> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.index, self.value)
    }
}

impl<'t, T: Field> Var<'t, T> {
    pub fn primal(&self) -> T {
        self.value
    }

    fn unary(self, value: T, partial: T) -> Self {
        let zero = T::from_f64(0.0);
        self.tape.push(value, 1, [self.index, 0], [partial, zero])
    }

    fn binary(self, o: Self, value: T, pa: T, pb: T) -> Self {
        debug_assert!(std::ptr::eq(self.tape, o.tape), "variables from different tapes");
        self.tape.push(value, 2, [self.index, o.index], [pa, pb])
    }
}

impl<'t, T: Field> Add for Var<'t, T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let one = T::from_f64(1.0);
        self.binary(o, self.value + o.value, one, one)
    }
}

impl<'t, T: Field> Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.value - o.value, T::from_f64(1.0), T::from_f64(-1.0))
    }
}

impl<'t, T: Field> Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.value * o.value, o.value, self.value)
    }
}

impl<'t, T: Field> Div for Var<'t, T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        let inv = T::from_f64(1.0) / o.value;
        self.binary(o, q, inv, -(q * inv))
    }
}

impl<'t, T: Field> Neg for Var<'t, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, T::from_f64(-1.0))
    }
}

impl<'t, T: Field> Real for Var<'t, T> {
    fn constant(&self, c: f64) -> Self {
        self.tape.var(T::from_f64(c))
    }
    fn value(&self) -> f64 {
        self.value.value()
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), T::from_f64(1.0) / self.value)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, T::from_f64(1.0) - t * t)
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(s, T::from_f64(0.5) / s)
    }
    fn powi(self, n: i32) -> Self {
        self.unary(self.value.powi(n), self.value.powi(n - 1).scale(n as f64))
    }
    fn scale(self, c: f64) -> Self {
        self.unary(self.value.scale(c), T::from_f64(c))
    }
    fn offset(self, c: f64) -> Self {
        self.unary(self.value.offset(c), T::from_f64(1.0))
    }
}
