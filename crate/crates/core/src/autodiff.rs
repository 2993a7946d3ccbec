//! Tape-based reverse-mode differentiation over real matrices and complex
//! square matrices.
//!
//! Gradients of complex nodes use the convention `G = dL/dRe + i dL/dIm`, so
//! a first-order change of the (real) root is `dL = Re sum_ij conj(G_ij) dX_ij`.
//! With that convention `Y = A B` gives `G_A = G_Y B^dagger`, `G_B = A^dagger G_Y`.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix, LinalgError, C64, I, ONE, ZERO};

/// Eigenvalue gaps below this use the derivative limit in the expm adjoint.
pub const DEGENERATE_GAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("backward root must be a real 1x1 node, got {0}")]
    NonScalarRoot(String),
    #[error("node {0} is not recorded on this tape")]
    UnknownNode(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Array2<f64>),
    Complex(ComplexMatrix),
}

impl Value {
    pub fn as_real(&self) -> &Array2<f64> {
        match self {
            Value::Real(a) => a,
            Value::Complex(_) => panic!("expected a real node"),
        }
    }

    pub fn as_complex(&self) -> &ComplexMatrix {
        match self {
            Value::Complex(m) => m,
            Value::Real(_) => panic!("expected a complex node"),
        }
    }

    fn describe(&self) -> String {
        match self {
            Value::Real(a) => format!("real {}x{}", a.nrows(), a.ncols()),
            Value::Complex(m) => format!("complex {0}x{0}", m.dim()),
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Real(a) => Value::Real(Array2::zeros(a.raw_dim())),
            Value::Complex(m) => Value::Complex(ComplexMatrix::zeros(m.dim())),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// `x W^T + b` with `x: B x in`, `W: out x in`, `b: 1 x out`.
    Linear { x: Var, w: Var, b: Var },
    Tanh(Var),
    /// Row of a real matrix read as `[re(d*d) | im(d*d)]`, row-major.
    RowToComplex { x: Var, row: usize },
    /// `sum_k x[row, k] P_k`.
    RowCombination { x: Var, row: usize, basis: Arc<[ComplexMatrix]> },
    MatMul(Var, Var),
    Adjoint(Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x - C` for a constant `C`.
    SubConst(Var),
    Scale(Var, C64),
    WeightedSum(Vec<(Var, C64)>),
    Trace(Var),
    /// `|z|` of a 1x1 complex node.
    Abs(Var),
    /// `|z|^2` of a 1x1 complex node.
    AbsSqr(Var),
    L1(Var),
    /// `U rho U^dagger` with constant Hermitian `rho`.
    EvolveState { u: Var, rho: ComplexMatrix },
    /// `exp(-i s herm(H))`; keeps the eigendecomposition for the adjoint.
    Expm { h: Var, s: f64, evals: Vec<f64>, vecs: ComplexMatrix },
    SumScalars(Vec<Var>),
    /// Sum of every entry of a real node.
    SumAll(Var),
    ScaleReal(Var, f64),
}

struct Node {
    value: Value,
    op: Op,
}

/// Record of primitive operations with cached forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Value> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a real node; zeros-shaped `None` means no dependence.
    pub fn real(&self, v: Var) -> Option<&Array2<f64>> {
        self.get(v).map(Value::as_real)
    }

    pub fn complex(&self, v: Var) -> Option<&ComplexMatrix> {
        self.get(v).map(Value::as_complex)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn real(&self, v: Var) -> &Array2<f64> {
        self.value(v).as_real()
    }

    pub fn complex(&self, v: Var) -> &ComplexMatrix {
        self.value(v).as_complex()
    }

    /// Real 1x1 node as a scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        self.real(v)[[0, 0]]
    }

    fn push(&mut self, value: Value, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input_real(&mut self, a: Array2<f64>) -> Var {
        self.push(Value::Real(a), Op::Input)
    }

    pub fn input_complex(&mut self, m: ComplexMatrix) -> Var {
        self.push(Value::Complex(m), Op::Input)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.real(x), self.real(w), self.real(b));
        assert_eq!(xv.ncols(), wv.ncols(), "linear: input width");
        assert_eq!(bv.dim(), (1, wv.nrows()), "linear: bias shape");
        let y = xv.dot(&wv.t()) + bv;
        self.push(Value::Real(y), Op::Linear { x, w, b })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.real(x).mapv(f64::tanh);
        self.push(Value::Real(y), Op::Tanh(x))
    }

    /// Interprets row `row` of a `B x 2d^2` real node as a `d x d` complex matrix.
    pub fn row_to_complex(&mut self, x: Var, row: usize) -> Var {
        let xv = self.real(x);
        let n = xv.ncols() / 2;
        let d = (n as f64).sqrt().round() as usize;
        assert_eq!(2 * d * d, xv.ncols(), "row_to_complex: width must be 2 d^2");
        let r = xv.row(row);
        let m = ComplexMatrix::from_fn(d, |i, j| C64::new(r[i * d + j], r[n + i * d + j]));
        self.push(Value::Complex(m), Op::RowToComplex { x, row })
    }

    /// `sum_k x[row, k] basis[k]`.
    pub fn row_combination(&mut self, x: Var, row: usize, basis: Arc<[ComplexMatrix]>) -> Var {
        let xv = self.real(x);
        assert_eq!(xv.ncols(), basis.len(), "row_combination: coefficient count");
        let mut m = ComplexMatrix::zeros(basis[0].dim());
        for (k, p) in basis.iter().enumerate() {
            m.axpy_real(xv[[row, k]], p);
        }
        self.push(Value::Complex(m), Op::RowCombination { x, row, basis })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.complex(a).matmul(self.complex(b));
        self.push(Value::Complex(y), Op::MatMul(a, b))
    }

    pub fn adjoint(&mut self, a: Var) -> Var {
        let y = self.complex(a).adjoint();
        self.push(Value::Complex(y), Op::Adjoint(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.complex(a) + self.complex(b);
        self.push(Value::Complex(y), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.complex(a) - self.complex(b);
        self.push(Value::Complex(y), Op::Sub(a, b))
    }

    pub fn sub_const(&mut self, a: Var, c: &ComplexMatrix) -> Var {
        let y = self.complex(a) - c;
        self.push(Value::Complex(y), Op::SubConst(a))
    }

    pub fn scale(&mut self, a: Var, s: C64) -> Var {
        let y = self.complex(a).scale(s);
        self.push(Value::Complex(y), Op::Scale(a, s))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, C64)>) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let mut y = ComplexMatrix::zeros(self.complex(terms[0].0).dim());
        for &(v, w) in &terms {
            y.axpy(w, self.complex(v));
        }
        self.push(Value::Complex(y), Op::WeightedSum(terms))
    }

    pub fn commutator(&mut self, a: Var, b: Var) -> Var {
        let ab = self.matmul(a, b);
        let ba = self.matmul(b, a);
        self.sub(ab, ba)
    }

    /// Trace as a 1x1 complex node.
    pub fn trace(&mut self, a: Var) -> Var {
        let t = self.complex(a).trace();
        self.push(Value::Complex(ComplexMatrix::from_vec(1, vec![t])), Op::Trace(a))
    }

    pub fn abs(&mut self, z: Var) -> Var {
        let v = self.complex_scalar(z).norm();
        self.push(Value::Real(Array2::from_elem((1, 1), v)), Op::Abs(z))
    }

    pub fn abs_sqr(&mut self, z: Var) -> Var {
        let v = self.complex_scalar(z).norm_sqr();
        self.push(Value::Real(Array2::from_elem((1, 1), v)), Op::AbsSqr(z))
    }

    fn complex_scalar(&self, z: Var) -> C64 {
        let m = self.complex(z);
        assert_eq!(m.dim(), 1, "expected a 1x1 complex node");
        m[(0, 0)]
    }

    /// Element-wise l1 norm.
    pub fn l1(&mut self, a: Var) -> Var {
        let v = linalg::l1_norm(self.complex(a));
        self.push(Value::Real(Array2::from_elem((1, 1), v)), Op::L1(a))
    }

    pub fn evolve_state(&mut self, u: Var, rho: &ComplexMatrix) -> Var {
        let uv = self.complex(u);
        let y = uv.matmul(rho).matmul_adjoint(uv);
        self.push(Value::Complex(y), Op::EvolveState { u, rho: rho.clone() })
    }

    /// `exp(-i s H)` for (numerically) Hermitian `H`; the Hermitian part is
    /// taken before the eigendecomposition.
    pub fn expm_hermitian(&mut self, h: Var, s: f64) -> Result<Var, GraphError> {
        let herm = self.complex(h).hermitian_part();
        let (evals, vecs) = linalg::herm_eig(&herm)?;
        let phases: Vec<C64> = evals.iter().map(|&l| (-I * (s * l)).exp()).collect();
        let u = linalg::reconstruct(&vecs, &phases);
        Ok(self.push(Value::Complex(u), Op::Expm { h, s, evals, vecs }))
    }

    pub fn sum_scalars(&mut self, xs: Vec<Var>) -> Var {
        let v: f64 = xs.iter().map(|&x| self.scalar(x)).sum();
        self.push(Value::Real(Array2::from_elem((1, 1), v)), Op::SumScalars(xs))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = self.real(x).sum();
        self.push(Value::Real(Array2::from_elem((1, 1), v)), Op::SumAll(x))
    }

    pub fn scale_real(&mut self, x: Var, s: f64) -> Var {
        let y = self.real(x) * s;
        self.push(Value::Real(y), Op::ScaleReal(x, s))
    }

    pub fn mean_scalars(&mut self, xs: Vec<Var>) -> Var {
        let n = xs.len() as f64;
        let s = self.sum_scalars(xs);
        self.scale_real(s, 1.0 / n)
    }

    /// Reverse pass from a real scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, GraphError> {
        if root.0 >= self.nodes.len() {
            return Err(GraphError::UnknownNode(root.0));
        }
        match &self.nodes[root.0].value {
            Value::Real(a) if a.dim() == (1, 1) => {}
            other => return Err(GraphError::NonScalarRoot(other.describe())),
        }
        let mut grads: Vec<Option<Value>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Value::Real(Array2::from_elem((1, 1), 1.0)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Value, g: &Value, grads: &mut [Option<Value>]) {
        match op {
            Op::Input => {}
            Op::Linear { x, w, b } => {
                let g = g.as_real();
                let (xv, wv) = (self.real(*x), self.real(*w));
                acc_real(grads, *x, || g.dot(wv), |a| *a += &g.dot(wv));
                acc_real(grads, *w, || g.t().dot(xv), |a| *a += &g.t().dot(xv));
                let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                acc_real(grads, *b, || gb.clone(), |a| *a += &gb);
            }
            Op::Tanh(x) => {
                let y = out.as_real();
                let gx = g.as_real() * &y.mapv(|t| 1.0 - t * t);
                acc_real(grads, *x, || gx.clone(), |a| *a += &gx);
            }
            Op::RowToComplex { x, row } => {
                let g = g.as_complex();
                let shape = self.real(*x).raw_dim();
                let n = g.dim() * g.dim();
                let slot = real_slot(grads, *x, shape);
                let mut r = slot.row_mut(*row);
                for (k, z) in g.as_slice().iter().enumerate() {
                    r[k] += z.re;
                    r[n + k] += z.im;
                }
            }
            Op::RowCombination { x, row, basis } => {
                let g = g.as_complex();
                let shape = self.real(*x).raw_dim();
                let slot = real_slot(grads, *x, shape);
                for (k, p) in basis.iter().enumerate() {
                    let d: f64 =
                        g.as_slice().iter().zip(p.as_slice()).map(|(gz, pz)| (gz.conj() * pz).re).sum();
                    slot[[*row, k]] += d;
                }
            }
            Op::MatMul(a, b) => {
                let g = g.as_complex();
                let ga = g.matmul_adjoint(self.complex(*b));
                let gb = self.complex(*a).adjoint_matmul(g);
                acc_complex(grads, *a, ga);
                acc_complex(grads, *b, gb);
            }
            Op::Adjoint(a) => acc_complex(grads, *a, g.as_complex().adjoint()),
            Op::Add(a, b) => {
                acc_complex(grads, *a, g.as_complex().clone());
                acc_complex(grads, *b, g.as_complex().clone());
            }
            Op::Sub(a, b) => {
                acc_complex(grads, *a, g.as_complex().clone());
                acc_complex(grads, *b, -g.as_complex());
            }
            Op::SubConst(a) => acc_complex(grads, *a, g.as_complex().clone()),
            Op::Scale(a, s) => acc_complex(grads, *a, g.as_complex().scale(s.conj())),
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc_complex(grads, v, g.as_complex().scale(w.conj()));
                }
            }
            Op::Trace(a) => {
                let gz = g.as_complex()[(0, 0)];
                let d = self.complex(*a).dim();
                acc_complex(grads, *a, ComplexMatrix::identity(d).scale(gz));
            }
            Op::Abs(z) => {
                let zv = self.complex_scalar(*z);
                let gs = g.as_real()[[0, 0]];
                let n = zv.norm();
                let gz = if n > 0.0 { zv * (gs / n) } else { ZERO };
                acc_complex(grads, *z, ComplexMatrix::from_vec(1, vec![gz]));
            }
            Op::AbsSqr(z) => {
                let zv = self.complex_scalar(*z);
                let gs = g.as_real()[[0, 0]];
                acc_complex(grads, *z, ComplexMatrix::from_vec(1, vec![zv * (2.0 * gs)]));
            }
            Op::L1(a) => {
                let gs = g.as_real()[[0, 0]];
                let ga = self.complex(*a).map(|z| {
                    let n = z.norm();
                    if n > 0.0 {
                        z * (gs / n)
                    } else {
                        ZERO
                    }
                });
                acc_complex(grads, *a, ga);
            }
            Op::EvolveState { u, rho } => {
                // dY = dU rho U^dagger + U rho dU^dagger with Hermitian rho.
                let g = g.as_complex();
                let uv = self.complex(*u);
                let ur = uv.matmul(rho);
                let gu = &g.matmul(&ur) + &g.adjoint().matmul(&ur);
                acc_complex(grads, *u, gu);
            }
            Op::Expm { h, s, evals, vecs } => {
                let g = g.as_complex();
                let gt = vecs.adjoint_matmul(&g.matmul(vecs));
                let d = evals.len();
                let x = ComplexMatrix::from_fn(d, |i, j| {
                    divided_difference(evals[i], evals[j], *s).conj() * gt[(i, j)]
                });
                let gh = vecs.matmul(&x).matmul_adjoint(vecs);
                // Adjoint of the Hermitian-part projection.
                acc_complex(grads, *h, gh.hermitian_part());
            }
            Op::SumScalars(xs) => {
                let gs = g.as_real()[[0, 0]];
                for &x in xs {
                    let gv = Array2::from_elem((1, 1), gs);
                    acc_real(grads, x, || gv.clone(), |a| *a += &gv);
                }
            }
            Op::SumAll(x) => {
                let gs = g.as_real()[[0, 0]];
                let shape = self.real(*x).raw_dim();
                acc_real(grads, *x, || Array2::from_elem(shape, gs), |a| *a += gs);
            }
            Op::ScaleReal(x, s) => {
                let gx = g.as_real() * *s;
                acc_real(grads, *x, || gx.clone(), |a| *a += &gx);
            }
        }
    }
}

/// `(f(a) - f(b)) / (a - b)` for `f(x) = exp(-i s x)`, written as
/// `-i s exp(-i s m) sinc(s (a - b) / 2)` with `m = (a + b) / 2` so that it
/// stays accurate for nearly equal eigenvalues.
fn divided_difference(a: f64, b: f64, s: f64) -> C64 {
    let mean = 0.5 * (a + b);
    let half = 0.5 * s * (a - b);
    let sinc = if (a - b).abs() < DEGENERATE_GAP || half == 0.0 { 1.0 } else { half.sin() / half };
    -I * s * (-I * (s * mean)).exp() * sinc
}

fn acc_real(
    grads: &mut [Option<Value>],
    v: Var,
    fresh: impl FnOnce() -> Array2<f64>,
    add: impl FnOnce(&mut Array2<f64>),
) {
    match &mut grads[v.0] {
        Some(Value::Real(a)) => add(a),
        slot => *slot = Some(Value::Real(fresh())),
    }
}

fn real_slot(grads: &mut [Option<Value>], v: Var, shape: ndarray::Ix2) -> &mut Array2<f64> {
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(Value::Real(Array2::zeros(shape)));
    }
    match slot {
        Some(Value::Real(a)) => a,
        _ => unreachable!("real node with complex gradient"),
    }
}

fn acc_complex(grads: &mut [Option<Value>], v: Var, g: ComplexMatrix) {
    match &mut grads[v.0] {
        Some(Value::Complex(a)) => a.axpy(ONE, &g),
        slot => *slot = Some(Value::Complex(g)),
    }
}

impl Gradients {
    /// Gradient for `v`, or zeros shaped like `value` when `v` did not
    /// influence the root.
    pub fn or_zeros(&self, v: Var, value: &Value) -> Value {
        self.get(v).cloned().unwrap_or_else(|| value.zeros_like())
    }
}

#[cfg(test)]
mod tests {
    //! Finite-difference checks of every primitive. Each probe draws a random
    //! input point and a random direction and compares the directional
    //! derivative from the tape with a central difference (step 1e-6).
    use super::*;
    use crate::linalg::test_util::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-5;

    #[derive(Clone)]
    enum Arg {
        Real(Array2<f64>),
        Complex(ComplexMatrix),
    }

    impl Arg {
        fn axpy(&self, s: f64, dir: &Arg) -> Arg {
            match (self, dir) {
                (Arg::Real(a), Arg::Real(d)) => Arg::Real(a + &(d * s)),
                (Arg::Complex(a), Arg::Complex(d)) => {
                    let mut out = a.clone();
                    out.axpy_real(s, d);
                    Arg::Complex(out)
                }
                _ => unreachable!(),
            }
        }

        fn random_like(&self, rng: &mut ChaCha8Rng) -> Arg {
            match self {
                Arg::Real(a) => Arg::Real(a.mapv(|_| rng.sample(StandardNormal))),
                Arg::Complex(m) => Arg::Complex(random_matrix(rng, m.dim())),
            }
        }

        fn dot_grad(&self, g: Option<&Value>) -> f64 {
            match (self, g) {
                (_, None) => 0.0,
                (Arg::Real(d), Some(Value::Real(g))) => (d * g).sum(),
                (Arg::Complex(d), Some(Value::Complex(g))) => {
                    d.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (b.conj() * a).re).sum()
                }
                _ => unreachable!(),
            }
        }
    }

    /// Builds a scalar from `args` on a fresh tape: the primitive under test
    /// followed by a fixed random linear functional of its output.
    type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

    fn record(tape: &mut Tape, args: &[Arg]) -> Vec<Var> {
        args.iter()
            .map(|a| match a {
                Arg::Real(x) => tape.input_real(x.clone()),
                Arg::Complex(m) => tape.input_complex(m.clone()),
            })
            .collect()
    }

    fn eval(build: &Build<'_>, args: &[Arg]) -> f64 {
        let mut tape = Tape::new();
        let vars = record(&mut tape, args);
        let root = build(&mut tape, &vars);
        tape.scalar(root)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn check(name: &str, probes: usize, seed: u64, gen: impl Fn(&mut ChaCha8Rng) -> Vec<Arg>, build: &Build<'_>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let args = gen(&mut rng);
            let dirs: Vec<Arg> = args.iter().map(|a| a.random_like(&mut rng)).collect();
            let mut tape = Tape::new();
            let vars = record(&mut tape, &args);
            let root = build(&mut tape, &vars);
            let grads = tape.backward(root).unwrap();
            let analytic: f64 = vars.iter().zip(&dirs).map(|(v, d)| d.dot_grad(grads.get(*v))).sum();
            let shift = |s: f64| -> Vec<Arg> { args.iter().zip(&dirs).map(|(a, d)| a.axpy(s, d)).collect() };
            let numeric = (eval(build, &shift(STEP)) - eval(build, &shift(-STEP))) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic, numeric));
        }
        assert!(worst <= TOL, "{name}: worst relative error {worst:e}");
    }

    fn project_complex(tape: &mut Tape, x: Var, seed: u64) -> Var {
        // Re tr(W^dagger X) through differentiable primitives: |tr(W^dagger X)|^2
        // would square the signal, so use trace + abs with a shift away from 0.
        let d = tape.complex(x).dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(&mut rng, d);
        let wv = tape.input_complex(w.adjoint());
        let p = tape.matmul(wv, x);
        let tr = tape.trace(p);
        let shifted = tape.sub_const(tr, &ComplexMatrix::from_vec(1, vec![C64::new(-25.0, -25.0)]));
        tape.abs(shifted)
    }

    fn real_arg(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Arg {
        Arg::Real(Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal)))
    }

    fn complex_arg(rng: &mut ChaCha8Rng, d: usize) -> Arg {
        Arg::Complex(random_matrix(rng, d))
    }

    fn hermitian_arg(rng: &mut ChaCha8Rng, d: usize) -> Arg {
        Arg::Complex(random_hermitian(rng, d))
    }

    fn real_readout(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let cols = tape.real(y).ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.input_real(Array2::from_shape_fn((1, cols), |_| rng.sample(StandardNormal)));
        let b = tape.input_real(Array2::zeros((1, 1)));
        let r = tape.linear(y, w, b);
        tape.sum_all(r)
    }

    #[test]
    fn linear_and_tanh() {
        check(
            "linear+tanh",
            100,
            1,
            |rng| vec![real_arg(rng, 3, 4), real_arg(rng, 5, 4), real_arg(rng, 1, 5)],
            &|t, v| {
                let y = t.linear(v[0], v[1], v[2]);
                let y = t.tanh(y);
                real_readout(t, y, 7)
            },
        );
    }

    #[test]
    fn row_to_complex() {
        check(
            "row_to_complex",
            100,
            2,
            |rng| vec![real_arg(rng, 3, 8)],
            &|t, v| {
                let m = t.row_to_complex(v[0], 1);
                project_complex(t, m, 3)
            },
        );
    }

    #[test]
    fn row_combination() {
        let basis: Arc<[ComplexMatrix]> = crate::pauli::family_layout(2, crate::pauli::Family::IsingNN)
            .unwrap()
            .iter()
            .map(|p| p.matrix())
            .collect();
        check(
            "row_combination",
            100,
            3,
            |rng| vec![real_arg(rng, 4, 3)],
            &|t, v| {
                let m = t.row_combination(v[0], 2, basis.clone());
                project_complex(t, m, 4)
            },
        );
    }

    #[test]
    fn complex_matmul() {
        check("matmul", 100, 4, |rng| vec![complex_arg(rng, 3), complex_arg(rng, 3)], &|t, v| {
            let m = t.matmul(v[0], v[1]);
            project_complex(t, m, 5)
        });
    }

    #[test]
    fn adjoint_add_sub_scale() {
        check("adjoint/add/sub/scale", 100, 5, |rng| vec![complex_arg(rng, 4), complex_arg(rng, 4)], &|t, v| {
            let a = t.adjoint(v[0]);
            let s = t.add(a, v[1]);
            let s = t.scale(s, C64::new(0.3, -1.2));
            let s = t.sub(s, v[0]);
            let s = t.sub_const(s, &ComplexMatrix::identity(4));
            let s = t.weighted_sum(vec![(s, C64::new(0.5, 0.5)), (v[1], C64::new(-1.0, 0.25))]);
            project_complex(t, s, 6)
        });
    }

    #[test]
    fn trace_abs_abs_sqr() {
        check("trace/abs_sqr", 100, 6, |rng| vec![complex_arg(rng, 4)], &|t, v| {
            let tr = t.trace(v[0]);
            let a = t.abs_sqr(tr);
            let b = t.abs(tr);
            t.sum_scalars(vec![a, b])
        });
    }

    #[test]
    fn l1_norm_gradient() {
        check("l1", 100, 7, |rng| vec![complex_arg(rng, 4)], &|t, v| t.l1(v[0]));
    }

    #[test]
    fn evolve_state_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let g = random_matrix(&mut rng, 4);
        let rho = g.matmul_adjoint(&g);
        let rho = rho.scale_real(1.0 / rho.trace().re);
        check("evolve_state", 100, 8, |rng| vec![complex_arg(rng, 4)], &|t, v| {
            let y = t.evolve_state(v[0], &rho);
            project_complex(t, y, 9)
        });
    }

    #[test]
    fn expm_gradient() {
        check("expm", 100, 9, |rng| vec![hermitian_arg(rng, 4)], &|t, v| {
            let u = t.expm_hermitian(v[0], 0.7).unwrap();
            project_complex(t, u, 10)
        });
    }

    #[test]
    fn expm_gradient_degenerate_spectrum() {
        // Z (x) I has a doubly degenerate spectrum; perturbations are Hermitian.
        let zi = crate::pauli::PauliString::new(vec![crate::pauli::Pauli::Z, crate::pauli::Pauli::I])
            .unwrap()
            .matrix();
        check(
            "expm-degenerate",
            100,
            10,
            |rng| {
                let c: f64 = rng.gen_range(0.2..1.5);
                vec![Arg::Complex(zi.scale_real(c))]
            },
            &|t, v| {
                let h = t.expm_hermitian(v[0], 1.3).unwrap();
                project_complex(t, h, 11)
            },
        );
    }

    #[test]
    fn divided_difference_limits() {
        let s = 0.9;
        let d = divided_difference(0.4, 0.4, s);
        let deriv = -I * s * (-I * (s * 0.4)).exp();
        assert!((d - deriv).norm() < 1e-15);
        let (a, b) = (0.7, -0.2);
        let direct = ((-I * (s * a)).exp() - (-I * (s * b)).exp()) / (a - b);
        assert!((divided_difference(a, b, s) - direct).norm() < 1e-14);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.input_real(Array2::from_elem((1, 1), 2.0));
        let c = t.input_real(Array2::from_elem((1, 1), 5.0));
        let y = t.scale_real(c, 3.0);
        let root = t.sum_scalars(vec![y]);
        let g = t.backward(root).unwrap();
        assert!(g.real(x).is_none());
        assert_eq!(g.or_zeros(x, t.value(x)), Value::Real(Array2::zeros((1, 1))));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.input_complex(ComplexMatrix::identity(2));
        assert!(matches!(t.backward(x), Err(GraphError::NonScalarRoot(_))));
        assert!(matches!(t.backward(Var(99)), Err(GraphError::UnknownNode(99))));
    }

    #[test]
    fn each_node_visited_once() {
        // A diamond: y = x + x reused; gradient must be exactly 2 per entry.
        let mut t = Tape::new();
        let x = t.input_complex(ComplexMatrix::identity(2).scale_real(3.0));
        let y = t.add(x, x);
        let tr = t.trace(y);
        let root = t.abs(tr);
        let g = t.backward(root).unwrap();
        let gx = g.complex(x).unwrap();
        assert!((gx[(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-15);
    }
}
