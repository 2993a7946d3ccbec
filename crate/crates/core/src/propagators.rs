//! Ground-truth time-evolution operators `U(t) = U(t, 0)`.
//!
//! * second-order Magnus: `U = exp(O1 + O2)` with trapezoidal quadrature,
//! * first-order Trotter: left-endpoint product `prod exp(-i H(t_m) dt)`,
//!   latest factor leftmost,
//! * a fine Trotter reference used as a test oracle.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix, LinalgError, UnitaryMatrix, C64};
use crate::pauli::HamiltonianSpec;

pub const DEFAULT_STEPS: usize = 50;
pub const REFERENCE_STEPS: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error("evolution time must be non-negative and finite, got {0}")]
    NegativeTime(f64),
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Magnus2,
    Trotter,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "magnus2" | "magnus" => Ok(Method::Magnus2),
            "trotter" => Ok(Method::Trotter),
            other => Err(format!("unknown propagation method '{other}'")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Magnus2 => "magnus2",
            Method::Trotter => "trotter",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    pub method: Method,
    pub steps: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self { method: Method::Magnus2, steps: DEFAULT_STEPS }
    }
}

impl PropagatorConfig {
    pub fn propagate(&self, spec: &HamiltonianSpec, t: f64) -> Result<UnitaryMatrix, PropagatorError> {
        match self.method {
            Method::Magnus2 => magnus2_propagator(spec, t, self.steps),
            Method::Trotter => trotter_propagator(spec, t, self.steps),
        }
    }
}

/// First and second Magnus terms, both anti-Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnusTerms {
    pub o1: ComplexMatrix,
    pub o2: ComplexMatrix,
}

fn check(t: f64, steps: usize) -> Result<(), PropagatorError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PropagatorError::NegativeTime(t));
    }
    if steps == 0 {
        return Err(PropagatorError::ZeroSteps);
    }
    Ok(())
}

/// Trapezoidal Magnus-2 terms from Hamiltonian samples `h[m] = H(m * dt)`,
/// `m = 0..=n`.
///
/// `O1 = -i dt (h0/2 + h1 + ... + h_{n-1} + hn/2)`. For `O2` the inner
/// integral up to grid point `a` is the trapezoid prefix `S_a`, and the outer
/// integral is a trapezoid over `a` of `[h_a, S_a]`, scaled by `-1/2`.
pub fn magnus2_from_samples(h: &[ComplexMatrix], dt: f64) -> MagnusTerms {
    let n = h.len() - 1;
    let d = h[0].dim();
    let mut integral = ComplexMatrix::zeros(d);
    let mut o2 = ComplexMatrix::zeros(d);
    // Prefix trapezoid S_a = dt * (h0/2 + h1 + ... + h_{a-1} + h_a/2).
    let mut prefix = ComplexMatrix::zeros(d);
    for a in 0..=n {
        if a > 0 {
            prefix.axpy_real(0.5 * dt, &h[a - 1]);
            prefix.axpy_real(0.5 * dt, &h[a]);
        }
        let w = if a == 0 || a == n { 0.5 * dt } else { dt };
        if n > 0 {
            integral.axpy_real(w, &h[a]);
            if a > 0 {
                o2.axpy_real(-0.5 * w, &h[a].commutator(&prefix));
            }
        }
    }
    let o1 = integral.scale(C64::new(0.0, -1.0));
    MagnusTerms { o1, o2 }
}

/// `O1 ~ -i int_0^t H` and `O2 ~ -1/2 int_0^t dt1 int_0^t1 dt2 [H(t1), H(t2)]`
/// on a uniform grid of `steps` intervals.
pub fn magnus2_terms(spec: &HamiltonianSpec, t: f64, steps: usize) -> Result<MagnusTerms, PropagatorError> {
    check(t, steps)?;
    let eval = spec.evaluator();
    let dt = t / steps as f64;
    let samples: Vec<ComplexMatrix> = (0..=steps).map(|m| eval.at(m as f64 * dt)).collect();
    Ok(magnus2_from_samples(&samples, dt))
}

pub fn magnus2_propagator(spec: &HamiltonianSpec, t: f64, steps: usize) -> Result<UnitaryMatrix, PropagatorError> {
    let terms = magnus2_terms(spec, t, steps)?;
    let omega = &terms.o1 + &terms.o2;
    Ok(linalg::expm_antihermitian(&omega)?)
}

/// `prod_{m=n-1..0} exp(-i H(m dt) dt)` with `dt = t / steps`.
pub fn trotter_propagator(spec: &HamiltonianSpec, t: f64, steps: usize) -> Result<UnitaryMatrix, PropagatorError> {
    check(t, steps)?;
    let eval = spec.evaluator();
    let dt = t / steps as f64;
    let mut u = ComplexMatrix::identity(spec.dim());
    if t == 0.0 {
        return Ok(UnitaryMatrix::new_unchecked(u));
    }
    for m in 0..steps {
        let step = linalg::expm_hermitian_generator(&eval.at(m as f64 * dt), dt)?;
        u = step.matrix().matmul(&u);
    }
    Ok(UnitaryMatrix::new_unchecked(u))
}

/// Fine Trotter product with [`REFERENCE_STEPS`] steps.
pub fn reference_propagator(spec: &HamiltonianSpec, t: f64) -> Result<UnitaryMatrix, PropagatorError> {
    trotter_propagator(spec, t, REFERENCE_STEPS)
}
