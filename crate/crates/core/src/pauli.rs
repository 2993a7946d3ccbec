//! Pauli strings and sinusoidally driven Hamiltonians
//! `H(t) = sum_k A_k sin(omega_k t + phi_k) P_k` (hbar = 1).
//!
//! Qubit 1 is the leftmost Kronecker factor everywhere in the crate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexMatrix, C64, I, ONE, ZERO};

/// Default cap on qubit count for the general family (4^N - 1 terms).
pub const DEFAULT_GENERAL_QUBIT_CAP: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PauliError {
    #[error("qubit count must be at least 1")]
    ZeroQubits,
    #[error("general family with {qubits} qubits exceeds the cap of {cap} (4^N - 1 terms)")]
    TooManyQubits { qubits: usize, cap: usize },
    #[error("invalid Pauli label '{0}' (expected I, X, Y or Z)")]
    BadLabel(char),
    #[error("invalid sampling range for {name}: [{min}, {max}]")]
    BadRange { name: &'static str, min: f64, max: f64 },
    #[error("expected {expected} coefficients, got {got}")]
    CoeffLength { expected: usize, got: usize },
    #[error("invalid Hamiltonian: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> ComplexMatrix {
        let entries = match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -I, I, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        };
        ComplexMatrix::from_vec(2, entries.to_vec())
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    // Single-qubit action on a basis index: P|b> = phase * |b ^ flip>.
    fn action(self, bit: usize) -> (usize, C64) {
        match self {
            Pauli::I => (0, ONE),
            Pauli::X => (1, ONE),
            Pauli::Y => (1, if bit == 0 { I } else { -I }),
            Pauli::Z => (0, if bit == 0 { ONE } else { -ONE }),
        }
    }
}

impl TryFrom<char> for Pauli {
    type Error = PauliError;
    fn try_from(c: char) -> Result<Self, PauliError> {
        match c.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(PauliError::BadLabel(other)),
        }
    }
}

/// Tensor product of single-qubit Paulis, one label per qubit.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString(Vec<Pauli>);

impl PauliString {
    pub fn new(labels: Vec<Pauli>) -> Result<Self, PauliError> {
        if labels.is_empty() {
            return Err(PauliError::ZeroQubits);
        }
        Ok(Self(labels))
    }

    pub fn identity(qubits: usize) -> Self {
        Self(vec![Pauli::I; qubits])
    }

    pub fn qubits(&self) -> usize {
        self.0.len()
    }

    pub fn labels(&self) -> &[Pauli] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == Pauli::I)
    }

    /// Dense `2^N x 2^N` matrix. Each row of a Pauli string has exactly one
    /// nonzero entry, so this is built directly rather than by repeated
    /// Kronecker products.
    pub fn matrix(&self) -> ComplexMatrix {
        let n = self.qubits();
        let d = 1usize << n;
        let mut m = ComplexMatrix::zeros(d);
        for col in 0..d {
            let mut row = col;
            let mut phase = ONE;
            for (q, &p) in self.0.iter().enumerate() {
                let shift = n - 1 - q;
                let bit = (col >> shift) & 1;
                let (flip, ph) = p.action(bit);
                row ^= flip << shift;
                phase *= ph;
            }
            m[(row, col)] = phase;
        }
        m
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = PauliError;
    fn from_str(s: &str) -> Result<Self, PauliError> {
        let labels = s.chars().map(Pauli::try_from).collect::<Result<Vec<_>, _>>()?;
        Self::new(labels)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense matrix of a Pauli string, computed as the Kronecker product of
/// single-qubit Paulis with qubit 1 leftmost.
pub fn pauli_matrix(s: &PauliString) -> ComplexMatrix {
    s.labels()
        .iter()
        .skip(1)
        .fold(s.labels()[0].matrix(), |acc, p| acc.kron(&p.matrix()))
}

/// `c(t) = A sin(omega t + phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientParams {
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "omega")]
    pub frequency: f64,
    #[serde(rename = "phi")]
    pub phase: f64,
}

impl CoefficientParams {
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Every non-identity Pauli string.
    General,
    /// Open-chain nearest-neighbour ZZ couplings plus a transverse X field.
    #[serde(rename = "ising")]
    IsingNN,
}

impl FromStr for Family {
    type Err = PauliError;
    fn from_str(s: &str) -> Result<Self, PauliError> {
        match s.to_ascii_lowercase().as_str() {
            "general" => Ok(Family::General),
            "ising" | "isingnn" => Ok(Family::IsingNN),
            other => Err(PauliError::Invalid(format!("unknown family '{other}'"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::General => "general",
            Family::IsingNN => "ising",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

/// Uniform sampling ranges for the sinusoidal coefficients.
///
/// With `normalize_amplitude` set, each sampled amplitude is divided by the
/// square root of the family's term count, which keeps the typical norm of
/// `H(t)` independent of the qubit count and family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub amplitude: Range,
    pub frequency: Range,
    pub phase: Range,
    #[serde(default)]
    pub normalize_amplitude: bool,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            amplitude: Range::new(0.0, 1.0),
            frequency: Range::new(0.0, two_pi),
            phase: Range::new(0.0, two_pi),
            normalize_amplitude: true,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<(), PauliError> {
        for (name, r) in
            [("amplitude", self.amplitude), ("frequency", self.frequency), ("phase", self.phase)]
        {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(PauliError::BadRange { name, min: r.min, max: r.max });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianTerm {
    pub pauli: PauliString,
    #[serde(flatten)]
    pub coeff: CoefficientParams,
}

/// Sinusoidally driven Hamiltonian in the Pauli basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub qubits: usize,
    pub family: Family,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub terms: Vec<HamiltonianTerm>,
}

/// Term layout of a family: the Pauli strings in canonical order.
pub fn family_layout(qubits: usize, family: Family) -> Result<Vec<PauliString>, PauliError> {
    if qubits == 0 {
        return Err(PauliError::ZeroQubits);
    }
    match family {
        Family::General => {
            let total = 1usize << (2 * qubits);
            Ok((1..total)
                .map(|code| {
                    let labels = (0..qubits)
                        .map(|q| Pauli::ALL[(code >> (2 * (qubits - 1 - q))) & 3])
                        .collect();
                    PauliString(labels)
                })
                .collect())
        }
        Family::IsingNN => {
            let mut out = Vec::with_capacity(2 * qubits - 1);
            for q in 0..qubits - 1 {
                let mut labels = vec![Pauli::I; qubits];
                labels[q] = Pauli::Z;
                labels[q + 1] = Pauli::Z;
                out.push(PauliString(labels));
            }
            for q in 0..qubits {
                let mut labels = vec![Pauli::I; qubits];
                labels[q] = Pauli::X;
                out.push(PauliString(labels));
            }
            Ok(out)
        }
    }
}

/// Draws a random Hamiltonian of the given family; deterministic in `seed`.
pub fn sample_hamiltonian(
    qubits: usize,
    family: Family,
    seed: u64,
    ranges: SamplingRanges,
) -> Result<HamiltonianSpec, PauliError> {
    sample_hamiltonian_with_cap(qubits, family, seed, ranges, DEFAULT_GENERAL_QUBIT_CAP)
}

pub fn sample_hamiltonian_with_cap(
    qubits: usize,
    family: Family,
    seed: u64,
    ranges: SamplingRanges,
    general_cap: usize,
) -> Result<HamiltonianSpec, PauliError> {
    if qubits == 0 {
        return Err(PauliError::ZeroQubits);
    }
    if family == Family::General && qubits > general_cap {
        return Err(PauliError::TooManyQubits { qubits, cap: general_cap });
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: Range| if r.min == r.max { r.min } else { rng.gen_range(r.min..r.max) };
    let layout = family_layout(qubits, family)?;
    let amp_scale = if ranges.normalize_amplitude { 1.0 / (layout.len() as f64).sqrt() } else { 1.0 };
    let terms = layout
        .into_iter()
        .map(|pauli| HamiltonianTerm {
            pauli,
            coeff: CoefficientParams {
                amplitude: draw(ranges.amplitude) * amp_scale,
                frequency: draw(ranges.frequency),
                phase: draw(ranges.phase),
            },
        })
        .collect();
    Ok(HamiltonianSpec { qubits, family, seed, ranges, terms })
}

impl HamiltonianSpec {
    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Checks term structure: qubit counts, no identity, no duplicates, finite
    /// parameters, and the family's exact term count.
    pub fn validate(&self) -> Result<(), PauliError> {
        if self.qubits == 0 {
            return Err(PauliError::ZeroQubits);
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.terms {
            if t.pauli.qubits() != self.qubits {
                return Err(PauliError::Invalid(format!(
                    "term {} acts on {} qubits, expected {}",
                    t.pauli,
                    t.pauli.qubits(),
                    self.qubits
                )));
            }
            if t.pauli.is_identity() {
                return Err(PauliError::Invalid("identity term is not allowed".into()));
            }
            if !seen.insert(t.pauli.clone()) {
                return Err(PauliError::Invalid(format!("duplicate term {}", t.pauli)));
            }
            let c = t.coeff;
            if !(c.amplitude.is_finite() && c.frequency.is_finite() && c.phase.is_finite()) {
                return Err(PauliError::Invalid(format!("non-finite parameters on {}", t.pauli)));
            }
        }
        let expected = match self.family {
            Family::General => (1usize << (2 * self.qubits)) - 1,
            Family::IsingNN => 2 * self.qubits - 1,
        };
        if self.terms.len() != expected {
            return Err(PauliError::Invalid(format!(
                "{} family on {} qubits needs {expected} terms, found {}",
                self.family,
                self.qubits,
                self.terms.len()
            )));
        }
        Ok(())
    }

    /// Coefficient vector `c_k(t)`.
    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        self.terms.iter().map(|term| term.coeff.value(t)).collect()
    }

    pub fn basis(&self) -> Vec<ComplexMatrix> {
        self.terms.iter().map(|t| t.pauli.matrix()).collect()
    }

    /// Precomputes the Pauli matrices for repeated evaluation.
    pub fn evaluator(&self) -> HamiltonianEvaluator<'_> {
        HamiltonianEvaluator { spec: self, basis: self.basis() }
    }

    /// The same term layout with all coefficients shifted by `t0`, so that
    /// `shifted(t0).evaluate(t) == evaluate(t0 + t)`.
    pub fn time_shifted(&self, t0: f64) -> HamiltonianSpec {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.coeff.phase += term.coeff.frequency * t0;
        }
        out
    }
}

/// `H(t)` for a spec, with the Pauli basis cached.
pub struct HamiltonianEvaluator<'a> {
    spec: &'a HamiltonianSpec,
    basis: Vec<ComplexMatrix>,
}

impl HamiltonianEvaluator<'_> {
    pub fn at(&self, t: f64) -> ComplexMatrix {
        combine(&self.basis, &self.spec.coefficients(t), self.spec.dim())
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }
}

fn combine(basis: &[ComplexMatrix], coeffs: &[f64], dim: usize) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(dim);
    for (p, &c) in basis.iter().zip(coeffs) {
        if c != 0.0 {
            h.axpy_real(c, p);
        }
    }
    h
}

/// `H(t) = sum_k A_k sin(omega_k t + phi_k) P_k`.
pub fn evaluate_hamiltonian(spec: &HamiltonianSpec, t: f64) -> ComplexMatrix {
    spec.evaluator().at(t)
}

/// `sum_k coeffs[k] P_k` over the term layout of `layout`; the sinusoidal
/// parameters of `layout` are ignored.
pub fn hamiltonian_from_coeffs(
    layout: &HamiltonianSpec,
    coeffs: &[f64],
) -> Result<ComplexMatrix, PauliError> {
    if coeffs.len() != layout.num_terms() {
        return Err(PauliError::CoeffLength { expected: layout.num_terms(), got: coeffs.len() });
    }
    Ok(combine(&layout.basis(), coeffs, layout.dim()))
}
