//! Fully connected tanh networks mapping a time `t` to either a complex
//! `2^N x 2^N` matrix (model2..model6) or a vector of Pauli coefficients
//! (model7, model8 and the small `coeffN` variants).

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::linalg::ComplexMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown architecture '{0}'")]
    UnknownArchitecture(String),
    #[error("architecture {arch} {detail}")]
    Mismatch { arch: Architecture, detail: String },
    #[error("layer {layer} has shape {got:?}, expected {expected:?}")]
    Shape { layer: usize, got: (usize, usize), expected: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Model2,
    Model3,
    Model4,
    Model5,
    Model6,
    Model7,
    Model8,
    /// `1 -> 50 -> 2N-1` coefficient network for an N-qubit Ising layout.
    Coeff(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// `2 * 4^N` reals reshaped to `(2, 2^N, 2^N)`.
    Unitary { qubits: usize },
    /// One real coefficient per Pauli term.
    Coefficients { qubits: usize, terms: usize },
}

const COEFF_HIDDEN: usize = 50;

impl Architecture {
    /// Layer widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        match self {
            Architecture::Model2 => vec![1, 64, 128, 32],
            Architecture::Model3 => vec![1, 256, 512, 128],
            Architecture::Model4 => vec![1, 512, 1024, 2048, 512],
            Architecture::Model5 => vec![1, 512, 2048, 2048],
            Architecture::Model6 => vec![1, 1024, 4096, 8192],
            Architecture::Model7 => vec![1, COEFF_HIDDEN, 13],
            Architecture::Model8 => vec![1, COEFF_HIDDEN, 15],
            Architecture::Coeff(n) => vec![1, COEFF_HIDDEN, 2 * n - 1],
        }
    }

    pub fn output(&self) -> OutputKind {
        match *self {
            Architecture::Model2 => OutputKind::Unitary { qubits: 2 },
            Architecture::Model3 => OutputKind::Unitary { qubits: 3 },
            Architecture::Model4 => OutputKind::Unitary { qubits: 4 },
            Architecture::Model5 => OutputKind::Unitary { qubits: 5 },
            Architecture::Model6 => OutputKind::Unitary { qubits: 6 },
            Architecture::Model7 => OutputKind::Coefficients { qubits: 7, terms: 13 },
            Architecture::Model8 => OutputKind::Coefficients { qubits: 8, terms: 15 },
            Architecture::Coeff(n) => OutputKind::Coefficients { qubits: n, terms: 2 * n - 1 },
        }
    }

    pub fn qubits(&self) -> usize {
        match self.output() {
            OutputKind::Unitary { qubits } | OutputKind::Coefficients { qubits, .. } => qubits,
        }
    }

    pub fn predicts_unitary(&self) -> bool {
        matches!(self.output(), OutputKind::Unitary { .. })
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// The direct-unitary network for `qubits` (2 to 6).
    pub fn direct(qubits: usize) -> Option<Architecture> {
        match qubits {
            2 => Some(Architecture::Model2),
            3 => Some(Architecture::Model3),
            4 => Some(Architecture::Model4),
            5 => Some(Architecture::Model5),
            6 => Some(Architecture::Model6),
            _ => None,
        }
    }

    /// The coefficient network for an Ising layout on `qubits`.
    pub fn coefficients(qubits: usize) -> Architecture {
        match qubits {
            7 => Architecture::Model7,
            8 => Architecture::Model8,
            n => Architecture::Coeff(n),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Architecture::Coeff(n) => format!("coeff{n}"),
            other => format!("model{}", other.qubits()),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::UnknownArchitecture(s.to_string());
        let lower = s.to_ascii_lowercase();
        if let Some(n) = lower.strip_prefix("model") {
            return match n {
                "2" => Ok(Architecture::Model2),
                "3" => Ok(Architecture::Model3),
                "4" => Ok(Architecture::Model4),
                "5" => Ok(Architecture::Model5),
                "6" => Ok(Architecture::Model6),
                "7" => Ok(Architecture::Model7),
                "8" => Ok(Architecture::Model8),
                _ => Err(bad()),
            };
        }
        if let Some(n) = lower.strip_prefix("coeff") {
            let n: usize = n.parse().map_err(|_| bad())?;
            if n == 0 {
                return Err(bad());
            }
            return Ok(Architecture::Coeff(n));
        }
        Err(bad())
    }
}

impl Serialize for Architecture {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One affine layer; `weight` is `out x in`, `bias` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
}

/// Fan-in scaled uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// for weights and biases.
pub fn init_parameters(architecture: Architecture, seed: u64) -> ModelParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = architecture
        .widths()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let k = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-k..k));
            let bias = Array2::from_shape_simple_fn((1, fan_out), || rng.gen_range(-k..k));
            Layer { weight, bias }
        })
        .collect();
    ModelParameters { architecture, layers }
}

/// Tape handles for each layer's `(weight, bias)`.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<(Var, Var)>);

impl ModelParameters {
    pub fn zeros(architecture: Architecture) -> Self {
        let layers = architecture
            .widths()
            .windows(2)
            .map(|w| Layer { weight: Array2::zeros((w[1], w[0])), bias: Array2::zeros((1, w[1])) })
            .collect();
        Self { architecture, layers }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let widths = self.architecture.widths();
        if self.layers.len() != widths.len() - 1 {
            return Err(ModelError::Mismatch {
                arch: self.architecture,
                detail: format!("expects {} layers, found {}", widths.len() - 1, self.layers.len()),
            });
        }
        for (i, (layer, w)) in self.layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.weight.dim() != (w[1], w[0]) {
                return Err(ModelError::Shape { layer: i, got: layer.weight.dim(), expected: (w[1], w[0]) });
            }
            if layer.bias.dim() != (1, w[1]) {
                return Err(ModelError::Shape { layer: i, got: layer.bias.dim(), expected: (1, w[1]) });
            }
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(
            self.layers
                .iter()
                .map(|l| (tape.input_real(l.weight.clone()), tape.input_real(l.bias.clone())))
                .collect(),
        )
    }

    /// All parameters in layer order (weight row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

/// Batched MLP: `times` become a `B x 1` input, tanh after every hidden layer,
/// nothing after the last one.
pub fn mlp_forward(tape: &mut Tape, vars: &ParamVars, times: &[f64]) -> Var {
    let input = Array2::from_shape_vec((times.len(), 1), times.to_vec()).expect("column of times");
    let mut h = tape.input_real(input);
    let last = vars.0.len() - 1;
    for (i, &(w, b)) in vars.0.iter().enumerate() {
        h = tape.linear(h, w, b);
        if i < last {
            h = tape.tanh(h);
        }
    }
    h
}

/// Complex matrices `U_theta(t)` for each time, recorded on `tape`. The
/// output is not projected onto the unitary group.
pub fn forward_unitary_model(
    tape: &mut Tape,
    params: &ModelParameters,
    vars: &ParamVars,
    times: &[f64],
) -> Result<Vec<Var>, ModelError> {
    if !params.architecture.predicts_unitary() {
        return Err(ModelError::Mismatch {
            arch: params.architecture,
            detail: "predicts Pauli coefficients, not a unitary".into(),
        });
    }
    let out = mlp_forward(tape, vars, times);
    Ok((0..times.len()).map(|row| tape.row_to_complex(out, row)).collect())
}

/// `times.len() x terms` coefficient matrix, recorded on `tape`.
pub fn forward_coeff_model(
    tape: &mut Tape,
    params: &ModelParameters,
    vars: &ParamVars,
    times: &[f64],
) -> Result<Var, ModelError> {
    if params.architecture.predicts_unitary() {
        return Err(ModelError::Mismatch {
            arch: params.architecture,
            detail: "predicts a unitary, not Pauli coefficients".into(),
        });
    }
    Ok(mlp_forward(tape, vars, times))
}

/// Untracked convenience: the raw model matrix at `t`.
pub fn predict_matrix(params: &ModelParameters, t: f64) -> Result<ComplexMatrix, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = forward_unitary_model(&mut tape, params, &vars, &[t])?;
    Ok(tape.complex(out[0]).clone())
}

/// Untracked convenience: the predicted Pauli coefficients at `t`.
pub fn predict_coefficients(params: &ModelParameters, t: f64) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = forward_coeff_model(&mut tape, params, &vars, &[t])?;
    Ok(tape.real(out).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_arithmetic(widths: &[usize]) -> usize {
        // Independent of `parameter_count`: explicit sum over (in, out) pairs.
        let mut total = 0;
        for i in 0..widths.len() - 1 {
            total += widths[i] * widths[i + 1];
            total += widths[i + 1];
        }
        total
    }

    #[test]
    fn parameter_counts() {
        // 1*64+64 + 64*128+128 + 128*32+32
        assert_eq!(layer_arithmetic(&[1, 64, 128, 32]), 12576);
        assert_eq!(Architecture::Model2.parameter_count(), 12576);
        // 1*50+50 + 50*13+13
        assert_eq!(Architecture::Model7.parameter_count(), 763);
        assert_eq!(Architecture::Model8.parameter_count(), 865);
        for arch in [
            Architecture::Model2,
            Architecture::Model3,
            Architecture::Model4,
            Architecture::Model5,
            Architecture::Model6,
        ] {
            assert_eq!(arch.parameter_count(), layer_arithmetic(&arch.widths()));
        }
        let counts: Vec<usize> = (2..=6).map(|q| Architecture::direct(q).unwrap().parameter_count()).collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "grows with qubit count: {counts:?}");
        assert_eq!(init_parameters(Architecture::Model2, 1).parameter_count(), 12576);
    }

    #[test]
    fn output_sizes() {
        assert_eq!(*Architecture::Model2.widths().last().unwrap(), 2 * 4 * 4);
        assert_eq!(*Architecture::Model6.widths().last().unwrap(), 2 * 64 * 64);
        assert_eq!(*Architecture::Model7.widths().last().unwrap(), 13);
        assert_eq!(*Architecture::Model8.widths().last().unwrap(), 15);
        assert_eq!(Architecture::coefficients(2), Architecture::Coeff(2));
        assert_eq!(*Architecture::Coeff(2).widths().last().unwrap(), 3);
    }

    #[test]
    fn model2_output_is_4x4() {
        let p = init_parameters(Architecture::Model2, 3);
        assert_eq!(predict_matrix(&p, 0.4).unwrap().dim(), 4);
        assert!(predict_coefficients(&p, 0.4).is_err());
    }

    #[test]
    fn model6_output_is_64x64() {
        let p = ModelParameters::zeros(Architecture::Model6);
        assert_eq!(predict_matrix(&p, 0.1).unwrap().dim(), 64);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let p = ModelParameters::zeros(Architecture::Model2);
        assert_eq!(predict_matrix(&p, 0.7).unwrap(), ComplexMatrix::zeros(4));
        let c = ModelParameters::zeros(Architecture::Model7);
        assert_eq!(predict_coefficients(&c, 0.7).unwrap(), vec![0.0; 13]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_parameters(Architecture::Model2, 5);
        let b = init_parameters(Architecture::Model2, 5);
        let c = init_parameters(Architecture::Model2, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_shapes().unwrap();
        let k = 1.0 / 64f64.sqrt();
        assert!(a.layers[1].weight.iter().all(|w| w.abs() <= k));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = init_parameters(Architecture::Model2, 8);
        let a = predict_matrix(&p, 0.33).unwrap();
        let b = predict_matrix(&p, 0.33).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn reshape_matches_real_imag_split() {
        // Output vector [re(16) | im(16)] row-major.
        let p = init_parameters(Architecture::Model2, 2);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let raw = mlp_forward(&mut tape, &vars, &[0.5]);
        let flat = tape.real(raw).row(0).to_vec();
        let m = predict_matrix(&p, 0.5).unwrap();
        assert_eq!(m[(1, 2)].re, flat[6]);
        assert_eq!(m[(1, 2)].im, flat[16 + 6]);
    }

    #[test]
    fn architecture_ids() {
        for s in ["model2", "model6", "model7", "model8", "coeff3"] {
            assert_eq!(s.parse::<Architecture>().unwrap().id(), s);
        }
        assert!("model9".parse::<Architecture>().is_err());
        assert!("coeff0".parse::<Architecture>().is_err());
        assert!("resnet".parse::<Architecture>().is_err());
    }
}
