//! Physics-informed loss and the training loop for the direct-unitary and
//! effective-Hamiltonian strategies.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphError, Tape, Var};
use crate::dataset::{Dataset, Sample};
use crate::linalg::{ComplexMatrix, C64, ONE};
use crate::model::{self, Architecture, ModelError, ModelParameters, ParamVars};
use crate::optim::{adamw_step, AdamWConfig, LayerGrads, OptimError, OptimizerState};
use crate::pauli::{Family, HamiltonianSpec};
use crate::propagators::DEFAULT_STEPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// The network outputs `U_theta(t)` directly.
    #[serde(rename = "direct")]
    DirectUnitary,
    /// The network outputs Pauli coefficients; `U` comes from Magnus-2.
    EffectiveMagnus,
    /// The network outputs Pauli coefficients; `U` comes from a Trotter product.
    EffectiveTrotter,
}

impl Strategy {
    pub fn is_effective(self) -> bool {
        !matches!(self, Strategy::DirectUnitary)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::DirectUnitary => "direct",
            Strategy::EffectiveMagnus => "effective-magnus",
            Strategy::EffectiveTrotter => "effective-trotter",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Strategy::DirectUnitary),
            "effective-magnus" => Ok(Strategy::EffectiveMagnus),
            "effective-trotter" => Ok(Strategy::EffectiveTrotter),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    /// `None` means 100 for the direct strategy and 10 for effective ones.
    pub batches_per_epoch: Option<usize>,
    pub batch_size: usize,
    /// Collocation points per batch; `None` means `batch_size` for the direct
    /// strategy and 0 for effective ones.
    pub n_f: Option<usize>,
    pub integration_steps: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Emit a checkpoint event after every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::DirectUnitary,
            epochs: 1000,
            batches_per_epoch: None,
            batch_size: 10,
            n_f: None,
            integration_steps: DEFAULT_STEPS,
            optimizer: AdamWConfig::default(),
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self { strategy, ..Self::default() }
    }

    pub fn batches(&self) -> usize {
        self.batches_per_epoch.unwrap_or(if self.strategy.is_effective() { 10 } else { 100 })
    }

    pub fn collocation_points(&self) -> usize {
        self.n_f.unwrap_or(if self.strategy.is_effective() { 0 } else { self.batch_size })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub state_term: f64,
    pub unitary_target_term: f64,
    pub unitarity_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.state_term.is_finite()
            && self.unitary_target_term.is_finite()
            && self.unitarity_term.is_finite()
            && self.total.is_finite()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Mismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss:?}")]
    NonFinite { epoch: usize, batch: usize, loss: LossBreakdown, params: Box<ModelParameters> },
}

/// Checks that `arch` can be trained with `strategy` on data generated from
/// `layout`.
pub fn check_compatibility(strategy: Strategy, arch: Architecture, layout: &HamiltonianSpec) -> Result<(), TrainError> {
    if arch.qubits() != layout.qubits {
        return Err(TrainError::Mismatch(format!(
            "{arch} is built for {} qubits but the data has {}",
            arch.qubits(),
            layout.qubits
        )));
    }
    match strategy {
        Strategy::DirectUnitary if !arch.predicts_unitary() => Err(TrainError::Mismatch(format!(
            "the direct strategy needs a unitary-output network, {arch} predicts Pauli coefficients"
        ))),
        Strategy::DirectUnitary => Ok(()),
        _ if layout.family != Family::IsingNN => Err(TrainError::Mismatch(format!(
            "the {strategy} strategy needs an ising-family Hamiltonian, the data uses the {} family",
            layout.family
        ))),
        _ if arch.predicts_unitary() => Err(TrainError::Mismatch(format!(
            "the {strategy} strategy needs a coefficient network, {arch} predicts unitaries"
        ))),
        _ => {
            let out = *arch.widths().last().expect("non-empty widths");
            if out != layout.num_terms() {
                return Err(TrainError::Mismatch(format!(
                    "{arch} outputs {out} coefficients, the layout has {} terms",
                    layout.num_terms()
                )));
            }
            Ok(())
        }
    }
}

/// `U_theta(t)` for each time; direct strategies read the network output,
/// effective strategies reconstruct from predicted coefficients.
pub fn model_unitaries(
    tape: &mut Tape,
    params: &ModelParameters,
    vars: &ParamVars,
    times: &[f64],
    layout: &HamiltonianSpec,
    strategy: Strategy,
    steps: usize,
) -> Result<Vec<Var>, TrainError> {
    check_compatibility(strategy, params.architecture, layout)?;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    match strategy {
        Strategy::DirectUnitary => Ok(model::forward_unitary_model(tape, params, vars, times)?),
        _ => reconstruct_unitary_from_coeffs(tape, params, vars, times, layout, strategy, steps),
    }
}

/// Differentiable reconstruction of `U(t)` from the coefficient network.
///
/// Magnus-2 samples the network at the `steps + 1` trapezoid nodes of
/// `[0, t]`; Trotter at the `steps` left endpoints. Both mirror the
/// ground-truth propagators. All sample times of all `times` go through the
/// network in one batch.
pub fn reconstruct_unitary_from_coeffs(
    tape: &mut Tape,
    params: &ModelParameters,
    vars: &ParamVars,
    times: &[f64],
    layout: &HamiltonianSpec,
    strategy: Strategy,
    steps: usize,
) -> Result<Vec<Var>, TrainError> {
    if !strategy.is_effective() {
        return Err(TrainError::Mismatch("reconstruction needs an effective strategy".into()));
    }
    if steps == 0 {
        return Err(TrainError::Config("integration_steps must be at least 1".into()));
    }
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(TrainError::Config(format!("evolution time must be non-negative, got {t}")));
    }
    let nodes = if strategy == Strategy::EffectiveMagnus { steps + 1 } else { steps };
    let mut sample_times = Vec::with_capacity(times.len() * nodes);
    for &t in times {
        let dt = t / steps as f64;
        sample_times.extend((0..nodes).map(|m| m as f64 * dt));
    }
    let coeffs = model::forward_coeff_model(tape, params, vars, &sample_times)?;
    let basis: Arc<[ComplexMatrix]> = layout.basis().into();
    let dim = layout.dim();

    let mut out = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if t == 0.0 {
            out.push(tape.input_complex(ComplexMatrix::identity(dim)));
            continue;
        }
        let dt = t / steps as f64;
        let h: Vec<Var> = (0..nodes).map(|m| tape.row_combination(coeffs, i * nodes + m, basis.clone())).collect();
        let u = match strategy {
            Strategy::EffectiveTrotter => {
                let mut u = tape.expm_hermitian(h[0], dt)?;
                for &hm in &h[1..] {
                    let step = tape.expm_hermitian(hm, dt)?;
                    u = tape.matmul(step, u);
                }
                u
            }
            _ => {
                let generator = magnus2_generator(tape, &h, dt);
                tape.expm_hermitian(generator, 1.0)?
            }
        };
        out.push(u);
    }
    Ok(out)
}

/// `i (O1 + O2)` on the tape, i.e. the Hermitian `G` with `U = exp(-i G)`,
/// using the same trapezoidal scheme as the ground-truth Magnus propagator.
fn magnus2_generator(tape: &mut Tape, h: &[Var], dt: f64) -> Var {
    let n = h.len() - 1;
    let mut terms: Vec<(Var, C64)> = Vec::with_capacity(2 * h.len());
    let mut prefix: Option<Var> = None;
    for a in 0..=n {
        let w = if a == 0 || a == n { 0.5 * dt } else { dt };
        // i * (-i w h_a) = w h_a
        terms.push((h[a], C64::new(w, 0.0)));
        if a > 0 {
            let half = C64::new(0.5 * dt, 0.0);
            let mut parts = vec![(h[a - 1], half), (h[a], half)];
            if let Some(p) = prefix {
                parts.push((p, ONE));
            }
            let s = tape.weighted_sum(parts);
            prefix = Some(s);
            let c = tape.commutator(h[a], s);
            // i * (-w / 2) [h_a, S_a]
            terms.push((c, C64::new(0.0, -0.5 * w)));
        }
    }
    tape.weighted_sum(terms)
}

/// Loss terms from already-computed model unitaries: `us[i]` belongs to
/// `batch[i]`, `colloc[k]` to the k-th collocation time.
pub fn loss_from_unitaries(
    tape: &mut Tape,
    us: &[Var],
    batch: &[&Sample],
    colloc: &[Var],
) -> Result<(Var, LossBreakdown), TrainError> {
    if batch.is_empty() || us.len() != batch.len() {
        return Err(TrainError::EmptyBatch);
    }
    let mut state_terms = Vec::with_capacity(batch.len());
    let mut target_terms = Vec::with_capacity(batch.len());
    for (&u, s) in us.iter().zip(batch) {
        let evolved = tape.evolve_state(u, s.rho0.matrix());
        let d_state = tape.sub_const(evolved, s.rho_tau.matrix());
        state_terms.push(tape.l1(d_state));
        let d_target = tape.sub_const(u, s.u_tau.matrix());
        target_terms.push(tape.l1(d_target));
    }
    let state = tape.mean_scalars(state_terms);
    let target = tape.mean_scalars(target_terms);
    let mut parts = vec![state, target];
    let unitarity = if colloc.is_empty() {
        None
    } else {
        let dim = tape.complex(colloc[0]).dim();
        let id = ComplexMatrix::identity(dim);
        let terms = colloc
            .iter()
            .map(|&u| {
                let ud = tape.adjoint(u);
                let uud = tape.matmul(u, ud);
                let d = tape.sub_const(uud, &id);
                tape.l1(d)
            })
            .collect();
        let m = tape.mean_scalars(terms);
        parts.push(m);
        Some(m)
    };
    let total = tape.sum_scalars(parts);
    let breakdown = LossBreakdown {
        state_term: tape.scalar(state),
        unitary_target_term: tape.scalar(target),
        unitarity_term: unitarity.map_or(0.0, |v| tape.scalar(v)),
        total: tape.scalar(total),
    };
    Ok((total, breakdown))
}

/// The physics-informed loss: mean state misfit plus mean unitary misfit over
/// the batch, plus mean unitarity violation over the collocation times. All
/// norms are element-wise l1.
pub fn compute_loss(
    tape: &mut Tape,
    params: &ModelParameters,
    vars: &ParamVars,
    batch: &[&Sample],
    collocation: &[f64],
    cfg: &TrainConfig,
    layout: &HamiltonianSpec,
) -> Result<(Var, LossBreakdown), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut times: Vec<f64> = batch.iter().map(|s| s.tau).collect();
    times.extend_from_slice(collocation);
    let all = model_unitaries(tape, params, vars, &times, layout, cfg.strategy, cfg.integration_steps)?;
    let (us, colloc) = all.split_at(batch.len());
    loss_from_unitaries(tape, us, batch, colloc)
}

/// Loss value and parameter gradients for one batch.
pub fn loss_and_gradients(
    params: &ModelParameters,
    batch: &[&Sample],
    collocation: &[f64],
    cfg: &TrainConfig,
    layout: &HamiltonianSpec,
) -> Result<(LossBreakdown, LayerGrads), TrainError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let (root, breakdown) = compute_loss(&mut tape, params, &vars, batch, collocation, cfg, layout)?;
    if !breakdown.is_finite() {
        return Ok((breakdown, Vec::new()));
    }
    let grads = tape.backward(root)?;
    let layer_grads = vars
        .0
        .iter()
        .map(|&(w, b)| {
            let gw = grads.or_zeros(w, tape.value(w)).as_real().clone();
            let gb = grads.or_zeros(b, tape.value(b)).as_real().clone();
            (gw, gb)
        })
        .collect();
    Ok((breakdown, layer_grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// State handed to the observer after each epoch.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub params: &'a ModelParameters,
    pub optimizer: &'a OptimizerState,
    /// True when `epoch + 1` is a multiple of `checkpoint_every`.
    pub checkpoint_due: bool,
}

pub struct TrainOutcome {
    pub params: ModelParameters,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochLoss>,
}

/// Trains freshly initialized parameters (seeded by `cfg.seed`).
pub fn train(dataset: &Dataset, cfg: &TrainConfig, arch: Architecture) -> Result<TrainOutcome, TrainError> {
    let params = model::init_parameters(arch, cfg.seed);
    train_from(dataset, cfg, params, |_| {})
}

/// Trains `params` for `cfg.epochs` epochs, calling `observer` after each one.
pub fn train_from(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut params: ModelParameters,
    mut observer: impl FnMut(&EpochReport<'_>),
) -> Result<TrainOutcome, TrainError> {
    check_compatibility(cfg.strategy, params.architecture, &dataset.spec)?;
    params.check_shapes()?;
    if cfg.batch_size == 0 || cfg.batches() == 0 {
        return Err(TrainError::Config("batch_size and batches_per_epoch must be positive".into()));
    }
    if cfg.integration_steps == 0 {
        return Err(TrainError::Config("integration_steps must be at least 1".into()));
    }
    if dataset.samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }

    let mut optimizer = OptimizerState::new(cfg.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    let n_f = cfg.collocation_points();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        optimizer.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut cursor = 0;
        let mut sum = LossBreakdown::default();
        for batch_idx in 0..cfg.batches() {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&dataset.samples[order[cursor]]);
                cursor += 1;
            }
            let colloc: Vec<f64> = (0..n_f).map(|_| rng.gen::<f64>()).collect();
            let (loss, grads) = loss_and_gradients(&params, &batch, &colloc, cfg, &dataset.spec)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: batch_idx, loss, params: Box::new(params) });
            }
            match adamw_step(&mut optimizer, &mut params, &grads) {
                Ok(()) => {}
                Err(OptimError::NonFinite { .. }) => {
                    return Err(TrainError::NonFinite { epoch, batch: batch_idx, loss, params: Box::new(params) });
                }
                Err(e) => return Err(e.into()),
            }
            sum.state_term += loss.state_term;
            sum.unitary_target_term += loss.unitary_target_term;
            sum.unitarity_term += loss.unitarity_term;
            sum.total += loss.total;
        }
        let n = cfg.batches() as f64;
        let mean = LossBreakdown {
            state_term: sum.state_term / n,
            unitary_target_term: sum.unitary_target_term / n,
            unitarity_term: sum.unitarity_term / n,
            total: sum.total / n,
        };
        history.push(EpochLoss { epoch, loss: mean });
        log::debug!("epoch {epoch}: loss {:.6e}", mean.total);
        let checkpoint_due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
        observer(&EpochReport { epoch, loss: mean, params: &params, optimizer: &optimizer, checkpoint_due });
    }
    Ok(TrainOutcome { params, optimizer, history })
}

/// Loss history as CSV with a header row.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,state_term,unitary_target_term,unitarity_term,total\n");
    for h in history {
        let l = h.loss;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, l.state_term, l.unitary_target_term, l.unitarity_term, l.total
        ));
    }
    out
}

/// Untracked `U_theta(t)` for evaluation.
pub fn predict_unitary(
    params: &ModelParameters,
    t: f64,
    layout: &HamiltonianSpec,
    strategy: Strategy,
    steps: usize,
) -> Result<ComplexMatrix, TrainError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let us = model_unitaries(&mut tape, params, &vars, &[t], layout, strategy, steps)?;
    Ok(tape.complex(us[0]).clone())
}
