//! `unitary-interp`: generate Hamiltonians and datasets, train interpolating
//! networks, evaluate them and run multi-seed statistics.

mod error;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use unitary_interp::checkpoint::Checkpoint;
use unitary_interp::dataset::{self, GenerateOptions, StateKind, TimeGrid};
use unitary_interp::evaluation::{self, CurveMetadata, EvalOptions, StatsConfig};
use unitary_interp::model::{self, Architecture};
use unitary_interp::optim::OptimizerState;
use unitary_interp::pauli::{sample_hamiltonian, Family, HamiltonianSpec, SamplingRanges};
use unitary_interp::propagators::{Method, PropagatorConfig, DEFAULT_STEPS};
use unitary_interp::training::{self, Strategy, TrainConfig, TrainError};

use error::CliError;
use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(name = "unitary-interp", version, about = "Learn unitary evolution of driven qubit systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random Hamiltonian and write it as JSON.
    GenHamiltonian(GenHamiltonianArgs),
    /// Simulate a tomography dataset for a Hamiltonian.
    GenDataset(GenDatasetArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Fidelity of a trained model against the exact evolution.
    Evaluate(EvaluateArgs),
    /// Repeat generate/train/evaluate over many seeds.
    Stats(StatsArgs),
    /// Print the propagator U(t) of a Hamiltonian.
    Propagate(PropagateArgs),
}

#[derive(Args)]
struct GenHamiltonianArgs {
    #[arg(long)]
    qubits: usize,
    #[arg(long, default_value = "general")]
    family: Family,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw amplitudes from [0, 1] without the 1/sqrt(terms) scaling.
    #[arg(long)]
    raw_amplitudes: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DatasetSettings {
    dt: f64,
    samples: usize,
    seed: u64,
    method: Method,
    steps: usize,
    state: StateKind,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            dt: 0.1,
            samples: dataset::DEFAULT_SAMPLES,
            seed: 0,
            method: Method::Magnus2,
            steps: DEFAULT_STEPS,
            state: StateKind::PureHaar,
        }
    }
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    ham: PathBuf,
    /// JSON file with default settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    steps: Option<usize>,
    /// pure-haar or mixed-ginibre initial states.
    #[arg(long)]
    state: Option<StateKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Defaults to the network matching the dataset and strategy.
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Collocation points per batch.
    #[arg(long)]
    n_f: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ham: PathBuf,
    #[arg(long, default_value_t = evaluation::EVAL_POINTS)]
    points: usize,
    #[arg(long)]
    svd_correct: bool,
    /// Target propagator; defaults to magnus2 up to six qubits, trotter above.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Curve CSV; a JSON mirror is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StatsSettings {
    runs: usize,
    qubits: usize,
    family: Family,
    dt: f64,
    samples: usize,
    strategy: Strategy,
    arch: Option<Architecture>,
    seed: u64,
    pin_seed: Option<u64>,
    svd_correct: bool,
    train: TrainConfig,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            runs: 100,
            qubits: 2,
            family: Family::General,
            dt: 0.1,
            samples: dataset::DEFAULT_SAMPLES,
            strategy: Strategy::DirectUnitary,
            arch: None,
            seed: 0,
            pin_seed: None,
            svd_correct: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    /// Base seed; run k uses base + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Use one seed for every run (all runs identical).
    #[arg(long)]
    pin_seed: Option<u64>,
    /// Report raw fidelities instead of nearest-unitary corrected ones.
    #[arg(long)]
    raw: bool,
    #[arg(long, env = "UNITARY_INTERP_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    ham: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    t: f64,
    #[arg(long, default_value = "magnus2")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", p.display()))),
    }
}

fn load_spec(path: &Path) -> Result<HamiltonianSpec, CliError> {
    let spec: HamiltonianSpec = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Contract(format!("{}: invalid Hamiltonian file: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn manifest_path_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

fn gen_hamiltonian(a: GenHamiltonianArgs) -> Result<(), CliError> {
    if a.qubits == 0 {
        return Err(CliError::Usage("--qubits must be at least 1".into()));
    }
    let ranges = SamplingRanges { normalize_amplitude: !a.raw_amplitudes, ..SamplingRanges::default() };
    let spec = sample_hamiltonian(a.qubits, a.family, a.seed, ranges).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_text(&a.out, &text)?;
    println!("{} terms", spec.num_terms());
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let mut s: DatasetSettings = read_config(a.config.as_deref())?;
    s.dt = a.dt.unwrap_or(s.dt);
    s.samples = a.samples.unwrap_or(s.samples);
    s.seed = a.seed.unwrap_or(s.seed);
    s.method = a.method.unwrap_or(s.method);
    s.steps = a.steps.unwrap_or(s.steps);
    s.state = a.state.unwrap_or(s.state);
    if s.samples == 0 || s.steps == 0 {
        return Err(CliError::Usage("--samples and --steps must be positive".into()));
    }

    let spec = load_spec(&a.ham)?;
    let mut manifest = ManifestBuilder::start(&s);
    manifest.seed("dataset", s.seed).seed("hamiltonian", spec.seed);
    let grid = TimeGrid::new(s.dt).map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = GenerateOptions {
        n_samples: s.samples,
        seed: s.seed,
        propagator: PropagatorConfig { method: s.method, steps: s.steps },
        state_kind: s.state,
    };
    let data = dataset::generate_dataset(&spec, grid, opts)?;
    dataset::save_dataset(&data, &a.out)?;
    manifest.artifact(&a.out);
    manifest.write(&manifest_path_for(&a.out), true)?;
    log::info!("wrote {} samples to {}", data.n_samples(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    architecture: Architecture,
    dataset: &'a Path,
    train: &'a TrainConfig,
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batches_per_epoch = a.batches.or(cfg.batches_per_epoch);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.n_f = a.n_f.or(cfg.n_f);
    cfg.integration_steps = a.steps.unwrap_or(cfg.integration_steps);
    cfg.optimizer.lr = a.lr.unwrap_or(cfg.optimizer.lr);
    cfg.optimizer.weight_decay = a.weight_decay.unwrap_or(cfg.optimizer.weight_decay);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if cfg.batch_size == 0 || cfg.batches() == 0 || cfg.integration_steps == 0 {
        return Err(CliError::Usage("batch size, batch count and steps must be positive".into()));
    }
    if !(cfg.optimizer.lr > 0.0) {
        return Err(CliError::Usage("--lr must be positive".into()));
    }

    let data = dataset::load_dataset(&a.dataset)?;
    let q = data.qubits();
    let arch = match a.arch {
        Some(arch) => arch,
        None if cfg.strategy.is_effective() => Architecture::coefficients(q),
        None => Architecture::direct(q)
            .ok_or_else(|| CliError::Contract(format!("no direct-unitary network for {q} qubits")))?,
    };
    training::check_compatibility(cfg.strategy, arch, &data.spec)?;

    create_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut manifest = ManifestBuilder::start(TrainSnapshot { architecture: arch, dataset: &a.dataset, train: &cfg });
    manifest.seed("train", cfg.seed).seed("dataset", data.seed).seed("hamiltonian", data.spec.seed);
    let manifest_path = a.out.join("manifest.json");

    let params = model::init_parameters(arch, cfg.seed);
    let checkpoint = |p: &model::ModelParameters, epoch: usize, opt: Option<&OptimizerState>| -> Checkpoint {
        Checkpoint::new(p, cfg.strategy, cfg.integration_steps, cfg.seed, epoch, opt)
    };
    let model_path = a.out.join("model.json");
    if cfg.epochs == 0 {
        checkpoint(&params, 0, None).save(&model_path)?;
        manifest.artifact(&model_path);
        return manifest.write(&manifest_path, true);
    }

    let mut write_error = None;
    let mut saved = Vec::new();
    let result = training::train_from(&data, &cfg, params, |r| {
        if r.epoch % 10 == 0 || r.epoch + 1 == cfg.epochs {
            log::info!("epoch {:>5}  loss {:.6e}", r.epoch, r.loss.total);
        }
        if r.checkpoint_due {
            let path = ckpt_dir.join(format!("epoch_{:05}.json", r.epoch + 1));
            match checkpoint(r.params, r.epoch + 1, Some(r.optimizer)).save(&path) {
                Ok(()) => saved.push(path),
                Err(e) => write_error = Some(CliError::from(e)),
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    for p in &saved {
        manifest.artifact(p);
    }
    let out = match result {
        Ok(out) => out,
        Err(TrainError::NonFinite { epoch, batch, loss, params }) => {
            let dump = a.out.join("diverged.json");
            checkpoint(&params, epoch, None).save(&dump)?;
            manifest.artifact(&dump);
            manifest.write(&manifest_path, true)?;
            return Err(CliError::Numerical(format!(
                "non-finite loss at epoch {epoch}, batch {batch} ({loss:?}); parameters dumped to {}",
                dump.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    checkpoint(&out.params, cfg.epochs, Some(&out.optimizer)).save(&model_path)?;
    let loss_path = a.out.join("loss.csv");
    write_text(&loss_path, &training::history_csv(&out.history))?;
    manifest.artifact(&model_path).artifact(&loss_path);
    manifest.write(&manifest_path, true)?;
    if let Some(last) = out.history.last() {
        println!("final loss {:.6e}", last.loss.total);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.model)?;
    let params = ckpt.parameters()?;
    let spec = load_spec(&a.ham)?;
    let mut opts = EvalOptions::for_qubits(spec.qubits);
    opts.points = a.points;
    opts.svd_correct = a.svd_correct;
    if let Some(m) = a.method {
        opts.target.method = m;
    }
    opts.target.steps = a.steps;
    if opts.points == 0 || opts.target.steps == 0 {
        return Err(CliError::Usage("--points and --steps must be positive".into()));
    }
    let meta = CurveMetadata { seed: ckpt.seed, dt: None, strategy: ckpt.strategy, architecture: ckpt.architecture };
    let curve = evaluation::evaluate_model(&params, &spec, ckpt.strategy, ckpt.integration_steps, &opts, meta)?;
    write_text(&a.out, &curve.to_csv())?;
    let json = a.out.with_extension("json");
    write_text(&json, &serde_json::to_string_pretty(&curve).expect("curve serializes"))?;
    match (curve.mean_svd(), curve.min_svd()) {
        (Some(mean), Some(min)) => println!(
            "mean fidelity {:.6} (min {:.6}); corrected {mean:.6} (min {min:.6})",
            curve.mean_raw(),
            curve.min_raw()
        ),
        _ => println!("mean fidelity {:.6} (min {:.6})", curve.mean_raw(), curve.min_raw()),
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), CliError> {
    let mut s: StatsSettings = read_config(a.config.as_deref())?;
    s.runs = a.runs.unwrap_or(s.runs);
    s.qubits = a.qubits.unwrap_or(s.qubits);
    s.family = a.family.unwrap_or(s.family);
    s.dt = a.dt.unwrap_or(s.dt);
    s.samples = a.samples.unwrap_or(s.samples);
    s.strategy = a.strategy.unwrap_or(s.strategy);
    s.arch = a.arch.or(s.arch);
    s.seed = a.seed.unwrap_or(s.seed);
    s.pin_seed = a.pin_seed.or(s.pin_seed);
    if a.raw {
        s.svd_correct = false;
    }
    s.train.strategy = s.strategy;
    s.train.epochs = a.epochs.unwrap_or(s.train.epochs);
    s.train.batches_per_epoch = a.batches.or(s.train.batches_per_epoch);
    if s.runs < 2 {
        return Err(CliError::Usage("--runs must be at least 2".into()));
    }
    if s.qubits == 0 || s.samples == 0 {
        return Err(CliError::Usage("--qubits and --samples must be positive".into()));
    }
    TimeGrid::new(s.dt).map_err(|e| CliError::Usage(e.to_string()))?;
    let arch = match s.arch {
        Some(a) => a,
        None if s.strategy.is_effective() => Architecture::coefficients(s.qubits),
        None => Architecture::direct(s.qubits)
            .ok_or_else(|| CliError::Usage(format!("no direct-unitary network for {} qubits", s.qubits)))?,
    };
    let workers = a.workers.unwrap_or(1).max(1);
    let mut eval = EvalOptions::for_qubits(s.qubits);
    eval.svd_correct = s.svd_correct;
    let cfg = StatsConfig {
        n_runs: s.runs,
        qubits: s.qubits,
        family: s.family,
        dt: s.dt,
        n_samples: s.samples,
        architecture: arch,
        train: s.train.clone(),
        base_seed: s.seed,
        pinned_seed: s.pin_seed,
        ranges: SamplingRanges::default(),
        dataset_propagator: PropagatorConfig::default(),
        eval,
        workers,
    };

    let runs_dir = a.out.join("runs");
    create_dir(&runs_dir)?;
    let manifest_path = a.out.join("manifest.json");
    let mut manifest = ManifestBuilder::start(&s);
    manifest.seed("base", s.seed);
    if let Some(p) = s.pin_seed {
        manifest.seed("pinned", p);
    }
    manifest.manifest.completed_runs = Some(Vec::new());
    manifest.write(&manifest_path, false)?;
    let shared = Mutex::new((manifest, None::<CliError>));

    let outcome = evaluation::run_statistics(&cfg, |k, r| {
        let mut guard = shared.lock().expect("manifest lock");
        let (m, err) = &mut *guard;
        match r {
            Ok(curve) => {
                let path = runs_dir.join(format!("run_{k:04}.csv"));
                if let Err(e) = write_text(&path, &curve.to_csv()) {
                    *err = Some(e);
                    return;
                }
                m.artifact(&path);
                m.manifest.completed_runs.get_or_insert_with(Vec::new).push(k);
                log::info!("run {k}: mean fidelity {:.6}", curve.preferred().iter().sum::<f64>() / curve.times.len() as f64);
            }
            Err(msg) => {
                m.manifest.failed_runs.insert(k, msg.clone());
                log::warn!("run {k} failed: {msg}");
            }
        }
        if let Err(e) = m.write(&manifest_path, false) {
            *err = Some(e);
        }
    })?;
    let (mut manifest, err) = shared.into_inner().expect("manifest lock");
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(done) = manifest.manifest.completed_runs.as_mut() {
        done.sort_unstable();
    }
    let Some(summary) = outcome.summary.as_ref() else {
        manifest.write(&manifest_path, true)?;
        return Err(CliError::Numerical(format!(
            "only {} of {} runs completed; no summary",
            outcome.completed().len(),
            s.runs
        )));
    };
    let csv = a.out.join("summary.csv");
    let json = a.out.join("summary.json");
    write_text(&csv, &summary.to_csv())?;
    write_text(&json, &serde_json::to_string_pretty(summary).expect("summary serializes"))?;
    manifest.artifact(&csv).artifact(&json);
    manifest.write(&manifest_path, true)?;
    let min_mu = summary.f_mu.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sigma = summary.f_sigma.iter().copied().fold(0.0, f64::max);
    println!("{} runs: min F_mu {min_mu:.6}, max F_sigma {max_sigma:.6}", summary.n_runs);
    if outcome.is_partial() {
        log::warn!("{} runs failed", s.runs - summary.n_runs);
    }
    Ok(())
}

#[derive(Serialize)]
struct PropagateOutput<'a> {
    t: f64,
    method: Method,
    steps: usize,
    unitary: &'a unitary_interp::linalg::ComplexMatrix,
    unitarity_defect: f64,
}

fn propagate(a: PropagateArgs) -> Result<(), CliError> {
    if !(a.t >= 0.0 && a.t.is_finite()) {
        return Err(CliError::Usage(format!("--t must be a non-negative time, got {}", a.t)));
    }
    if a.steps == 0 {
        return Err(CliError::Usage("--steps must be positive".into()));
    }
    let spec = load_spec(&a.ham)?;
    let u = PropagatorConfig { method: a.method, steps: a.steps }.propagate(&spec, a.t)?;
    let out = PropagateOutput {
        t: a.t,
        method: a.method,
        steps: a.steps,
        unitary: u.matrix(),
        unitarity_defect: u.matrix().unitarity_defect(),
    };
    println!("{}", serde_json::to_string(&out).expect("output serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenHamiltonian(a) => gen_hamiltonian(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::Propagate(a) => propagate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
