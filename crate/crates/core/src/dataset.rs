//! Simulated process-tomography datasets `(rho0, tau, rho_tau, U_tau)` on
//! uniform time grids, stored as JSON Lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix, DensityMatrix, LinalgError, UnitaryMatrix, C64};
use crate::pauli::{HamiltonianSpec, PauliError};
use crate::propagators::{PropagatorConfig, PropagatorError};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLES: usize = 11000;
/// Max-abs tolerance on `rho_tau - U rho0 U^dagger`.
pub const CONSISTENCY_TOL: f64 = 1e-8;
const GRID_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] PauliError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("file truncated: header announces {expected} records, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Uniform grid `{t_min, t_min + dt, ...}` clipped to `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(dt: f64) -> Result<Self, DatasetError> {
        let g = Self { t_min: 0.0, t_max: 1.0, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DatasetError::Grid(format!("step must be positive, got {}", self.dt)));
        }
        if !(self.t_min.is_finite() && self.t_max.is_finite() && self.t_min <= self.t_max) {
            return Err(DatasetError::Grid(format!("bad interval [{}, {}]", self.t_min, self.t_max)));
        }
        if self.t_min < 0.0 {
            return Err(DatasetError::Grid(format!("negative start time {}", self.t_min)));
        }
        Ok(())
    }

    /// Grid points; the last point snaps to `t_max` when within 1e-12.
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let t = self.t_min + k as f64 * self.dt;
            if t > self.t_max + GRID_EPS {
                break;
            }
            out.push(if (t - self.t_max).abs() <= GRID_EPS { self.t_max } else { t });
            k += 1;
        }
        out
    }

    pub fn contains(&self, t: f64) -> bool {
        self.points().iter().any(|&p| (p - t).abs() <= GRID_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    /// `|psi><psi|` from a normalized complex Gaussian vector.
    #[default]
    PureHaar,
    /// `G G^dagger / Tr(G G^dagger)` for a complex Gaussian `G`.
    MixedGinibre,
}

impl std::str::FromStr for StateKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pure-haar" | "pure" => Ok(StateKind::PureHaar),
            "mixed-ginibre" | "mixed" => Ok(StateKind::MixedGinibre),
            other => Err(format!("unknown state kind '{other}'")),
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn draw_density_matrix(rng: &mut impl Rng, dim: usize, kind: StateKind) -> DensityMatrix {
    let m = match kind {
        StateKind::PureHaar => {
            let psi: Vec<C64> = (0..dim).map(|_| gaussian(rng)).collect();
            let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            ComplexMatrix::from_fn(dim, |i, j| psi[i] * psi[j].conj() / norm2)
        }
        StateKind::MixedGinibre => {
            let g = ComplexMatrix::from_fn(dim, |_, _| gaussian(rng));
            let ggd = g.matmul_adjoint(&g).hermitian_part();
            let tr = ggd.trace().re;
            ggd.scale_real(1.0 / tr)
        }
    };
    DensityMatrix::new_unchecked(m)
}

pub fn random_density_matrix(qubits: usize, seed: u64, kind: StateKind) -> Result<DensityMatrix, DatasetError> {
    if qubits == 0 {
        return Err(DatasetError::Invalid("qubit count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_density_matrix(&mut rng, 1 << qubits, kind))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rho0: DensityMatrix,
    pub tau: f64,
    pub rho_tau: DensityMatrix,
    pub u_tau: UnitaryMatrix,
}

impl Sample {
    /// `max |rho_tau - U rho0 U^dagger|`.
    pub fn consistency_error(&self) -> f64 {
        let u = self.u_tau.matrix();
        let expected = u.matmul(self.rho0.matrix()).matmul_adjoint(u);
        self.rho_tau.matrix().max_abs_diff(&expected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: HamiltonianSpec,
    pub grid: TimeGrid,
    pub seed: u64,
    pub state_kind: StateKind,
    pub propagator: PropagatorConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn qubits(&self) -> usize {
        self.spec.qubits
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub propagator: PropagatorConfig,
    pub state_kind: StateKind,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            propagator: PropagatorConfig::default(),
            state_kind: StateKind::PureHaar,
        }
    }
}

/// Draws `tau` uniformly (with replacement) from the grid points and a fresh
/// initial state per sample.
pub fn generate_dataset(
    spec: &HamiltonianSpec,
    grid: TimeGrid,
    opts: GenerateOptions,
) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    grid.validate()?;
    if opts.n_samples == 0 {
        return Err(DatasetError::Invalid("sample count must be at least 1".into()));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(DatasetError::Grid("grid has no points".into()));
    }
    let unitaries = points
        .iter()
        .map(|&t| opts.propagator.propagate(spec, t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::with_capacity(opts.n_samples);
    for _ in 0..opts.n_samples {
        let k = rng.gen_range(0..points.len());
        let rho0 = draw_density_matrix(&mut rng, spec.dim(), opts.state_kind);
        let u_tau = unitaries[k].clone();
        let rho_tau = linalg::evolve_state(&rho0, &u_tau)?;
        samples.push(Sample { rho0, tau: points[k], rho_tau, u_tau });
    }
    Ok(Dataset {
        spec: spec.clone(),
        grid,
        seed: opts.seed,
        state_kind: opts.state_kind,
        propagator: opts.propagator,
        samples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: HamiltonianSpec,
    grid: TimeGrid,
    n_samples: usize,
    seed: u64,
    state_kind: StateKind,
    propagator: PropagatorConfig,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct Provenance {
    generator: String,
    version: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    index: usize,
    tau: f64,
    rho0: &'a ComplexMatrix,
    rho_tau: &'a ComplexMatrix,
    u_tau: &'a ComplexMatrix,
}

#[derive(Deserialize)]
struct RecordIn {
    index: usize,
    tau: f64,
    rho0: ComplexMatrix,
    rho_tau: ComplexMatrix,
    u_tau: ComplexMatrix,
}

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<(), DatasetError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        spec: d.spec.clone(),
        grid: d.grid,
        n_samples: d.samples.len(),
        seed: d.seed,
        state_kind: d.state_kind,
        propagator: d.propagator,
        provenance: Provenance {
            generator: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    serde_json::to_writer(&mut w, &header).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    for (index, s) in d.samples.iter().enumerate() {
        let rec = RecordOut {
            index,
            tau: s.tau,
            rho0: s.rho0.matrix(),
            rho_tau: s.rho_tau.matrix(),
            u_tau: s.u_tau.matrix(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_dataset(d, BufWriter::new(File::create(path)?))
}

/// Parses and re-validates every record.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset, DatasetError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| DatasetError::Header("empty file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| DatasetError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(DatasetError::Header(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    header.spec.validate()?;
    header.grid.validate()?;
    let dim = header.spec.dim();

    let mut samples = Vec::with_capacity(header.n_samples);
    for (index, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Record { index, reason };
        if index >= header.n_samples {
            return Err(bad(format!("more records than the {} announced", header.n_samples)));
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.index != index {
            return Err(bad(format!("index field {} out of sequence", rec.index)));
        }
        if !header.grid.contains(rec.tau) {
            return Err(bad(format!("tau {} is not a grid point", rec.tau)));
        }
        for (name, m) in [("rho0", &rec.rho0), ("rho_tau", &rec.rho_tau), ("u_tau", &rec.u_tau)] {
            if m.dim() != dim {
                return Err(bad(format!("{name} is {}x{0}, expected {dim}x{dim}", m.dim())));
            }
        }
        let u_tau = UnitaryMatrix::new(rec.u_tau, 1e-8).map_err(|e| bad(format!("u_tau: {e}")))?;
        let sample = Sample {
            rho0: DensityMatrix::new_unchecked(rec.rho0),
            tau: rec.tau,
            rho_tau: DensityMatrix::new_unchecked(rec.rho_tau),
            u_tau,
        };
        let err = sample.consistency_error();
        if err.is_nan() || err > CONSISTENCY_TOL {
            return Err(bad(format!("rho_tau differs from U rho0 U^dagger by {err:e}")));
        }
        DensityMatrix::validate(sample.rho0.matrix()).map_err(|e| bad(format!("rho0: {e}")))?;
        DensityMatrix::validate(sample.rho_tau.matrix()).map_err(|e| bad(format!("rho_tau: {e}")))?;
        samples.push(sample);
    }
    if samples.len() != header.n_samples {
        return Err(DatasetError::Truncated { expected: header.n_samples, found: samples.len() });
    }
    Ok(Dataset {
        spec: header.spec,
        grid: header.grid,
        seed: header.seed,
        state_kind: header.state_kind,
        propagator: header.propagator,
        samples,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// How often each grid point occurs as `tau`.
pub fn tau_histogram(d: &Dataset) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in &d.samples {
        let k = ((s.tau - d.grid.t_min) / d.grid.dt).round() as usize;
        *out.entry(k).or_insert(0) += 1;
    }
    out
}
