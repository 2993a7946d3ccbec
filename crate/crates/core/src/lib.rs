//! Learning and interpolating unitary time-evolution operators of small
//! qubit systems driven by sinusoidal, time-dependent Hamiltonians.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pauli;
pub mod propagators;
pub mod training;
