//! Simulation of frequency up-conversion of telecom single photons followed
//! by storage in an atomic frequency comb memory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod conversion;
pub mod counting;
pub mod error;
pub mod experiments;
pub mod holeburning;
pub mod propagation;
pub mod scenario;
pub mod spectrum;

pub use analysis::{fit_mu1, snr, FitMode, MuOneFit, SnrPoint};
pub use conversion::{ConverterParams, LossChain, NoiseModel, PumpSchedule};
pub use counting::{simulate_counts, CountHistogram, DetectionConfig, Window};
pub use error::{Result, SimError};
pub use experiments::{run_task, Calibration, Output, Table, Task};
pub use holeburning::{CombSpec, HyperfineStructure, IonEnsemble, ToothShape};
pub use propagation::{propagate, transfer_function, PulseEnvelope, TransferFunction};
pub use scenario::{load_scenario, preset, Experiment, Scenario};
pub use spectrum::{FrequencyGrid, SpectralFunction};
