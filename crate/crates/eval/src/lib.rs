//! Evaluation tooling around `tm3_core`: OTB-layout sequence I/O, one-pass
//! evaluation curves, synthetic sequences and CSV/SVG output.

pub mod config;
pub mod error;
pub mod metrics;
pub mod output;
pub mod run;
pub mod sequence;
pub mod synth;

pub use config::{parse_tracker_config, parse_key_values};
pub use error::{EvalError, Result};
pub use metrics::{center_error, ope_metrics, OpeReport};
pub use output::{read_results_csv, write_metrics_csv, write_results_csv, write_theory_csv, ResultRow};
pub use run::{evaluate, run_tracker};
pub use sequence::{load_sequence, parse_groundtruth, write_sequence, SequenceBundle};
pub use synth::{parse_synth_spec, standard_spec, synth_sequence, synthetic_suite, Occlusion, SynthSpec, SyntheticSequence};
