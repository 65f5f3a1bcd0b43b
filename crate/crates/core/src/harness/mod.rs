//! Data generation, file formats, configuration, scenarios and reports.
pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod report;
pub mod scenario;
pub mod scenes;

pub use ablation::{run_ablation, AblationKind, AblationRun};
pub use checkpoint::{state_from_checkpoint, state_to_checkpoint};
pub use config::{DataSpec, RunConfig, ScenarioKind, ScenarioSpec};
pub use report::{emit_report, MapImage};
pub use scenario::{evaluate, prepare, run_scenario, Prepared};
pub use scenes::gen_synth_scenes;
