//! Joint optimization of motion, cameras, scale and shape.

pub mod adam;
pub mod init;
pub mod pipeline;
pub mod problem;
pub mod window;

pub use adam::{Adam, AdamParams};
pub use init::{initialize, InitMethod};
pub use pipeline::{
    default_stages, optimize_window, run_pipeline, run_stage, run_windowed, write_trace_csv, PipelineConfig, RunResult, StageConfig, TraceRow, Unlock, WindowResult,
};
pub use problem::{build_mask, Ablation, CameraAnchored, OptVariables, PriorUsage, StepTargets, WindowProblem};
pub use window::{stitch_cameras, stitch_motion, WindowPlan};
