//! Three-stage morphable-model fitting to multi-view RGB-D frames and
//! warm-started sequence reconstruction.

mod adam;
mod config;
pub mod losses;
mod objective;
mod pipeline;
mod sequence;

pub use adam::{AdamBlock, AdamHyper};
pub use config::FitConfig;
pub use objective::{
    fuse_landmarks, ActiveBlocks, CameraView, Evaluation, FrameObservations, LossTerms, Objective,
    ParamGrads, Stage, Visibility,
};
pub use pipeline::{
    adam_step, fit_first_frame, fit_next_frame, reconstruct_frames, reconstruct_sequence,
    AdamMoments, FitState, FrameReport, SequenceResult, StageReport,
};
pub use sequence::{load_sequence, save_sequence, write_obj, SequenceData, SequenceManifest, SEQUENCE_FORMAT_VERSION};
