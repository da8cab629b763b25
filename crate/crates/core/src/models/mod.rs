//! Task models and the semantic projection network.

mod bundle;
mod decoder;
mod mlp;
mod params;

pub use bundle::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader,
    ModelBundle, ParamEntry, TaskSpec,
};
pub use decoder::{
    beam_search, check_sequence, decoder_context, decoder_step, global_feature, initial_state,
    score_sequences, sequence_log_prob, DecoderContext, DecoderSpec, Hypothesis, SequenceTerms,
    StepOutput, EOS,
};
pub use mlp::{mlp_forward, mlp_rows, project, project_rows, Head, MlpSpec, ProjectionSpec};
pub use params::ParamSet;
