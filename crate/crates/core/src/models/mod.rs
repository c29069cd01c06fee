//! Latent dynamics models: deterministic (rnn), stochastic (ssm) and
//! recurrent state-space (rssm), with image encoder and decoders.

mod config;
mod latent;
mod nets;
mod sequence;

pub use config::{Activation, ConvLayer, Family, ModelConfig};
pub use latent::{divergence, Belief, LatentModel, LatentState, LatentVar, SequenceModel, Transition};
pub use nets::{check_params, init_params, param_specs, ParamSpec};
pub use sequence::{filter_sequence, rollout_prior, slice_state, stack_states, FilterOutput};

#[cfg(test)]
mod tests;
