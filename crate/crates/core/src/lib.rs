//! Offline policy learning from mixed-quality demonstration data.
//!
//! The pipeline: generate or load an episode dataset, separate expert-like
//! episodes from the rest with a semi-supervised classifier, multiply the
//! kept data through rotational symmetry, and behavior-clone a policy in two
//! phases (broad pass on augmented data, short fine-tune on the raw subset).
//! A synthetic planar pushing environment with exact threefold symmetry and
//! ground-truth labels makes every stage verifiable end to end.

pub mod bctrainer;
pub mod dataset;
pub mod error;
pub mod evalharness;
pub mod expertfilter;
pub mod neuralnet;
pub mod rng;
pub mod symaug;
pub mod synthenv;

pub use dataset::{
    episodic_return, logistic_reward, Episode, EpisodeDataset, Label, ReturnHistogram,
    RewardKernelParams, Transition,
};
pub use error::{Error, FormatError, Result};
