//! Engineering substrate for token-based robot policies.
//!
//! The crate is organised around the life cycle of a vision-language-action
//! style policy, scaled down to run on a laptop:
//!
//! * [`codec`] maps continuous actions onto the tail of a language-model
//!   vocabulary and back.
//! * [`data`] holds episode storage, curation filters and the weighted
//!   multi-dataset mixture sampler.
//! * [`policy`] is a per-dimension linear-softmax action head trained with
//!   next-token cross-entropy on action tokens, plus the decode modes used to
//!   escape all-zero predictions.
//! * [`serve`] exposes any policy over a length-prefixed JSON/TCP protocol and
//!   benchmarks control frequency.
//! * [`simlab`] is a 2D pick-and-place world with a scripted expert and
//!   blocking / non-blocking controllers.
//! * [`eval`] runs paired A/B evaluations and reports mean ± standard error.

pub mod codec;
pub mod data;
pub mod eval;
pub mod policy;
pub mod seed;
pub mod serve;
pub mod simlab;

pub use codec::{ActionCodec, ActionSpec, CodecError, DimQuantiles, TokenMap};
pub use data::{Episode, EpisodeMeta, MixtureSpec, Step};
pub use policy::{DecodeMode, FeatureEncoder, Prediction, TokenPolicy, TrainConfig};
