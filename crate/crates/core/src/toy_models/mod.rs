//! Desk-scale generative models, the reference quality function, the span
//! perturbation oracle and exhaustive enumeration of the output space.

mod enumerate;
mod markov;
mod perturb;
mod quality;
pub mod text_format;

pub use enumerate::{enumerate_outputs, OutputSpace, DEFAULT_ENUMERATION_CAP};
pub use markov::{log_sum_exp, sample_index, MarkovModel};
pub use perturb::{top_p_truncate, SpanPerturber};
pub use quality::{ReferenceQuality, DEFAULT_LOG_FLOOR};
