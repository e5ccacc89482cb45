//! Counterfactual crowd simulation and causal-awareness evaluation for
//! multi-agent trajectory forecasting.
//!
//! * [`sim`]: ORCA crowd stepper with field-of-view perception.
//! * [`counterfactual`]: paired agent-removal rollouts and causal annotation.
//! * [`scenario`]: seeded dataset split generators.
//! * [`dataset`]: newline-delimited scene, manifest and prediction files.
//! * [`metrics`]: ADE, FDE, average causal error and robustness measures.
//! * [`learn`]: causal regularisers and a small encoder/decoder forecaster.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod counterfactual;
pub mod dataset;
pub mod learn;
pub mod metrics;
pub mod scenario;
pub mod seed;
pub mod sim;
