//! Core algorithms for diffusion-based trajectory stitching in offline RL.
//!
//! The crate is organised around the stages of the augmentation pipeline:
//!
//! - [`traj`] — trajectory/dataset types, return accounting, normalization,
//!   and low/high-return pool partitioning.
//! - [`nn`] — a minimal dense numeric core: matrices, MLPs with analytic
//!   gradients, and an Adam optimizer.
//! - [`diffusion`] — cosine noise schedule, masked denoiser training, and
//!   conditional (inpainting) sampling over fixed-length state windows.
//! - [`aux`] — inverse dynamics, reward, and forward dynamics regressors.
//! - [`stitch`] — step estimation, state stitching, wrap-up, qualification,
//!   and the outer augmentation loop.
//! - [`env`] — a synthetic point-maze benchmark with a percentile
//!   behavior-cloning learner and policy evaluation.
//!
//! Everything here is `no_std` + `alloc`: file formats, checkpoints, and the
//! CLI live in the companion `trajstitch` crate. All randomness is drawn
//! from caller-provided [`rng::StreamRng`] streams so that runs are
//! reproducible bit-for-bit given a root seed.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod aux;
pub mod diffusion;
pub mod env;
pub mod nn;
pub mod rng;
pub mod stitch;
pub mod traj;

pub use nn::DenseMatrix;
