//! A from-scratch convolutional neural network engine for classifying
//! blood-smear images, built around five block families (plain convolution
//! stacks, residual, dense-connectivity, squeeze-and-excitation, and grouped
//! convolution), a seeded training loop with early stopping, an image
//! augmentation pipeline, classification metrics, and soft-voting ensembles.
//!
//! Everything runs on the CPU over plain `f32` tensors with reverse-mode
//! automatic differentiation; no external ML runtime is involved. See the
//! `book/` directory for a guided tour.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

/// Whether a forward pass runs with training behaviour (batch statistics,
/// dropout masks) or inference behaviour (running statistics, no dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// 64-bit FNV-1a, used for artifact checksums and seed derivation.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mixes a base seed with stream identifiers into a new deterministic seed.
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * (parts.len() + 1));
    buf.extend_from_slice(&base.to_le_bytes());
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a64(&buf)
}
