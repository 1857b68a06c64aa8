//! Single-level 2D discrete wavelet transform in circulant-matrix form.
//!
//! For an `n×n` slice `X`, the subbands are `ll = L·X·Lᵀ`, `lh = H·X·Lᵀ`,
//! `hl = L·X·Hᵀ` and `hh = H·X·Hᵀ`, where `L` and `H` are the `⌊n/2⌋×n`
//! stride-2 circulant matrices of the low- and high-pass analysis filters
//! (periodic boundary). Multichannel input is transformed channel by channel.

mod filters;
mod transform;

pub use filters::{filter_bank, FilterBank, Wavelet};
pub use transform::{
    build_analysis_matrices, build_synthesis_matrices, circulant_matrix, dwt2, dwt2_direct, dwt_bands, idwt2,
    Band, DwtPlan, SubbandSet,
};
