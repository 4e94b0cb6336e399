//! Complex linear algebra and deterministic random streams.

mod matrix;
pub mod rng;

pub use matrix::{
    hermitian_eigen, least_squares, norm2, pseudo_inverse, real_embed, svd_values, CMat,
    Cholesky, HermitianEigen, C64, GRAM_PIVOT_RATIO, RANK_TOLERANCE,
};
pub use rng::{rng_draw_gaussian, stream_id, RngStream, StreamRng};

/// Alias for complex vectors (observations, symbol estimates).
pub type CVec = Vec<C64>;
