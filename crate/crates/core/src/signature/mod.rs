//! Topological condensation: windows of recent inputs are turned into k-NN graphs,
//! their normalized Laplacian spectra are quantized, and the result (plus a
//! support descriptor) becomes a discrete [`SpectralKey`].

mod condenser;
mod graph;
mod key;

use thiserror::Error;

use crate::numkernel::LinalgError;

pub use condenser::{window_key, window_support, BufferSource, ObservationBuffer, Routing, SignatureConfig, TopoCondenser};
pub use graph::{build_knn_graph, median_pairwise_distance, normalized_laplacian, spectral_signature, RawSignature};
pub use key::{coordinate_energy, quantize_key, support_of, KeyMode, SpectralKey};

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("buffer holds {len} points, need at least {needed}")]
    BufferTooSmall { len: usize, needed: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("adjacency must be square")]
    NotSquare,
    #[error("adjacency has a negative or non-finite weight")]
    NegativeWeight,
    #[error("graph with {nodes} nodes cannot provide {k} nonzero eigenvalues")]
    InsufficientSpectrum { nodes: usize, k: usize },
    #[error("malformed key string {0:?}")]
    BadKey(String),
    #[error("invalid signature config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
