//! Competitor feature extractors: bi-directional PCA feature matrices, Haar
//! wavelet-packet statistics and Harris-corner intensity vectors.

mod bdpca;
mod harris;
mod wavelet;

pub use bdpca::{bdpca_features, bdpca_reconstruct, bdpca_scatters, bdpca_train, BdpcaModel};
pub use harris::{harris_corners, harris_features, harris_response, Corner, HarrisConfig, HarrisFeature};
pub use wavelet::{haar_split, wavelet_features, wavelet_packet, Subband, WaveletFeature};
