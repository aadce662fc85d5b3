//! Ground-to-satellite cross-view localization.
//!
//! Coarse stage: satellite crops are warped into the ground panorama frame by a
//! polar and a ground-plane projective transform, described by gradient
//! histograms ([`feat`]) and matched against a ground descriptor by circular
//! correlation over azimuth ([`dsm`]), optionally in the Fourier domain. Fine
//! stage: [`finegrain`] re-projects the retrieved crop around candidate camera
//! positions and scores every orientation with SSIM.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); images are `f32`.

pub mod dsm;
pub mod error;
pub mod eval;
pub mod feat;
pub mod finegrain;
pub mod img;
pub mod loss;
pub mod scalar;
pub mod synth;
pub mod xform;

pub use error::{Error, Result};
pub use img::Image;
pub use scalar::Real;

pub type FeatureVolumeF32 = feat::FeatureVolume<f32>;
pub type FeatureVolumeF64 = feat::FeatureVolume<f64>;
pub type DescriptorF32 = feat::Descriptor<f32>;
pub type DescriptorF64 = feat::Descriptor<f64>;
pub type PolarParamsF64 = xform::PolarParams<f64>;
pub type ProjParamsF64 = xform::ProjParams<f64>;
pub type SatPointF64 = xform::SatPoint<f64>;
