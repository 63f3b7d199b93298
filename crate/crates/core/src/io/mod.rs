//! File formats: point clouds, PPM images, feature rasters and the dataset
//! manifest.

pub mod cloud;
pub mod manifest;
pub mod ppm;
pub mod raster;
