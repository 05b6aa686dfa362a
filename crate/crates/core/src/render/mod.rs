//! Raster drawing helpers for training curves and annotated frames.

pub(crate) mod font;
pub(crate) mod plot;
