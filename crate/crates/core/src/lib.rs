pub mod dataset;
pub mod geo_attention;
pub mod geom;
pub mod harness;
pub mod io;
pub mod lighting;
pub mod localize;
pub mod matchers;
pub mod raster;
pub mod render;
pub mod terrain;
