//! Monte Carlo ray-tracing simulation of a focus-variation microscope.
//!
//! The crate covers the full virtual measurement chain: sample geometry
//! ([`scene`]), light–matter interaction ([`optics`]), the microscope optical
//! train ([`instrument`]), parallel forward tracing ([`render`]), vertical
//! scanning and shape-from-focus reconstruction ([`scan`], [`focus`]), detector
//! post-processing ([`psf`]), artifact export ([`output`]) and the run
//! configuration / experiment harness ([`config`], [`experiment`]).

pub mod config;
pub mod experiment;
pub mod focus;
pub mod geometry;
pub mod grid;
pub mod instrument;
pub mod optics;
pub mod output;
pub mod psf;
pub mod render;
pub mod rng;
pub mod scan;
pub mod scene;
