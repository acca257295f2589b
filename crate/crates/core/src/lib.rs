pub mod breslow;
pub mod cox;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linearization;
pub mod quadrature;
pub mod risk;
pub mod step;
pub mod truth;
