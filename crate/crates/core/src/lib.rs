//! Restriction-enzyme digest simulation, subsequence labeling and feature
//! extraction for applicability classifiers.

pub mod dataset;
pub mod enzymedb;
pub mod evalreport;
pub mod features;
pub mod seqcore;
pub mod sitescan;
pub mod synthsim;

pub use dataset::LabeledDataset;
pub use enzymedb::{Enzyme, EnzymeDb};
pub use features::FeatureVector;
pub use seqcore::DnaSequence;
pub use sitescan::Scanner;
pub use synthsim::Label;
