//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

pub mod auroc;
pub mod detectors;
pub mod gradients;
pub mod linalg;
pub mod stats;
