#![allow(dead_code)]

pub mod naive_metrics;
pub mod gradcases;
pub mod invariants;
pub mod corpora;
