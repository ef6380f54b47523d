//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod lu;
pub mod softfloat;

use ofrr::{DenseMatrix, FpFormat};
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, FpFormat::F64, |_, _| {
        rng.random_range(-1.0..1.0)
    })
}

pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> DenseMatrix {
    random_matrix(n, n, rng).symmetrized()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}
