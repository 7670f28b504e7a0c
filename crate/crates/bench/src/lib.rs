//! Seeded fixtures shared by the benchmarks.

use adbn_core::{FrameTensor, Matrix, RbmParams, RngStream, VisibleKind};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

/// An RBM with N(0, 0.1²) weights and zero biases.
pub fn random_rbm(n_visible: usize, n_hidden: usize, kind: VisibleKind, seed: u64) -> RbmParams {
    let mut rng = RngStream::new(seed);
    let mut p = RbmParams::zeros(n_visible, n_hidden, kind);
    p.weights.as_mut_slice().iter_mut().for_each(|w| *w = 0.1 * rng.standard_normal());
    p
}

pub fn random_frames(n: usize, height: usize, width: usize, seed: u64) -> Vec<FrameTensor> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| {
            let values = (0..height * width).map(|_| rng.standard_normal()).collect();
            FrameTensor::new(height, width, values).expect("consistent dims")
        })
        .collect()
}
