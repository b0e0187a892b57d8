//! Square 2-D FFT over row-major `Array2<Complex64>` built on `rustfft`.
//!
//! Forward is unnormalized, inverse carries the 1/N² factor (numpy
//! convention). Plans are immutable and shared; scratch space is allocated
//! per call so concurrent transforms never share mutable state.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("side", &self.side).finish()
    }
}

impl Fft2 {
    pub fn new(side: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            side,
            forward: planner.plan_fft_forward(side),
            inverse: planner.plan_fft_inverse(side),
        }
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(&self.forward, data);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(&self.inverse, data);
        let norm = 1.0 / (self.side * self.side) as f64;
        data.mapv_inplace(|v| v * norm);
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut Array2<Complex64>) {
        assert_eq!(data.dim(), (self.side, self.side), "fft2 shape");
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // rows, then columns via transpose
        {
            let buf = data
                .as_slice_mut()
                .expect("fft2 requires standard row-major layout");
            plan.process_with_scratch(buf, &mut scratch);
        }
        transpose_square(data);
        {
            let buf = data.as_slice_mut().expect("row-major");
            plan.process_with_scratch(buf, &mut scratch);
        }
        transpose_square(data);
    }
}

fn transpose_square(data: &mut Array2<Complex64>) {
    let n = data.nrows();
    let buf = data.as_slice_mut().expect("row-major");
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Signed DFT frequency index for sample `k` of an `n`-point transform.
pub(crate) fn signed_index(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
