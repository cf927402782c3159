//! Thin wrappers over rustfft with per-thread plan caches.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn run(buf: &mut [Complex64], dir: FftDirection) {
    let len = buf.len();
    if len <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft(len, dir));
    plan.process(buf);
}

/// In-place unnormalised transform with kernel `exp(+2 pi i jk / n)`.
pub fn inverse(buf: &mut [Complex64]) {
    run(buf, FftDirection::Inverse);
}

/// In-place unnormalised transform with kernel `exp(-2 pi i jk / n)`.
pub fn forward(buf: &mut [Complex64]) {
    run(buf, FftDirection::Forward);
}

/// Transforms every row of a row-major `rows x cols` block.
pub fn rows(buf: &mut [Complex64], cols: usize, dir_inverse: bool) {
    let dir = if dir_inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    if cols <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft(cols, dir));
    plan.process(buf);
}

/// Square 2-D transform of a row-major `p x p` block.
pub fn square_2d(buf: &mut [Complex64], p: usize, dir_inverse: bool) {
    debug_assert_eq!(buf.len(), p * p);
    rows(buf, p, dir_inverse);
    transpose_square(buf, p);
    rows(buf, p, dir_inverse);
    transpose_square(buf, p);
}

fn transpose_square(buf: &mut [Complex64], p: usize) {
    for i in 0..p {
        for j in (i + 1)..p {
            buf.swap(i * p + j, j * p + i);
        }
    }
}
