//! A small dense-tensor engine with reverse-mode differentiation.
//!
//! Every forward call on a [`Tape`] appends a record; [`Tape::backward`]
//! replays the records in reverse, accumulating gradients. Tensors are
//! row-major `f64`. There is no batch dimension: a tape covers one cloud.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, gradient_check, GradCheckOptions, GradCheckReport};
pub use params::ParamGroup;
pub use tape::{Gradients, Tape, Var, DEFAULT_LEAKY_SLOPE};
pub use tensor::Tensor;

/// `C = op(A)·op(B) + beta·C` for row-major `m×k` and `k×n` operands, where
/// `op` optionally transposes a stored matrix (`A` stored `k×m`, `B` stored
/// `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the strides describe exactly the asserted buffer extents, and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
