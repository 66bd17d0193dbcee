//! Dense tensors with tape-based reverse-mode differentiation.

mod params;
mod tape;
mod tensor;

pub use params::{init_params, Bound, Init, ParamGrads, ParamSpec, ParamStore, Partition};
pub use tape::{concat, Gradients, Tape, Unary, Var, LEAKY_SLOPE};
pub use tensor::{matmul, narrow, softmax_last, transpose_last2, Tensor};

/// Central finite-difference gradient of a scalar function of one tensor.
///
/// Test helper; kept here so integration tests and the acceptance suite share
/// one implementation that is independent of the tape.
pub fn finite_difference(
    x: &Tensor,
    step: f64,
    mut f: impl FnMut(&Tensor) -> crate::Result<f64>,
) -> crate::Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest relative error between two gradients, with an absolute floor so
/// entries near zero compare on an absolute scale.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
