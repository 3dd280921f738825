use alloc::vec::Vec;

use super::{AdError, Tensor};

/// Central-difference gradient of a scalar function of several tensors.
///
/// `f` is evaluated twice per coordinate at `p +- h e_i`.
pub fn finite_diff_grad<E>(
    mut f: impl FnMut(&[Tensor]) -> Result<f64, E>,
    params: &[Tensor],
    h: f64,
) -> Result<Vec<Tensor>, E>
where
    E: From<AdError>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape());
        for k in 0..params[pi].numel() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = f(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = f(&work)?;
            work[pi].data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(AdError::NonFinite { op: "finite_diff" }.into());
            }
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}
