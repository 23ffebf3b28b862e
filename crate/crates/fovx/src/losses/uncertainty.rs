//! Uncertainty-weighted reconstruction loss.

use super::{LossError, Result};
use crate::diffcore::{Scalar, Var};

/// Reconstruction loss with learned per-pixel uncertainty. The channel-mean
/// L1 error between output and warped reference is divided by the
/// uncertainty inside the out-of-view region (`mask` = 1), taken plainly
/// inside the observed region, and the uncertainty itself is added as a
/// regularizer:
///
/// `mean( (L1 / U) * M + L1 * (1 - M) + U )`
///
/// Gradient flows into the output, the warped reference, and the
/// uncertainty, including through the denominator, so the stationary point
/// in the masked region sits at `U = sqrt(L1)`. `eps` is the clamp the
/// uncertainty head must respect; values outside `[eps, 1 - eps]` are
/// rejected to keep the `1/U` factor bounded.
pub fn loss_l1u<T: Scalar>(
    output: &Var<T>,
    warped: &Var<T>,
    uncertainty: &Var<T>,
    mask: &Var<T>,
    eps: f64,
) -> Result<Var<T>> {
    let os = output.shape();
    if os.len() != 4 || output.shape() != warped.shape() {
        return Err(LossError::Invalid {
            op: "loss_l1u",
            detail: format!(
                "output {:?} and warped {:?} must share an NCHW shape",
                output.shape(),
                warped.shape()
            ),
        });
    }
    let plane = [os[0], 1, os[2], os[3]];
    if uncertainty.shape() != plane || mask.shape() != plane {
        return Err(LossError::Invalid {
            op: "loss_l1u",
            detail: format!(
                "uncertainty {:?} and mask {:?} must both be {:?}",
                uncertainty.shape(),
                mask.shape(),
                plane
            ),
        });
    }
    let (lo, hi) = (T::from_f64(eps), T::from_f64(1.0 - eps));
    if !uncertainty.with_data(|u| u.iter().all(|v| *v >= lo && *v <= hi)) {
        return Err(LossError::Invalid {
            op: "loss_l1u",
            detail: format!("uncertainty outside [{eps}, {}]", 1.0 - eps),
        });
    }

    let l1 = output.sub(warped)?.abs()?.mean_axes(&[1], true)?;
    let outside = l1.div(uncertainty)?.mul(mask)?;
    let inside = l1.mul(&mask.neg()?.add_scalar(1.0)?)?;
    Ok(outside.add(&inside)?.add(uncertainty)?.mean_all()?)
}
