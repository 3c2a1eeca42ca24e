//! Finite-difference checks over model code that returns this crate's
//! errors.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgraphx_tensor::{grad_check, Ctx, GradCheckConfig, GradCheckReport, ParamStore, TensorError, Var};

use crate::error::{Error, Result};

/// [`grad_check`] for a forward closure returning [`crate::Result`]; the
/// first error the closure raises is returned as is.
pub fn check<F>(params: &ParamStore<f64>, cfg: GradCheckConfig, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let out = grad_check(params, cfg, |ctx| {
        forward(ctx).map_err(|e| {
            let msg = e.to_string();
            failure.borrow_mut().get_or_insert(e);
            TensorError::InvalidArgument { op: "forward", detail: msg }
        })
    });
    match (out, failure.into_inner()) {
        (Err(_), Some(e)) => Err(e),
        (out, _) => Ok(out?),
    }
}

/// Adds `U(-scale, scale)` noise to every trainable parameter.
///
/// Fresh initializations sit on ReLU kinks (zero BN shifts, nodes with no
/// incoming messages), where central differences disagree with any one-sided
/// derivative; jittering moves the check to a generic point.
pub fn jitter(params: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = params.trainable_ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}
