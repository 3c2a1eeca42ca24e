//! Central finite-difference verification of tape gradients.

use crate::ctx::Ctx;
use crate::error::{Result, TensorError};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::tape::Var;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step; also the floor of the relative-error denominator.
    pub eps: f64,
    pub tolerance: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_elems: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            mode: Mode::Eval,
            seed: 0,
            max_elems: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// `‖g_ad − g_fd‖∞ / (‖g_ad‖∞ + ‖g_fd‖∞ + eps)`.
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.rel_error < self.tolerance)
    }
}

/// Compares tape gradients of the scalar returned by `forward` with central
/// differences, for every trainable parameter in `params`.
///
/// `forward` must be deterministic; it is run twice up front and the check
/// fails with [`TensorError::NonDeterministic`] if the losses differ.
pub fn grad_check<F>(params: &ParamStore<f64>, cfg: GradCheckConfig, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut ctx = Ctx::new(store, cfg.mode).with_grads(false).with_seed(cfg.seed, 0);
        let loss = forward(&mut ctx)?;
        Ok(ctx.tape.value(loss).item())
    };

    let ids: Vec<_> = params.trainable_ids().collect();
    if ids.is_empty() {
        return Ok(GradCheckReport {
            params: Vec::new(),
            tolerance: cfg.tolerance,
        });
    }

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut ctx = Ctx::new(params, cfg.mode).with_grads(true).with_seed(cfg.seed, 0);
    let loss = forward(&mut ctx)?;
    let analytic = ctx.backward(loss)?;

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = params.get(id).numel();
        let stride = match cfg.max_elems {
            Some(m) if m > 0 && numel > m => numel.div_ceil(m),
            _ => 1,
        };
        let zeros = vec![0.0; numel];
        let ad = analytic.get(&id).map_or(&zeros[..], |g| g.data());
        let (mut max_ad, mut max_fd, mut max_diff) = (0.0f64, 0.0f64, 0.0f64);
        let mut checked = 0;
        for i in (0..numel).step_by(stride) {
            let orig = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + cfg.eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - cfg.eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * cfg.eps);
            max_ad = max_ad.max(ad[i].abs());
            max_fd = max_fd.max(fd.abs());
            max_diff = max_diff.max((ad[i] - fd).abs());
            checked += 1;
        }
        report.push(ParamCheck {
            name: params.name(id).to_string(),
            checked,
            max_abs_analytic: max_ad,
            max_abs_numeric: max_fd,
            rel_error: max_diff / (max_ad + max_fd + cfg.eps),
        });
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: cfg.tolerance,
    })
}
