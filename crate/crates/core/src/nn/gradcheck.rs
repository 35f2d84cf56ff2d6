use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Ctx, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Largest parameter count a finite-difference sweep will attempt.
pub const MAX_CHECKED_PARAMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
    /// Name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Exact max-pool ties were seen in the first forward pass.
    pub ties_detected: bool,
    /// Parameters were jittered to break those ties before checking.
    pub perturbed: bool,
}

/// Compare reverse-mode parameter gradients of a scalar loss with central differences.
///
/// The per-entry error is `|a - n| / max(|a|, |n|, 1e-6 * max(1, |loss|))`,
/// so entries whose true gradient is zero are judged against the rounding
/// floor of the loss rather than against zero.
pub fn grad_check<F>(store: &ParamStore, eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&Ctx<'t>) -> Result<Var<'t>>,
{
    if store.numel() > MAX_CHECKED_PARAMS {
        return Err(Error::Parameter(format!(
            "{} parameters exceed the finite-difference budget of {MAX_CHECKED_PARAMS}",
            store.numel()
        )));
    }
    let mut params = store.clone();
    let mut ties_detected = false;
    let mut perturbed = false;
    let mut jitter = ChaCha8Rng::seed_from_u64(0x7135);

    let (analytic, loss_value) = loop {
        let tape = Tape::recording();
        let ctx = Ctx::new(&tape, &params);
        let out = loss(&ctx)?;
        if out.shape() != (1, 1) {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", out.shape())));
        }
        if tape.ties() > 0 && !perturbed {
            ties_detected = true;
            perturbed = true;
            for id in params.ids().collect::<Vec<_>>() {
                params.get_mut(id).mapv_inplace(|v| v + 1e-7 * jitter.gen_range(-1.0..1.0));
            }
            continue;
        }
        let grads = tape.backward(&out);
        break (ctx.param_grads(&grads), out.value()[[0, 0]]);
    };

    let eval = |p: &ParamStore| -> Result<f64> {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, p);
        Ok(loss(&ctx)?.value()[[0, 0]])
    };

    let floor = 1e-6 * loss_value.abs().max(1.0);
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for id in params.ids().collect::<Vec<_>>() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).as_slice().expect("contiguous parameter")[k];
            params.get_mut(id).as_slice_mut().unwrap()[k] = orig + eps;
            let plus = eval(&params)?;
            params.get_mut(id).as_slice_mut().unwrap()[k] = orig - eps;
            let minus = eval(&params)?;
            params.get_mut(id).as_slice_mut().unwrap()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.0].as_slice().unwrap()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(err);
                worst = Some((params.name(id).to_string(), k));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error, params_checked: checked, worst, ties_detected, perturbed })
}
