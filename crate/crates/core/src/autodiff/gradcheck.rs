//! Central-difference gradient verification.
//!
//! The most valuable diagnostic for hand-rolled backward passes: rebuild the
//! loss with each parameter entry nudged by ±eps and compare the slope against
//! the tape's gradient. Fragments must be deterministic — any randomness
//! (batch sampling, init) has to happen before the closure is built. Only
//! trainable parameters should be listed: the checker backpropagates once
//! through the real tape, and a frozen parameter's analytic gradient is zero
//! by design, which would be flagged against its nonzero finite difference.

use super::mat::Mat;
use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Tensor};
use crate::error::{DirlError, Result};

#[derive(Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(move |e| e.rel_err > self.tolerance)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Human-readable list of the worst offenders, for assertion messages.
    pub fn describe_failures(&self) -> String {
        let mut lines: Vec<String> = self
            .failures()
            .map(|e| {
                format!(
                    "{}[{},{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
                    e.param, e.row, e.col, e.analytic, e.numeric, e.rel_err
                )
            })
            .collect();
        if lines.is_empty() {
            lines.push("no failures".into());
        }
        lines.join("\n")
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Compares tape gradients of `build_loss` against central differences for
/// every entry of every listed parameter.
pub fn grad_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut build_loss: F,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Tensor>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(DirlError::Config(format!("grad_check eps must be positive, got {eps}")));
    }

    // One analytic pass on clean gradients.
    store.zero_all_grads();
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Mat> = ids.iter().map(|id| store.grad(*id).clone()).collect();

    let eval = |store: &mut ParamStore, build_loss: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, store)?;
        Ok(tape.scalar_value(loss))
    };

    let mut entries = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        let rows = store.value(*id).rows();
        let cols = store.value(*id).cols();
        for r in 0..rows {
            for c in 0..cols {
                let orig = store.value(*id).get(r, c);
                store.get_mut(*id).value.set(r, c, orig + eps);
                let plus = eval(store, &mut build_loss)?;
                store.get_mut(*id).value.set(r, c, orig - eps);
                let minus = eval(store, &mut build_loss)?;
                store.get_mut(*id).value.set(r, c, orig);
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[k].get(r, c);
                entries.push(GradCheckEntry {
                    param: store.get(*id).name.clone(),
                    row: r,
                    col: c,
                    analytic: a,
                    numeric,
                    rel_err: relative_error(a, numeric),
                });
            }
        }
    }
    store.zero_all_grads();
    Ok(GradCheckReport { entries, tolerance })
}
