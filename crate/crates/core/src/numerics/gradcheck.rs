use alloc::format;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Probe at most this many coordinates per entry, evenly spaced.
    /// `None` checks every coordinate.
    pub max_per_entry: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_per_entry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(store, entry name, index)` of the worst coordinate.
    pub worst: Option<(usize, alloc::string::String, usize)>,
}

/// Analytic gradients per store, as `(ParamId, gradient)` lists.
pub type StoreGrads = Vec<Vec<(ParamId, Vec<f64>)>>;

/// Compares analytic gradients from `f` with central differences over every
/// trainable coordinate of `stores`.
///
/// `f` returns the scalar value and the analytic gradient for each store.
/// The relative error per coordinate is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    stores: &mut [&mut ParamStore],
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[&ParamStore]) -> Result<(f64, StoreGrads)>,
{
    if !(opts.step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut eval = |stores: &[&mut ParamStore]| -> Result<(f64, StoreGrads)> {
        let views: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let (v, g) = f(&views)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok((v, g))
    };
    let (_, analytic) = eval(stores)?;
    if analytic.len() != stores.len() {
        return Err(invalid(format!(
            "objective returned gradients for {} stores, expected {}",
            analytic.len(),
            stores.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for s in 0..stores.len() {
        for id in 0..stores[s].len() {
            let pid = ParamId(id);
            let (frozen, n, name) = {
                let e = stores[s].entry(pid);
                (e.frozen, e.len(), e.name.clone())
            };
            if frozen || n == 0 {
                continue;
            }
            let grad: Vec<f64> = analytic[s]
                .iter()
                .filter(|(gid, _)| *gid == pid)
                .fold(alloc::vec![0.0; n], |mut acc, (_, g)| {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    acc
                });
            let stride = opts.max_per_entry.map_or(1, |m| n.div_ceil(m.max(1)));
            for i in (0..n).step_by(stride) {
                let orig = stores[s].entry(pid).value[i];
                stores[s].entry_mut(pid).value[i] = orig + opts.step;
                let plus = eval(stores);
                stores[s].entry_mut(pid).value[i] = orig - opts.step;
                let minus = eval(stores);
                stores[s].entry_mut(pid).value[i] = orig;
                let numeric = (plus?.0 - minus?.0) / (2.0 * opts.step);
                let a = grad[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                report.checked += 1;
                if report.worst.is_none() || rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((s, name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
