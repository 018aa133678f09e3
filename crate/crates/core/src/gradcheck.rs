//! Central finite-difference verification of tape gradients.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over every scalar parameter of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

fn eval<F>(store: &ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::Contract(alloc::format!(
            "grad_check needs a scalar loss, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compares the backward pass of `f` against central differences with step
/// `h` for every scalar of every parameter in `store`.
///
/// `f` must rebuild the loss from scratch on each call (it is evaluated
/// `2·numel + 1` times) and must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F, h: f64) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(&*store);
        let loss = f(&mut g)?;
        if g.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "grad_check needs a scalar loss, got shape {:?}",
                g.value(loss).shape()
            )));
        }
        g.backward(loss)?.params()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: alloc::vec::Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(store, &mut f);
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(store, &mut f);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
