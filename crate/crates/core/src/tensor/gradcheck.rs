use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

/// Compares tape gradients of every parameter scalar against central
/// differences with step `eps`. `f` must build the same scalar loss each
/// time it is called.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, t)| t.grad().expect("parameters carry gradients").to_vec())
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    for (p, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = store.by_index(p).1.data()[j];
            store.by_index_mut(p).1.data_mut()[j] = orig + eps;
            let up = eval(store);
            store.by_index_mut(p).1.data_mut()[j] = orig - eps;
            let down = eval(store);
            store.by_index_mut(p).1.data_mut()[j] = orig;
            let n = (up? - down?) / (2.0 * eps);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_param = store.by_index(p).0.to_string();
                report.worst_index = j;
                report.worst_pair = (a, n);
            }
        }
    }
    Ok(report)
}
