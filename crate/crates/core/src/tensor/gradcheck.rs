use super::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};

/// Outcome for a single parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Relative deviations below this magnitude are measured against it instead,
/// so gradients that are zero up to rounding do not register as failures.
const REL_FLOOR: f64 = 1e-6;

fn finite_value(t: &Tape, loss: NodeId) -> Result<f64> {
    let v = t.value(loss).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares analytic gradients from the tape with central differences
/// `(f(θ+h·e) − f(θ−h·e)) / 2h` for every element of every parameter.
///
/// `f` must build a scalar loss on the given tape from the given store.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    mut f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be > 0, got {h}")));
    }

    let mut work = store.clone();
    let analytic = {
        let mut t = Tape::new();
        let loss = f(&mut t, &work)?;
        finite_value(&t, loss)?;
        t.backward(loss, &mut work)?;
        work.ids()
            .map(|id| work.get(id).grad().map(<[f64]>::to_vec).unwrap_or_default())
            .collect::<Vec<_>>()
    };
    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let loss = f(&mut t, s)?;
        finite_value(&t, loss)
    };

    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.get(id).len();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut worst = 0;
        for j in 0..n {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[id.0][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst = j;
            }
            max_abs = max_abs.max(abs);
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            worst_index: worst,
            passed: max_rel <= tol,
        });
    }
    Ok(GradCheckReport {
        params,
        tolerance: tol,
    })
}
