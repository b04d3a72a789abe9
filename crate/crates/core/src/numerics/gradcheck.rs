use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::exec::Exec;

/// Worst disagreement found for one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Denominator floor for the relative error, so entries whose true
/// gradient is zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape gradient of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every scalar of every parameter.
///
/// `f` builds a scalar loss on the tape it is given and must be a
/// deterministic function of the store.
pub fn grad_check<F>(exec: Exec, params: &ParamStore, step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var> + Sync + Send,
{
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let grads = tape.backward(loss)?;
    let mut analytic_store = params.clone();
    analytic_store.zero_grads();
    analytic_store.accumulate(&tape, &grads);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(store, &mut t)?;
        Ok(t.value(v).item())
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let checks = exec.map(&names, |name| -> Result<ParamCheck> {
        let mut store = params.clone();
        let analytic = analytic_store.grad(name).expect("present").data().to_vec();
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(name).expect("present").data()[i];
            store.value_mut(name).expect("present")[i] = orig + step;
            let plus = eval(&store)?;
            store.value_mut(name).expect("present")[i] = orig - step;
            let minus = eval(&store)?;
            store.value_mut(name).expect("present")[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(a, numeric);
            if rel > worst.max_rel_error || i == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    max_rel_error: rel,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        Ok(worst)
    });
    let params = checks.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = params
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    Ok(GradCheckReport {
        max_rel_error: worst.map_or(0.0, |w| w.max_rel_error),
        worst_param: worst.map(|w| w.name.clone()),
        params,
        tol,
    })
}
