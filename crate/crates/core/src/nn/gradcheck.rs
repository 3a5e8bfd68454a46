//! Central finite-difference check of analytic gradients.

use serde::Serialize;

use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Denominator floor for relative error, so gradients that are both
/// numerically zero do not produce 0/0.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Negates the analytic gradient of this parameter before comparing.
    /// Exists to prove the checker catches a wrong gradient.
    #[doc(hidden)]
    pub flip_sign_of: Option<String>,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            step: 1e-5,
            tolerance,
            flip_sign_of: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    /// Names of parameters whose max relative error is not below tolerance.
    pub violations: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `grad`'s output against `(L(θ+h) − L(θ−h)) / 2h` for every scalar
/// of every entry in `store`. `loss` must be a pure function of the store.
pub fn grad_check<L, G>(
    store: &mut ParameterStore,
    loss: L,
    grad: G,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&ParameterStore) -> Result<f64>,
    G: Fn(&mut ParameterStore) -> Result<()>,
{
    let l0 = loss(store)?;
    let l1 = loss(store)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::GradCheck(format!(
            "non-deterministic forward: {l0} vs {l1}"
        )));
    }
    grad(store)?;
    if let Some(name) = &opts.flip_sign_of {
        store
            .grad_mut(name)?
            .data_mut()
            .iter_mut()
            .for_each(|g| *g = -*g);
    }
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let h = opts.step;
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let analytic = store.grad(&name)?.clone();
        let n = analytic.data().len();
        let mut worst = ParamCheck {
            name: name.clone(),
            scalars: n,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..n {
            let orig = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = orig + h;
            let plus = loss(store)?;
            store.value_mut(&name)?.data_mut()[i] = orig - h;
            let minus = loss(store)?;
            store.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || (i == 0 && n > 0) {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    let violations = params
        .iter()
        .filter(|p| !(p.max_rel_error < opts.tolerance))
        .map(|p| p.name.clone())
        .collect();
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
        violations,
    })
}
