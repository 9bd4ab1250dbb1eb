//! Central finite-difference checks of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::Float;

/// Denominator floor for the relative error; below it the comparison is
/// effectively absolute.
const REL_FLOOR: Float = 1e-5;

#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    /// Input tensor (or parameter) index and flat coordinate within it.
    pub input: usize,
    pub coord: usize,
    pub analytic: Float,
    pub numeric: Float,
    pub rel_error: Float,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordinateCheck>,
    pub max_rel_error: Float,
    pub tolerance: Float,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.coords.iter().filter(move |c| c.rel_error >= self.tolerance)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: Float, numeric: Float) -> Float {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn finite(v: Float, at: &str) -> Result<Float> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("f({at})")))
    }
}

/// Compares `grad(x)` with `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
pub fn grad_check(
    f: &dyn Fn(&[Tensor]) -> Result<Float>,
    grad: &dyn Fn(&[Tensor]) -> Result<Vec<Tensor>>,
    inputs: &[Tensor],
    h: Float,
    tol: Float,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h}")));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("grad_check input".into()));
    }
    finite(f(inputs)?, "x")?;
    let analytic = grad(inputs)?;
    if analytic.len() != inputs.len()
        || analytic.iter().zip(inputs).any(|(g, x)| g.shape() != x.shape())
    {
        return Err(Error::shape("grad_check", "gradient shapes differ from inputs"));
    }

    let mut work = inputs.to_vec();
    let mut coords = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        for c in 0..x.len() {
            let orig = x.data()[c];
            work[i].data_mut()[c] = orig + h;
            let plus = finite(f(&work)?, "x+h")?;
            work[i].data_mut()[c] = orig - h;
            let minus = finite(f(&work)?, "x-h")?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[c];
            coords.push(CoordinateCheck {
                input: i,
                coord: c,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    Ok(report(coords, tol))
}

fn report(coords: Vec<CoordinateCheck>, tolerance: Float) -> GradCheckReport {
    let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, Float::max);
    GradCheckReport {
        coords,
        max_rel_error,
        tolerance,
    }
}

/// [`grad_check`] where both the value and the gradient come from a tape
/// built by `build` over input leaves.
pub fn grad_check_graph<F>(build: F, inputs: &[Tensor], h: Float, tol: Float) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let store = ParamStore::new();
    let eval = |xs: &[Tensor]| -> Result<Float> {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let grad = |xs: &[Tensor]| -> Result<Vec<Tensor>> {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        let grads = g.backward(out)?;
        Ok(vars
            .iter()
            .zip(xs)
            .map(|(v, x)| {
                grads
                    .wrt(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()))
            })
            .collect())
    };
    grad_check(&eval, &grad, inputs, h, tol)
}

/// Checks the gradient of a scalar loss with respect to every coordinate
/// of every parameter in `store`. `input` in the report is the parameter index.
pub fn grad_check_params<F>(store: &ParamStore, build: F, h: Float, tol: Float) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        finite(g.value(out).item(), "params")?;
        g.backward(out)?
    };
    let mut work = store.clone();
    let eval = |s: &ParamStore| -> Result<Float> {
        let mut g = Graph::new(s);
        let out = build(&mut g)?;
        Ok(g.value(out).item())
    };
    let mut coords = Vec::new();
    for (id, p) in store.iter() {
        for c in 0..p.value.len() {
            let orig = p.value.data()[c];
            work.get_mut(id).value.data_mut()[c] = orig + h;
            let plus = finite(eval(&work)?, "θ+h")?;
            work.get_mut(id).value.data_mut()[c] = orig - h;
            let minus = finite(eval(&work)?, "θ-h")?;
            work.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.param(id).map_or(0.0, |g| g.data()[c]);
            coords.push(CoordinateCheck {
                input: id.index(),
                coord: c,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    Ok(report(coords, tol))
}
