use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamSet, Real, Var};
use crate::error::{Error, Result};

/// Which parameter elements a gradient check perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Selection {
    All,
    /// `count` distinct elements drawn uniformly over all parameters.
    Sample {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(parameter, flat index, analytic, numeric)` at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error used by gradient checks: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(parameter id, flat index)` pairs chosen by `selection`, in parameter order.
pub fn select_elements<T: Real>(params: &ParamSet<T>, selection: Selection) -> Vec<(usize, usize)> {
    let mut elements = Vec::new();
    for (id, p) in params.iter().enumerate() {
        elements.extend((0..p.value.len()).map(|i| (id, i)));
    }
    if let Selection::Sample { count, seed } = selection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, elements.len(), count.min(elements.len()));
        let mut chosen: Vec<_> = picks.into_iter().map(|k| elements[k]).collect();
        chosen.sort_unstable();
        elements = chosen;
    }
    elements
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` at each element, evaluating
/// only forward passes. Parameter values are restored afterwards.
pub fn numeric_gradients<T, F>(
    params: &mut ParamSet<T>,
    elements: &[(usize, usize)],
    h: f64,
    mut build: F,
) -> Result<Vec<f64>>
where
    T: Real,
    F: FnMut(&ParamSet<T>, &mut Graph<T>) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    let mut eval = |params: &ParamSet<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = build(params, &mut g)?;
        Ok(g.value(v).item().as_f64())
    };
    let mut out = Vec::with_capacity(elements.len());
    for &(id, i) in elements {
        let original = params.by_id(id).value.data()[i];
        params.by_id_mut(id).value.data_mut()[i] = original + T::of(h);
        let plus = eval(params);
        params.by_id_mut(id).value.data_mut()[i] = original - T::of(h);
        let minus = eval(params);
        params.by_id_mut(id).value.data_mut()[i] = original;
        out.push((plus? - minus?) / (2.0 * h));
    }
    Ok(out)
}

/// Reverse-mode gradients of the recorded loss, left in `params` (zeroed first).
pub fn analytic_gradients<T, F>(params: &mut ParamSet<T>, mut build: F) -> Result<()>
where
    T: Real,
    F: FnMut(&ParamSet<T>, &mut Graph<T>) -> Result<Var>,
{
    params.zero_grads();
    let mut graph = Graph::new();
    let loss = build(params, &mut graph)?;
    graph.backward(loss, params)
}

/// Folds per-element comparisons into a report.
pub fn compare_gradients<T: Real>(
    params: &ParamSet<T>,
    elements: &[(usize, usize)],
    numeric: &[f64],
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (&(id, i), &n) in elements.iter().zip(numeric) {
        let a = params.by_id(id).grad.data()[i].as_f64();
        let rel = relative_error(a, n);
        if report.worst.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((params.by_id(id).name.clone(), i, a, n));
        }
        report.checked += 1;
    }
    report
}

/// Compares reverse-mode gradients with central differences at the same
/// precision and reports the maximum [`relative_error`].
///
/// `build` must record the scalar loss on the given graph from the given
/// parameters. Parameter values are restored before returning and gradients
/// are left holding the analytic result.
pub fn grad_check<T, F>(
    params: &mut ParamSet<T>,
    h: f64,
    selection: Selection,
    mut build: F,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&ParamSet<T>, &mut Graph<T>) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    analytic_gradients(params, &mut build)?;
    let elements = select_elements(params, selection);
    let numeric = numeric_gradients(params, &elements, h, &mut build)?;
    Ok(compare_gradients(params, &elements, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Parameter, Tensor};

    fn params(values: &[f64]) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push(Parameter::new(
            "theta",
            Tensor::new(&[values.len()], values.to_vec()).unwrap(),
            true,
        ))
        .unwrap();
        ps
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let mut ps = params(&[0.3, -1.2, 2.0, 0.0]);
        let report = grad_check(&mut ps, 1e-4, Selection::All, |ps, g| {
            let t = g.param(ps, 0);
            let sq = g.mul(t, t)?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_grads() {
        let mut ps = params(&[1.0, 2.0]);
        let report = grad_check(&mut ps, 1e-3, Selection::All, |_, g| {
            Ok(g.input(Tensor::scalar(7.0)))
        })
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(ps.by_id(0).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling_is_bounded_by_population() {
        let mut ps = params(&[1.0, 2.0, 3.0]);
        let report = grad_check(
            &mut ps,
            1e-3,
            Selection::Sample { count: 10, seed: 1 },
            |ps, g| {
                let t = g.param(ps, 0);
                g.sum(t)
            },
        )
        .unwrap();
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn linear_weight_grad_matches_finite_differences() {
        let mut ps = ParamSet::<f32>::new();
        let w = Tensor::new(&[3, 2], vec![0.5, -0.2, 0.1, 0.7, -0.4, 0.3]).unwrap();
        ps.push(Parameter::new("w", w, true)).unwrap();
        ps.push(Parameter::new(
            "b",
            Tensor::new(&[2], vec![0.1, -0.1]).unwrap(),
            false,
        ))
        .unwrap();
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 0.25, 1.5, -1.0]).unwrap();
        let report = grad_check(&mut ps, 1e-3, Selection::All, |ps, g| {
            let xi = g.input(x.clone());
            let (w, b) = (g.param(ps, 0), g.param(ps, 1));
            let y = g.linear(xi, w, b)?;
            g.sum(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}
