use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BoundParams, Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding compare on absolute error.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (sampled with `seed`).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            abs_floor: 1e-6,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub coords_checked: usize,
    pub per_param: Vec<ParamCheck>,
    pub passed: bool,
}

/// Compares analytic gradients of `loss_fn` against central finite
/// differences, perturbing one coordinate of `params` at a time.
pub fn grad_check<L>(
    loss_fn: L,
    params: &mut ParamStore<f64>,
    rel_tolerance: f64,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: for<'g, 's> Fn(&'g Graph<f64>, &BoundParams<'g, 's, f64>) -> Result<Var<'g, f64>>,
{
    let (loss, analytic) = {
        let graph = Graph::new();
        let bound = params.bind(&graph);
        let loss = loss_fn(&graph, &bound)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value}")));
        }
        let mut grads = graph.backward(loss)?;
        let analytic: Vec<Vec<f64>> = bound
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        (value, analytic)
    };

    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let graph = Graph::new();
        let bound = params.bind(&graph);
        let v = loss_fn(&graph, &bound)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("loss is {v}")))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut per_param = Vec::with_capacity(params.len());
    let mut coords_checked = 0;
    for p in 0..params.len() {
        let len = params.tensors()[p].len();
        let coords: Vec<usize> = match options.max_coords_per_param {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &i in &coords {
            let original = params.tensors()[p].values()[i];
            params.tensors_mut()[p].values_mut()[i] = original + options.step;
            let plus = eval(params);
            params.tensors_mut()[p].values_mut()[i] = original - options.step;
            let minus = eval(params);
            params.tensors_mut()[p].values_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * options.step);
            let a = analytic[p][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(options.abs_floor);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        coords_checked += coords.len();
        per_param.push(ParamCheck {
            name: params.names()[p].clone(),
            checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }

    let worst = per_param
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let max_rel_error = worst.map_or(0.0, |w| w.max_rel_error);
    Ok(GradCheckReport {
        loss,
        tolerance: rel_tolerance,
        max_rel_error,
        worst_param: worst.map(|w| w.name.clone()),
        coords_checked,
        passed: max_rel_error <= rel_tolerance,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{functional, weighted_sum, Tensor};

    fn store(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape, vals) in entries {
            s.insert(*name, Tensor::new(shape.clone(), vals.clone()).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn quadratic_matches() {
        let mut params = store(&[("theta", vec![2], vec![1.0, 2.0])]);
        fn loss<'g>(_: &'g Graph<f64>, p: &BoundParams<'g, '_, f64>) -> Result<Var<'g, f64>> {
            let theta = p.var("theta")?;
            Ok(theta.mul(theta)?.sum())
        }
        let graph = Graph::new();
        let bound = params.bind(&graph);
        let grads = graph.backward(loss(&graph, &bound).unwrap()).unwrap();
        assert_eq!(grads.get(bound.var("theta").unwrap()).unwrap(), &[2.0, 4.0]);
        drop(bound);
        drop(graph);

        let report = grad_check(loss, &mut params, 1e-8, GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.coords_checked, 2);
    }

    #[test]
    fn softmax_cross_entropy_matches() {
        let mut params = store(&[("logits", vec![3], vec![0.3, -1.2, 2.0])]);
        let report = grad_check(
            |_, p| p.var("logits")?.softmax(None)?.cross_entropy(1),
            &mut params,
            1e-6,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        // analytic gradient is p - onehot
        let p = functional::softmax(&[0.3, -1.2, 2.0]).unwrap();
        assert!(p[1] < 0.1);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut params = store(&[("x", vec![1], vec![1.0])]);
        let err = grad_check(
            |g, p| {
                let x = p.var("x")?;
                weighted_sum(g, &[(x, f64::NAN)])
            },
            &mut params,
            1e-6,
            GradCheckOptions::default(),
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn subsampling_limits_coordinates() {
        let mut params = store(&[("w", vec![10], (0..10).map(|i| i as f64 * 0.1).collect())]);
        let report = grad_check(
            |_, p| Ok(p.var("w")?.gelu().sum()),
            &mut params,
            1e-6,
            GradCheckOptions {
                max_coords_per_param: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.coords_checked, 4);
        assert!(report.passed);
    }
}
