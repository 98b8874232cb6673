use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, TensorError, Var};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    /// Analytic and numeric values at the worst coordinate.
    pub worst_values: (f64, f64),
    /// Largest `|a − n|` over all checked coordinates.
    pub max_abs_error: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients of the scalar `f` against central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// For every trainable parameter in `ids` at most `max_coords` coordinates
/// are sampled (all of them if the tensor is smaller). The reported error
/// per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`. Frozen parameters are
/// skipped. `f` must be deterministic.
pub fn grad_check<F, E>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, E>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>, E>,
    E: From<TensorError>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        let grads = tape.backward(loss)?;
        ids.iter().map(|&id| grads.param(&tape, id).map(|g| g.data().to_vec())).collect()
    };

    let eval = |store: &ParamStore| -> Result<f64, E> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.value().item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_values: (0.0, 0.0),
        max_abs_error: 0.0,
        coords_checked: 0,
    };
    for (&id, grad) in ids.iter().zip(&analytic) {
        if !store.is_trainable(id) {
            continue;
        }
        let numel = store.value(id).numel();
        let coords: Vec<usize> = if numel <= max_coords {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, max_coords).into_vec()
        };
        for k in coords {
            let original = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = original + epsilon;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original - epsilon;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.as_ref().map_or(0.0, |g| g[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Stage, Tensor};

    #[test]
    fn linear_map_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]), Stage::Stage1)
            .unwrap();
        let x = Tensor::from_rows(&[&[1.0, 3.0], &[-2.0, 0.5]]);
        let report = grad_check::<_, TensorError>(
            &mut store,
            &[w],
            |tape, s| {
                let x = tape.constant(x.clone());
                let c = tape.constant(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
                Ok(x.matmul(tape.param(s, w))?.mul(c)?.sum())
            },
            1e-5,
            100,
            0,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn frozen_params_get_zero_grad_and_are_skipped() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_rows(&[&[1.0, 2.0]]), Stage::Stage1).unwrap();
        let b = store.add("b", Tensor::from_rows(&[&[3.0, -1.0]]), Stage::Stage2).unwrap();
        store.freeze(Stage::Stage1);
        let tape = Tape::new();
        let loss = tape.param(&store, a).mul(tape.param(&store, b)).unwrap().sum();
        tape.backward_into(loss, &mut store).unwrap();
        assert!(store.get(a).grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(store.get(b).grad.data(), &[1.0, 2.0]);

        let report = grad_check::<_, TensorError>(
            &mut store,
            &[a, b],
            |tape, s| Ok(tape.param(s, a).mul(tape.param(s, b))?.sigmoid().sum()),
            1e-5,
            10,
            1,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 2);
        assert!(report.max_rel_error < 1e-8);
    }
}
