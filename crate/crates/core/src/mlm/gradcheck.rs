use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{MlmExample, ToyMlm};
use super::params::{group_matches, Params};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Analytic gradient of the mean batch loss, evaluation mode. Frozen groups
/// are zero.
pub fn analytic_gradient(model: &ToyMlm, batch: &[MlmExample]) -> Result<Params> {
    Ok(model.loss_and_grad(batch, None)?.1)
}

/// Largest relative error between analytic and central-difference gradients
/// over `n_probes` random coordinates of the groups matched by `group`
/// (an exact group name, a family such as `adapter`, or `*`). Frozen
/// coordinates are checked against zero. Probe selection is seeded by `seed`.
pub fn grad_check(model: &ToyMlm, batch: &[MlmExample], group: &str, n_probes: usize, seed: u64) -> Result<f64> {
    let grads = analytic_gradient(model, batch)?;
    let coords: Vec<(usize, usize)> = model
        .params
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, t)| group_matches(&t.group, group))
        .flat_map(|(i, t)| (0..t.value.len()).map(move |j| (i, j)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Invalid(format!("no parameters match group `{group}`")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let grad_tensors = grads.tensors();
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let (ti, j) = coords[rng.gen_range(0..coords.len())];
        let analytic = grad_tensors[ti].value.as_slice().expect("standard layout")[j];
        let numeric = if model.is_trainable(&grad_tensors[ti].group) {
            let mut shifted = |delta: f64| -> Result<f64> {
                let mut tensors = probe.params.tensors_mut();
                let cell = &mut tensors[ti].value.as_slice_mut().expect("standard layout")[j];
                let orig = *cell;
                *cell = orig + delta;
                drop(tensors);
                let loss = probe.mlm_loss(batch);
                probe.params.tensors_mut()[ti]
                    .value
                    .as_slice_mut()
                    .expect("standard layout")[j] = orig;
                loss
            };
            (shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP)
        } else {
            0.0
        };
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{init_model, MlmConfig, PeftConfig, TuningMode};

    fn hand_sized() -> MlmConfig {
        MlmConfig {
            vocab_size: 9,
            d_model: 4,
            n_layers: 1,
            n_heads: 2,
            d_ff: 6,
            max_seq_len: 8,
            dropout_rate: 0.1,
            init_seed: 11,
        }
    }

    fn batch() -> Vec<MlmExample> {
        vec![
            MlmExample {
                ids: vec![3, 5, 2, 7, 4],
                positions: vec![2],
                gold: vec![6],
            },
            MlmExample {
                ids: vec![3, 2, 8, 2, 6, 4],
                positions: vec![1, 3],
                gold: vec![5, 7],
            },
        ]
    }

    #[test]
    fn full_model_gradients() {
        let m = init_model(hand_sized()).unwrap();
        let err = grad_check(&m, &batch(), "*", 300, 1).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn frozen_base_is_zero_under_peft() {
        let m = init_model(hand_sized())
            .unwrap()
            .apply_peft(TuningMode::Prompt, PeftConfig::default())
            .unwrap();
        let g = analytic_gradient(&m, &batch()).unwrap();
        assert!(g.layers[0].wq.iter().all(|&v| v == 0.0));
        assert_eq!(grad_check(&m, &batch(), "encoder", 50, 2).unwrap(), 0.0);
        assert!(grad_check(&m, &batch(), "prompt", 100, 2).unwrap() < 1e-4);
    }

    #[test]
    fn unknown_group() {
        let m = init_model(hand_sized()).unwrap();
        assert!(grad_check(&m, &batch(), "adapter", 5, 0).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-2).abs() < 1e-12);
    }
}
