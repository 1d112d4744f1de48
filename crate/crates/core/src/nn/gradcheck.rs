//! Central finite-difference check of full-model gradients.

use rand::Rng as _;

use super::loss::{lm_loss, Disallowed, LmExample};
use super::model::{HeadKind, ModelConfig, TransformerModel};
use crate::corpus::{BoundaryMode, Trajectory, Vocab};
use crate::error::Result;
use crate::roadnet::ConnectivityMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares every parameter's analytic gradient against central differences
/// with step `h`. The loss is the masked next-token loss on random sequences
/// with connectivity masking enabled, so the masked softmax is covered.
pub fn check_lm_gradients(config: &ModelConfig, h: f64, floor: f64) -> Result<GradCheck> {
    let model = TransformerModel::new(config.clone(), HeadKind::Lm)?;
    let v = config.vocab_size;
    let vocab = Vocab::new(v - 1, BoundaryMode::EotOnly);
    let mut rng = seed::stream(config.seed, "gradcheck");
    let trajs: Vec<Trajectory> = (0..6)
        .map(|_| Trajectory::new((0..config.block_size - 1).map(|_| rng.gen_range(0..v - 1)).collect()))
        .collect();
    let rcm = ConnectivityMatrix::from_corpus(&trajs, vocab);
    let batch: Vec<LmExample> = trajs
        .iter()
        .take(3)
        .map(|t| {
            let mut inputs = vec![vocab.eot()];
            inputs.extend_from_slice(&t[..t.len() - 1]);
            let n = inputs.len();
            LmExample {
                inputs,
                targets: t.to_vec(),
                loss_mask: (0..n).map(|i| i != 1).collect(),
            }
        })
        .collect();
    let run = |m: &TransformerModel, grads: bool| lm_loss(m, &batch, Some(&rcm), Disallowed::Reject, None, grads);
    let analytic = run(&model, true)?.grads.expect("requested");
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = model.clone();
    for (pi, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params()[pi].data[k];
            probe.params_mut()[pi].data[k] = orig + h;
            let up = run(&probe, false)?.loss;
            probe.params_mut()[pi].data[k] = orig - h;
            let down = run(&probe, false)?.loss;
            probe.params_mut()[pi].data[k] = orig;
            let num = (up - down) / (2.0 * h);
            let a = g.data[k];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_layer_width_eight_passes() {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            block_size: 6,
            vocab_size: 12,
            dropout: 0.0,
            seed: 5,
        };
        let r = check_lm_gradients(&cfg, 1e-4, 1e-7).unwrap();
        assert_eq!(r.checked, cfg.param_count(HeadKind::Lm));
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
