use std::collections::BTreeMap;

use ndarray::{concatenate, s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MlmConfig, PeftConfig, TuningMode};
use super::ops::{
    adapter_backward, adapter_forward, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    log_softmax_rows, multi_head_attention, multi_head_attention_backward, AdapterCache, AttentionCache, NormCache,
};
use super::params::{is_peft_group, Mat, Params};
use crate::error::{Error, Result};
use crate::textproc::{TokenId, MASK_ID};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeftState {
    pub mode: TuningMode,
    pub config: PeftConfig,
}

/// One training/scoring example: token ids as fed to the encoder, the
/// positions that carry a loss, and the gold ids at those positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmExample {
    pub ids: Vec<TokenId>,
    pub positions: Vec<usize>,
    pub gold: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub embedded_len: usize,
    pub key_lens: Vec<usize>,
}

/// Desk-scale post-norm transformer encoder with a tied MLM head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMlm {
    pub(crate) config: MlmConfig,
    pub(crate) params: Params,
    pub(crate) peft: Option<PeftState>,
    pub(crate) trainable: BTreeMap<String, bool>,
}

pub fn init_model(config: MlmConfig) -> Result<ToyMlm> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let params = Params::init(&config, &mut rng);
    let mut model = ToyMlm {
        config,
        params,
        peft: None,
        trainable: BTreeMap::new(),
    };
    model.reset_trainable(None);
    Ok(model)
}

pub(crate) struct LayerCache {
    x_in: Mat,
    attn: AttentionCache,
    attn_mask: Option<Mat>,
    attn_adapter: Option<AdapterCache>,
    norm1: NormCache,
    x1: Mat,
    ffn_pre: Mat,
    ffn_act: Mat,
    ffn_mask: Option<Mat>,
    ffn_adapter: Option<AdapterCache>,
    norm2: NormCache,
}

pub(crate) struct ForwardCache {
    ids: Vec<TokenId>,
    pub(crate) n_virtual: usize,
    emb_norm: NormCache,
    emb_mask: Option<Mat>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) hidden: Mat,
}

impl ForwardCache {
    /// Number of keys each attention layer attended over.
    pub(crate) fn key_len(&self, layer: usize) -> usize {
        self.layers[layer].attn.keys.nrows()
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Mat {
    let keep = 1.0 - rate;
    Mat::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

impl ToyMlm {
    pub fn config(&self) -> &MlmConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for tests and tooling. Does not change the freezing mask.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn peft(&self) -> Option<&PeftState> {
        self.peft.as_ref()
    }

    pub fn tuning_mode(&self) -> TuningMode {
        self.peft.as_ref().map_or(TuningMode::Full, |p| p.mode)
    }

    /// Trainable flag per parameter group.
    pub fn freezing_mask(&self) -> &BTreeMap<String, bool> {
        &self.trainable
    }

    pub fn is_trainable(&self, group: &str) -> bool {
        self.trainable.get(group).copied().unwrap_or(false)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.params.tensors().into_iter().map(|t| t.group).collect();
        g.dedup();
        g
    }

    pub fn total_param_count(&self) -> usize {
        self.params.count()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params
            .tensors()
            .iter()
            .filter(|t| self.is_trainable(&t.group))
            .map(|t| t.value.len())
            .sum()
    }

    pub(crate) fn reset_trainable(&mut self, mode: Option<TuningMode>) {
        self.trainable = self
            .groups()
            .into_iter()
            .map(|g| {
                let on = match mode {
                    None | Some(TuningMode::Full) => true,
                    Some(_) => is_peft_group(&g),
                };
                (g, on)
            })
            .collect();
    }

    /// Adds the PEFT parameters for `mode` and freezes the base model.
    /// `Full` leaves the architecture unchanged and marks every group trainable.
    pub fn apply_peft(mut self, mode: TuningMode, peft: PeftConfig) -> Result<ToyMlm> {
        if let Some(existing) = &self.peft {
            return Err(Error::PeftAlreadyApplied(existing.mode.to_string()));
        }
        peft.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(peft.peft_init_seed);
        match mode {
            TuningMode::Full => {}
            TuningMode::Adapter => self.params.init_adapters(&self.config, &peft, &mut rng),
            TuningMode::Prefix => self.params.init_prefixes(&self.config, &peft, &mut rng),
            TuningMode::Prompt => self.params.init_prompt(&self.config, &peft, &mut rng),
        }
        self.peft = Some(PeftState { mode, config: peft });
        self.reset_trainable(Some(mode));
        Ok(self)
    }

    fn n_virtual(&self) -> usize {
        self.params.prompt.as_ref().map_or(0, |p| p.nrows())
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::UnknownTokenId(bad));
        }
        Ok(())
    }

    fn check_positions(&self, len: usize, positions: &[usize]) -> Result<()> {
        if positions.is_empty() {
            return Err(Error::Empty("masked positions"));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= len) {
            return Err(Error::PositionOutOfRange { position: p, len });
        }
        Ok(())
    }

    pub(crate) fn encode(&self, ids: &[TokenId], mut rng: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let cfg = &self.config;
        let p = &self.params;
        let d = cfg.d_model;
        let n_virtual = self.n_virtual();
        let t = n_virtual + ids.len();
        let rate = cfg.dropout_rate;
        let mut mask = |rows: usize, cols: usize| match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(r, rows, cols, rate)),
            _ => None,
        };

        let mut e = Mat::zeros((t, d));
        if let Some(prompt) = &p.prompt {
            e.slice_mut(s![..n_virtual, ..]).assign(prompt);
        }
        for (i, &id) in ids.iter().enumerate() {
            let mut row = e.row_mut(n_virtual + i);
            row.assign(&p.token_embedding.row(id));
            row += &p.position_embedding.row(i);
        }
        let (mut x, emb_norm) = layer_norm(&e, &p.embedding_norm);
        let emb_mask = mask(t, d);
        if let Some(m) = &emb_mask {
            x *= m;
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (i, layer) in p.layers.iter().enumerate() {
            let q = linear(&x, &layer.wq, &layer.bq);
            let mut keys = linear(&x, &layer.wk, &layer.bk);
            let mut values = linear(&x, &layer.wv, &layer.bv);
            if let Some(prefix) = p.prefixes.get(i) {
                keys = concatenate![Axis(0), prefix.keys, keys];
                values = concatenate![Axis(0), prefix.values, values];
            }
            let attn = multi_head_attention(q, keys, values, cfg.n_heads);
            let mut a = linear(&attn.context, &layer.wo, &layer.bo);
            let attn_mask = mask(t, d);
            if let Some(m) = &attn_mask {
                a *= m;
            }
            let attn_adapter = p.adapters.get(i).map(|ad| {
                let (y, c) = adapter_forward(&a, &ad.attention);
                a = y;
                c
            });
            let (x1, norm1) = layer_norm(&(&x + &a), &layer.attn_norm);

            let ffn_pre = linear(&x1, &layer.w1, &layer.b1);
            let ffn_act = ffn_pre.mapv(gelu);
            let mut f = linear(&ffn_act, &layer.w2, &layer.b2);
            let ffn_mask = mask(t, d);
            if let Some(m) = &ffn_mask {
                f *= m;
            }
            let ffn_adapter = p.adapters.get(i).map(|ad| {
                let (y, c) = adapter_forward(&f, &ad.ffn);
                f = y;
                c
            });
            let (x2, norm2) = layer_norm(&(&x1 + &f), &layer.ffn_norm);
            layers.push(LayerCache {
                x_in: x,
                attn,
                attn_mask,
                attn_adapter,
                norm1,
                x1,
                ffn_pre,
                ffn_act,
                ffn_mask,
                ffn_adapter,
                norm2,
            });
            x = x2;
        }
        ForwardCache {
            ids: ids.to_vec(),
            n_virtual,
            emb_norm,
            emb_mask,
            layers,
            hidden: x,
        }
    }

    fn head(&self, rows: &Mat) -> Mat {
        let logits = rows.dot(&self.params.token_embedding.t()) + &self.params.output_bias;
        log_softmax_rows(&logits)
    }

    fn hidden_rows(&self, cache: &ForwardCache, positions: &[usize]) -> Mat {
        let idx: Vec<usize> = positions.iter().map(|&p| p + cache.n_virtual).collect();
        cache.hidden.select(Axis(0), &idx)
    }

    /// Encoder sequence length and per-layer attention key counts for `ids`.
    pub fn shape_trace(&self, ids: &[TokenId]) -> Result<ShapeTrace> {
        self.check_ids(ids)?;
        let cache = self.encode(ids, None);
        Ok(ShapeTrace {
            embedded_len: cache.hidden.nrows(),
            key_lens: (0..cache.layers.len()).map(|l| cache.key_len(l)).collect(),
        })
    }

    /// Log-probabilities at `positions` with the ids fed exactly as given.
    pub fn log_probs_at(&self, ids: &[TokenId], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(ids)?;
        self.check_positions(ids.len(), positions)?;
        let cache = self.encode(ids, None);
        let lp = self.head(&self.hidden_rows(&cache, positions));
        Ok(lp.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Replaces `positions` with the mask token and returns one log-probability
    /// vector over the vocabulary per position. Evaluation mode (no dropout).
    pub fn forward_mlm(&self, ids: &[TokenId], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(ids)?;
        self.check_positions(ids.len(), positions)?;
        let mut masked = ids.to_vec();
        for &p in positions {
            masked[p] = MASK_ID;
        }
        self.log_probs_at(&masked, positions)
    }

    /// Mean cross-entropy over every loss position in the batch. Ids are used
    /// as given; corruption is the caller's job.
    pub fn mlm_loss(&self, batch: &[MlmExample]) -> Result<f64> {
        let (sum, n) = self.loss_sum(batch)?;
        Ok(sum / n as f64)
    }

    fn check_batch(&self, batch: &[MlmExample]) -> Result<usize> {
        let mut n = 0;
        for ex in batch {
            self.check_ids(&ex.ids)?;
            self.check_positions(ex.ids.len(), &ex.positions)?;
            if ex.gold.len() != ex.positions.len() {
                return Err(Error::Invalid("gold ids and positions differ in length".into()));
            }
            if let Some(&bad) = ex.gold.iter().find(|&&g| g >= self.config.vocab_size) {
                return Err(Error::UnknownTokenId(bad));
            }
            n += ex.positions.len();
        }
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(n)
    }

    fn loss_sum(&self, batch: &[MlmExample]) -> Result<(f64, usize)> {
        let n = self.check_batch(batch)?;
        let mut sum = 0.0;
        for ex in batch {
            let cache = self.encode(&ex.ids, None);
            let lp = self.head(&self.hidden_rows(&cache, &ex.positions));
            for (j, &g) in ex.gold.iter().enumerate() {
                sum -= lp[[j, g]];
            }
        }
        Ok((sum, n))
    }

    /// Mean loss and its gradient with respect to every parameter. Frozen
    /// groups get an all-zero gradient. Passing an RNG enables dropout.
    pub(crate) fn loss_and_grad(
        &self,
        batch: &[MlmExample],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Params)> {
        let n = self.check_batch(batch)? as f64;
        let mut grads = self.params.zeros_like();
        let mut sum = 0.0;
        for ex in batch {
            let cache = self.encode(&ex.ids, rng.as_deref_mut());
            let rows = self.hidden_rows(&cache, &ex.positions);
            let lp = self.head(&rows);
            let mut dlogits = lp.mapv(f64::exp);
            for (j, &g) in ex.gold.iter().enumerate() {
                sum -= lp[[j, g]];
                dlogits[[j, g]] -= 1.0;
            }
            dlogits /= n;
            grads.output_bias += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads.token_embedding += &dlogits.t().dot(&rows);
            let drows = dlogits.dot(&self.params.token_embedding);
            let mut dhidden = Mat::zeros(cache.hidden.raw_dim());
            for (j, &pos) in ex.positions.iter().enumerate() {
                let mut r = dhidden.row_mut(pos + cache.n_virtual);
                r += &drows.row(j);
            }
            self.backward(&cache, dhidden, &mut grads);
        }
        for t in grads.tensors_mut() {
            if !self.is_trainable(&t.group) {
                t.value.fill(0.0);
            }
        }
        Ok((sum / n, grads))
    }

    fn backward(&self, cache: &ForwardCache, mut dx: Mat, g: &mut Params) {
        let p = &self.params;
        let t = cache.hidden.nrows();
        for (i, lc) in cache.layers.iter().enumerate().rev() {
            let layer = &p.layers[i];

            let dres2 = layer_norm_backward(&dx, &layer.ffn_norm, &lc.norm2, &mut g.layers[i].ffn_norm);
            let mut df = dres2.clone();
            if let Some(ac) = &lc.ffn_adapter {
                df = adapter_backward(&df, &p.adapters[i].ffn, ac, &mut g.adapters[i].ffn);
            }
            if let Some(m) = &lc.ffn_mask {
                df *= m;
            }
            let gl = &mut g.layers[i];
            let dact = linear_backward(&lc.ffn_act, &layer.w2, &df, &mut gl.w2, &mut gl.b2);
            let dpre = dact * &lc.ffn_pre.mapv(gelu_grad);
            let mut dx1 = linear_backward(&lc.x1, &layer.w1, &dpre, &mut gl.w1, &mut gl.b1);
            dx1 += &dres2;

            let dres1 = layer_norm_backward(&dx1, &layer.attn_norm, &lc.norm1, &mut gl.attn_norm);
            let mut da = dres1.clone();
            if let Some(ac) = &lc.attn_adapter {
                da = adapter_backward(&da, &p.adapters[i].attention, ac, &mut g.adapters[i].attention);
            }
            if let Some(m) = &lc.attn_mask {
                da *= m;
            }
            let gl = &mut g.layers[i];
            let dctx = linear_backward(&lc.attn.context, &layer.wo, &da, &mut gl.wo, &mut gl.bo);
            let (dq, dkeys, dvalues) = multi_head_attention_backward(&dctx, &lc.attn);
            let m = dkeys.nrows() - t;
            if m > 0 {
                g.prefixes[i].keys += &dkeys.slice(s![..m, ..]);
                g.prefixes[i].values += &dvalues.slice(s![..m, ..]);
            }
            let dk = dkeys.slice(s![m.., ..]).to_owned();
            let dv = dvalues.slice(s![m.., ..]).to_owned();
            let gl = &mut g.layers[i];
            let mut dxin = dres1;
            dxin += &linear_backward(&lc.x_in, &layer.wq, &dq, &mut gl.wq, &mut gl.bq);
            dxin += &linear_backward(&lc.x_in, &layer.wk, &dk, &mut gl.wk, &mut gl.bk);
            dxin += &linear_backward(&lc.x_in, &layer.wv, &dv, &mut gl.wv, &mut gl.bv);
            dx = dxin;
        }

        if let Some(m) = &cache.emb_mask {
            dx *= m;
        }
        let de = layer_norm_backward(&dx, &p.embedding_norm, &cache.emb_norm, &mut g.embedding_norm);
        let nv = cache.n_virtual;
        for (row_idx, row) in de.rows().into_iter().enumerate() {
            if row_idx < nv {
                if let Some(prompt) = g.prompt.as_mut() {
                    let mut r = prompt.row_mut(row_idx);
                    r += &row;
                }
            } else {
                let i = row_idx - nv;
                let mut r = g.token_embedding.row_mut(cache.ids[i]);
                r += &row;
                let mut r = g.position_embedding.row_mut(i);
                r += &row;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> MlmConfig {
        MlmConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 10,
            dropout_rate: 0.1,
            init_seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic_and_norms_are_identity() {
        let a = init_model(tiny_config()).unwrap();
        let b = init_model(tiny_config()).unwrap();
        assert_eq!(a, b);
        for t in a.params().tensors() {
            if t.name.ends_with("gain") {
                assert!(t.value.iter().all(|&v| v == 1.0), "{}", t.name);
            }
            if t.name.ends_with("bias") || t.name.ends_with(".bq") || t.name.ends_with(".b1") {
                assert!(t.value.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
        let c = init_model(MlmConfig {
            init_seed: 8,
            ..tiny_config()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_group_has_a_mask_entry() {
        for mode in TuningMode::ALL {
            let m = init_model(tiny_config())
                .unwrap()
                .apply_peft(mode, PeftConfig::default())
                .unwrap();
            let groups = m.groups();
            assert_eq!(groups.len(), m.freezing_mask().len());
            for g in groups {
                let expected = mode == TuningMode::Full || is_peft_group(&g);
                assert_eq!(m.is_trainable(&g), expected, "{mode:?} {g}");
            }
        }
    }

    #[test]
    fn peft_twice_fails() {
        let m = init_model(tiny_config()).unwrap();
        let m = m.apply_peft(TuningMode::Adapter, PeftConfig::default()).unwrap();
        assert!(matches!(
            m.apply_peft(TuningMode::Prompt, PeftConfig::default()),
            Err(Error::PeftAlreadyApplied(_))
        ));
        let bad = PeftConfig {
            adapter_bottleneck_dim: 0,
            ..Default::default()
        };
        assert!(init_model(tiny_config())
            .unwrap()
            .apply_peft(TuningMode::Adapter, bad)
            .is_err());
    }

    #[test]
    fn prefix_and_prompt_shapes() {
        let peft = PeftConfig {
            prefix_length: 3,
            prompt_length: 2,
            ..Default::default()
        };
        let ids = [3, 5, 6, 7, 4];
        let prefix = init_model(tiny_config())
            .unwrap()
            .apply_peft(TuningMode::Prefix, peft.clone())
            .unwrap();
        let cache = prefix.encode(&ids, None);
        assert_eq!(cache.hidden.nrows(), 5);
        for l in 0..2 {
            assert_eq!(cache.key_len(l), 5 + 3);
        }
        let prompt = init_model(tiny_config())
            .unwrap()
            .apply_peft(TuningMode::Prompt, peft)
            .unwrap();
        let cache = prompt.encode(&ids, None);
        assert_eq!(cache.hidden.nrows(), 5 + 2);
        assert_eq!(cache.n_virtual, 2);
        assert_eq!(cache.key_len(0), 7);
        // Loss positions index real tokens only.
        let lp = prompt.forward_mlm(&ids, &[0, 4]).unwrap();
        assert_eq!(lp.len(), 2);
    }

    #[test]
    fn forward_errors() {
        let m = init_model(tiny_config()).unwrap();
        assert!(matches!(
            m.forward_mlm(&[5; 11], &[0]),
            Err(Error::SequenceTooLong { len: 11, max: 10 })
        ));
        assert!(matches!(m.forward_mlm(&[5, 6], &[]), Err(Error::Empty(_))));
        assert!(matches!(
            m.forward_mlm(&[5, 6], &[2]),
            Err(Error::PositionOutOfRange { position: 2, len: 2 })
        ));
        assert!(matches!(m.forward_mlm(&[5, 60], &[0]), Err(Error::UnknownTokenId(60))));
        assert!(matches!(m.mlm_loss(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn frozen_groups_get_zero_gradient() {
        let m = init_model(tiny_config())
            .unwrap()
            .apply_peft(TuningMode::Prefix, PeftConfig::default())
            .unwrap();
        let batch = [MlmExample {
            ids: vec![3, 2, 6, 2, 4],
            positions: vec![1, 3],
            gold: vec![5, 9],
        }];
        let (_, g) = m.loss_and_grad(&batch, None).unwrap();
        for t in g.tensors() {
            if !is_peft_group(&t.group) {
                assert!(t.value.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
        assert!(g.prefixes[0].keys.iter().any(|&v| v != 0.0));
    }
}
