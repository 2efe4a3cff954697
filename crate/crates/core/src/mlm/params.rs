//! Parameter containers and named-group enumeration.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{MlmConfig, PeftConfig};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Mat,
    pub bias: Mat,
}

impl Norm {
    fn new(d: usize) -> Self {
        Norm {
            gain: Mat::ones((1, d)),
            bias: Mat::zeros((1, d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub attn_norm: Norm,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub ffn_norm: Norm,
}

/// Bottleneck adapter: `x + up(gelu(down(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub down: Mat,
    pub down_bias: Mat,
    pub up: Mat,
    pub up_bias: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdapters {
    pub attention: Adapter,
    pub ffn: Adapter,
}

/// Learned key/value rows prepended to one layer's attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Prefix {
    pub keys: Mat,
    pub values: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_embedding: Mat,
    pub position_embedding: Mat,
    pub embedding_norm: Norm,
    pub layers: Vec<Layer>,
    /// Bias of the output head; its weight is tied to `token_embedding`.
    pub output_bias: Mat,
    pub adapters: Vec<LayerAdapters>,
    pub prefixes: Vec<Prefix>,
    pub prompt: Option<Mat>,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

fn weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Mat {
    uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

macro_rules! tensor_list {
    ($p:expr, $make:ident) => {{
        let mut out = Vec::new();
        let mut push = |group: String, leaf: &str, value| {
            let name = format!("{group}.{leaf}");
            out.push($make { group, name, value });
        };
        let Params {
            token_embedding,
            position_embedding,
            embedding_norm: Norm { gain, bias },
            layers,
            output_bias,
            adapters,
            prefixes,
            prompt,
        } = $p;
        push("embeddings".into(), "token", token_embedding);
        push("embeddings".into(), "position", position_embedding);
        push("embeddings".into(), "norm_gain", gain);
        push("embeddings".into(), "norm_bias", bias);
        for (i, layer) in layers.into_iter().enumerate() {
            let Layer {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                attn_norm:
                    Norm {
                        gain: attn_gain,
                        bias: attn_bias,
                    },
                w1,
                b1,
                w2,
                b2,
                ffn_norm:
                    Norm {
                        gain: ffn_gain,
                        bias: ffn_bias,
                    },
            } = layer;
            let att = format!("encoder.{i}.attention");
            push(att.clone(), "wq", wq);
            push(att.clone(), "bq", bq);
            push(att.clone(), "wk", wk);
            push(att.clone(), "bk", bk);
            push(att.clone(), "wv", wv);
            push(att.clone(), "bv", bv);
            push(att.clone(), "wo", wo);
            push(att, "bo", bo);
            push(format!("encoder.{i}.attention_norm"), "gain", attn_gain);
            push(format!("encoder.{i}.attention_norm"), "bias", attn_bias);
            let ffn = format!("encoder.{i}.ffn");
            push(ffn.clone(), "w1", w1);
            push(ffn.clone(), "b1", b1);
            push(ffn.clone(), "w2", w2);
            push(ffn, "b2", b2);
            push(format!("encoder.{i}.ffn_norm"), "gain", ffn_gain);
            push(format!("encoder.{i}.ffn_norm"), "bias", ffn_bias);
        }
        push("head".into(), "output_bias", output_bias);
        for (i, LayerAdapters { attention, ffn }) in adapters.into_iter().enumerate() {
            for (site, adapter) in [("attention", attention), ("ffn", ffn)] {
                let Adapter {
                    down,
                    down_bias,
                    up,
                    up_bias,
                } = adapter;
                let g = format!("adapter.{i}.{site}");
                push(g.clone(), "down", down);
                push(g.clone(), "down_bias", down_bias);
                push(g.clone(), "up", up);
                push(g, "up_bias", up_bias);
            }
        }
        for (i, Prefix { keys, values }) in prefixes.into_iter().enumerate() {
            push(format!("prefix.{i}"), "keys", keys);
            push(format!("prefix.{i}"), "values", values);
        }
        if let Some(embeddings) = prompt {
            push("prompt".into(), "embeddings", embeddings);
        }
        out
    }};
}

impl Params {
    pub(crate) fn init(cfg: &MlmConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let emb_scale = 1.0 / (d as f64).sqrt();
        let token_embedding = uniform(rng, cfg.vocab_size, d, emb_scale);
        let position_embedding = uniform(rng, cfg.max_seq_len, d, emb_scale);
        let layers = (0..cfg.n_layers)
            .map(|_| Layer {
                wq: weight(rng, d, d),
                bq: Mat::zeros((1, d)),
                wk: weight(rng, d, d),
                bk: Mat::zeros((1, d)),
                wv: weight(rng, d, d),
                bv: Mat::zeros((1, d)),
                wo: weight(rng, d, d),
                bo: Mat::zeros((1, d)),
                attn_norm: Norm::new(d),
                w1: weight(rng, d, cfg.d_ff),
                b1: Mat::zeros((1, cfg.d_ff)),
                w2: weight(rng, cfg.d_ff, d),
                b2: Mat::zeros((1, d)),
                ffn_norm: Norm::new(d),
            })
            .collect();
        Params {
            token_embedding,
            position_embedding,
            embedding_norm: Norm::new(d),
            layers,
            output_bias: Mat::zeros((1, cfg.vocab_size)),
            adapters: Vec::new(),
            prefixes: Vec::new(),
            prompt: None,
        }
    }

    pub(crate) fn init_adapters(&mut self, cfg: &MlmConfig, peft: &PeftConfig, rng: &mut ChaCha8Rng) {
        let d = cfg.d_model;
        let r = peft.adapter_bottleneck_dim;
        let adapter = |rng: &mut ChaCha8Rng| Adapter {
            down: weight(rng, d, r),
            down_bias: Mat::zeros((1, r)),
            // Zero up-projection makes the adapter an identity at init.
            up: Mat::zeros((r, d)),
            up_bias: Mat::zeros((1, d)),
        };
        self.adapters = (0..cfg.n_layers)
            .map(|_| LayerAdapters {
                attention: adapter(rng),
                ffn: adapter(rng),
            })
            .collect();
    }

    pub(crate) fn init_prefixes(&mut self, cfg: &MlmConfig, peft: &PeftConfig, rng: &mut ChaCha8Rng) {
        let scale = 1.0 / (cfg.d_model as f64).sqrt();
        self.prefixes = (0..cfg.n_layers)
            .map(|_| Prefix {
                keys: uniform(rng, peft.prefix_length, cfg.d_model, scale),
                values: uniform(rng, peft.prefix_length, cfg.d_model, scale),
            })
            .collect();
    }

    pub(crate) fn init_prompt(&mut self, cfg: &MlmConfig, peft: &PeftConfig, rng: &mut ChaCha8Rng) {
        let scale = 1.0 / (cfg.d_model as f64).sqrt();
        self.prompt = Some(uniform(rng, peft.prompt_length, cfg.d_model, scale));
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.value.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        tensor_list!(self, Tensor)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        tensor_list!(self, TensorMut)
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.value.len()).sum()
    }
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Tensor<'a> {
    pub group: String,
    pub name: String,
    pub value: &'a Mat,
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub group: String,
    pub name: String,
    pub value: &'a mut Mat,
}

/// True for groups added by a PEFT scheme.
pub fn is_peft_group(group: &str) -> bool {
    group.starts_with("adapter.") || group.starts_with("prefix.") || group == "prompt"
}

/// Matches a group against a selector: an exact group name, a family
/// prefix such as `adapter` or `encoder.0`, or `*` for everything.
pub fn group_matches(group: &str, selector: &str) -> bool {
    selector == "*"
        || group == selector
        || (group.starts_with(selector) && group.as_bytes().get(selector.len()) == Some(&b'.'))
}
