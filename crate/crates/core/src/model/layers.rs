use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{BatchNorm, Conv2d, Conv2dConfig, Linear};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{glorot_bound, he_bound, Init, ParamStore};
use crate::error::Result;

/// One spatial stage of a backbone; GradCAM may target any stage output.
pub(crate) trait Stage: Send + Sync {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor>;
}

pub(crate) struct ConvRelu {
    pub(crate) conv: Conv2d,
}

impl ConvRelu {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = in_c * 9;
        let w = store.param(name, "weight", &[out_c, in_c, 3, 3], Init::Uniform(he_bound(fan_in)))?;
        let b = store.param(name, "bias", &[out_c], Init::Zeros)?;
        let cfg = Conv2dConfig {
            padding: 1,
            stride,
            ..Default::default()
        };
        Ok(ConvRelu {
            conv: Conv2d::new(w, Some(b), cfg),
        })
    }
}

impl Stage for ConvRelu {
    fn forward(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        Ok(self.conv.forward(x)?.relu()?)
    }
}

pub(crate) fn dense(store: &mut ParamStore, name: &str, in_f: usize, out_f: usize, bound: f64) -> Result<Linear> {
    let w = store.param(name, "weight", &[out_f, in_f], Init::Uniform(bound))?;
    let b = store.param(name, "bias", &[out_f], Init::Zeros)?;
    Ok(Linear::new(w, Some(b)))
}

/// Batch norm that can be pinned to its running statistics.
pub(crate) struct Norm {
    bn: BatchNorm,
    trainable_stats: bool,
}

impl Norm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, c: usize, freeze_stats: bool) -> Result<Self> {
        let weight = store.param(name, "weight", &[c], Init::Ones)?;
        let bias = store.param(name, "bias", &[c], Init::Zeros)?;
        let mean = store.buffer(name, "running_mean", &[c], Init::Zeros)?;
        let var = store.buffer(name, "running_var", &[c], Init::Ones)?;
        let trainable_stats = !(freeze_stats && store.is_frozen(name));
        Ok(Norm {
            bn: BatchNorm::new(c, mean, var, weight, bias, 1e-3)?,
            trainable_stats,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward_t(x, train && self.trainable_stats)?)
    }
}

/// `pool → dense(width, ReLU) → dropout → dense(K)`; softmax is applied by the caller.
pub(crate) struct Head {
    pub(crate) global_pool: bool,
    pub(crate) hidden: Linear,
    pub(crate) dropout: f64,
    pub(crate) out: Linear,
}

impl Head {
    pub(crate) fn new(
        store: &mut ParamStore,
        names: [&str; 2],
        global_pool: bool,
        in_features: usize,
        width: usize,
        dropout: f64,
        classes: usize,
    ) -> Result<Self> {
        let hidden = dense(store, names[0], in_features, width, he_bound(in_features))?;
        let out = dense(store, names[1], width, classes, glorot_bound(width, classes))?;
        Ok(Head {
            global_pool,
            hidden,
            dropout,
            out,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let pooled = if self.global_pool {
            x.mean((2, 3))?
        } else {
            x.flatten_from(1)?
        };
        let mut h = self.hidden.forward(&pooled)?.relu()?;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                h = inverted_dropout(&h, self.dropout, rng)?;
            }
        }
        Ok(self.out.forward(&h)?)
    }
}

fn inverted_dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let keep = 1.0 - p;
    let scale = (1.0 / keep) as f32;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}
