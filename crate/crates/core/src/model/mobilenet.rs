//! MobileNetV2 trunk with Keras layer naming, so that "the first N layers"
//! means the same prefix as `model.layers[:N]` in the Keras application.
//!
//! Pretrained weights are read from a safetensors file whose keys follow the
//! `<keras_layer>.<param>` scheme used here (convolutions in OIHW layout,
//! depthwise kernels as `C×1×3×3`).

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};

use super::layers::{Head, Norm, Stage};
use super::params::{he_bound, Init, ParamStore};
use super::{LayerInfo, LayerKind, ModelConfig, Net};
use crate::error::Result;

/// (expansion, output channels, stride) for blocks 0..=16.
const BLOCKS: [(usize, usize, usize); 17] = [
    (1, 16, 1),
    (6, 24, 2),
    (6, 24, 1),
    (6, 32, 2),
    (6, 32, 1),
    (6, 32, 1),
    (6, 64, 2),
    (6, 64, 1),
    (6, 64, 1),
    (6, 64, 1),
    (6, 96, 1),
    (6, 96, 1),
    (6, 96, 1),
    (6, 160, 2),
    (6, 160, 1),
    (6, 160, 1),
    (6, 320, 1),
];

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let rounded = (((v + d / 2.0) / d).floor() as usize * divisor).max(divisor);
    if (rounded as f64) < 0.9 * v {
        rounded + divisor
    } else {
        rounded
    }
}

struct BlockPlan {
    prefix: String,
    expand: Option<usize>,
    in_c: usize,
    out_c: usize,
    stride: usize,
    residual: bool,
}

fn plan(config: &ModelConfig) -> (usize, Vec<BlockPlan>, usize) {
    let alpha = config.width_multiplier;
    let first = make_divisible(32.0 * alpha, 8);
    let mut in_c = first;
    let mut blocks = Vec::new();
    for (id, &(t, c, s)) in BLOCKS.iter().enumerate() {
        let out_c = make_divisible(c as f64 * alpha, 8);
        blocks.push(BlockPlan {
            prefix: if id == 0 {
                "expanded_conv_".to_string()
            } else {
                format!("block_{id}_")
            },
            expand: (id != 0).then_some(in_c * t),
            in_c,
            out_c,
            stride: s,
            residual: in_c == out_c && s == 1,
        });
        in_c = out_c;
    }
    let last = if alpha > 1.0 {
        make_divisible(1280.0 * alpha, 8)
    } else {
        1280
    };
    (first, blocks, last)
}

pub(super) fn layers(config: &ModelConfig) -> Vec<LayerInfo> {
    use LayerKind::*;
    let (_, blocks, _) = plan(config);
    let mut out = vec![
        LayerInfo::new("input_1", Input),
        LayerInfo::new("Conv1", Conv),
        LayerInfo::new("bn_Conv1", BatchNorm),
        LayerInfo::new("Conv1_relu", Activation).spatial(),
    ];
    for b in &blocks {
        let p = &b.prefix;
        if b.expand.is_some() {
            out.push(LayerInfo::new(&format!("{p}expand"), Conv));
            out.push(LayerInfo::new(&format!("{p}expand_BN"), BatchNorm));
            out.push(LayerInfo::new(&format!("{p}expand_relu"), Activation));
        }
        if b.stride == 2 {
            out.push(LayerInfo::new(&format!("{p}pad"), Pad));
        }
        out.push(LayerInfo::new(&format!("{p}depthwise"), Conv));
        out.push(LayerInfo::new(&format!("{p}depthwise_BN"), BatchNorm));
        out.push(LayerInfo::new(&format!("{p}depthwise_relu"), Activation));
        out.push(LayerInfo::new(&format!("{p}project"), Conv));
        if b.residual {
            out.push(LayerInfo::new(&format!("{p}project_BN"), BatchNorm));
            out.push(LayerInfo::new(&format!("{p}add"), Add).spatial());
        } else {
            out.push(LayerInfo::new(&format!("{p}project_BN"), BatchNorm).spatial());
        }
    }
    out.push(LayerInfo::new("Conv_1", Conv));
    out.push(LayerInfo::new("Conv_1_bn", BatchNorm));
    out.push(LayerInfo::new("out_relu", Activation).spatial());
    out.push(LayerInfo::new("global_average_pooling2d", Pool));
    out.push(LayerInfo::new("dense", Dense));
    out.push(LayerInfo::new("dropout", Dropout));
    out.push(LayerInfo::new("dense_1", Dense));
    out
}

fn relu6(x: &Tensor) -> Result<Tensor> {
    Ok(x.clamp(0f32, 6f32)?)
}

/// TF "same" padding for a stride-2, 3×3 convolution.
fn pad_for_stride2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let top = usize::from(h % 2 == 1);
    let left = usize::from(w % 2 == 1);
    Ok(x.pad_with_zeros(2, top, 1)?.pad_with_zeros(3, left, 1)?)
}

fn conv(
    store: &mut ParamStore,
    name: &str,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
) -> Result<Conv2d> {
    let per_group = in_c / groups;
    let fan_in = per_group * kernel * kernel;
    let w = store.param(
        name,
        "weight",
        &[out_c, per_group, kernel, kernel],
        Init::Uniform(he_bound(fan_in)),
    )?;
    let padding = if kernel == 3 && stride == 1 { 1 } else { 0 };
    let cfg = Conv2dConfig {
        padding,
        stride,
        groups,
        ..Default::default()
    };
    Ok(Conv2d::new(w, None, cfg))
}

struct Stem {
    conv: Conv2d,
    bn: Norm,
}

impl Stage for Stem {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.conv.forward(&pad_for_stride2(x)?)?;
        relu6(&self.bn.forward(&x, train)?)
    }
}

struct InvertedResidual {
    expand: Option<(Conv2d, Norm)>,
    depthwise: Conv2d,
    dw_bn: Norm,
    project: Conv2d,
    project_bn: Norm,
    stride: usize,
    residual: bool,
}

impl Stage for InvertedResidual {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        if let Some((conv, bn)) = &self.expand {
            h = relu6(&bn.forward(&conv.forward(&h)?, train)?)?;
        }
        if self.stride == 2 {
            h = pad_for_stride2(&h)?;
        }
        h = relu6(&self.dw_bn.forward(&self.depthwise.forward(&h)?, train)?)?;
        h = self.project_bn.forward(&self.project.forward(&h)?, train)?;
        if self.residual {
            h = (h + x)?;
        }
        Ok(h)
    }
}

struct Top {
    conv: Conv2d,
    bn: Norm,
}

impl Stage for Top {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        relu6(&self.bn.forward(&self.conv.forward(x)?, train)?)
    }
}

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore) -> Result<Net> {
    let (first, blocks, last) = plan(config);
    let freeze = config.freeze_bn_stats;
    let mut stages: Vec<(String, Box<dyn Stage>)> = Vec::new();
    let stem = Stem {
        conv: {
            let w = store.param(
                "Conv1",
                "weight",
                &[first, config.in_channels, 3, 3],
                Init::Uniform(he_bound(config.in_channels * 9)),
            )?;
            Conv2d::new(
                w,
                None,
                Conv2dConfig {
                    stride: 2,
                    ..Default::default()
                },
            )
        },
        bn: Norm::new(store, "bn_Conv1", first, freeze)?,
    };
    stages.push(("Conv1_relu".to_string(), Box::new(stem)));
    for b in blocks {
        let p = b.prefix.clone();
        let hidden = b.expand.unwrap_or(b.in_c);
        let expand = match b.expand {
            Some(e) => Some((
                conv(store, &format!("{p}expand"), b.in_c, e, 1, 1, 1)?,
                Norm::new(store, &format!("{p}expand_BN"), e, freeze)?,
            )),
            None => None,
        };
        let block = InvertedResidual {
            expand,
            depthwise: conv(store, &format!("{p}depthwise"), hidden, hidden, 3, b.stride, hidden)?,
            dw_bn: Norm::new(store, &format!("{p}depthwise_BN"), hidden, freeze)?,
            project: conv(store, &format!("{p}project"), hidden, b.out_c, 1, 1, 1)?,
            project_bn: Norm::new(store, &format!("{p}project_BN"), b.out_c, freeze)?,
            stride: b.stride,
            residual: b.residual,
        };
        let stage_name = if b.residual {
            format!("{p}add")
        } else {
            format!("{p}project_BN")
        };
        stages.push((stage_name, Box::new(block)));
    }
    let in_c = make_divisible(320.0 * config.width_multiplier, 8);
    let top = Top {
        conv: conv(store, "Conv_1", in_c, last, 1, 1, 1)?,
        bn: Norm::new(store, "Conv_1_bn", last, freeze)?,
    };
    stages.push(("out_relu".to_string(), Box::new(top)));
    let head = Head::new(
        store,
        ["dense", "dense_1"],
        true,
        last,
        config.head_width,
        config.dropout,
        config.num_classes,
    )?;
    Ok(Net { stages, head })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keras_layer_count_and_prefix() {
        let config = ModelConfig::transfer(4);
        let all = layers(&config);
        // 154 backbone layers plus the four head layers.
        assert_eq!(all.len(), 158);
        assert_eq!(all[1].name, "Conv1");
        assert_eq!(all[49].name, "block_5_depthwise_BN");
        assert_eq!(all[153].name, "out_relu");
    }

    #[test]
    fn divisible_channels() {
        assert_eq!(make_divisible(32.0, 8), 32);
        assert_eq!(make_divisible(32.0 * 0.35, 8), 16);
        assert_eq!(make_divisible(24.0 * 0.35, 8), 8);
        assert_eq!(make_divisible(320.0 * 0.35, 8), 112);
    }
}
