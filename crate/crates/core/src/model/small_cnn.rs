use super::layers::{ConvRelu, Head, Stage};
use super::params::ParamStore;
use super::{LayerInfo, LayerKind, ModelConfig, Net};
use crate::error::Result;

fn strides(config: &ModelConfig) -> Vec<usize> {
    if let Some(s) = &config.conv_strides {
        return s.clone();
    }
    let n = config.conv_channels.len();
    (0..n).map(|i| if i + 1 == n { 1 } else { 2 }).collect()
}

fn out_size(input: usize, strides: &[usize]) -> usize {
    strides.iter().fold(input, |s, &st| (s - 1) / st + 1)
}

pub(super) fn layers(config: &ModelConfig) -> Vec<LayerInfo> {
    let mut out = vec![LayerInfo::new("input", LayerKind::Input)];
    for i in 0..config.conv_channels.len() {
        out.push(LayerInfo::new(&format!("conv{}", i + 1), LayerKind::Conv).spatial());
    }
    out.push(LayerInfo::new("flatten", LayerKind::Flatten));
    out.push(LayerInfo::new("fc1", LayerKind::Dense));
    out.push(LayerInfo::new("dropout", LayerKind::Dropout));
    out.push(LayerInfo::new("fc2", LayerKind::Dense));
    out
}

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore) -> Result<Net> {
    let strides = strides(config);
    let mut stages: Vec<(String, Box<dyn Stage>)> = Vec::new();
    let mut in_c = config.in_channels;
    for (i, (&c, &s)) in config.conv_channels.iter().zip(&strides).enumerate() {
        let name = format!("conv{}", i + 1);
        let block = ConvRelu::new(store, &name, in_c, c, s)?;
        stages.push((name, Box::new(block)));
        in_c = c;
    }
    let side = out_size(config.input_size, &strides);
    let head = Head::new(
        store,
        ["fc1", "fc2"],
        false,
        in_c * side * side,
        config.head_width,
        config.dropout,
        config.num_classes,
    )?;
    Ok(Net { stages, head })
}

pub(super) fn validate(config: &ModelConfig) -> Result<()> {
    use crate::error::Error;
    if config.conv_channels.is_empty() || config.conv_channels.contains(&0) {
        return Err(Error::invalid("conv_channels", "need at least one block with nonzero width"));
    }
    let strides = strides(config);
    if strides.len() != config.conv_channels.len() || strides.contains(&0) {
        return Err(Error::invalid("conv_strides", "one positive stride per conv block"));
    }
    Ok(())
}
