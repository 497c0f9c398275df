use std::collections::HashSet;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Uniform(f64),
    Zeros,
    Ones,
}

/// Creates seeded parameters, registers them in a [`VarMap`] and hands layers
/// either the live variable or a detached view when the owning layer is frozen.
pub(crate) struct ParamStore<'a> {
    varmap: &'a VarMap,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
    frozen_layers: HashSet<String>,
    pub(crate) trainable: Vec<(String, Var)>,
    pub(crate) frozen: Vec<(String, Var)>,
}

impl<'a> ParamStore<'a> {
    pub(crate) fn new(
        varmap: &'a VarMap,
        seed: u64,
        dtype: DType,
        device: &Device,
        frozen_layers: HashSet<String>,
    ) -> Self {
        ParamStore {
            varmap,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
            frozen_layers,
            trainable: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub(crate) fn is_frozen(&self, layer: &str) -> bool {
        self.frozen_layers.contains(layer)
    }

    fn create(&mut self, layer: &str, name: &str, shape: &[usize], init: Init) -> Result<(String, Var)> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Uniform(bound) => {
                let b = bound as f32;
                (0..n).map(|_| self.rng.random_range(-b..=b)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let full = format!("{layer}.{name}");
        self.varmap
            .data()
            .lock()
            .expect("varmap lock poisoned")
            .insert(full.clone(), var.clone());
        Ok((full, var))
    }

    /// A learnable parameter. Frozen layers receive a detached view so no
    /// gradient is ever recorded for them.
    pub(crate) fn param(&mut self, layer: &str, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let (full, var) = self.create(layer, name, shape, init)?;
        if self.is_frozen(layer) {
            let t = var.as_detached_tensor();
            self.frozen.push((full, var));
            Ok(t)
        } else {
            let t = var.as_tensor().clone();
            self.trainable.push((full, var));
            Ok(t)
        }
    }

    /// Non-learnable state such as batch-norm running statistics.
    pub(crate) fn buffer(&mut self, layer: &str, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let (full, var) = self.create(layer, name, shape, init)?;
        if self.is_frozen(layer) {
            self.frozen.push((full, var.clone()));
        }
        Ok(var.as_tensor().clone())
    }
}

/// He-uniform bound for layers followed by a rectifier.
pub(crate) fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Glorot-uniform bound.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
