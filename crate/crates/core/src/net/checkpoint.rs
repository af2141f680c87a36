//! Flat JSON checkpoints: `{schema_version, layer_sizes, activation, weights,
//! biases, optimizer_state}` with row-major weight arrays (`out × in`).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Dense, Mlp};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub optimizer_state: Option<Adam>,
}

impl Checkpoint {
    pub fn from_net(net: &Mlp, optimizer: Option<&Adam>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            layer_sizes: net.layer_sizes(),
            activation: net.activation,
            weights: net.layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
            optimizer_state: optimizer.cloned(),
        }
    }

    pub fn to_net(&self) -> Result<Mlp> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("unsupported schema_version {}", self.schema_version)));
        }
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::Checkpoint(format!(
                "{} layer sizes but {} weight and {} bias arrays",
                n,
                self.weights.len(),
                self.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for (i, sizes) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (sizes[0], sizes[1]);
            let weight = Array2::from_shape_vec((fan_out, fan_in), self.weights[i].clone())
                .map_err(|_| Error::Checkpoint(format!("layer {i}: expected {} weights", fan_in * fan_out)))?;
            if self.biases[i].len() != fan_out {
                return Err(Error::Checkpoint(format!("layer {i}: expected {fan_out} biases")));
            }
            layers.push(Dense { weight, bias: Array1::from(self.biases[i].clone()) });
        }
        let net = Mlp::from_layers(layers, self.activation)?;
        if let Some(opt) = &self.optimizer_state {
            if opt.m.len() != net.num_params() || opt.v.len() != net.num_params() {
                return Err(Error::Checkpoint("optimizer moments do not match parameter count".into()));
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 7, 3], Activation::Gelu, false, &mut rng).unwrap();
        let mut adam = Adam::for_net(&net);
        adam.steps = 3;
        adam.m[0] = 0.123456789;
        let ck = Checkpoint::from_net(&net, Some(&adam));
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_net().unwrap(), net);
    }

    #[test]
    fn loader_validates_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 3, 1], Activation::Gelu, false, &mut rng).unwrap();
        let mut ck = Checkpoint::from_net(&net, None);
        ck.weights[0].pop();
        assert!(matches!(ck.to_net(), Err(Error::Checkpoint(_))));

        let mut ck = Checkpoint::from_net(&net, None);
        ck.layer_sizes = vec![2, 4, 1];
        assert!(ck.to_net().is_err());

        let mut ck = Checkpoint::from_net(&net, None);
        ck.schema_version = 99;
        assert!(ck.to_net().is_err());
    }
}
