//! Checkpoint files: `b"SRSEG1"`, a little-endian `u64` metadata length,
//! the UTF-8 JSON metadata, then every layer's weights and biases as
//! little-endian `f64` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::balancing::ClassWeights;
use crate::error::{Error, Result};
use crate::net::{Layer, LayerSpec, Network, Tensor};

pub const MAGIC: &[u8; 6] = b"SRSEG1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// `None` for regression models.
    pub class_weights: Option<ClassWeights>,
    /// SGD steps already applied.
    pub iteration: usize,
    /// Where the loss log of the run lives, if it was written to disk.
    pub loss_log: Option<String>,
    pub network: Network,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: TrainConfig,
    layers: Vec<LayerSpec>,
    class_weights: Option<ClassWeights>,
    iteration: usize,
    loss_log: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            config: self.config.clone(),
            layers: self.network.specs(),
            class_weights: self.class_weights.clone(),
            iteration: self.iteration,
            loss_log: self.loss_log.clone(),
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(14 + json.len() + 8 * self.network.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.network.parameters() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..6] != MAGIC {
            return Err(Error::format("checkpoint", "missing SRSEG1 magic"));
        }
        let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(14..14 + len)
            .ok_or_else(|| Error::format("checkpoint", "truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(body)?;

        let mut blobs = bytes[14 + len..].chunks_exact(8);
        if !blobs.remainder().is_empty() {
            return Err(Error::format("checkpoint", "parameter section is not a whole number of f64"));
        }
        let mut next = || {
            blobs
                .next()
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| Error::format("checkpoint", "too few parameters"))
        };
        let mut layers = Vec::with_capacity(meta.layers.len());
        for spec in meta.layers {
            let (shape, nb) = spec.param_shape().unwrap_or(([0, 0, 0, 0], 0));
            let nw: usize = shape.iter().product();
            let weight = (0..nw).map(|_| next()).collect::<Result<Vec<_>>>()?;
            let bias = (0..nb).map(|_| next()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                spec,
                weight: Tensor::from_vec(&shape, weight)?,
                bias,
            });
        }
        if blobs.next().is_some() {
            return Err(Error::format("checkpoint", "trailing parameter data"));
        }
        Ok(Checkpoint {
            config: meta.config,
            class_weights: meta.class_weights,
            iteration: meta.iteration,
            loss_log: meta.loss_log,
            network: Network::from_layers(layers)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, DecoderMode, Head};

    fn sample() -> Checkpoint {
        let cfg = TrainConfig::default();
        let specs = cfg.arch.layer_specs(1, DecoderMode::Deconv, Head::Classes(3));
        Checkpoint {
            config: cfg,
            class_weights: Some(ClassWeights::new(vec![0.1, 1.0, 1.0 / 3.0]).unwrap()),
            iteration: 17,
            loss_log: Some("loss.csv".into()),
            network: Network::init(specs, 5).unwrap(),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..6], b"SRSEG1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let bits = |n: &Network| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.network), bits(&ck.network));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn regression_checkpoint_has_no_weights() {
        let mut ck = sample();
        ck.class_weights = None;
        ck.network = Network::init(Architecture::default().layer_specs(1, DecoderMode::Unpool, Head::Regression), 1).unwrap();
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
    }
}
