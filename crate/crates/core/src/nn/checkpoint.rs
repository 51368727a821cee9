//! Self-describing model container: a versioned header, an architecture
//! descriptor owned by the caller, and named shaped tensors. Serialized as
//! JSON; `f64` values round-trip exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tensor::ParamSet;
use super::{NnError, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Architecture descriptor; interpreted by whoever builds the model.
    pub architecture: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(architecture: Value) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture,
            tensors: Vec::new(),
        }
    }

    /// Record every parameter of `params` under `prefix.`.
    pub fn add_params(&mut self, prefix: &str, params: &ParamSet) {
        for p in params.iter() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}.{}", p.name),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                data: p.value.data().to_vec(),
            });
        }
    }

    /// Copy stored tensors back into `params`, matching on `prefix.name` and
    /// checking shapes.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<(), NnError> {
        for p in params.iter_mut() {
            let full = format!("{prefix}.{}", p.name);
            let stored = self
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| NnError::MissingParam(full.clone()))?;
            if stored.shape != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    layer: full,
                    expected: format!("{:?}", p.value.shape()),
                    got: format!("{:?}", stored.shape),
                });
            }
            p.value = Tensor::from_vec(&stored.shape, stored.data.clone())?;
            p.trainable = stored.trainable;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), NnError> {
        serde_json::to_writer(w, self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn read<R: Read>(r: R) -> Result<Self, NnError> {
        let ckpt: Checkpoint =
            serde_json::from_reader(r).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(NnError::Version {
                got: ckpt.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trips_tensors_exactly() {
        let mut params = ParamSet::new();
        params
            .add("w", Tensor::from_vec(&[2, 2], vec![0.1, -0.2, 1.0 / 3.0, 4.5e-17]).unwrap())
            .unwrap();
        params.add("b", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        params.by_name_mut("b").unwrap().trainable = false;

        let mut ckpt = Checkpoint::new(json!({"kind": "test"}));
        ckpt.add_params("net", &params);
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();

        let mut restored = ParamSet::new();
        restored.add("w", Tensor::zeros(&[2, 2])).unwrap();
        restored.add("b", Tensor::zeros(&[1])).unwrap();
        back.load_params("net", &mut restored).unwrap();
        assert_eq!(restored.by_name("w").unwrap().value, params.by_name("w").unwrap().value);
        assert_eq!(restored.by_name("b").unwrap().value, params.by_name("b").unwrap().value);
        assert!(!restored.by_name("b").unwrap().trainable);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut ckpt = Checkpoint::new(json!(null));
        ckpt.format_version = 99;
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &ckpt).unwrap();
        assert!(matches!(
            Checkpoint::read(buf.as_slice()),
            Err(NnError::Version { got: 99, .. })
        ));
    }

    #[test]
    fn missing_and_mismatched_tensors_error() {
        let ckpt = Checkpoint::new(json!(null));
        let mut params = ParamSet::new();
        params.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            ckpt.load_params("net", &mut params),
            Err(NnError::MissingParam(_))
        ));

        let mut ckpt = Checkpoint::new(json!(null));
        let mut other = ParamSet::new();
        other.add("w", Tensor::zeros(&[3])).unwrap();
        ckpt.add_params("net", &other);
        assert!(matches!(
            ckpt.load_params("net", &mut params),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
