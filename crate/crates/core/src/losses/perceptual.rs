use std::collections::BTreeMap;
use std::path::Path;

use pathosr_tensor::{Float, Graph, NodeId, ParamSet, Tensor};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Conv, Initializer};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VggLayer {
    /// 3x3 convolution with this many output channels, followed by ReLU
    /// unless it is the tap.
    Conv(usize),
    /// 2x2 max pooling.
    Pool,
}

/// VGG19 feature stack truncated at conv5_4.
pub const VGG19_TO_CONV5_4: [VggLayer; 20] = {
    use VggLayer::{Conv as C, Pool as P};
    [
        C(64), C(64), P, C(128), C(128), P, C(256), C(256), C(256), C(256), P,
        C(512), C(512), C(512), C(512), P, C(512), C(512), C(512), C(512),
    ]
};

/// Frozen VGG-style network whose last convolution's pre-activation output
/// is the feature map for the perceptual term. Inputs in `[0, 1]` are
/// normalized with ImageNet statistics first.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<F> {
    layers: Vec<VggLayer>,
    convs: Vec<Conv>,
    params: ParamSet<F>,
}

impl<F: Float> FeatureExtractor<F> {
    /// Seeded random weights with the given layout; useful for tests and
    /// runs without pretrained weights.
    pub fn random(layers: &[VggLayer], seed: u64) -> Result<Self> {
        Self::build(layers, seed)
    }

    /// Loads torchvision-style `features.{i}.weight` / `features.{i}.bias`
    /// tensors from a safetensors file.
    pub fn from_safetensors(path: &Path, layers: &[VggLayer]) -> Result<Self> {
        let mut stored = read_safetensors::<F>(path)?;
        let mut index = 0usize;
        let mut extractor = Self::build(layers, 0)?;
        let mut loaded = ParamSet::new();
        for layer in layers {
            match layer {
                VggLayer::Conv(_) => {
                    for part in ["weight", "bias"] {
                        let key = format!("features.{index}.{part}");
                        let t = stored.remove(&key).ok_or_else(|| Error::Load {
                            id: path.display().to_string(),
                            message: format!("missing tensor {key}"),
                        })?;
                        loaded.push(key, t);
                    }
                    index += 2;
                }
                VggLayer::Pool => index += 1,
            }
        }
        crate::model::load_params(&mut extractor.params, loaded)?;
        Ok(extractor)
    }

    fn build(layers: &[VggLayer], seed: u64) -> Result<Self> {
        if !matches!(layers.last(), Some(VggLayer::Conv(_))) {
            return Err(Error::Config("feature extractor must end in a convolution".into()));
        }
        let mut init = Initializer::<F>::new(seed, 0.0);
        let mut convs = Vec::new();
        let (mut cin, mut index) = (3, 0);
        for layer in layers {
            match *layer {
                VggLayer::Conv(cout) => {
                    convs.push(init.conv(&format!("features.{index}"), cin, cout, 3, 1, 1.0));
                    cin = cout;
                    index += 2;
                }
                VggLayer::Pool => index += 1,
            }
        }
        Ok(Self {
            layers: layers.to_vec(),
            convs,
            params: init.params,
        })
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// Feature map of an NCHW batch in `[0, 1]`. Parameters are bound as
    /// constants; gradient reaches `x` only.
    pub fn forward(&self, g: &mut Graph<F>, x: NodeId) -> Result<NodeId> {
        let p = g.bind(&self.params, false);
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| -m / s).collect();
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
        let mut h = g.channel_affine(x, &scale, &shift)?;
        let mut convs = self.convs.iter();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                VggLayer::Conv(_) => {
                    let conv = convs.next().expect("one conv per layer");
                    h = conv.forward(g, &p, h)?;
                    if i != last {
                        h = g.relu(h);
                    }
                }
                VggLayer::Pool => h = g.max_pool2(h)?,
            }
        }
        Ok(h)
    }
}

#[derive(Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (usize, usize),
}

/// Reads every F32/F64 tensor from a safetensors file, converting to `F`.
pub fn read_safetensors<F: Float>(path: &Path) -> Result<BTreeMap<String, Tensor<F>>> {
    let bytes = std::fs::read(path)?;
    let load_err = |message: String| Error::Load {
        id: path.display().to_string(),
        message,
    };
    if bytes.len() < 8 {
        return Err(load_err("truncated safetensors header".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| load_err("header length exceeds file".into()))?;
    let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..data_start])?;
    let data = &bytes[data_start..];
    let mut out = BTreeMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let info: TensorInfo = serde_json::from_value(value)?;
        let (start, end) = info.data_offsets;
        let raw = data
            .get(start..end)
            .ok_or_else(|| load_err(format!("tensor {name} outside data section")))?;
        let values: Vec<F> = match info.dtype.as_str() {
            "F32" => raw
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            "F64" => raw
                .chunks_exact(8)
                .map(|c| F::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
            other => return Err(load_err(format!("tensor {name}: unsupported dtype {other}"))),
        };
        let t = Tensor::new(&info.shape, values).map_err(|e| load_err(format!("tensor {name}: {e}")))?;
        out.insert(name, t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_safetensors(path: &Path, tensors: &[(&str, &Tensor<f32>)]) {
        let mut header = serde_json::Map::new();
        let mut data = Vec::new();
        for (name, t) in tensors {
            let start = data.len();
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            header.insert(
                name.to_string(),
                serde_json::json!({"dtype": "F32", "shape": t.shape(), "data_offsets": [start, data.len()]}),
            );
        }
        let header = serde_json::to_vec(&header).unwrap();
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&data);
        std::fs::write(path, bytes).unwrap();
    }

    const SMALL: [VggLayer; 4] = [VggLayer::Conv(4), VggLayer::Pool, VggLayer::Conv(6), VggLayer::Conv(5)];

    #[test]
    fn safetensors_round_trip_matches_random_init() {
        let random = FeatureExtractor::<f32>::random(&SMALL, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.safetensors");
        let entries: Vec<(&str, &Tensor<f32>)> = random.params().iter().collect();
        write_safetensors(&path, &entries);
        let loaded = FeatureExtractor::<f32>::from_safetensors(&path, &SMALL).unwrap();
        assert_eq!(loaded.params(), random.params());
        assert_eq!(
            random.params().names(),
            ["features.0.weight", "features.0.bias", "features.3.weight", "features.3.bias", "features.5.weight", "features.5.bias"]
        );
    }

    #[test]
    fn missing_tensor_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.safetensors");
        write_safetensors(&path, &[]);
        let err = FeatureExtractor::<f32>::from_safetensors(&path, &SMALL).unwrap_err();
        assert!(err.to_string().contains("features.0.weight"), "{err}");
    }

    #[test]
    fn feature_shape() {
        let phi = FeatureExtractor::<f32>::random(&SMALL, 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 8, 8], 0.5));
        let y = phi.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 4, 4]);
    }
}
