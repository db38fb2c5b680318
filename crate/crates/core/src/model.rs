//! The full keypoint-to-pose network and its versioned checkpoint format.
//!
//! Checkpoint layout: a magic line, one JSON header line (model config, training
//! metadata and a tensor index), then every tensor as little-endian `f32` in index
//! order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig, DecoderOutput};
use crate::encoder::{Encoder, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &str = "RAYPOSE-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// When false the decoder consumes ground-truth keypoints and one-hot labels.
    pub encoder_enabled: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            encoder_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn resolution(&self) -> (usize, usize) {
        (self.encoder.width, self.encoder.height)
    }
}

pub enum ModelInput<'a> {
    /// `[B, 3, H, W]` in `[0, 1]`.
    Images(&'a Tensor),
    /// Encoder bypass: `[B, 4, 2]` pixels and `[B, 7]` class distributions.
    Keypoints { y2d: &'a Tensor, class_dist: &'a Tensor },
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub y2d: Tensor,
    pub class_dist: Tensor,
    pub encoder: Option<EncoderOutput>,
    pub decoder: DecoderOutput,
}

#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Option<Encoder>,
    pub decoder: Decoder,
    params: ParamStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub epoch: Option<usize>,
    pub tensors: Vec<TensorEntry>,
}

impl Model {
    pub fn new(cfg: ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut params = ParamStore::new(cfg.seed, dtype, device);
        let encoder = if cfg.encoder_enabled {
            Some(Encoder::new(&mut params, cfg.encoder)?)
        } else {
            cfg.encoder.validate()?;
            None
        };
        let (w, h) = cfg.resolution();
        let decoder = Decoder::new(&mut params, cfg.decoder, w, h)?;
        Ok(Self {
            cfg,
            encoder,
            decoder,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn forward(&self, input: ModelInput<'_>, k: &CameraIntrinsics) -> Result<ModelOutput> {
        let (y2d, class_dist, encoder) = match (input, &self.encoder) {
            (ModelInput::Images(images), Some(enc)) => {
                let out = enc.forward(images)?;
                (out.y2d.clone(), out.class_dist.clone(), Some(out))
            }
            (ModelInput::Keypoints { y2d, class_dist }, None) => (y2d.clone(), class_dist.clone(), None),
            (ModelInput::Images(_), None) => {
                return Err(Error::Config("encoder is disabled; supply keypoints and labels".into()))
            }
            (ModelInput::Keypoints { .. }, Some(_)) => {
                return Err(Error::Config("encoder is enabled; supply images".into()))
            }
        };
        let decoder = self.decoder.forward(&y2d, &class_dist, k)?;
        Ok(ModelOutput {
            y2d,
            class_dist,
            encoder,
            decoder,
        })
    }

    /// Copies the current parameter values, for keeping the best epoch in memory.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.params
            .vars()
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().copy()?))
            .collect()
    }

    pub fn restore(&self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.vars().len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} tensors for a model with {}",
                values.len(),
                self.params.vars().len()
            )));
        }
        for ((name, var), t) in self.params.vars().iter().zip(values) {
            if var.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: shape {:?} vs {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, epoch: Option<usize>) -> Result<()> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.cfg,
            epoch,
            tensors: self
                .params
                .vars()
                .iter()
                .map(|(name, v)| TensorEntry {
                    name: name.clone(),
                    shape: v.dims().to_vec(),
                })
                .collect(),
        };
        let mut bytes = Vec::new();
        writeln!(bytes, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").expect("in-memory write");
        serde_json::to_writer(&mut bytes, &header).expect("header serializes");
        bytes.push(b'\n');
        for (_, v) in self.params.vars() {
            let data = v.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            for x in data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
        let f = std::fs::File::open(path).map_err(|e| Error::load(path, e))?;
        read_header(&mut BufReader::new(f), path)
    }

    pub fn load(path: &Path, dtype: DType, device: &Device) -> Result<(Self, CheckpointHeader)> {
        let f = std::fs::File::open(path).map_err(|e| Error::load(path, e))?;
        let mut r = BufReader::new(f);
        let header = read_header(&mut r, path)?;
        let model = Self::new(header.config, dtype, device)?;
        let vars = model.params.vars();
        if vars.len() != header.tensors.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{}: {} tensors stored, model has {}",
                path.display(),
                header.tensors.len(),
                vars.len()
            )));
        }
        for ((name, var), entry) in vars.iter().zip(&header.tensors) {
            if *name != entry.name || var.dims() != entry.shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "{}: tensor {} {:?} does not match {} {:?}",
                    path.display(),
                    entry.name,
                    entry.shape,
                    name,
                    var.dims()
                )));
            }
            let n: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; 4 * n];
            r.read_exact(&mut raw)
                .map_err(|e| Error::load(path, format!("tensor {}: {e}", entry.name)))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::from_vec(values, entry.shape.as_slice(), device)?.to_dtype(dtype)?;
            var.set(&t)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::load(path, e))?;
        if !rest.is_empty() {
            return Err(Error::load(path, format!("{} trailing bytes", rest.len())));
        }
        Ok((model, header))
    }
}

fn read_header(r: &mut impl BufRead, path: &Path) -> Result<CheckpointHeader> {
    let mut magic = String::new();
    r.read_line(&mut magic).map_err(|e| Error::load(path, e))?;
    let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    if magic.trim_end() != expected {
        return Err(Error::load(
            path,
            format!("not a version-{CHECKPOINT_VERSION} checkpoint (found `{}`)", magic.trim_end()),
        ));
    }
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::load(path, e))?;
    serde_json::from_str(&line).map_err(|e| Error::load(path, format!("header: {e}")))
}
