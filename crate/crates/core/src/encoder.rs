//! Keypoint encoder: convolutional backbone, patch tokens with a class token, a stack
//! of self-attention layers, per-layer compact keypoint representations combined by a
//! learned gate, and a classification head on the class token.

use candle_core::{Module, Tensor, D};
use candle_nn::{Conv2d, Linear};
use serde::{Deserialize, Serialize};

use crate::dataset::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::nn::{softmax_last, LayerNorm, ParamStore};

/// Total downsampling of the backbone.
pub const BACKBONE_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub width: usize,
    pub height: usize,
    /// Output channels of the three backbone blocks (strides 4, 2, 2).
    pub channels: [usize; 3],
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub positional_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            channels: [16, 32, 64],
            dim: 64,
            layers: 4,
            heads: 4,
            ffn: 128,
            positional_encoding: true,
        }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.height / BACKBONE_STRIDE, self.width / BACKBONE_STRIDE)
    }

    /// Number of patch tokens M.
    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.width % BACKBONE_STRIDE != 0 || self.height % BACKBONE_STRIDE != 0 || self.tokens() == 0 {
            return Err(Error::Config(format!(
                "encoder resolution {}x{} must be a non-zero multiple of {BACKBONE_STRIDE}",
                self.width, self.height
            )));
        }
        if self.dim % self.heads != 0 || self.dim % 4 != 0 {
            return Err(Error::Config(format!(
                "embedding dim {} must be divisible by 4 and by the head count {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one attention layer".into()));
        }
        Ok(())
    }
}

/// Patch tokens (positional encoding already added) and the class token, both `[B, ·, d]`.
#[derive(Debug, Clone)]
pub struct TokenSet {
    pub tokens: Tensor,
    pub cls: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    /// Normalized per-layer sequences `[B, 1 + M, d]`, class token first.
    pub layer_outputs: Vec<Tensor>,
    /// Per-layer attention `[B, heads, 1 + M, 1 + M]`.
    pub attention: Vec<Tensor>,
    /// Per-layer max-pooled patch features `[B, d]`.
    pub x_ir: Vec<Tensor>,
    /// Per-layer keypoint proposals `[B, 4, 2]` in pixels.
    pub x_cr: Vec<Tensor>,
    /// `[B, N]`.
    pub w_gate: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[B, 4, 2]` pixels, non-negative.
    pub y2d: Tensor,
    /// `[B, 7]`.
    pub class_dist: Tensor,
    /// Final class token `[B, d]`.
    pub cls_token: Tensor,
    pub state: EncoderState,
}

#[derive(Debug)]
struct AttentionLayer {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl AttentionLayer {
    fn new(p: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            ln1: LayerNorm::new(p, &format!("{name}.ln1"), d)?,
            qkv: p.linear(&format!("{name}.qkv"), d, 3 * d, true, 1.0)?,
            proj: p.linear(&format!("{name}.proj"), d, d, true, 1.0)?,
            ln2: LayerNorm::new(p, &format!("{name}.ln2"), d)?,
            ff1: p.linear(&format!("{name}.ff1"), d, cfg.ffn, true, 1.0)?,
            ff2: p.linear(&format!("{name}.ff2"), cfg.ffn, d, true, 1.0)?,
            heads: cfg.heads,
        })
    }

    /// Pre-norm block: `x + MHA(LN x)`, then `x + FFN(LN x)`.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        let qkv = self
            .qkv
            .forward(&self.ln1.forward(x)?)?
            .reshape((b, t, 3, self.heads, dh))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        let x = (x + self.proj.forward(&ctx)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&self.ln2.forward(&x)?)?.relu()?)?;
        Ok(((x + ff)?, attn))
    }
}

#[derive(Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    convs: [Conv2d; 3],
    embed: Linear,
    cls: Tensor,
    pe: Option<Tensor>,
    layers: Vec<AttentionLayer>,
    norm: LayerNorm,
    w: Linear,
    w_gate: Linear,
    w_cls: Linear,
    /// `[8]` pixels-per-unit for the normalized keypoint head.
    scale: Tensor,
}

impl Encoder {
    pub fn new(p: &mut ParamStore, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.channels;
        let convs = [
            p.conv2d("enc.conv0", 3, c1, 4, 4, 0)?,
            p.conv2d("enc.conv1", c1, c2, 3, 2, 1)?,
            p.conv2d("enc.conv2", c2, c3, 3, 2, 1)?,
        ];
        let embed = p.linear("enc.embed", c3, cfg.dim, true, 1.0)?;
        let cls = p.uniform("enc.cls", &[1, 1, cfg.dim], 0.02)?;
        let layers = (0..cfg.layers)
            .map(|l| AttentionLayer::new(p, &format!("enc.layer{l}"), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(p, "enc.norm", cfg.dim)?;
        // Keypoint head works in image-normalized units, starting at the image centre.
        let bound = 0.1 / (cfg.dim as f64).sqrt();
        let w = Linear::new(
            p.uniform("enc.w.weight", &[2 * NUM_KEYPOINTS, cfg.dim], bound)?,
            Some(p.constant("enc.w.bias", &[2 * NUM_KEYPOINTS], 0.5)?),
        );
        let w_gate = p.linear("enc.w_gate", cfg.dim, cfg.layers, false, 1.0)?;
        let w_cls = p.linear("enc.w_cls", cfg.dim, NUM_CLASSES, true, 1.0)?;

        let dev = p.device().clone();
        let pe = if cfg.positional_encoding {
            let (gh, gw) = cfg.grid();
            let table = sinusoidal_2d(gh, gw, cfg.dim);
            Some(Tensor::from_vec(table, (1, gh * gw, cfg.dim), &dev)?.to_dtype(p.dtype())?)
        } else {
            None
        };
        let scale: Vec<f64> = (0..NUM_KEYPOINTS)
            .flat_map(|_| [cfg.width as f64, cfg.height as f64])
            .collect();
        let scale = Tensor::from_vec(scale, 2 * NUM_KEYPOINTS, &dev)?.to_dtype(p.dtype())?;
        Ok(Self {
            cfg,
            convs,
            embed,
            cls,
            pe,
            layers,
            norm,
            w,
            w_gate,
            w_cls,
            scale,
        })
    }

    /// Backbone features, patch embedding and positional encoding.
    pub fn tokenize(&self, images: &Tensor) -> Result<TokenSet> {
        let dims = images.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != self.cfg.height || dims[3] != self.cfg.width {
            return Err(Error::Shape(format!(
                "encoder expects [B, 3, {}, {}] images, got {:?}",
                self.cfg.height, self.cfg.width, dims
            )));
        }
        let b = dims[0];
        let mut x = images.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?.relu()?;
        }
        let feats = x.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let mut tokens = self.embed.forward(&feats)?;
        if let Some(pe) = &self.pe {
            tokens = tokens.broadcast_add(pe)?;
        }
        let cls = self.cls.broadcast_as((b, 1, self.cfg.dim))?.contiguous()?;
        Ok(TokenSet { tokens, cls })
    }

    pub fn encode(&self, tokens: &TokenSet) -> Result<EncoderState> {
        let mut x = Tensor::cat(&[&tokens.cls, &tokens.tokens], 1)?;
        let m = tokens.tokens.dim(1)?;
        let mut state = EncoderState {
            layer_outputs: Vec::with_capacity(self.layers.len()),
            attention: Vec::with_capacity(self.layers.len()),
            x_ir: Vec::with_capacity(self.layers.len()),
            x_cr: Vec::with_capacity(self.layers.len()),
            w_gate: Tensor::zeros(1, x.dtype(), x.device())?,
        };
        for layer in &self.layers {
            let (next, attn) = layer.forward(&x)?;
            x = next;
            let normed = self.norm.forward(&x)?;
            let x_ir = normed.narrow(1, 1, m)?.max(1)?;
            state.x_cr.push(self.compact(&x_ir)?);
            state.x_ir.push(x_ir);
            state.layer_outputs.push(normed);
            state.attention.push(attn);
        }
        state.w_gate = self.gate_weights(state.x_ir.last().expect("at least one layer"))?;
        Ok(state)
    }

    /// Projects pooled features to a `[B, 4, 2]` pixel-space proposal.
    fn compact(&self, x_ir: &Tensor) -> Result<Tensor> {
        let b = x_ir.dim(0)?;
        Ok(self
            .w
            .forward(x_ir)?
            .broadcast_mul(&self.scale)?
            .reshape((b, NUM_KEYPOINTS, 2))?)
    }

    pub fn gate_weights(&self, x_ir_final: &Tensor) -> Result<Tensor> {
        softmax_last(&self.w_gate.forward(x_ir_final)?)
    }

    pub fn predict_keypoints(&self, state: &EncoderState) -> Result<Tensor> {
        gated_keypoints(&state.w_gate, &state.x_cr)
    }

    pub fn classify(&self, cls_final: &Tensor) -> Result<Tensor> {
        softmax_last(&self.w_cls.forward(cls_final)?)
    }

    pub fn forward(&self, images: &Tensor) -> Result<EncoderOutput> {
        let state = self.encode(&self.tokenize(images)?)?;
        let cls_token = state
            .layer_outputs
            .last()
            .expect("at least one layer")
            .get_on_dim(1, 0)?;
        Ok(EncoderOutput {
            y2d: self.predict_keypoints(&state)?,
            class_dist: self.classify(&cls_token)?,
            cls_token,
            state,
        })
    }
}

/// `ReLU(Σₗ w[l] · X_CR[l])` for `w: [B, N]` and `x_cr[l]: [B, 4, 2]`.
pub fn gated_keypoints(w_gate: &Tensor, x_cr: &[Tensor]) -> Result<Tensor> {
    let stacked = Tensor::stack(x_cr, 1)?;
    let w = w_gate.unsqueeze(D::Minus1)?.unsqueeze(D::Minus1)?;
    Ok(stacked.broadcast_mul(&w)?.sum(1)?.relu()?)
}

/// Fixed 2D sinusoidal table `[gh·gw, d]`, row-major over the grid: the first half of
/// each vector encodes the row, the second half the column.
pub fn sinusoidal_2d(gh: usize, gw: usize, d: usize) -> Vec<f64> {
    let quarter = d / 4;
    let mut out = Vec::with_capacity(gh * gw * d);
    for i in 0..gh {
        for j in 0..gw {
            for pos in [i as f64, j as f64] {
                for k in 0..quarter {
                    out.push((pos / 10_000f64.powf(k as f64 / quarter as f64)).sin());
                }
                for k in 0..quarter {
                    out.push((pos / 10_000f64.powf(k as f64 / quarter as f64)).cos());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, IndexOp};

    fn small() -> EncoderConfig {
        EncoderConfig {
            width: 32,
            height: 48,
            channels: [4, 6, 8],
            dim: 16,
            layers: 3,
            heads: 2,
            ffn: 24,
            positional_encoding: true,
        }
    }

    fn image_batch(b: usize, cfg: &EncoderConfig, seed: u64) -> Tensor {
        let mut store = ParamStore::new(seed, DType::F64, &Device::Cpu);
        let t = store.uniform("img", &[b, 3, cfg.height, cfg.width], 0.5).unwrap();
        (t + 0.5).unwrap()
    }

    #[test]
    fn token_count_and_shapes() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.tokens(), 64);
        let cfg = small();
        let mut p = ParamStore::new(1, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let out = enc.forward(&image_batch(2, &cfg, 9)).unwrap();
        assert_eq!(out.state.layer_outputs.len(), 3);
        assert_eq!(out.state.x_cr.len(), 3);
        assert_eq!(out.state.x_cr[0].dims(), &[2, 4, 2]);
        assert_eq!(out.state.attention[0].dims(), &[2, 2, 7, 7]);
        assert_eq!(out.y2d.dims(), &[2, 4, 2]);
        assert_eq!(out.class_dist.dims(), &[2, 7]);
        assert_eq!(out.state.w_gate.dims(), &[2, 3]);
    }

    #[test]
    fn wrong_resolution_is_a_shape_error() {
        let cfg = small();
        let mut p = ParamStore::new(1, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let bad = Tensor::zeros((1, 3, 32, 32), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(enc.tokenize(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn identical_images_identical_tokens() {
        let cfg = small();
        let mut p = ParamStore::new(5, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let img = image_batch(1, &cfg, 2);
        let a = enc.tokenize(&img).unwrap().tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = enc.tokenize(&img).unwrap().tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = small();
        let mut p = ParamStore::new(2, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let out = enc.forward(&image_batch(2, &cfg, 4)).unwrap();
        for attn in &out.state.attention {
            let sums = attn.sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
        }
        let w: Vec<f64> = out.state.w_gate.flatten_all().unwrap().to_vec1().unwrap();
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pooling_ignores_token_order_without_positional_encoding() {
        let cfg = EncoderConfig {
            positional_encoding: false,
            ..small()
        };
        let mut p = ParamStore::new(3, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let tokens = enc.tokenize(&image_batch(1, &cfg, 6)).unwrap();
        let m = tokens.tokens.dim(1).unwrap();
        let perm: Vec<u32> = (0..m as u32).rev().collect();
        let idx = Tensor::new(perm.as_slice(), &Device::Cpu).unwrap();
        let shuffled = TokenSet {
            tokens: tokens.tokens.index_select(&idx, 1).unwrap(),
            cls: tokens.cls.clone(),
        };
        let a = enc.encode(&tokens).unwrap();
        let b = enc.encode(&shuffled).unwrap();
        for (x, y) in a.x_ir.iter().zip(&b.x_ir) {
            let diff = (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn gate_edge_cases() {
        let dev = Device::Cpu;
        let x_cr: Vec<Tensor> = [-1.0f64, 2.0]
            .iter()
            .map(|&v| (Tensor::ones((1, 4, 2), DType::F64, &dev).unwrap() * v).unwrap())
            .collect();
        // One-hot gate selects ReLU of that layer.
        let one_hot = Tensor::new(&[[0.0f64, 1.0]], &dev).unwrap();
        let y = gated_keypoints(&one_hot, &x_cr).unwrap();
        assert_eq!(y.i((0, 0, 0)).unwrap().to_scalar::<f64>().unwrap(), 2.0);
        let neg = Tensor::new(&[[1.0f64, 0.0]], &dev).unwrap();
        let y = gated_keypoints(&neg, &x_cr).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weighted_sum_matches_direct_recomputation() {
        let cfg = small();
        let mut p = ParamStore::new(8, DType::F64, &Device::Cpu);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let out = enc.forward(&image_batch(3, &cfg, 1)).unwrap();
        let w = out.state.w_gate.to_vec2::<f64>().unwrap();
        let xs: Vec<Vec<Vec<Vec<f64>>>> = out.state.x_cr.iter().map(|t| t.to_vec3().unwrap()).collect();
        let y = out.y2d.to_vec3::<f64>().unwrap();
        for b in 0..3 {
            for k in 0..4 {
                for c in 0..2 {
                    let s: f64 = (0..3).map(|l| w[b][l] * xs[l][b][k][c]).sum();
                    assert!((y[b][k][c] - s.max(0.0)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn classifier_properties() {
        let dev = Device::Cpu;
        let cfg = small();
        let mut p = ParamStore::new(8, DType::F64, &dev);
        let enc = Encoder::new(&mut p, cfg).unwrap();
        let x = ParamStore::new(1, DType::F64, &dev).uniform("x", &[5, 16], 3.0).unwrap();
        let dist = enc.classify(&x).unwrap().to_vec2::<f64>().unwrap();
        let logits = enc.w_cls.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        for (d, l) in dist.iter().zip(&logits) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(argmax(d), argmax(l));
        }
        let zero = softmax_last(&Tensor::zeros((1, 7), DType::F64, &dev).unwrap()).unwrap();
        for v in zero.to_vec2::<f64>().unwrap()[0].iter() {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sinusoidal_table_is_distinct_per_position() {
        let t = sinusoidal_2d(8, 8, 64);
        assert_eq!(t.len(), 64 * 64);
        let rows: Vec<&[f64]> = t.chunks(64).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
    }
}
