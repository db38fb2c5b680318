//! Pose decoder: unit bearing rays from the 2D keypoints, a class embedding, a 3D
//! keypoint head, and a pose head whose rotation part passes through a sigmoid.
//!
//! Four variants share these components:
//!
//! | variant | pose head input                          |
//! |---------|------------------------------------------|
//! | 1       | 2D keypoints / image size (8)            |
//! | 2       | ray embedding (64)                       |
//! | 3       | ray embedding + 3D keypoints (64 + 12)   |
//! | 4       | rays ‖ class embedding + 3D kps (128+12) |

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Module, Tensor, D};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};

use crate::dataset::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::nn::{sigmoid, Mlp, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderVariant {
    Direct,
    Ray,
    RayKeypoints,
    Full,
}

impl DecoderVariant {
    pub const ALL: [DecoderVariant; 4] = [
        DecoderVariant::Direct,
        DecoderVariant::Ray,
        DecoderVariant::RayKeypoints,
        DecoderVariant::Full,
    ];

    pub fn index(self) -> usize {
        match self {
            DecoderVariant::Direct => 1,
            DecoderVariant::Ray => 2,
            DecoderVariant::RayKeypoints => 3,
            DecoderVariant::Full => 4,
        }
    }

    pub fn uses_rays(self) -> bool {
        self != DecoderVariant::Direct
    }

    pub fn uses_keypoints3d(self) -> bool {
        matches!(self, DecoderVariant::RayKeypoints | DecoderVariant::Full)
    }

    pub fn uses_class(self) -> bool {
        self == DecoderVariant::Full
    }
}

impl fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderVariant::Direct => "direct",
            DecoderVariant::Ray => "ray",
            DecoderVariant::RayKeypoints => "ray-keypoints",
            DecoderVariant::Full => "full",
        })
    }
}

impl FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "direct" => Ok(DecoderVariant::Direct),
            "2" | "ray" => Ok(DecoderVariant::Ray),
            "3" | "ray-keypoints" => Ok(DecoderVariant::RayKeypoints),
            "4" | "full" => Ok(DecoderVariant::Full),
            other => Err(Error::Unknown {
                kind: "decoder variant",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub ray_dim: usize,
    pub class_dim: usize,
    pub hidden: usize,
    /// Embed the argmax one-hot instead of the predicted distribution.
    pub one_hot_class: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            variant: DecoderVariant::Full,
            ray_dim: 64,
            class_dim: 64,
            hidden: 128,
            one_hot_class: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `[B, 4, 3]` camera-frame metres; absent for variants without the 3D head.
    pub y3d: Option<Tensor>,
    /// `[B, 3]` normalized Euler angles in `(0, 1)`.
    pub r: Tensor,
    /// `[B, 3]` metres.
    pub t: Tensor,
}

#[derive(Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    e_ray: Option<Linear>,
    e_cls: Option<Linear>,
    mlp3d: Option<Mlp>,
    mlp_pose: Mlp,
    /// `[1, 1, 2]` image size, for the direct variant.
    image_size: Tensor,
}

impl Decoder {
    pub fn new(p: &mut ParamStore, cfg: DecoderConfig, width: usize, height: usize) -> Result<Self> {
        let v = cfg.variant;
        let e_ray = if v.uses_rays() {
            Some(p.linear("dec.e_ray", 3 * NUM_KEYPOINTS, cfg.ray_dim, true, 1.0)?)
        } else {
            None
        };
        let e_cls = if v.uses_class() {
            Some(p.linear("dec.e_cls", NUM_CLASSES, cfg.class_dim, true, 1.0)?)
        } else {
            None
        };
        let fused = match v {
            DecoderVariant::Direct => 2 * NUM_KEYPOINTS,
            DecoderVariant::Ray | DecoderVariant::RayKeypoints => cfg.ray_dim,
            DecoderVariant::Full => cfg.ray_dim + cfg.class_dim,
        };
        let mlp3d = if v.uses_keypoints3d() {
            Some(Mlp::new(p, "dec.mlp3d", [fused, cfg.hidden, 3 * NUM_KEYPOINTS], 1.0)?)
        } else {
            None
        };
        let pose_in = fused + if v.uses_keypoints3d() { 3 * NUM_KEYPOINTS } else { 0 };
        let mlp_pose = Mlp::new(p, "dec.mlp_pose", [pose_in, cfg.hidden, 6], 1.0)?;
        let image_size = Tensor::from_vec(vec![width as f64, height as f64], (1, 1, 2), p.device())?
            .to_dtype(p.dtype())?;
        Ok(Self {
            cfg,
            e_ray,
            e_cls,
            mlp3d,
            mlp_pose,
            image_size,
        })
    }

    fn missing(&self, part: &str) -> Error {
        Error::Config(format!("decoder variant {} has no {part}", self.cfg.variant))
    }

    /// Unit bearing rays `[B, 4, 3]` for pixel keypoints `[B, 4, 2]`.
    pub fn rays(y2d: &Tensor, k: &CameraIntrinsics) -> Result<Tensor> {
        let dev = y2d.device();
        let dtype = y2d.dtype();
        let c = Tensor::from_vec(vec![k.cx, k.cy], (1, 1, 2), dev)?.to_dtype(dtype)?;
        let f = Tensor::from_vec(vec![k.fx, k.fy], (1, 1, 2), dev)?.to_dtype(dtype)?;
        let xy = y2d.broadcast_sub(&c)?.broadcast_div(&f)?;
        let (b, n, _) = xy.dims3()?;
        let ones = Tensor::ones((b, n, 1), dtype, dev)?;
        let h = Tensor::cat(&[&xy, &ones], 2)?;
        let norm = h.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
        Ok(h.broadcast_div(&norm)?)
    }

    pub fn embed_rays(&self, y2d: &Tensor, k: &CameraIntrinsics) -> Result<Tensor> {
        let e = self.e_ray.as_ref().ok_or_else(|| self.missing("ray embedding"))?;
        Ok(e.forward(&Self::rays(y2d, k)?.flatten_from(1)?)?)
    }

    pub fn embed_class(&self, class_dist: &Tensor) -> Result<Tensor> {
        let e = self.e_cls.as_ref().ok_or_else(|| self.missing("class embedding"))?;
        let input = if self.cfg.one_hot_class {
            one_hot_argmax(class_dist)?
        } else {
            class_dist.clone()
        };
        Ok(e.forward(&input)?)
    }

    /// Concatenation with the ray part first.
    pub fn fuse(&self, e_ray: &Tensor, e_cls: &Tensor) -> Result<Tensor> {
        let (r, c) = (e_ray.dim(D::Minus1)?, e_cls.dim(D::Minus1)?);
        if r != self.cfg.ray_dim || c != self.cfg.class_dim {
            return Err(Error::Shape(format!(
                "fusion expects {}+{} features, got {r}+{c}",
                self.cfg.ray_dim, self.cfg.class_dim
            )));
        }
        Ok(Tensor::cat(&[e_ray, e_cls], D::Minus1)?)
    }

    pub fn predict_keypoints3d(&self, fused: &Tensor) -> Result<Tensor> {
        let mlp = self.mlp3d.as_ref().ok_or_else(|| self.missing("3D keypoint head"))?;
        let b = fused.dim(0)?;
        Ok(mlp.forward(fused)?.reshape((b, NUM_KEYPOINTS, 3))?)
    }

    /// Returns `(r, t)`: sigmoid of the first three outputs and the raw last three.
    pub fn predict_pose(&self, fused: &Tensor, y3d: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let input = match y3d {
            Some(y) => Tensor::cat(&[fused, &y.flatten_from(1)?], D::Minus1)?,
            None => fused.clone(),
        };
        let out = self.mlp_pose.forward(&input)?;
        Ok((sigmoid(&out.narrow(1, 0, 3)?)?, out.narrow(1, 3, 3)?))
    }

    pub fn forward(&self, y2d: &Tensor, class_dist: &Tensor, k: &CameraIntrinsics) -> Result<DecoderOutput> {
        let fused = match self.cfg.variant {
            DecoderVariant::Direct => y2d.broadcast_div(&self.image_size)?.flatten_from(1)?,
            DecoderVariant::Ray | DecoderVariant::RayKeypoints => self.embed_rays(y2d, k)?,
            DecoderVariant::Full => self.fuse(&self.embed_rays(y2d, k)?, &self.embed_class(class_dist)?)?,
        };
        let y3d = if self.cfg.variant.uses_keypoints3d() {
            Some(self.predict_keypoints3d(&fused)?)
        } else {
            None
        };
        let (r, t) = self.predict_pose(&fused, y3d.as_ref())?;
        Ok(DecoderOutput { y3d, r, t })
    }
}

/// One-hot encoding `[B, C]` of the row-wise argmax.
pub fn one_hot_argmax(dist: &Tensor) -> Result<Tensor> {
    let (b, c) = dist.dims2()?;
    let idx = dist.argmax(D::Minus1)?.to_vec1::<u32>()?;
    let mut data = vec![0f64; b * c];
    for (row, &i) in idx.iter().enumerate() {
        data[row * c + i as usize] = 1.0;
    }
    Ok(Tensor::from_vec(data, (b, c), dist.device())?.to_dtype(dist.dtype())?)
}

/// One-hot labels `[B, 7]` in the given dtype.
pub fn one_hot_labels(labels: &[usize], dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut data = vec![0f64; labels.len() * NUM_CLASSES];
    for (row, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return Err(Error::Label {
                label: l,
                classes: NUM_CLASSES,
            });
        }
        data[row * NUM_CLASSES + l] = 1.0;
    }
    Ok(Tensor::from_vec(data, (labels.len(), NUM_CLASSES), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pixel_to_ray, Vec2};
    use candle_core::Device;
    use rand::{Rng, SeedableRng};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(160.0, 150.0, 64.0, 60.0).unwrap()
    }

    fn decoder(variant: DecoderVariant, seed: u64) -> Decoder {
        let mut p = ParamStore::new(seed, DType::F64, &Device::Cpu);
        Decoder::new(
            &mut p,
            DecoderConfig {
                variant,
                ..Default::default()
            },
            128,
            128,
        )
        .unwrap()
    }

    fn keypoints(seed: u64, b: usize) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..b * 8).map(|_| rng.random_range(0.0..128.0)).collect();
        Tensor::from_vec(v, (b, 4, 2), &Device::Cpu).unwrap()
    }

    fn dist(seed: u64, b: usize) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..b * 7).map(|_| rng.random_range(0.01..1.0)).collect();
        for row in v.chunks_mut(7) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        Tensor::from_vec(v, (b, 7), &Device::Cpu).unwrap()
    }

    fn vec_of(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn rays_match_geometry_module() {
        let y = keypoints(1, 3);
        let rays = Decoder::rays(&y, &k()).unwrap().to_vec3::<f64>().unwrap();
        let px = y.to_vec3::<f64>().unwrap();
        for b in 0..3 {
            for i in 0..4 {
                let r = pixel_to_ray(&k(), &Vec2::new(px[b][i][0], px[b][i][1])).unwrap();
                for c in 0..3 {
                    assert!((rays[b][i][c] - r[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn principal_point_rays_are_optical_axis() {
        let y = Tensor::from_vec(vec![64.0f64, 60.0].repeat(4), (1, 4, 2), &Device::Cpu).unwrap();
        let rays = vec_of(&Decoder::rays(&y, &k()).unwrap());
        assert_eq!(rays, [0.0, 0.0, 1.0].repeat(4));
    }

    #[test]
    fn class_embedding_is_linear() {
        let d = decoder(DecoderVariant::Full, 2);
        let w = d.e_cls.as_ref().unwrap().weight().to_vec2::<f64>().unwrap();
        let bias = vec_of(d.e_cls.as_ref().unwrap().bias().unwrap());
        let e = d.embed_class(&one_hot_labels(&[3], DType::F64, &Device::Cpu).unwrap()).unwrap();
        let e = vec_of(&e);
        for j in 0..64 {
            assert!((e[j] - (w[j][3] + bias[j])).abs() < 1e-12);
        }
        let (p, q) = (dist(1, 1), dist(2, 1));
        let alpha = 0.3;
        let mix = ((&p * alpha).unwrap() + (&q * (1.0 - alpha)).unwrap()).unwrap();
        let lhs = vec_of(&d.embed_class(&mix).unwrap());
        let ep = vec_of(&d.embed_class(&p).unwrap());
        let eq = vec_of(&d.embed_class(&q).unwrap());
        for j in 0..64 {
            assert!((lhs[j] - (alpha * ep[j] + (1.0 - alpha) * eq[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_layout() {
        let d = decoder(DecoderVariant::Full, 3);
        let er = d.embed_rays(&keypoints(2, 2), &k()).unwrap();
        let zero = Tensor::zeros((2, 64), DType::F64, &Device::Cpu).unwrap();
        let f = d.fuse(&er, &zero).unwrap();
        assert_eq!(f.dims(), &[2, 128]);
        assert_eq!(vec_of(&f.narrow(1, 0, 64).unwrap()), vec_of(&er));
        assert!(vec_of(&f.narrow(1, 64, 64).unwrap()).iter().all(|&v| v == 0.0));
        let short = Tensor::zeros((2, 10), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(d.fuse(&er, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn every_variant_produces_valid_outputs() {
        for v in DecoderVariant::ALL {
            let d = decoder(v, 4);
            let out = d.forward(&keypoints(5, 6), &dist(5, 6), &k()).unwrap();
            assert_eq!(out.r.dims(), &[6, 3]);
            assert_eq!(out.t.dims(), &[6, 3]);
            assert_eq!(out.y3d.is_some(), v.uses_keypoints3d());
            assert!(vec_of(&out.r).iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn zero_logits_give_half_rotation() {
        let d = decoder(DecoderVariant::Ray, 0);
        let zero = Tensor::zeros((1, 6), DType::F64, &Device::Cpu).unwrap();
        let r = sigmoid(&zero.narrow(1, 0, 3).unwrap()).unwrap();
        assert_eq!(vec_of(&r), vec![0.5; 3]);
        // Large negative translations are not squashed.
        let f = Tensor::zeros((1, 64), DType::F64, &Device::Cpu).unwrap();
        let (_, t) = d.predict_pose(&f, None).unwrap();
        assert_eq!(t.dims(), &[1, 3]);
    }

    #[test]
    fn class_ablated_decoder_ignores_class_input() {
        let d = decoder(DecoderVariant::RayKeypoints, 6);
        let y = keypoints(7, 4);
        let a = d.forward(&y, &dist(1, 4), &k()).unwrap();
        let b = d.forward(&y, &dist(2, 4), &k()).unwrap();
        assert_eq!(vec_of(&a.r), vec_of(&b.r));
        assert_eq!(vec_of(&a.t), vec_of(&b.t));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("3".parse::<DecoderVariant>().unwrap(), DecoderVariant::RayKeypoints);
        assert_eq!("full".parse::<DecoderVariant>().unwrap(), DecoderVariant::Full);
        assert!("5".parse::<DecoderVariant>().is_err());
    }
}
