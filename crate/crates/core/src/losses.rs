//! Training objectives: keypoint, classification, 3D keypoint, circular rotation and
//! translation terms, plus the encoder/decoder weighting schedules.
//!
//! The scalar functions here are the reference definitions. [`tensor`] holds the
//! differentiable batch versions used by the training loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const CLS_EPSILON: f64 = 1e-12;

/// Steepness of the tanh ramp (in units of normalized training progress).
pub const TANH_STEEPNESS: f64 = 20.0;
/// Steepness of the sigmoid used by the smoothly-shifted schedule.
pub const SMOOTH_STEEPNESS: f64 = 6.0;
/// Decoder weight under the 3D-biased schedule.
pub const DECODER_BIAS: f64 = 5.0;

/// Mean of squared differences over all scalar entries.
pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse over {} vs {} entries",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn loss_2d(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    mse(pred.as_flattened(), gt.as_flattened())
}

pub fn loss_3d(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    mse(pred.as_flattened(), gt.as_flattened())
}

pub fn loss_trans(pred: &[f64; 3], gt: &[f64; 3]) -> f64 {
    mse(pred, gt).expect("fixed-size inputs")
}

/// Cross-entropy `−log(dist[label])` with the probability floored at [`CLS_EPSILON`].
pub fn loss_cls(dist: &[f64], label: usize) -> Result<f64> {
    let p = dist.get(label).ok_or(Error::Label {
        label,
        classes: dist.len(),
    })?;
    Ok(-p.max(CLS_EPSILON).ln())
}

/// Shortest signed distance on the unit circle from `b` to `a`, in `[-0.5, 0.5)`.
fn circular_delta(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

/// Circular rotation loss over normalized Euler angles:
/// `(1/3) Σ min(|Δ|, 1 − |Δ|)²`.
pub fn loss_rot_circular(pred: &[f64; 3], gt: &[f64; 3]) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| circular_delta(*p, *g).powi(2))
        .sum::<f64>()
        / 3.0
}

/// Analytic gradient of [`loss_rot_circular`] with respect to `pred`.
///
/// Undefined on the ridge `|Δ| = 0.5`, where the shortest arc switches direction.
pub fn loss_rot_circular_grad(pred: &[f64; 3], gt: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|j| 2.0 * circular_delta(pred[j], gt[j]) / 3.0)
}

/// All per-sample (or batch-mean) loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_2d: f64,
    pub l_cls: f64,
    pub l_3d: f64,
    pub l_rot: f64,
    pub l_trans: f64,
    pub l_enc: f64,
    pub l_dec: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// Builds the grouped terms from the five atomic ones; `l_total` uses equal weighting.
    pub fn from_terms(l_2d: f64, l_cls: f64, l_3d: f64, l_rot: f64, l_trans: f64) -> Self {
        let l_enc = l_2d + l_cls;
        let l_dec = l_3d + l_rot + l_trans;
        Self {
            l_2d,
            l_cls,
            l_3d,
            l_rot,
            l_trans,
            l_enc,
            l_dec,
            l_total: l_enc + l_dec,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_2d,
            self.l_cls,
            self.l_3d,
            self.l_rot,
            self.l_trans,
            self.l_enc,
            self.l_dec,
            self.l_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Encoder/decoder weighting schedule.
///
/// `TanhWeighted` and `SmoothlyShifted` are interpretations of schedules only described
/// qualitatively: both move all weight from the encoder to the decoder over training,
/// centred at the halfway point. The tanh ramp uses steepness [`TANH_STEEPNESS`] so the
/// switch is abrupt; the smooth variant is a min-max rescaled sigmoid with steepness
/// [`SMOOTH_STEEPNESS`], giving the same exact endpoints with a gradual transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingStrategy {
    #[default]
    Equal,
    TanhWeighted,
    SmoothlyShifted,
    #[serde(rename = "3d-biased")]
    ThreeDBiased,
}

impl WeightingStrategy {
    pub const ALL: [WeightingStrategy; 4] = [
        WeightingStrategy::Equal,
        WeightingStrategy::TanhWeighted,
        WeightingStrategy::SmoothlyShifted,
        WeightingStrategy::ThreeDBiased,
    ];

    /// `(encoder weight, decoder weight)` at `epoch` of `total_epochs` (0-based).
    pub fn weights(&self, epoch: usize, total_epochs: usize) -> (f64, f64) {
        let progress = if total_epochs > 1 {
            (epoch as f64 / (total_epochs - 1) as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        match self {
            WeightingStrategy::Equal => (1.0, 1.0),
            WeightingStrategy::ThreeDBiased => (1.0, DECODER_BIAS),
            WeightingStrategy::TanhWeighted => {
                let dec = 0.5 * (1.0 + (TANH_STEEPNESS * (progress - 0.5)).tanh());
                (1.0 - dec, dec)
            }
            WeightingStrategy::SmoothlyShifted => {
                let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
                let lo = sigmoid(-SMOOTH_STEEPNESS / 2.0);
                let hi = sigmoid(SMOOTH_STEEPNESS / 2.0);
                let dec = (sigmoid(SMOOTH_STEEPNESS * (progress - 0.5)) - lo) / (hi - lo);
                (1.0 - dec, dec)
            }
        }
    }
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingStrategy::Equal => "equal",
            WeightingStrategy::TanhWeighted => "tanh-weighted",
            WeightingStrategy::SmoothlyShifted => "smoothly-shifted",
            WeightingStrategy::ThreeDBiased => "3d-biased",
        })
    }
}

impl FromStr for WeightingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Self::Equal),
            "tanh-weighted" | "tanh" => Ok(Self::TanhWeighted),
            "smoothly-shifted" | "smooth" => Ok(Self::SmoothlyShifted),
            "3d-biased" => Ok(Self::ThreeDBiased),
            other => Err(Error::Unknown {
                kind: "loss strategy",
                value: other.to_string(),
            }),
        }
    }
}

pub fn combine_losses(
    breakdown: &LossBreakdown,
    strategy: WeightingStrategy,
    epoch: usize,
    total_epochs: usize,
) -> f64 {
    let (w_enc, w_dec) = strategy.weights(epoch, total_epochs);
    w_enc * breakdown.l_enc + w_dec * breakdown.l_dec
}

/// Differentiable batch versions of the loss terms. Every function returns a scalar
/// tensor averaged over the batch.
pub mod tensor {
    use candle_core::{DType, Result, Tensor, D};

    use super::CLS_EPSILON;

    pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
        pred.sub(gt)?.sqr()?.mean_all()
    }

    /// `dist`: `(B, C)` probabilities, `labels`: `(B,)` u32 class ids.
    pub fn cross_entropy(dist: &Tensor, labels: &Tensor) -> Result<Tensor> {
        let picked = dist
            .gather(&labels.unsqueeze(1)?, 1)?
            .clamp(CLS_EPSILON, f64::INFINITY)?;
        picked.log()?.neg()?.mean_all()
    }

    /// `pred`, `gt`: `(B, 3)` normalized Euler angles.
    pub fn circular(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
        let abs = pred.sub(gt)?.abs()?;
        let wrapped = abs.affine(-1.0, 1.0)?;
        abs.minimum(&wrapped)?.sqr()?.mean(D::Minus1)?.mean_all()
    }

    pub fn zero(like: &Tensor) -> Result<Tensor> {
        Tensor::zeros((), like.dtype(), like.device())
    }

    pub fn scalar(t: &Tensor) -> Result<f64> {
        t.to_dtype(DType::F64)?.to_scalar::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn keypoint_mse_examples() {
        let gt = [[10.0, 20.0], [30.0, 40.0], [5.0, 6.0], [7.0, 8.0]];
        assert_eq!(loss_2d(&gt, &gt).unwrap(), 0.0);
        let shifted = gt.map(|[x, y]| [x + 1.0, y + 1.0]);
        assert_eq!(loss_2d(&shifted, &gt).unwrap(), 1.0);
        assert!(matches!(loss_2d(&gt[..3], &gt), Err(Error::Shape(_))));
    }

    #[test]
    fn keypoint_mse_matches_direct_evaluation() {
        let pred = [[1.5, -2.0], [0.25, 3.0], [9.0, 1.0], [4.0, 4.0]];
        let gt = [[1.0, -1.0], [0.0, 3.5], [8.0, 2.0], [4.0, 6.0]];
        // squared diffs: 0.25, 1, 0.0625, 0.25, 1, 1, 0, 4
        assert_relative_eq!(loss_2d(&pred, &gt).unwrap(), 7.5625 / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut onehot = [0.0; 7];
        onehot[3] = 1.0;
        assert_eq!(loss_cls(&onehot, 3).unwrap(), 0.0);
        let uniform = [1.0 / 7.0; 7];
        assert_relative_eq!(loss_cls(&uniform, 0).unwrap(), 7f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(loss_cls(&uniform, 0).unwrap(), 1.9459, epsilon = 1e-4);
        assert_relative_eq!(loss_cls(&onehot, 2).unwrap(), -(1e-12f64).ln());
        assert!(matches!(loss_cls(&uniform, 7), Err(Error::Label { .. })));
    }

    #[test]
    fn circular_examples() {
        let r = [0.2, 0.4, 0.6];
        assert_eq!(loss_rot_circular(&r, &r), 0.0);
        assert_eq!(loss_rot_circular(&[0.0; 3], &[1.0; 3]), 0.0);
        let v = loss_rot_circular(&[0.9, 0.5, 0.5], &[0.1, 0.5, 0.5]);
        assert_relative_eq!(v, 0.04 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn three_d_and_translation_examples() {
        let a = [[0.1, 0.2, 1.0]; 4];
        assert_eq!(loss_3d(&a, &a).unwrap(), 0.0);
        let b = a.map(|p| p.map(|v| v - 1.0));
        assert_eq!(loss_3d(&a, &b).unwrap(), 1.0);
        assert_eq!(loss_trans(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]), 1.0);
        assert_relative_eq!(loss_trans(&[0.0, 0.0, 3.0], &[0.0, 0.0, 0.0]), 3.0);
    }

    #[test]
    fn circular_gradient_matches_finite_differences() {
        let h = 1e-6;
        let cases = [
            ([0.1, 0.7, 0.95], [0.2, 0.1, 0.05]),
            ([0.9, 0.5, 0.3], [0.1, 0.45, 0.31]),
            ([0.01, 0.99, 0.5], [0.98, 0.02, 0.52]),
        ];
        for (pred, gt) in cases {
            let g = loss_rot_circular_grad(&pred, &gt);
            for j in 0..3 {
                let (mut up, mut down) = (pred, pred);
                up[j] += h;
                down[j] -= h;
                let fd = (loss_rot_circular(&up, &gt) - loss_rot_circular(&down, &gt)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-5, "axis {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn strategy_examples() {
        let b = LossBreakdown {
            l_enc: 1.0,
            l_dec: 2.0,
            ..Default::default()
        };
        assert_eq!(combine_losses(&b, WeightingStrategy::Equal, 0, 10), 3.0);
        assert_eq!(combine_losses(&b, WeightingStrategy::ThreeDBiased, 3, 10), 11.0);

        let (enc0, dec0) = WeightingStrategy::TanhWeighted.weights(0, 100);
        let (enc1, dec1) = WeightingStrategy::TanhWeighted.weights(99, 100);
        assert!(dec0 < 1e-6 && (enc0 - 1.0).abs() < 1e-6);
        assert!(enc1 < 1e-6 && (dec1 - 1.0).abs() < 1e-6);

        let (enc0, dec0) = WeightingStrategy::SmoothlyShifted.weights(0, 100);
        let (enc1, _) = WeightingStrategy::SmoothlyShifted.weights(99, 100);
        assert!(dec0.abs() < 1e-12 && (enc0 - 1.0).abs() < 1e-12 && enc1.abs() < 1e-12);
    }

    #[test]
    fn smooth_schedule_is_more_gradual_than_tanh() {
        // A quarter of the way in, tanh is still essentially all-encoder while the
        // smooth schedule has started shifting.
        let (_, tanh_dec) = WeightingStrategy::TanhWeighted.weights(25, 101);
        let (_, smooth_dec) = WeightingStrategy::SmoothlyShifted.weights(25, 101);
        assert!(tanh_dec < 0.01);
        assert!(smooth_dec > 0.05 && smooth_dec < 0.5);
    }

    #[test]
    fn strategy_parsing() {
        for s in WeightingStrategy::ALL {
            assert_eq!(s.to_string().parse::<WeightingStrategy>().unwrap(), s);
        }
        assert!(matches!(
            "uncertainty".parse::<WeightingStrategy>(),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn equal_total_is_sum_of_atomic_terms() {
        let b = LossBreakdown::from_terms(0.5, 0.25, 0.125, 0.0625, 2.0);
        assert_eq!(b.l_total, 0.5 + 0.25 + 0.125 + 0.0625 + 2.0);
        assert_eq!(combine_losses(&b, WeightingStrategy::Equal, 0, 1), b.l_total);
    }

    #[test]
    fn tensor_losses_match_scalar_definitions() {
        use candle_core::{Device, Tensor};
        let dev = Device::Cpu;
        let pred = [[0.9, 0.5, 0.02], [0.3, 0.7, 0.99]];
        let gt = [[0.1, 0.45, 0.97], [0.35, 0.1, 0.01]];
        let tp = Tensor::new(&pred, &dev).unwrap();
        let tg = Tensor::new(&gt, &dev).unwrap();
        let got = tensor::scalar(&tensor::circular(&tp, &tg).unwrap()).unwrap();
        let want = (loss_rot_circular(&pred[0], &gt[0]) + loss_rot_circular(&pred[1], &gt[1])) / 2.0;
        assert_relative_eq!(got, want, epsilon = 1e-12);

        let dist = Tensor::new(&[[0.2, 0.8], [0.6, 0.4]], &dev).unwrap();
        let labels = Tensor::new(&[1u32, 0], &dev).unwrap();
        let got = tensor::scalar(&tensor::cross_entropy(&dist, &labels).unwrap()).unwrap();
        let want = (loss_cls(&[0.2, 0.8], 1).unwrap() + loss_cls(&[0.6, 0.4], 0).unwrap()) / 2.0;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    proptest! {
        #[test]
        fn circular_symmetric_bounded_shift_invariant(
            a in [unit(), unit(), unit()],
            b in [unit(), unit(), unit()],
            k in [-4i32..4, -4i32..4, -4i32..4],
        ) {
            let ab = loss_rot_circular(&a, &b);
            prop_assert!((ab - loss_rot_circular(&b, &a)).abs() < 1e-15);
            prop_assert!((0.0..=0.25).contains(&ab));
            let shifted = [a[0] + f64::from(k[0]), a[1] + f64::from(k[1]), a[2] + f64::from(k[2])];
            prop_assert!((loss_rot_circular(&shifted, &b) - ab).abs() < 1e-12);
        }

        #[test]
        fn mse_nonnegative_and_zero_iff_equal(
            a in proptest::collection::vec(-10.0..10.0f64, 12),
            b in proptest::collection::vec(-10.0..10.0f64, 12),
        ) {
            let v = mse(&a, &b).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, a == b);
        }

        #[test]
        fn schedule_weights_finite_nonnegative(epoch in 0usize..200, total in 1usize..200) {
            for s in WeightingStrategy::ALL {
                let (e, d) = s.weights(epoch, total);
                prop_assert!(e.is_finite() && d.is_finite() && e >= 0.0 && d >= 0.0);
            }
        }
    }
}
