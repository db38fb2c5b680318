//! Keypoints + PnP comparison path: 2D keypoints from the annotations or from a trained
//! encoder, solved against the true class layout.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;

use super::{pnp_solve, PnpProblem};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_euler_norm, RigidPose, RotationMatrix, Vec3};
use crate::model::{Model, ModelInput};
use crate::report::PoseRecord;
use crate::training::{SplitData, EVAL_BATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointSource {
    Gt,
    Encoder,
}

impl fmt::Display for KeypointSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeypointSource::Gt => "gt",
            KeypointSource::Encoder => "encoder",
        })
    }
}

impl FromStr for KeypointSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(KeypointSource::Gt),
            "encoder" => Ok(KeypointSource::Encoder),
            other => Err(Error::Unknown {
                kind: "keypoint source",
                value: other.to_string(),
            }),
        }
    }
}

/// One pose per frame of `split`.
///
/// Frames the solver cannot handle (degenerate encoder keypoints) fall back to the best
/// iterate when there is one, otherwise to the identity pose at the camera centre, so
/// they count as large errors instead of aborting the run.
pub fn run_baseline(
    dataset: &Dataset,
    split: Split,
    source: KeypointSource,
    model: Option<&Model>,
) -> Result<Vec<PoseRecord>> {
    let encoder_model = match (source, model) {
        (KeypointSource::Encoder, Some(m)) if m.encoder.is_some() => {
            crate::training::check_compatible(m, dataset)?;
            Some(m)
        }
        (KeypointSource::Encoder, Some(_)) => {
            return Err(Error::Config("checkpoint has no encoder; cannot source keypoints from it".into()))
        }
        (KeypointSource::Encoder, None) => {
            return Err(Error::Config("encoder keypoint source requires a checkpoint".into()))
        }
        (KeypointSource::Gt, _) => None,
    };
    let data = SplitData::load(dataset, split, encoder_model.is_some())?;
    if data.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }

    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut failures = 0usize;
    for chunk in rows.chunks(EVAL_BATCH) {
        let (keypoints, classes): (Vec<Vec<Vec<f64>>>, Option<Vec<u32>>) = match encoder_model {
            Some(m) => {
                let batch = data.batch(chunk, m.dtype(), m.device(), None)?;
                let images = batch.images.as_ref().expect("images loaded for the encoder");
                let pred = m.forward(ModelInput::Images(images), &data.camera)?;
                (
                    pred.y2d.to_dtype(candle_core::DType::F64)?.to_vec3()?,
                    Some(pred.class_dist.argmax(1)?.to_vec1()?),
                )
            }
            None => {
                let batch = data.batch(chunk, candle_core::DType::F64, &candle_core::Device::Cpu, None)?;
                (batch.y2d.to_vec3()?, None)
            }
        };
        for (j, &row) in chunk.iter().enumerate() {
            let meta = data.meta[row];
            let spec = dataset.manifest.class_spec(meta.class_id)?;
            let problem = PnpProblem {
                points_3d_body: spec.propeller_layout.to_vec(),
                points_2d: keypoints[j].iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                intrinsics: data.camera,
            };
            let pose = match pnp_solve(&problem) {
                Ok(p) => p,
                Err(Error::NotConverged { best, .. }) => *best,
                Err(e) => {
                    failures += 1;
                    log::debug!("frame {}: PnP failed: {e}", meta.index);
                    RigidPose::new(RotationMatrix::identity(), Vec3::zeros())
                }
            };
            let (r_gt, t_gt) = data.gt_pose(row);
            let t = pose.translation;
            out.push(PoseRecord::new(
                meta.scene_id,
                meta.class_id,
                meta.background_id,
                meta.frame,
                classes.as_ref().map(|c| c[j] as usize),
                matrix_to_euler_norm(&pose.rotation).0,
                [t.x, t.y, t.z],
                r_gt,
                t_gt,
            ));
        }
    }
    if failures > 0 {
        log::warn!("PnP failed on {failures} of {} frames", data.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig};

    #[test]
    fn source_parsing() {
        assert_eq!("gt".parse::<KeypointSource>().unwrap(), KeypointSource::Gt);
        assert_eq!("encoder".parse::<KeypointSource>().unwrap(), KeypointSource::Encoder);
        assert!(matches!("detector".parse::<KeypointSource>(), Err(Error::Unknown { .. })));
    }

    #[test]
    fn ground_truth_keypoints_give_near_zero_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DatasetConfig::desk();
        for s in &mut cfg.scenes {
            s.duration = 1.0;
        }
        generate_dataset(&cfg, dir.path(), false).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let recs = run_baseline(&ds, Split::Test, KeypointSource::Gt, None).unwrap();
        assert_eq!(recs.len(), 20);
        for r in &recs {
            // Keypoints are stored with six decimals, so the recovery is not exact.
            assert!(r.rot_error < 1e-2, "{}", r.rot_error);
            assert!(r.trans_error < 1e-4, "{}", r.trans_error);
        }
        assert!(run_baseline(&ds, Split::Test, KeypointSource::Encoder, None).is_err());
    }
}
