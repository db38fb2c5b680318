//! Per-sample pose errors, their aggregation into method × class tables, and the
//! delimited files written next to each report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Split, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{euler_norm_to_matrix, relative_rotation_angle, NormalizedEuler};

/// One evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub scene_id: u32,
    pub class_id: usize,
    pub background_id: u32,
    pub frame: usize,
    pub predicted_class: Option<usize>,
    pub r_pred: [f64; 3],
    pub t_pred: [f64; 3],
    pub r_gt: [f64; 3],
    pub t_gt: [f64; 3],
    /// Degrees.
    pub rot_error: f64,
    /// Metres.
    pub trans_error: f64,
}

impl PoseRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene_id: u32,
        class_id: usize,
        background_id: u32,
        frame: usize,
        predicted_class: Option<usize>,
        r_pred: [f64; 3],
        t_pred: [f64; 3],
        r_gt: [f64; 3],
        t_gt: [f64; 3],
    ) -> Self {
        let (rot_error, trans_error) = pose_errors(&r_pred, &t_pred, &r_gt, &t_gt);
        Self {
            scene_id,
            class_id,
            background_id,
            frame,
            predicted_class,
            r_pred,
            t_pred,
            r_gt,
            t_gt,
            rot_error,
            trans_error,
        }
    }
}

/// `(rotation error in degrees, translation error in metres)`.
pub fn pose_errors(r_pred: &[f64; 3], t_pred: &[f64; 3], r_gt: &[f64; 3], t_gt: &[f64; 3]) -> (f64, f64) {
    let rp = euler_norm_to_matrix(&NormalizedEuler::wrapped(*r_pred));
    let rg = euler_norm_to_matrix(&NormalizedEuler::wrapped(*r_gt));
    let rot = relative_rotation_angle(&rp, &rg) * 180.0;
    let trans = (0..3).map(|i| (t_pred[i] - t_gt[i]).powi(2)).sum::<f64>().sqrt();
    (rot, trans)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median; for an even count the lower of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub rot_mae: f64,
    pub rot_medae: f64,
    pub trans_mae: f64,
    pub trans_medae: f64,
}

impl ErrorSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PoseRecord>) -> Self {
        let (rot, trans): (Vec<f64>, Vec<f64>) =
            records.into_iter().map(|r| (r.rot_error, r.trans_error)).unzip();
        Self {
            count: rot.len(),
            rot_mae: mean(&rot),
            rot_medae: median(&rot),
            trans_mae: mean(&trans),
            trans_medae: median(&trans),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsMeasurement {
    pub fps: f64,
    pub median_seconds: f64,
    pub iterations: usize,
    pub device: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub split: Split,
    pub per_scene_class: Vec<((u32, usize), ErrorSummary)>,
    pub per_class: Vec<(usize, ErrorSummary)>,
    pub overall: ErrorSummary,
    pub class_accuracy: Option<f64>,
    pub fps: Option<FpsMeasurement>,
}

impl EvaluationReport {
    pub fn from_records(method: &str, split: Split, records: &[PoseRecord]) -> Self {
        let mut by_pair: BTreeMap<(u32, usize), Vec<&PoseRecord>> = BTreeMap::new();
        let mut by_class: BTreeMap<usize, Vec<&PoseRecord>> = BTreeMap::new();
        for r in records {
            by_pair.entry((r.scene_id, r.class_id)).or_default().push(r);
            by_class.entry(r.class_id).or_default().push(r);
        }
        let predicted: Vec<_> = records.iter().filter_map(|r| r.predicted_class.map(|p| p == r.class_id)).collect();
        let class_accuracy = if predicted.is_empty() {
            None
        } else {
            Some(predicted.iter().filter(|&&ok| ok).count() as f64 / predicted.len() as f64)
        };
        Self {
            method: method.to_string(),
            split,
            per_scene_class: by_pair
                .into_iter()
                .map(|(k, v)| (k, ErrorSummary::from_records(v)))
                .collect(),
            per_class: by_class
                .into_iter()
                .map(|(k, v)| (k, ErrorSummary::from_records(v)))
                .collect(),
            overall: ErrorSummary::from_records(records),
            class_accuracy,
            fps: None,
        }
    }

    /// Plain-text table: one row per class plus the aggregate, then the per-scene block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method: {}", self.method);
        let _ = writeln!(s, "split: {}", self.split);
        let _ = writeln!(s, "frames: {}", self.overall.count);
        if let Some(acc) = self.class_accuracy {
            let _ = writeln!(s, "class accuracy: {:.2}%", 100.0 * acc);
        }
        if let Some(fps) = &self.fps {
            let _ = writeln!(s, "fps: {:.2} ({}, median of {} runs)", fps.fps, fps.device, fps.iterations);
        }
        let header = format!(
            "{:<22} {:>8} {:>12} {:>12} {:>12} {:>12}",
            "class", "frames", "rot MAE(°)", "rot MedAE(°)", "trans MAE(m)", "trans MedAE(m)"
        );
        let row = |label: &str, e: &ErrorSummary| {
            format!(
                "{:<22} {:>8} {:>12.3} {:>12.3} {:>12.4} {:>12.4}",
                label, e.count, e.rot_mae, e.rot_medae, e.trans_mae, e.trans_medae
            )
        };
        let _ = writeln!(s, "\n{header}");
        for (class, e) in &self.per_class {
            let _ = writeln!(s, "{}", row(class_name(*class), e));
        }
        let _ = writeln!(s, "{}", row("all", &self.overall));
        let _ = writeln!(s, "\n{}", header.replacen("class                 ", "scene/class           ", 1));
        for ((scene, class), e) in &self.per_scene_class {
            let _ = writeln!(s, "{}", row(&format!("{scene:02}/{}", class_name(*class)), e));
        }
        s
    }

    /// Writes `report.txt`, `report.json`, `errors.csv` and `predictions.csv` into `dir`.
    pub fn write(&self, dir: &Path, records: &[PoseRecord]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("report.txt", self.render())?;
        write("report.json", serde_json::to_string_pretty(self).expect("report serializes") + "\n")?;
        let mut errors = String::from("scene,class,background,frame,rot_error_deg,trans_error_m\n");
        for r in records {
            let _ = writeln!(
                errors,
                "{},{},{},{},{:.6},{:.6}",
                r.scene_id, r.class_id, r.background_id, r.frame, r.rot_error, r.trans_error
            );
        }
        write("errors.csv", errors)?;
        write_predictions(&dir.join("predictions.csv"), records)
    }
}

pub fn class_name(id: usize) -> &'static str {
    CLASS_NAMES.get(id).copied().unwrap_or("?")
}

pub const PREDICTION_HEADER: &str =
    "scene,class,background,frame,predicted_class,r0,r1,r2,tx,ty,tz,gt_r0,gt_r1,gt_r2,gt_tx,gt_ty,gt_tz";

pub fn write_predictions(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let mut s = String::from(PREDICTION_HEADER);
    s.push('\n');
    for r in records {
        let pc = r.predicted_class.map_or(String::from("-"), |c| c.to_string());
        let vals: Vec<String> = r
            .r_pred
            .iter()
            .chain(&r.t_pred)
            .chain(&r.r_gt)
            .chain(&r.t_gt)
            .map(|v| format!("{v:.6}"))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{pc},{}",
            r.scene_id,
            r.class_id,
            r.background_id,
            r.frame,
            vals.join(",")
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`write_predictions`]; errors name the offending line.
pub fn read_predictions(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == PREDICTION_HEADER => {}
        _ => return Err(parse_err(1, "missing prediction header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 17 {
            return Err(parse_err(n, format!("expected 17 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| parse_err(n, format!("bad integer `{s}`")));
        let float = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(n, format!("bad number `{s}`")))
        };
        let v: Vec<f64> = f[5..].iter().map(|s| float(s)).collect::<Result<_>>()?;
        let predicted_class = if f[4] == "-" { None } else { Some(int(f[4])? as usize) };
        out.push(PoseRecord::new(
            int(f[0])? as u32,
            int(f[1])? as usize,
            int(f[2])? as u32,
            int(f[3])? as usize,
            predicted_class,
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5]],
            [v[6], v[7], v[8]],
            [v[9], v[10], v[11]],
        ));
    }
    Ok(out)
}
