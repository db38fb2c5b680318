use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use raypose_core::analysis::{extract_image_features, gaussian_smooth_track, pca_project, TrackPose};
use raypose_core::dataset::{
    default_intrinsics, generate_dataset, plan_manifest, Dataset, DatasetConfig, DatasetManifest, Split,
};
use raypose_core::decoder::DecoderVariant;
use raypose_core::losses::WeightingStrategy;
use raypose_core::model::Model;
use raypose_core::pnp::{run_baseline, KeypointSource};
use raypose_core::report::{read_predictions, EvaluationReport, PoseRecord, PREDICTION_HEADER};
use raypose_core::training::{evaluate, measure_fps, method_label, train, TrainConfig, BEST_CHECKPOINT};
use raypose_core::{DType, Device, Error, Result};

use crate::config::{Entry, RunConfig};
use crate::{plot, Cli, Command, Global};

pub const DATA_ENV: &str = "DRONEKEY_DATA";
pub const PROJECTION_HEADER: &str = "label,pc1,pc2";

fn default_data() -> String {
    std::env::var(DATA_ENV).unwrap_or_else(|_| "data".to_string())
}

const GEN_SCHEMA: &[Entry] = &[
    ("preset", "desk", "desk | overfit | table2"),
    ("seed", "0", "dataset seed"),
    ("width", "auto", "image width (auto: preset)"),
    ("height", "auto", "image height (auto: preset)"),
    ("fx", "auto", "focal length x (auto: 1.6 * width)"),
    ("fy", "auto", "focal length y"),
    ("cx", "auto", "principal point x (auto: centre)"),
    ("cy", "auto", "principal point y"),
    ("scenes", "all", "comma-separated scene ids to keep"),
    ("duration", "auto", "seconds per subsequence"),
    ("fps", "auto", "frames per second"),
    ("plan_only", "false", "print the composition without rendering"),
];

const TRAIN_SCHEMA: &[Entry] = &[
    ("data", "", "dataset root (default: $DRONEKEY_DATA or ./data)"),
    ("profile", "desk", "desk | paper defaults for epochs, lr, batch_size"),
    ("epochs", "auto", ""),
    ("lr", "auto", "initial learning rate"),
    ("batch_size", "auto", ""),
    ("lr_floor", "0.001", "final lr as a fraction of the initial lr"),
    ("strategy", "equal", "equal | tanh-weighted | smoothly-shifted | 3d-biased"),
    ("encoder", "on", "off: decoder consumes ground-truth keypoints and labels"),
    ("decoder", "4", "decoder variant 1-4"),
    ("class_input", "soft", "soft | one-hot"),
    ("dim", "64", "token dimension"),
    ("layers", "4", "attention layers"),
    ("heads", "4", "attention heads"),
    ("ffn", "128", "feed-forward width"),
    ("validate_every", "1", "epochs between validations"),
    ("augment", "false", "brightness jitter"),
    ("seed", "0", "initialization and data-order seed"),
];

const EVAL_SCHEMA: &[Entry] = &[
    ("data", "", "dataset root"),
    ("run", "runs/train", "training run directory for named checkpoints"),
    ("ckpt", "best", "checkpoint path, `best` or `epoch_N`"),
    ("split", "test", "train | valid | test"),
    ("fps", "true", "also time single-frame inference"),
    ("fps_warmup", "10", ""),
    ("fps_iterations", "100", ""),
    ("device_tag", "cpu", "label recorded with the timing"),
    ("seed", "0", ""),
];

const BASELINE_SCHEMA: &[Entry] = &[
    ("data", "", "dataset root"),
    ("source", "gt", "gt | encoder"),
    ("split", "test", ""),
    ("run", "runs/train", ""),
    ("ckpt", "best", "used when source = encoder"),
    ("seed", "0", ""),
];

const SMOOTH_SCHEMA: &[Entry] = &[
    ("input", "runs/eval/predictions.csv", "prediction file"),
    ("sigma", "2", "kernel width in frames"),
    ("seed", "0", ""),
];

const PLOT_SCHEMA: &[Entry] = &[
    ("input", "runs/eval/predictions.csv", "prediction or projection file"),
    ("seed", "0", ""),
];

const ANALYZE_SCHEMA: &[Entry] = &[
    ("data", "", "comma-separated dataset roots"),
    ("labels", "auto", "comma-separated labels (auto: directory names)"),
    ("samples", "50", "frames per dataset, evenly spaced"),
    ("seed", "0", ""),
];

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Gen { preset, plan_only } => {
            let flags = [("preset", preset), ("plan_only", plan_only.then(|| "true".into()))];
            cmd_gen(&g, resolve("gen", GEN_SCHEMA, &g, &flags)?)
        }
        Command::Train { data, epochs, lr, strategy, decoder, encoder } => {
            let flags = [
                ("data", data),
                ("epochs", epochs),
                ("lr", lr),
                ("strategy", strategy),
                ("decoder", decoder),
                ("encoder", encoder),
            ];
            cmd_train(&g, resolve("train", TRAIN_SCHEMA, &g, &flags)?)
        }
        Command::Eval { data, ckpt, split } => {
            let flags = [("data", data), ("ckpt", ckpt), ("split", split)];
            cmd_eval(&g, resolve("eval", EVAL_SCHEMA, &g, &flags)?)
        }
        Command::Baseline { data, source, split, ckpt } => {
            let flags = [("data", data), ("source", source), ("split", split), ("ckpt", ckpt)];
            cmd_baseline(&g, resolve("baseline", BASELINE_SCHEMA, &g, &flags)?)
        }
        Command::Smooth { input, sigma } => {
            let flags = [("input", input), ("sigma", sigma)];
            cmd_smooth(&g, resolve("smooth", SMOOTH_SCHEMA, &g, &flags)?)
        }
        Command::Plot { input } => cmd_plot(&g, resolve("plot", PLOT_SCHEMA, &g, &[("input", input)])?),
        Command::Analyze { data, samples } => {
            let flags = [("data", data), ("samples", samples)];
            cmd_analyze(&g, resolve("analyze", ANALYZE_SCHEMA, &g, &flags)?)
        }
    }
}

fn resolve(command: &'static str, schema: &[Entry], g: &Global, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut all: Vec<(&str, Option<String>)> = vec![("seed", g.seed.clone())];
    all.extend(flags.iter().cloned());
    let mut cfg = RunConfig::resolve(command, schema, g.config.as_deref(), &all, &g.sets)?;
    if cfg.values.get("data").is_some_and(|v| v.is_empty()) {
        cfg.values.insert("data".into(), default_data());
    }
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty one unless `overwrite` is set.
fn prepare_out(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(|e| Error::Io { path: dir.into(), source: e })?
            .next()
            .is_some();
        if occupied && !overwrite {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        if occupied {
            std::fs::remove_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn out_dir(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let root = PathBuf::from(cfg.raw("data"));
    if !root.exists() {
        return Err(Error::Load {
            path: root,
            reason: "dataset directory does not exist (run `gen` or set DRONEKEY_DATA)".into(),
        });
    }
    Dataset::open(root)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    let run = PathBuf::from(cfg.raw("run"));
    let name = cfg.raw("ckpt");
    if name == "best" {
        return run.join(BEST_CHECKPOINT);
    }
    if let Some(n) = name.strip_prefix("epoch_").and_then(|n| n.parse::<usize>().ok()) {
        return run.join("checkpoints").join(format!("epoch_{n:03}.ckpt"));
    }
    PathBuf::from(name)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Model> {
    let path = checkpoint_path(cfg);
    if !path.exists() {
        return Err(Error::Load {
            path,
            reason: "checkpoint not found".into(),
        });
    }
    Ok(Model::load(&path, DType::F32, &Device::Cpu)?.0)
}

pub fn dataset_config(cfg: &RunConfig) -> Result<DatasetConfig> {
    let mut d = DatasetConfig::from_preset(cfg.raw("preset"))?.with_seed(cfg.get("seed")?);
    let width = cfg.get_opt::<usize>("width")?.unwrap_or(d.width);
    let height = cfg.get_opt::<usize>("height")?.unwrap_or(d.height);
    if (width, height) != (d.width, d.height) {
        d = d.with_resolution(width, height);
    }
    let base = default_intrinsics(width, height);
    let mut camera = d.camera;
    camera.fx = cfg.get_opt("fx")?.unwrap_or(base.fx);
    camera.fy = cfg.get_opt("fy")?.unwrap_or(base.fy);
    camera.cx = cfg.get_opt("cx")?.unwrap_or(base.cx);
    camera.cy = cfg.get_opt("cy")?.unwrap_or(base.cy);
    d = d.with_camera(camera);
    if cfg.raw("scenes") != "all" {
        let keep: Vec<u32> = cfg
            .get_list("scenes")
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad scene id `{s}`"))))
            .collect::<Result<_>>()?;
        d.scenes.retain(|s| keep.contains(&s.scene_id));
    }
    let duration: Option<f64> = cfg.get_opt("duration")?;
    let fps: Option<f64> = cfg.get_opt("fps")?;
    for s in &mut d.scenes {
        s.duration = duration.unwrap_or(s.duration);
        s.fps = fps.unwrap_or(s.fps);
    }
    d.validate()?;
    Ok(d)
}

pub fn summarize(m: &DatasetManifest) -> String {
    let mut s = format!(
        "sequences: {} (scene x class), {} subsequences\nframes: {}\n",
        m.sequence_count(),
        m.sequences.len(),
        m.total_frames()
    );
    let frames = m.frames_by_split();
    for (split, scenes) in m.scenes_by_split() {
        let ids: Vec<String> = scenes.iter().map(|id| format!("{id:02}")).collect();
        s.push_str(&format!(
            "  {split}: {} frames, scenes {}\n",
            frames.get(&split).copied().unwrap_or(0),
            ids.join(",")
        ));
    }
    s
}

fn cmd_gen(g: &Global, cfg: RunConfig) -> Result<()> {
    let dcfg = dataset_config(&cfg)?;
    if cfg.get_bool("plan_only")? {
        print!("{}", summarize(&plan_manifest(&dcfg)?));
        return Ok(());
    }
    let root = g.out.clone().unwrap_or_else(|| PathBuf::from(default_data()));
    let manifest = generate_dataset(&dcfg, &root, g.overwrite)?;
    cfg.echo(&root)?;
    println!("dataset written to {}", root.display());
    print!("{}", summarize(&manifest));
    Ok(())
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let mut t = match cfg.raw("profile") {
        "desk" => TrainConfig::desk(),
        "paper" => TrainConfig::default(),
        other => {
            return Err(Error::Unknown {
                kind: "training profile",
                value: other.into(),
            })
        }
    };
    t.epochs = cfg.get_opt("epochs")?.unwrap_or(t.epochs);
    t.lr = cfg.get_opt("lr")?.unwrap_or(t.lr);
    t.batch_size = cfg.get_opt("batch_size")?.unwrap_or(t.batch_size);
    t.lr_floor = cfg.get("lr_floor")?;
    t.strategy = cfg.raw("strategy").parse::<WeightingStrategy>()?;
    t.encoder_enabled = cfg.get_bool("encoder")?;
    t.decoder.variant = cfg.raw("decoder").parse::<DecoderVariant>()?;
    t.decoder.one_hot_class = match cfg.raw("class_input") {
        "soft" => false,
        "one-hot" => true,
        other => {
            return Err(Error::Unknown {
                kind: "class input",
                value: other.into(),
            })
        }
    };
    t.encoder.dim = cfg.get("dim")?;
    t.encoder.layers = cfg.get("layers")?;
    t.encoder.heads = cfg.get("heads")?;
    t.encoder.ffn = cfg.get("ffn")?;
    t.validate_every = cfg.get("validate_every")?;
    t.augment = cfg.get_bool("augment")?;
    t.seed = cfg.get("seed")?;
    t.validate()?;
    Ok(t)
}

fn cmd_train(g: &Global, cfg: RunConfig) -> Result<()> {
    let tcfg = train_config(&cfg)?;
    let dataset = open_dataset(&cfg)?;
    let out = out_dir(g, "runs/train");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;
    let outcome = train(&tcfg, &dataset, Some(&out))?;
    println!(
        "trained {} epochs; best epoch {} (rotation MAE {:.3}°, translation MAE {:.4} m); checkpoint {}",
        outcome.log.len(),
        outcome.best.epoch,
        outcome.best.rot_mae,
        outcome.best.trans_mae,
        out.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}

fn write_report(out: &Path, report: &EvaluationReport, records: &[PoseRecord]) -> Result<()> {
    report.write(out, records)?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_eval(g: &Global, cfg: RunConfig) -> Result<()> {
    let dataset = open_dataset(&cfg)?;
    let model = load_checkpoint(&cfg)?;
    let split: Split = cfg.raw("split").parse()?;
    let (mut report, records) = evaluate(&model, &dataset, split, &method_label(&model.cfg))?;
    if cfg.get_bool("fps")? {
        report.fps = Some(measure_fps(
            &model,
            cfg.raw("device_tag"),
            cfg.get("fps_warmup")?,
            cfg.get("fps_iterations")?,
        )?);
    }
    let out = out_dir(g, "runs/eval");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;
    write_report(&out, &report, &records)
}

fn cmd_baseline(g: &Global, cfg: RunConfig) -> Result<()> {
    let dataset = open_dataset(&cfg)?;
    let source: KeypointSource = cfg.raw("source").parse()?;
    let split: Split = cfg.raw("split").parse()?;
    let model = match source {
        KeypointSource::Encoder => Some(load_checkpoint(&cfg)?),
        KeypointSource::Gt => None,
    };
    let records = run_baseline(&dataset, split, source, model.as_ref())?;
    let report = EvaluationReport::from_records(&format!("{source} keypoints + PnP"), split, &records);
    let out = out_dir(g, "runs/baseline");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;
    write_report(&out, &report, &records)
}

/// Groups records into tracks keyed by (scene, class, background), each sorted by frame.
pub fn tracks(records: &[PoseRecord]) -> BTreeMap<(u32, usize, u32), Vec<PoseRecord>> {
    let mut out: BTreeMap<(u32, usize, u32), Vec<PoseRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.scene_id, r.class_id, r.background_id)).or_default().push(r.clone());
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.frame);
    }
    out
}

fn cmd_smooth(g: &Global, cfg: RunConfig) -> Result<()> {
    let input = PathBuf::from(cfg.raw("input"));
    let sigma: f64 = cfg.get("sigma")?;
    let records = read_predictions(&input)?;
    let mut smoothed = Vec::with_capacity(records.len());
    for track in tracks(&records).into_values() {
        let poses: Vec<TrackPose> = track.iter().map(|r| TrackPose { r: r.r_pred, t: r.t_pred }).collect();
        for (r, p) in track.iter().zip(gaussian_smooth_track(&poses, sigma)?) {
            smoothed.push(PoseRecord::new(
                r.scene_id,
                r.class_id,
                r.background_id,
                r.frame,
                r.predicted_class,
                p.r,
                p.t,
                r.r_gt,
                r.t_gt,
            ));
        }
    }
    let out = out_dir(g, "runs/smooth");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;
    let report = EvaluationReport::from_records(&format!("smoothed (sigma {sigma})"), Split::Test, &smoothed);
    write_report(&out, &report, &smoothed)
}

fn cmd_plot(g: &Global, cfg: RunConfig) -> Result<()> {
    let input = PathBuf::from(cfg.raw("input"));
    let text = std::fs::read_to_string(&input).map_err(|e| Error::Load {
        path: input.clone(),
        reason: e.to_string(),
    })?;
    let header = text.lines().next().unwrap_or("").trim().to_string();
    let out = out_dir(g, "runs/plot");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;
    let mut written = Vec::new();
    if header == PREDICTION_HEADER {
        for ((scene, class, bg), track) in tracks(&read_predictions(&input)?) {
            let path = out.join(format!("track_{scene:02}_{class}_{bg:02}.svg"));
            let gt: Vec<[f64; 3]> = track.iter().map(|r| r.t_gt).collect();
            let pred: Vec<[f64; 3]> = track.iter().map(|r| r.t_pred).collect();
            plot::trajectory(&path, &format!("scene {scene:02} class {class} bg {bg:02}"), &gt, &pred)?;
            written.push(path);
        }
    } else if header == PROJECTION_HEADER {
        let groups = read_projection(&input)?;
        let path = out.join("projection.svg");
        plot::scatter(&path, "PCA of image descriptors", &groups)?;
        written.push(path);
    } else {
        return Err(Error::Parse {
            path: input,
            line: 1,
            reason: "unrecognized header: expected a prediction or projection file".into(),
        });
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn read_projection(path: &Path) -> Result<Vec<(String, Vec<[f64; 2]>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let mut groups: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |reason: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            reason,
        };
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let x: f64 = f[1].trim().parse().map_err(|_| bad(format!("bad number `{}`", f[1])))?;
        let y: f64 = f[2].trim().parse().map_err(|_| bad(format!("bad number `{}`", f[2])))?;
        match groups.iter_mut().find(|(l, _)| l == f[0]) {
            Some((_, pts)) => pts.push([x, y]),
            None => groups.push((f[0].to_string(), vec![[x, y]])),
        }
    }
    Ok(groups)
}

fn cmd_analyze(g: &Global, cfg: RunConfig) -> Result<()> {
    let roots = cfg.get_list("data");
    if roots.is_empty() {
        return Err(Error::Config("analyze needs at least one dataset root".into()));
    }
    let labels: Vec<String> = if cfg.raw("labels") == "auto" {
        roots
            .iter()
            .map(|r| {
                Path::new(r)
                    .file_name()
                    .map_or_else(|| r.clone(), |n| n.to_string_lossy().into_owned())
            })
            .collect()
    } else {
        cfg.get_list("labels")
    };
    if labels.len() != roots.len() {
        return Err(Error::Config(format!("{} labels for {} datasets", labels.len(), roots.len())));
    }
    let samples: usize = cfg.get("samples")?;
    let mut images = Vec::new();
    let mut point_labels = Vec::new();
    for (root, label) in roots.iter().zip(&labels) {
        let ds = Dataset::open(root)?;
        let n = ds.len();
        let take = samples.min(n).max(1);
        for k in 0..take {
            images.push(ds.load_sample(k * n / take)?.image);
            point_labels.push(label.clone());
        }
    }
    let feats = extract_image_features(&images)?;
    let proj = pca_project(&feats)?;
    let out = out_dir(g, "runs/analyze");
    prepare_out(&out, g.overwrite)?;
    cfg.echo(&out)?;

    let mut csv = format!("{PROJECTION_HEADER}\n");
    for (p, l) in proj.points.iter().zip(&point_labels) {
        csv.push_str(&format!("{l},{:.9},{:.9}\n", p[0], p[1]));
    }
    let path = out.join("projection.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;

    let mut summary = format!(
        "points: {}\nexplained variance: pc1 {:.4}, pc2 {:.4}\nkept dimensions: {}\n",
        proj.points.len(),
        proj.explained[0],
        proj.explained[1],
        proj.kept_dims.len()
    );
    for label in &labels {
        let pts: Vec<&[f64; 2]> = proj.points.iter().zip(&point_labels).filter(|(_, l)| *l == label).map(|(p, _)| p).collect();
        let n = pts.len() as f64;
        let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        summary.push_str(&format!("centroid {label}: ({:.4}, {:.4})\n", c[0], c[1]));
    }
    let path = out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| Error::Io { path, source: e })?;
    print!("{summary}");
    Ok(())
}
