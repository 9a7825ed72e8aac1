//! Train/eval orchestration over synthetic scenes: dataset construction,
//! the toy training loop, aggregate evaluation, and the ablation sweeps
//! over the attention modules and the height-grid resolution.

use std::path::Path;

use rayon::prelude::*;

use crate::bench::bench_forward;
use crate::error::Result;
use crate::flops::count_flops;
use crate::geometry::{build_supervision_maps, discretize_supervision, CameraRig};
use crate::grid::GridSpec;
use crate::metrics::{Confusion, EvalReport, OccupancyGrid};
use crate::model::{
    build_view_indices, train_step, DaOccModel, ModelConfig, SceneTargets, ViewIndices,
    BACKBONE_STRIDE,
};
use crate::optim::AdamW;
use crate::scene::{generate_scene, sample_scene_spec, Scene, SceneDistribution};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 800,
            lr: 1e-4,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneSetOptions {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub seed: u64,
    pub objects_min: usize,
    pub objects_max: usize,
}

impl Default for SceneSetOptions {
    fn default() -> Self {
        SceneSetOptions {
            train_scenes: 50,
            eval_scenes: 12,
            seed: 2024,
            objects_min: 6,
            objects_max: 10,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub scenes: SceneSetOptions,
}

/// Output lattice the occupancy head predicts over: BEV extent with the
/// configured number of output layers.
pub fn output_grid(cfg: &ModelConfig) -> GridSpec {
    GridSpec {
        bounds: cfg.bev_grid.bounds,
        counts: [cfg.bev_grid.counts[0], cfg.bev_grid.counts[1], cfg.out_z],
    }
}

pub fn scene_distribution(cfg: &ModelConfig, scenes: &SceneSetOptions) -> SceneDistribution {
    let mut dist = SceneDistribution::toy(
        output_grid(cfg),
        cfg.classes,
        cfg.empty_class,
        cfg.cameras,
        cfg.image_size,
    );
    dist.objects_min = scenes.objects_min;
    dist.objects_max = scenes.objects_max;
    dist
}

pub struct TrainSample {
    pub images: Tensor,
    pub targets: SceneTargets,
}

pub struct EvalSample {
    pub images: Tensor,
    pub gt: OccupancyGrid,
}

pub struct Dataset {
    pub rigs: Vec<CameraRig>,
    pub train: Vec<TrainSample>,
    pub eval: Vec<EvalSample>,
}

/// Supervision targets for one generated scene: binned min-depth maps per
/// camera at feature resolution, plus the voxel labels and visibility.
pub fn targets_from_scene(cfg: &ModelConfig, scene: &Scene) -> Result<SceneTargets> {
    let (fh, fw) = cfg.feat_size();
    let n = scene.rigs.len();
    let d = cfg.depth_bins.count;
    let zh = cfg.height_z();
    let plane = fh * fw;
    let mut depth_target = Tensor::zeros(&[n, d, fh, fw]);
    let mut height_target = Tensor::zeros(&[n, zh, fh, fw]);
    let mut depth_valid = vec![false; n * plane];
    let mut height_valid = vec![false; n * plane];
    let height_bins = cfg.height_bins();
    for (ni, rig) in scene.rigs.iter().enumerate() {
        let (dmap, hmap) =
            build_supervision_maps(rig, &scene.cloud, (BACKBONE_STRIDE, BACKBONE_STRIDE));
        let donehot = discretize_supervision(&dmap, &cfg.depth_bins, cfg.clamp_supervision)?;
        let honehot = discretize_supervision(&hmap, &height_bins, cfg.clamp_supervision)?;
        for b in 0..d {
            for pix in 0..plane {
                depth_target.data_mut()[(ni * d + b) * plane + pix] =
                    donehot.data()[b * plane + pix];
            }
        }
        for b in 0..zh {
            for pix in 0..plane {
                height_target.data_mut()[(ni * zh + b) * plane + pix] =
                    honehot.data()[b * plane + pix];
            }
        }
        for pix in 0..plane {
            depth_valid[ni * plane + pix] = dmap.valid[pix];
            height_valid[ni * plane + pix] = hmap.valid[pix];
        }
    }
    Ok(SceneTargets {
        depth_target,
        depth_valid,
        height_target,
        height_valid,
        labels: scene.gt.labels.clone(),
        visibility: scene.gt.mask.clone(),
    })
}

/// Generate the train and eval scene sets (parallel over scenes; each
/// scene is fully determined by its own derived seed).
pub fn build_dataset(cfg: &ModelConfig, scenes: &SceneSetOptions) -> Result<Dataset> {
    let dist = scene_distribution(cfg, scenes);
    let train: Vec<TrainSample> = (0..scenes.train_scenes)
        .into_par_iter()
        .map(|i| {
            let spec = sample_scene_spec(&dist, scenes.seed.wrapping_add(i as u64));
            let scene = generate_scene(&spec)?;
            let targets = targets_from_scene(cfg, &scene)?;
            Ok(TrainSample {
                images: scene.images,
                targets,
            })
        })
        .collect::<Result<_>>()?;
    let eval: Vec<EvalSample> = (0..scenes.eval_scenes)
        .into_par_iter()
        .map(|i| {
            let spec = sample_scene_spec(
                &dist,
                scenes.seed.wrapping_add(0x00EE_0000).wrapping_add(i as u64),
            );
            let scene = generate_scene(&spec)?;
            Ok(EvalSample {
                images: scene.images,
                gt: scene.gt,
            })
        })
        .collect::<Result<_>>()?;
    let rigs = sample_scene_spec(&dist, scenes.seed).rigs();
    Ok(Dataset { rigs, train, eval })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

/// Cycle deterministically through the training samples.
pub fn train_model(
    model: &mut DaOccModel,
    indices: &ViewIndices,
    dataset: &Dataset,
    opts: &TrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    assert!(!dataset.train.is_empty(), "empty training set");
    let mut opt = AdamW::new(&model.params, opts.lr, opts.weight_decay);
    let mut trace = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let sample = &dataset.train[step % dataset.train.len()];
        let metrics = train_step(model, indices, &sample.images, &sample.targets, &mut opt)?;
        trace.push(metrics.loss.total);
        on_step(step, metrics.loss.total);
    }
    let final_loss = trace.last().copied().unwrap_or(f64::NAN);
    Ok(TrainOutcome {
        loss_trace: trace,
        final_loss,
    })
}

/// Argmax class per voxel over the output lattice.
pub fn predict_grid(
    model: &DaOccModel,
    indices: &ViewIndices,
    images: &Tensor,
    grid: &GridSpec,
) -> Result<OccupancyGrid> {
    let outputs = model.forward(images, indices)?;
    let classes = model.cfg.classes;
    let voxels = grid.num_voxels();
    let data = outputs.logits.data();
    let mut labels = vec![0u8; voxels];
    for v in 0..voxels {
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for c in 0..classes {
            let val = data[c * voxels + v];
            if val > best_val {
                best_val = val;
                best = c;
            }
        }
        labels[v] = best as u8;
    }
    OccupancyGrid::new(grid.clone(), classes, labels, None)
}

/// Aggregate confusion across the eval set, then report.
pub fn evaluate_model(
    model: &DaOccModel,
    indices: &ViewIndices,
    eval: &[EvalSample],
    use_mask: bool,
    excluded: &[u8],
) -> Result<EvalReport> {
    let grid = output_grid(&model.cfg);
    let mut tally = Confusion::new(model.cfg.classes);
    for sample in eval {
        let pred = predict_grid(model, indices, &sample.images, &grid)?;
        tally.add(&pred, &sample.gt, use_mask)?;
    }
    Ok(tally.report(Some(model.cfg.empty_class), excluded))
}

pub struct ToyRunResult {
    pub model: DaOccModel,
    pub indices: ViewIndices,
    pub dataset: Dataset,
    pub outcome: TrainOutcome,
    pub eval: EvalReport,
}

/// The `train-toy` entry point: build scenes, train, evaluate, and
/// optionally persist a checkpoint (parameter blobs + config + loss trace).
pub fn run_train_toy(
    run: &RunConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<ToyRunResult> {
    let dataset = build_dataset(&run.model, &run.scenes)?;
    let indices = build_view_indices(&run.model, &dataset.rigs)?;
    let mut model = DaOccModel::new(run.model.clone())?;
    let outcome = train_model(&mut model, &indices, &dataset, &run.train, &mut on_step)?;
    let eval = evaluate_model(
        &model,
        &indices,
        &dataset.eval,
        run.model.use_visibility_mask,
        &[],
    )?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        model.params.save(&dir.join("params"))?;
        std::fs::write(dir.join("config.txt"), crate::config::write_config(run))?;
        let trace: String = outcome
            .loss_trace
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i} {l:.17e}\n"))
            .collect();
        std::fs::write(dir.join("loss_trace.txt"), trace)?;
        std::fs::write(dir.join("eval.txt"), eval.to_text())?;
    }
    Ok(ToyRunResult {
        model,
        indices,
        dataset,
        outcome,
        eval,
    })
}

/// Byte-level digest of a checkpoint directory: the manifest followed by
/// every parameter blob in manifest order.
pub fn checkpoint_bytes(dir: &Path) -> Result<Vec<u8>> {
    let manifest = std::fs::read(dir.join("params").join("manifest.txt"))?;
    let mut bytes = manifest.clone();
    let text = String::from_utf8_lossy(&manifest);
    for line in text.lines() {
        if let Some(name) = line.split_whitespace().next() {
            bytes.extend(std::fs::read(
                dir.join("params").join(format!("{name}.daot")),
            )?);
        }
    }
    Ok(bytes)
}

/// One trained configuration with everything later stages need.
pub struct TrainedConfig {
    pub model: DaOccModel,
    pub indices: ViewIndices,
    pub eval: EvalReport,
    pub median_ms: f64,
    pub gmacs: f64,
}

/// Train a single configuration on an existing dataset and evaluate it.
pub fn train_eval_config(
    cfg: &ModelConfig,
    dataset: &Dataset,
    train: &TrainOptions,
) -> Result<TrainedConfig> {
    let indices = build_view_indices(cfg, &dataset.rigs)?;
    let mut model = DaOccModel::new(cfg.clone())?;
    train_model(&mut model, &indices, dataset, train, |_, _| {})?;
    let eval = evaluate_model(
        &model,
        &indices,
        &dataset.eval,
        cfg.use_visibility_mask,
        &[],
    )?;
    let stats = bench_forward(&model, &indices, &dataset.eval[0].images, 12, 3)?;
    Ok(TrainedConfig {
        model,
        indices,
        eval,
        median_ms: stats.median_ms,
        gmacs: count_flops(cfg).total_macs() as f64 / 1e9,
    })
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub dha: bool,
    pub dba: bool,
    pub miou: f64,
    pub median_ms: f64,
    pub gmacs: f64,
}

/// Train and evaluate the 2x2 DHA/DBA on-off matrix on one shared scene
/// set. Rows come back in the order (on,on), (on,off), (off,on), (off,off).
pub fn run_ablation(run: &RunConfig, mut progress: impl FnMut(&str)) -> Result<Vec<AblationRow>> {
    let dataset = build_dataset(&run.model, &run.scenes)?;
    let mut rows = Vec::new();
    for (dha, dba) in [(true, true), (true, false), (false, true), (false, false)] {
        let mut cfg = run.model.clone();
        cfg.use_dha = dha;
        cfg.use_dba = dba;
        progress(&format!("training dha={dha} dba={dba}"));
        let trained = train_eval_config(&cfg, &dataset, &run.train)?;
        rows.push(AblationRow {
            dha,
            dba,
            miou: trained.eval.miou,
            median_ms: trained.median_ms,
            gmacs: trained.gmacs,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct GridSweepRow {
    pub z: usize,
    pub miou: f64,
    pub median_ms: f64,
    pub gmacs: f64,
}

/// Train and evaluate across height-grid z resolutions (the rest of the
/// configuration fixed). Each z gets its own supervision binning, so the
/// dataset is rebuilt per row.
pub fn run_grid_sweep(
    run: &RunConfig,
    zs: &[usize],
    mut progress: impl FnMut(&str),
) -> Result<Vec<GridSweepRow>> {
    let mut rows = Vec::new();
    for &z in zs {
        let mut cfg = run.model.clone();
        cfg.height_grid.counts[2] = z;
        progress(&format!("training height grid z={z}"));
        let dataset = build_dataset(&cfg, &run.scenes)?;
        let trained = train_eval_config(&cfg, &dataset, &run.train)?;
        rows.push(GridSweepRow {
            z,
            miou: trained.eval.miou,
            median_ms: trained.median_ms,
            gmacs: trained.gmacs,
        });
    }
    Ok(rows)
}
