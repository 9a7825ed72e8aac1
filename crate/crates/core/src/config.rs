//! Flat `key = value` run configuration with section prefixes
//! (`model.`, `train.`, `scenes.`), chosen for diff-friendliness in
//! ablation sweeps. Parsing starts from the defaults and applies
//! overrides; unknown keys are errors.

use crate::error::{Error, Result};
use crate::grid::{BinSpec, GridSpec};
use crate::harness::RunConfig;
use crate::model::FusionMode;

pub fn write_config(run: &RunConfig) -> String {
    let m = &run.model;
    let b = m.bev_grid.bounds;
    let mut s = String::new();
    s.push_str(&format!("model.cameras = {}\n", m.cameras));
    s.push_str(&format!(
        "model.image = {} {}\n",
        m.image_size.0, m.image_size.1
    ));
    s.push_str(&format!(
        "model.backbone_channels = {} {} {}\n",
        m.backbone_channels[0], m.backbone_channels[1], m.backbone_channels[2]
    ));
    s.push_str(&format!(
        "model.depth_bins = {} {} {}\n",
        m.depth_bins.count, m.depth_bins.lower, m.depth_bins.upper
    ));
    s.push_str(&format!(
        "model.bounds = {} {} {} {} {} {}\n",
        b[0], b[1], b[2], b[3], b[4], b[5]
    ));
    s.push_str(&format!(
        "model.bev = {} {}\n",
        m.bev_grid.counts[0], m.bev_grid.counts[1]
    ));
    s.push_str(&format!(
        "model.height = {} {} {}\n",
        m.height_grid.counts[0], m.height_grid.counts[1], m.height_grid.counts[2]
    ));
    s.push_str(&format!("model.out_z = {}\n", m.out_z));
    s.push_str(&format!("model.classes = {}\n", m.classes));
    s.push_str(&format!("model.empty_class = {}\n", m.empty_class));
    s.push_str(&format!(
        "model.lambdas = {} {} {} {} {}\n",
        m.lambdas[0], m.lambdas[1], m.lambdas[2], m.lambdas[3], m.lambdas[4]
    ));
    s.push_str(&format!(
        "model.fusion = {}\n",
        match m.fusion {
            FusionMode::ConcatProject => "concat",
            FusionMode::AddProject => "add",
        }
    ));
    s.push_str(&format!("model.dha = {}\n", m.use_dha));
    s.push_str(&format!("model.dba = {}\n", m.use_dba));
    s.push_str(&format!("model.encoder_da = {}\n", m.use_encoder_da));
    s.push_str(&format!(
        "model.visibility_mask = {}\n",
        m.use_visibility_mask
    ));
    s.push_str(&format!("model.da_hidden = {}\n", m.da_hidden));
    s.push_str(&format!(
        "model.clamp_supervision = {}\n",
        m.clamp_supervision
    ));
    s.push_str(&format!("model.seed = {}\n", m.seed));
    s.push_str(&format!("train.steps = {}\n", run.train.steps));
    s.push_str(&format!("train.lr = {}\n", run.train.lr));
    s.push_str(&format!(
        "train.weight_decay = {}\n",
        run.train.weight_decay
    ));
    s.push_str(&format!("scenes.train = {}\n", run.scenes.train_scenes));
    s.push_str(&format!("scenes.eval = {}\n", run.scenes.eval_scenes));
    s.push_str(&format!("scenes.seed = {}\n", run.scenes.seed));
    s.push_str(&format!(
        "scenes.objects_min = {}\n",
        run.scenes.objects_min
    ));
    s.push_str(&format!(
        "scenes.objects_max = {}\n",
        run.scenes.objects_max
    ));
    s
}

fn nums<T: std::str::FromStr>(value: &str, want: usize, key: &str) -> Result<Vec<T>> {
    let vals: Vec<T> = value
        .split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Config(format!("bad number {t:?} for {key}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(Error::Config(format!(
            "{key} wants {want} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn one<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn boolean(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!("bad boolean {other:?} for {key}"))),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    // Grid pieces are assembled at the end so bounds and counts can be
    // overridden independently and in any order.
    let mut bounds = run.model.bev_grid.bounds;
    let mut bev = [run.model.bev_grid.counts[0], run.model.bev_grid.counts[1]];
    let mut height = run.model.height_grid.counts;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: missing '=' in {line:?}", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "model.cameras" => run.model.cameras = one(value, key)?,
            "model.image" => {
                let v: Vec<usize> = nums(value, 2, key)?;
                run.model.image_size = (v[0], v[1]);
            }
            "model.backbone_channels" => {
                let v: Vec<usize> = nums(value, 3, key)?;
                run.model.backbone_channels = [v[0], v[1], v[2]];
            }
            "model.depth_bins" => {
                let v: Vec<f64> = nums(value, 3, key)?;
                run.model.depth_bins = BinSpec::new(v[0] as usize, v[1], v[2])
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            "model.bounds" => {
                let v: Vec<f64> = nums(value, 6, key)?;
                bounds = [v[0], v[1], v[2], v[3], v[4], v[5]];
            }
            "model.bev" => {
                let v: Vec<usize> = nums(value, 2, key)?;
                bev = [v[0], v[1]];
            }
            "model.height" => {
                let v: Vec<usize> = nums(value, 3, key)?;
                height = [v[0], v[1], v[2]];
            }
            "model.out_z" => run.model.out_z = one(value, key)?,
            "model.classes" => run.model.classes = one(value, key)?,
            "model.empty_class" => run.model.empty_class = one(value, key)?,
            "model.lambdas" => {
                let v: Vec<f64> = nums(value, 5, key)?;
                run.model.lambdas = [v[0], v[1], v[2], v[3], v[4]];
            }
            "model.fusion" => {
                run.model.fusion = match value {
                    "concat" => FusionMode::ConcatProject,
                    "add" => FusionMode::AddProject,
                    other => return Err(Error::Config(format!("unknown fusion mode {other:?}"))),
                }
            }
            "model.dha" => run.model.use_dha = boolean(value, key)?,
            "model.dba" => run.model.use_dba = boolean(value, key)?,
            "model.encoder_da" => run.model.use_encoder_da = boolean(value, key)?,
            "model.visibility_mask" => run.model.use_visibility_mask = boolean(value, key)?,
            "model.da_hidden" => run.model.da_hidden = one(value, key)?,
            "model.clamp_supervision" => run.model.clamp_supervision = boolean(value, key)?,
            "model.seed" => run.model.seed = one(value, key)?,
            "train.steps" => run.train.steps = one(value, key)?,
            "train.lr" => run.train.lr = one(value, key)?,
            "train.weight_decay" => run.train.weight_decay = one(value, key)?,
            "scenes.train" => run.scenes.train_scenes = one(value, key)?,
            "scenes.eval" => run.scenes.eval_scenes = one(value, key)?,
            "scenes.seed" => run.scenes.seed = one(value, key)?,
            "scenes.objects_min" => run.scenes.objects_min = one(value, key)?,
            "scenes.objects_max" => run.scenes.objects_max = one(value, key)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
    }
    run.model.bev_grid =
        GridSpec::new(bounds, [bev[0], bev[1], 1]).map_err(|e| Error::Config(e.to_string()))?;
    run.model.height_grid =
        GridSpec::new(bounds, height).map_err(|e| Error::Config(e.to_string()))?;
    run.model
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(run)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
