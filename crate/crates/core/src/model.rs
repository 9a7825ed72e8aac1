//! End-to-end toy occupancy model.
//!
//! Pipeline: a 3-stage stride-8 convolutional backbone over all camera
//! images, a shared-trunk DepthNet emitting the depth score and the pixel
//! feature map, a HeightNet whose last two blocks are directional attention
//! modules, depth- and height-weighted splats into a BEV grid and a
//! lightweight height grid, height-wise slicing, decoder DBA/DHA
//! refinement, bilinear fusion and a channel-to-height occupancy head.
//! Every stage has a hand-written backward; `gradcheck_model` verifies the
//! whole chain against central differences.

use crate::attention::{
    da_backward, da_forward_cached, dba_backward, dba_forward_cached, dha_backward,
    dha_forward_cached, pack_height_channels, DAParams, DaCache, DbaCache, DhaCache, Direction,
};
use crate::error::{dim_err, Error, Result};
use crate::grid::{BinSpec, GridSpec};
use crate::loss::{bce_masked, ce_from_logits, geo_scal, sem_scal};
use crate::nn::{bilinear_resize, bilinear_resize_backward, conv2d, conv2d_backward};
use crate::ops::{relu, relu_backward, softmax, softmax_backward, MlpLayer};
use crate::optim::AdamW;
use crate::params::{ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::view::{slice_heightwise, splat_backward, splat_bev, splat_height, SplatIndex};

pub const BACKBONE_STRIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Channel-concatenate the projected height features with the BEV map.
    ConcatProject,
    /// Add the projected height features onto the BEV map.
    AddProject,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub cameras: usize,
    pub image_size: (usize, usize),
    /// Widths of the three stride-2 backbone stages; the last is the
    /// feature width C used everywhere downstream.
    pub backbone_channels: [usize; 3],
    pub depth_bins: BinSpec,
    /// BEV splat grid; the z count must be 1.
    pub bev_grid: GridSpec,
    /// Lightweight height grid (X', Y', Z); its z axis doubles as the
    /// height-score binning.
    pub height_grid: GridSpec,
    pub out_z: usize,
    pub classes: usize,
    pub empty_class: u8,
    /// Loss weights (depth bce, height bce, ce, sem scal, geo scal).
    pub lambdas: [f64; 5],
    pub fusion: FusionMode,
    pub use_dha: bool,
    pub use_dba: bool,
    pub use_encoder_da: bool,
    pub use_visibility_mask: bool,
    /// Hidden width of the kernel-generating MLPs; 0 means the feature width.
    pub da_hidden: usize,
    /// Clamp out-of-range supervision values to the edge bins (vs drop).
    pub clamp_supervision: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::toy()
    }
}

impl ModelConfig {
    /// Desk-scale benchmark configuration used by the synthetic scenes.
    pub fn toy() -> ModelConfig {
        ModelConfig {
            cameras: 4,
            image_size: (48, 96),
            backbone_channels: [8, 12, 16],
            depth_bins: BinSpec::new(24, 0.5, 14.0).expect("static range"),
            bev_grid: GridSpec::new([-8.0, -8.0, 0.0, 8.0, 8.0, 4.0], [48, 48, 1])
                .expect("static grid"),
            height_grid: GridSpec::new([-8.0, -8.0, 0.0, 8.0, 8.0, 4.0], [32, 32, 16])
                .expect("static grid"),
            out_z: 8,
            classes: 6,
            empty_class: 5,
            lambdas: [1.0, 1.0, 10.0, 1.0, 1.0],
            fusion: FusionMode::ConcatProject,
            use_dha: true,
            use_dba: true,
            use_encoder_da: true,
            use_visibility_mask: true,
            da_hidden: 0,
            clamp_supervision: true,
            seed: 1,
        }
    }

    /// Miniature configuration for end-to-end gradient checking.
    pub fn mini() -> ModelConfig {
        ModelConfig {
            cameras: 1,
            image_size: (16, 16),
            backbone_channels: [4, 4, 4],
            depth_bins: BinSpec::new(3, 0.5, 6.5).expect("static range"),
            bev_grid: GridSpec::new([-4.0, -4.0, 0.0, 4.0, 4.0, 2.0], [16, 16, 1])
                .expect("static grid"),
            height_grid: GridSpec::new([-4.0, -4.0, 0.0, 4.0, 4.0, 2.0], [8, 8, 4])
                .expect("static grid"),
            out_z: 4,
            classes: 4,
            empty_class: 3,
            lambdas: [1.0, 1.0, 10.0, 1.0, 1.0],
            fusion: FusionMode::ConcatProject,
            use_dha: true,
            use_dba: true,
            use_encoder_da: true,
            use_visibility_mask: false,
            da_hidden: 3,
            clamp_supervision: true,
            seed: 7,
        }
    }

    pub fn feat_channels(&self) -> usize {
        self.backbone_channels[2]
    }

    pub fn feat_size(&self) -> (usize, usize) {
        (
            self.image_size.0 / BACKBONE_STRIDE,
            self.image_size.1 / BACKBONE_STRIDE,
        )
    }

    pub fn height_z(&self) -> usize {
        self.height_grid.counts[2]
    }

    /// Height-score bins: the z layers of the height grid.
    pub fn height_bins(&self) -> BinSpec {
        BinSpec {
            count: self.height_grid.counts[2],
            lower: self.height_grid.bounds[2],
            upper: self.height_grid.bounds[5],
        }
    }

    pub fn da_hidden_width(&self) -> usize {
        if self.da_hidden == 0 {
            self.feat_channels()
        } else {
            self.da_hidden
        }
    }

    pub fn fused_channels(&self) -> usize {
        match self.fusion {
            FusionMode::ConcatProject => 2 * self.feat_channels(),
            FusionMode::AddProject => self.feat_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Spec(
                "at least one semantic class plus empty is required".into(),
            ));
        }
        if self.classes > 256 || self.empty_class as usize >= self.classes {
            return Err(Error::Spec(format!(
                "classes {} / empty class {} out of range",
                self.classes, self.empty_class
            )));
        }
        if self.bev_grid.counts[2] != 1 {
            return Err(Error::Spec(format!(
                "bev grid must have a single z layer, got {:?}",
                self.bev_grid.counts
            )));
        }
        if self.image_size.0 % BACKBONE_STRIDE != 0 || self.image_size.1 % BACKBONE_STRIDE != 0 {
            return Err(Error::Spec(format!(
                "image size {:?} must be divisible by the backbone stride {BACKBONE_STRIDE}",
                self.image_size
            )));
        }
        if self.cameras == 0 || self.out_z == 0 {
            return Err(Error::Spec("cameras and out_z must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct DaIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pos: ParamId,
    direction: Direction,
}

struct Layers {
    backbone: [ConvIds; 3],
    depth_trunk: ConvIds,
    depth_head: ConvIds,
    feat_head: ConvIds,
    height_trunk: ConvIds,
    height_res1: ConvIds,
    height_res2: ConvIds,
    height_da_h: DaIds,
    height_da_v: DaIds,
    height_head: ConvIds,
    dha: DaIds,
    dba_h: DaIds,
    dba_v: DaIds,
    fuse_proj: ConvIds,
    occ_head: ConvIds,
}

pub struct DaOccModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layers: Layers,
}

/// Splat indices for a fixed camera rig set, reusable across scenes.
pub struct ViewIndices {
    pub depth: SplatIndex,
    pub height: SplatIndex,
}

pub fn build_view_indices(
    cfg: &ModelConfig,
    rigs: &[crate::geometry::CameraRig],
) -> Result<ViewIndices> {
    if rigs.len() != cfg.cameras {
        return Err(dim_err!(
            "{} rigs supplied for {} cameras",
            rigs.len(),
            cfg.cameras
        ));
    }
    let feat = cfg.feat_size();
    let depth_frustum = crate::view::frustum_for_rigs(
        rigs,
        feat,
        &cfg.depth_bins,
        crate::view::FrustumMode::Depth,
    )?;
    let height_frustum = crate::view::frustum_for_rigs(
        rigs,
        feat,
        &cfg.height_bins(),
        crate::view::FrustumMode::Height,
    )?;
    Ok(ViewIndices {
        depth: crate::view::compute_ranks(&depth_frustum, &cfg.bev_grid),
        height: crate::view::compute_ranks(&height_frustum, &cfg.height_grid),
    })
}

/// Every intermediate needed by the backward pass.
pub struct ForwardCache {
    images: Tensor,
    bb_pre: Vec<Tensor>,
    bb_act: Vec<Tensor>, // post-relu stage outputs; last is F_n
    dt_pre: Tensor,
    dt_act: Tensor,
    f_feat: Tensor,
    ht_pre: Tensor,
    ht_act: Tensor,
    res_pre1: Tensor,
    res_a1: Tensor,
    res_sum: Tensor,
    enc_h_in: Tensor,
    enc_h_cache: Option<DaCache>,
    enc_v_in: Tensor,
    enc_v_cache: Option<DaCache>,
    enc_out: Tensor,
    f_sliced: Tensor,
    dba_cache: Option<DbaCache>,
    dha_cache: Option<DhaCache>,
    proj_in: Tensor,
    head_in: Tensor,
}

/// Everything the losses and the metrics consume.
pub struct ForwardOutputs {
    pub depth_score: Tensor,
    pub height_score: Tensor,
    pub f_bev: Tensor,
    pub f_3d: Tensor,
    pub f_bev_refined: Tensor,
    pub f_height: Tensor,
    pub fused: Tensor,
    pub logits: Tensor,
}

/// One training or evaluation sample.
pub struct SceneTargets {
    pub depth_target: Tensor,
    pub depth_valid: Vec<bool>,
    pub height_target: Tensor,
    pub height_valid: Vec<bool>,
    /// z-major voxel labels over the output grid (Z_out, Y, X).
    pub labels: Vec<u8>,
    pub visibility: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    /// (depth bce, height bce, ce, sem scal, geo scal), already weighted.
    pub weighted: [f64; 5],
    pub raw: [f64; 5],
    pub scored: [bool; 5],
    pub lambdas: [f64; 5],
}

impl LossBreakdown {
    pub fn describe(&self) -> String {
        let names = ["depth_bce", "height_bce", "ce", "sem_scal", "geo_scal"];
        let mut s = format!("total = {:.6e}", self.total);
        for i in 0..5 {
            s.push_str(&format!(
                "\n  {} = {:.6e} (lambda {}, weighted {:.6e}{})",
                names[i],
                self.raw[i],
                self.lambdas[i],
                self.weighted[i],
                if self.scored[i] {
                    ""
                } else {
                    ", no valid elements"
                }
            ));
        }
        s
    }
}

pub struct LossGrads {
    pub d_logits: Tensor,
    pub d_depth_score: Tensor,
    pub d_height_score: Tensor,
}

impl DaOccModel {
    pub fn new(cfg: ModelConfig) -> Result<DaOccModel> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed ^ 0xDA0C_C0DE);
        let mut params = ParamStore::new();
        let c = cfg.feat_channels();
        let [c0, c1, c2] = cfg.backbone_channels;
        let conv = |params: &mut ParamStore,
                    name: &str,
                    cin: usize,
                    cout: usize,
                    k: usize,
                    stride: usize,
                    pad: usize,
                    rng: &mut SplitMix64| {
            let scale = 1.0 / ((cin * k * k) as f64).sqrt();
            let w = params.add(
                &format!("{name}.weight"),
                rng.uniform_tensor(&[cout, cin, k, k], -scale, scale),
            );
            let b = params.add(&format!("{name}.bias"), Tensor::zeros(&[cout]));
            ConvIds { w, b, stride, pad }
        };
        let backbone = [
            conv(&mut params, "backbone.0", 3, c0, 3, 2, 1, &mut rng),
            conv(&mut params, "backbone.1", c0, c1, 3, 2, 1, &mut rng),
            conv(&mut params, "backbone.2", c1, c2, 3, 2, 1, &mut rng),
        ];
        let depth_trunk = conv(&mut params, "depthnet.trunk", c, c, 3, 1, 1, &mut rng);
        let depth_head = conv(
            &mut params,
            "depthnet.depth_head",
            c,
            cfg.depth_bins.count,
            1,
            1,
            0,
            &mut rng,
        );
        let feat_head = conv(&mut params, "depthnet.feat_head", c, c, 1, 1, 0, &mut rng);
        let height_trunk = conv(&mut params, "heightnet.trunk", c, c, 3, 1, 1, &mut rng);
        let height_res1 = conv(&mut params, "heightnet.res.0", c, c, 3, 1, 1, &mut rng);
        let height_res2 = conv(&mut params, "heightnet.res.1", c, c, 3, 1, 1, &mut rng);
        let feat = cfg.feat_size();
        let hidden = cfg.da_hidden_width();
        let da = |params: &mut ParamStore,
                  name: &str,
                  dir: Direction,
                  len: usize,
                  rng: &mut SplitMix64| {
            let init = DAParams::init(dir, len, hidden, rng);
            DaIds {
                w1: params.add(&format!("{name}.mlp.0.weight"), init.mlp[0].weight.clone()),
                b1: params.add(&format!("{name}.mlp.0.bias"), init.mlp[0].bias.clone()),
                w2: params.add(&format!("{name}.mlp.1.weight"), init.mlp[1].weight.clone()),
                b2: params.add(&format!("{name}.mlp.1.bias"), init.mlp[1].bias.clone()),
                pos: params.add(&format!("{name}.pos"), init.pos.clone()),
                direction: dir,
            }
        };
        let height_da_h = da(
            &mut params,
            "heightnet.da_h",
            Direction::Horizontal,
            feat.0,
            &mut rng,
        );
        let height_da_v = da(
            &mut params,
            "heightnet.da_v",
            Direction::Vertical,
            feat.1,
            &mut rng,
        );
        let height_head = conv(
            &mut params,
            "heightnet.head",
            c,
            cfg.height_z(),
            1,
            1,
            0,
            &mut rng,
        );
        let dha = da(
            &mut params,
            "decoder.dha",
            Direction::Horizontal,
            cfg.height_z(),
            &mut rng,
        );
        let dba_h = da(
            &mut params,
            "decoder.dba_h",
            Direction::Horizontal,
            cfg.bev_grid.counts[1],
            &mut rng,
        );
        let dba_v = da(
            &mut params,
            "decoder.dba_v",
            Direction::Vertical,
            cfg.bev_grid.counts[0],
            &mut rng,
        );
        let fuse_proj = conv(
            &mut params,
            "decoder.fuse_proj",
            c * cfg.height_z(),
            c,
            1,
            1,
            0,
            &mut rng,
        );
        let occ_head = conv(
            &mut params,
            "decoder.occ_head",
            cfg.fused_channels(),
            cfg.classes * cfg.out_z,
            3,
            1,
            1,
            &mut rng,
        );
        let layers = Layers {
            backbone,
            depth_trunk,
            depth_head,
            feat_head,
            height_trunk,
            height_res1,
            height_res2,
            height_da_h,
            height_da_v,
            height_head,
            dha,
            dba_h,
            dba_v,
            fuse_proj,
            occ_head,
        };
        Ok(DaOccModel {
            cfg,
            params,
            layers,
        })
    }

    fn conv_fwd(&self, ids: ConvIds, x: &Tensor) -> Result<Tensor> {
        conv2d(
            x,
            self.params.value(ids.w),
            self.params.value(ids.b),
            ids.stride,
            ids.pad,
        )
    }

    fn conv_bwd(&mut self, ids: ConvIds, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let (gx, gw, gb) = conv2d_backward(x, self.params.value(ids.w), ids.stride, ids.pad, gy);
        self.params.accumulate(ids.w, &gw)?;
        self.params.accumulate(ids.b, &gb)?;
        Ok(gx)
    }

    fn da_params(&self, ids: DaIds) -> DAParams {
        DAParams {
            direction: ids.direction,
            mlp: vec![
                MlpLayer {
                    weight: self.params.value(ids.w1).clone(),
                    bias: self.params.value(ids.b1).clone(),
                },
                MlpLayer {
                    weight: self.params.value(ids.w2).clone(),
                    bias: self.params.value(ids.b2).clone(),
                },
            ],
            pos: self.params.value(ids.pos).clone(),
        }
    }

    fn da_accumulate(&mut self, ids: DaIds, grads: &crate::attention::DaGrads) -> Result<()> {
        self.params.accumulate(ids.w1, &grads.mlp[0].0)?;
        self.params.accumulate(ids.b1, &grads.mlp[0].1)?;
        self.params.accumulate(ids.w2, &grads.mlp[1].0)?;
        self.params.accumulate(ids.b2, &grads.mlp[1].1)?;
        self.params.accumulate(ids.pos, &grads.pos)?;
        Ok(())
    }

    /// Strided convolution stack producing the shared image features F_n.
    pub fn backbone_forward(&self, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(dim_err!("backbone wants [N,3,H,W] images, got {s:?}"));
        }
        if s[2] % BACKBONE_STRIDE != 0 || s[3] % BACKBONE_STRIDE != 0 {
            return Err(dim_err!(
                "image extents {}x{} not divisible by stride {BACKBONE_STRIDE}",
                s[2],
                s[3]
            ));
        }
        let mut x = images.clone();
        for ids in self.layers.backbone {
            x = relu(&self.conv_fwd(ids, &x)?);
        }
        Ok(x)
    }

    /// Shared trunk with two heads: softmax depth score and feature map.
    pub fn depthnet_forward(&self, f_n: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = relu(&self.conv_fwd(self.layers.depth_trunk, f_n)?);
        let d_logits = self.conv_fwd(self.layers.depth_head, &t)?;
        let d_pred = softmax(&d_logits, 1)?;
        let f_feat = self.conv_fwd(self.layers.feat_head, &t)?;
        Ok((d_pred, f_feat))
    }

    /// Trunk + residual block, with the final two blocks replaced by
    /// directional attention; emits the softmax height score.
    pub fn heightnet_forward(&self, f_n: &Tensor) -> Result<Tensor> {
        let t0 = relu(&self.conv_fwd(self.layers.height_trunk, f_n)?);
        let a1 = relu(&self.conv_fwd(self.layers.height_res1, &t0)?);
        let sum = t0.add(&self.conv_fwd(self.layers.height_res2, &a1)?)?;
        let mut x = relu(&sum);
        if self.cfg.use_encoder_da {
            let h = crate::attention::da_forward(&x, &self.da_params(self.layers.height_da_h))?;
            x = x.add(&h)?;
            let v = crate::attention::da_forward(&x, &self.da_params(self.layers.height_da_v))?;
            x = x.add(&v)?;
        }
        let h_logits = self.conv_fwd(self.layers.height_head, &x)?;
        softmax(&h_logits, 1)
    }

    /// Full forward pass with cached intermediates.
    pub fn forward_cached(
        &self,
        images: &Tensor,
        indices: &ViewIndices,
    ) -> Result<(ForwardOutputs, ForwardCache)> {
        let s = images.shape();
        if s.len() != 4 || s[0] != self.cfg.cameras || s[1] != 3 {
            return Err(dim_err!(
                "expected [{}, 3, {}, {}] images, got {s:?}",
                self.cfg.cameras,
                self.cfg.image_size.0,
                self.cfg.image_size.1
            ));
        }
        // Backbone.
        let mut bb_pre = Vec::with_capacity(3);
        let mut bb_act = Vec::with_capacity(3);
        let mut x = images.clone();
        for ids in self.layers.backbone {
            let pre = self.conv_fwd(ids, &x)?;
            x = relu(&pre);
            bb_pre.push(pre);
            bb_act.push(x.clone());
        }
        let f_n = &bb_act[2];

        // DepthNet.
        let dt_pre = self.conv_fwd(self.layers.depth_trunk, f_n)?;
        let dt_act = relu(&dt_pre);
        let d_logits = self.conv_fwd(self.layers.depth_head, &dt_act)?;
        let depth_score = softmax(&d_logits, 1)?;
        let f_feat = self.conv_fwd(self.layers.feat_head, &dt_act)?;

        // HeightNet.
        let ht_pre = self.conv_fwd(self.layers.height_trunk, f_n)?;
        let ht_act = relu(&ht_pre);
        let res_pre1 = self.conv_fwd(self.layers.height_res1, &ht_act)?;
        let res_a1 = relu(&res_pre1);
        let res_sum = ht_act.add(&self.conv_fwd(self.layers.height_res2, &res_a1)?)?;
        let res_out = relu(&res_sum);
        let (enc_h_in, enc_h_cache, enc_v_in, enc_v_cache, enc_out) = if self.cfg.use_encoder_da {
            let h_in = res_out.clone();
            let (h_da, h_cache) =
                da_forward_cached(&h_in, &self.da_params(self.layers.height_da_h))?;
            let v_in = h_in.add(&h_da)?;
            let (v_da, v_cache) =
                da_forward_cached(&v_in, &self.da_params(self.layers.height_da_v))?;
            let out = v_in.add(&v_da)?;
            (h_in, Some(h_cache), v_in, Some(v_cache), out)
        } else {
            (
                res_out.clone(),
                None,
                res_out.clone(),
                None,
                res_out.clone(),
            )
        };
        let h_logits = self.conv_fwd(self.layers.height_head, &enc_out)?;
        let height_score = softmax(&h_logits, 1)?;

        // View transformation.
        let c = self.cfg.feat_channels();
        let (gy, gx) = (self.cfg.bev_grid.counts[1], self.cfg.bev_grid.counts[0]);
        let f_bev =
            splat_bev(&f_feat, &depth_score, &indices.depth)?.into_reshape(&[1, c, gy, gx])?;
        let f_3d_raw = splat_height(&f_feat, &height_score, &indices.height)?;
        let hz = self.cfg.height_z();
        let (hy, hx) = (
            self.cfg.height_grid.counts[1],
            self.cfg.height_grid.counts[0],
        );
        let f_3d = f_3d_raw.into_reshape(&[1, c, hz, hy, hx])?;
        let f_sliced = slice_heightwise(&f_3d)?;

        // Decoder attention.
        let (f_bev_refined, dba_cache) = if self.cfg.use_dba {
            let (out, cache) = dba_forward_cached(
                &f_bev,
                &self.da_params(self.layers.dba_h),
                &self.da_params(self.layers.dba_v),
            )?;
            (out, Some(cache))
        } else {
            (f_bev.clone(), None)
        };
        let (f_height, dha_cache) = if self.cfg.use_dha {
            let (out, cache) =
                dha_forward_cached(&f_sliced, &self.da_params(self.layers.dha), hy, hx)?;
            (out, Some(cache))
        } else {
            (pack_height_channels(&f_3d)?, None)
        };

        // Fusion and occupancy head.
        let resized = bilinear_resize(&f_height, gy, gx)?;
        let proj = self.conv_fwd(self.layers.fuse_proj, &resized)?;
        let fused = match self.cfg.fusion {
            FusionMode::ConcatProject => concat_channels(&proj, &f_bev_refined)?,
            FusionMode::AddProject => proj.add(&f_bev_refined)?,
        };
        let head_out = self.conv_fwd(self.layers.occ_head, &fused)?;
        let logits = head_out.into_reshape(&[1, self.cfg.classes, self.cfg.out_z, gy, gx])?;

        let outputs = ForwardOutputs {
            depth_score,
            height_score,
            f_bev: f_bev.clone(),
            f_3d,
            f_bev_refined,
            f_height: f_height.clone(),
            fused: fused.clone(),
            logits,
        };
        let cache = ForwardCache {
            images: images.clone(),
            bb_pre,
            bb_act,
            dt_pre,
            dt_act,
            f_feat,
            ht_pre,
            ht_act,
            res_pre1,
            res_a1,
            res_sum,

            enc_h_in,
            enc_h_cache,
            enc_v_in,
            enc_v_cache,
            enc_out,
            f_sliced,
            dba_cache,
            dha_cache,
            proj_in: resized,
            head_in: fused,
        };
        Ok((outputs, cache))
    }

    pub fn forward(&self, images: &Tensor, indices: &ViewIndices) -> Result<ForwardOutputs> {
        self.forward_cached(images, indices).map(|(o, _)| o)
    }

    /// Backward through the whole pipeline, accumulating parameter
    /// gradients in the store.
    pub fn backward(
        &mut self,
        outputs: &ForwardOutputs,
        cache: &ForwardCache,
        indices: &ViewIndices,
        grads: &LossGrads,
    ) -> Result<()> {
        let c = self.cfg.feat_channels();
        let (gy, gx) = (self.cfg.bev_grid.counts[1], self.cfg.bev_grid.counts[0]);
        let hz = self.cfg.height_z();
        let (hy, hx) = (
            self.cfg.height_grid.counts[1],
            self.cfg.height_grid.counts[0],
        );

        // Occupancy head.
        let g_head_out = grads
            .d_logits
            .reshape(&[1, self.cfg.classes * self.cfg.out_z, gy, gx])?;
        let g_fused = self.conv_bwd(self.layers.occ_head, &cache.head_in, &g_head_out)?;

        // Fusion.
        let (g_proj, g_bev_refined) = match self.cfg.fusion {
            FusionMode::ConcatProject => split_channels(&g_fused, c)?,
            FusionMode::AddProject => (g_fused.clone(), g_fused),
        };
        let g_resized = self.conv_bwd(self.layers.fuse_proj, &cache.proj_in, &g_proj)?;
        let g_f_height = bilinear_resize_backward(&g_resized, hy, hx);

        // Height branch of the decoder.
        let g_sliced = if self.cfg.use_dha {
            let params = self.da_params(self.layers.dha);
            let cache_dha = cache.dha_cache.as_ref().expect("dha cache present");
            let da_grads = dha_backward(&cache.f_sliced, &params, cache_dha, &g_f_height)?;
            self.da_accumulate(self.layers.dha, &da_grads)?;
            da_grads.input
        } else {
            g_f_height.reshape(cache.f_sliced.shape())?
        };
        let g_f3d_flat = g_sliced.reshape(&[c, hz, hy, hx])?;

        // BEV branch of the decoder.
        let g_f_bev = if self.cfg.use_dba {
            let ph = self.da_params(self.layers.dba_h);
            let pv = self.da_params(self.layers.dba_v);
            let cache_dba = cache.dba_cache.as_ref().expect("dba cache present");
            let (gh, gv) = dba_backward(&outputs.f_bev, &ph, &pv, cache_dba, &g_bev_refined)?;
            self.da_accumulate(self.layers.dba_h, &gh)?;
            self.da_accumulate(self.layers.dba_v, &gv)?;
            gh.input.add(&gv.input)?
        } else {
            g_bev_refined
        };
        let g_f_bev_flat = g_f_bev.reshape(&[c, gy, gx])?;

        // Splats. The feature map feeds both, so the cotangents add.
        let (g_feat_h, g_hscore_splat) = splat_backward(
            &cache.f_feat,
            &outputs.height_score,
            &indices.height,
            &g_f3d_flat,
        )?;
        let (g_feat_d, g_dscore_splat) = splat_backward(
            &cache.f_feat,
            &outputs.depth_score,
            &indices.depth,
            &g_f_bev_flat,
        )?;
        let mut g_f_feat = g_feat_h;
        g_f_feat.add_assign(&g_feat_d)?;

        // Scores: loss gradient plus splat gradient, then through softmax.
        let mut g_dscore = grads.d_depth_score.clone();
        g_dscore.add_assign(&g_dscore_splat)?;
        let g_d_logits = softmax_backward(&outputs.depth_score, &g_dscore, 1);
        let mut g_hscore = grads.d_height_score.clone();
        g_hscore.add_assign(&g_hscore_splat)?;
        let g_h_logits = softmax_backward(&outputs.height_score, &g_hscore, 1);

        // HeightNet backward.
        let g_enc_out = self.conv_bwd(self.layers.height_head, &cache.enc_out, &g_h_logits)?;
        let g_res_out = if self.cfg.use_encoder_da {
            let pv = self.da_params(self.layers.height_da_v);
            let v_grads = da_backward(
                &cache.enc_v_in,
                &pv,
                cache.enc_v_cache.as_ref().expect("enc v cache"),
                &g_enc_out,
            )?;
            self.da_accumulate(self.layers.height_da_v, &v_grads)?;
            let mut g_v_in = g_enc_out.clone();
            g_v_in.add_assign(&v_grads.input)?;
            let ph = self.da_params(self.layers.height_da_h);
            let h_grads = da_backward(
                &cache.enc_h_in,
                &ph,
                cache.enc_h_cache.as_ref().expect("enc h cache"),
                &g_v_in,
            )?;
            self.da_accumulate(self.layers.height_da_h, &h_grads)?;
            let mut g = g_v_in;
            g.add_assign(&h_grads.input)?;
            g
        } else {
            g_enc_out
        };
        let g_res_sum = relu_backward(&cache.res_sum, &g_res_out);
        let g_a1 = self.conv_bwd(self.layers.height_res2, &cache.res_a1, &g_res_sum)?;
        let g_res_pre1 = relu_backward(&cache.res_pre1, &g_a1);
        let mut g_ht_act = self.conv_bwd(self.layers.height_res1, &cache.ht_act, &g_res_pre1)?;
        g_ht_act.add_assign(&g_res_sum)?; // residual skip
        let g_ht_pre = relu_backward(&cache.ht_pre, &g_ht_act);
        let g_fn_height = self.conv_bwd(self.layers.height_trunk, &cache.bb_act[2], &g_ht_pre)?;

        // DepthNet backward (two heads share the trunk).
        let g_t_from_feat = self.conv_bwd(self.layers.feat_head, &cache.dt_act, &g_f_feat)?;
        let g_t_from_depth = self.conv_bwd(self.layers.depth_head, &cache.dt_act, &g_d_logits)?;
        let mut g_dt_act = g_t_from_feat;
        g_dt_act.add_assign(&g_t_from_depth)?;
        let g_dt_pre = relu_backward(&cache.dt_pre, &g_dt_act);
        let g_fn_depth = self.conv_bwd(self.layers.depth_trunk, &cache.bb_act[2], &g_dt_pre)?;

        // Backbone backward.
        let mut g_x = g_fn_height;
        g_x.add_assign(&g_fn_depth)?;
        for stage in (0..3).rev() {
            let g_pre = relu_backward(&cache.bb_pre[stage], &g_x);
            let input = if stage == 0 {
                &cache.images
            } else {
                &cache.bb_act[stage - 1]
            };
            g_x = self.conv_bwd(self.layers.backbone[stage], input, &g_pre)?;
        }
        Ok(())
    }
}

/// Channel concatenation of two `[B, C?, H, W]` maps.
fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
        return Err(dim_err!("concat_channels shape mismatch: {sa:?} vs {sb:?}"));
    }
    let (bn, ca, cb, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
    let plane = h * w;
    let mut out = vec![0.0f64; bn * (ca + cb) * plane];
    for bi in 0..bn {
        let dst = &mut out[bi * (ca + cb) * plane..];
        dst[..ca * plane].copy_from_slice(&a.data()[bi * ca * plane..(bi + 1) * ca * plane]);
        dst[ca * plane..(ca + cb) * plane]
            .copy_from_slice(&b.data()[bi * cb * plane..(bi + 1) * cb * plane]);
    }
    Tensor::from_vec(&[bn, ca + cb, h, w], out)
}

/// Split a channel-concatenated cotangent back into its two parts.
fn split_channels(g: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let s = g.shape();
    let (bn, ctot, h, w) = (s[0], s[1], s[2], s[3]);
    if first >= ctot {
        return Err(dim_err!("cannot split {first} channels out of {ctot}"));
    }
    let second = ctot - first;
    let plane = h * w;
    let mut ga = vec![0.0f64; bn * first * plane];
    let mut gb = vec![0.0f64; bn * second * plane];
    for bi in 0..bn {
        let src = &g.data()[bi * ctot * plane..(bi + 1) * ctot * plane];
        ga[bi * first * plane..(bi + 1) * first * plane].copy_from_slice(&src[..first * plane]);
        gb[bi * second * plane..(bi + 1) * second * plane].copy_from_slice(&src[first * plane..]);
    }
    Ok((
        Tensor::from_vec(&[bn, first, h, w], ga)?,
        Tensor::from_vec(&[bn, second, h, w], gb)?,
    ))
}

/// Standalone fusion op: resize the packed height features to the BEV
/// extent, project channels with a 1x1 convolution, then fuse per mode.
pub fn fuse_features(
    f_height: &Tensor,
    f_bev: &Tensor,
    proj_w: &Tensor,
    proj_b: &Tensor,
    mode: FusionMode,
) -> Result<Tensor> {
    let (h, w) = (f_bev.shape()[2], f_bev.shape()[3]);
    let resized = bilinear_resize(f_height, h, w)?;
    let proj = conv2d(&resized, proj_w, proj_b, 1, 0)?;
    match mode {
        FusionMode::ConcatProject => concat_channels(&proj, f_bev),
        FusionMode::AddProject => proj.add(f_bev),
    }
}

/// Standalone occupancy head: convolution to `classes * z_out` channels,
/// then reshape so output channel `cls * z_out + z` becomes (cls, z).
pub fn occupancy_head(
    fused: &Tensor,
    w: &Tensor,
    b: &Tensor,
    classes: usize,
    z_out: usize,
) -> Result<Tensor> {
    let out = conv2d(fused, w, b, 1, 1)?;
    let s = out.shape().to_vec();
    if s[1] != classes * z_out {
        return Err(dim_err!(
            "head emitted {} channels, want {}",
            s[1],
            classes * z_out
        ));
    }
    out.into_reshape(&[s[0], classes, z_out, s[2], s[3]])
}

/// Weighted sum of all supervision terms plus the gradients the backward
/// pass needs. Terms with no valid elements contribute zero and are
/// flagged in the breakdown.
pub fn total_loss(
    outputs: &ForwardOutputs,
    targets: &SceneTargets,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, LossGrads)> {
    let mask = if cfg.use_visibility_mask {
        targets.visibility.as_deref()
    } else {
        None
    };
    let depth = bce_masked(
        &outputs.depth_score,
        &targets.depth_target,
        &targets.depth_valid,
    )?;
    let height = bce_masked(
        &outputs.height_score,
        &targets.height_target,
        &targets.height_valid,
    )?;
    let ce = ce_from_logits(&outputs.logits, &targets.labels, mask)?;
    let probs = softmax(&outputs.logits, 1)?;
    let sem = sem_scal(&probs, &targets.labels, mask)?;
    let geo = geo_scal(&probs, &targets.labels, mask, cfg.empty_class)?;

    let raw = [depth.value, height.value, ce.value, sem.value, geo.value];
    let scored = [
        depth.scored,
        height.scored,
        ce.scored,
        sem.scored,
        geo.scored,
    ];
    let weighted = [
        cfg.lambdas[0] * raw[0],
        cfg.lambdas[1] * raw[1],
        cfg.lambdas[2] * raw[2],
        cfg.lambdas[3] * raw[3],
        cfg.lambdas[4] * raw[4],
    ];
    let total = weighted.iter().sum();

    // d logits = lambda3 * dCE + softmax-back(lambda4 * dSem + lambda5 * dGeo)
    let mut g_probs = sem.grad.scale(cfg.lambdas[3]);
    g_probs.add_assign(&geo.grad.scale(cfg.lambdas[4]))?;
    let mut d_logits = softmax_backward(&probs, &g_probs, 1);
    d_logits.add_assign(&ce.grad.scale(cfg.lambdas[2]))?;

    Ok((
        LossBreakdown {
            total,
            weighted,
            raw,
            scored,
            lambdas: cfg.lambdas,
        },
        LossGrads {
            d_logits,
            d_depth_score: depth.grad.scale(cfg.lambdas[0]),
            d_height_score: height.grad.scale(cfg.lambdas[1]),
        },
    ))
}

/// Evenly spaced outward-looking camera ring matching the model config.
pub fn default_rigs(cfg: &ModelConfig) -> Vec<crate::geometry::CameraRig> {
    (0..cfg.cameras)
        .map(|i| crate::geometry::ring_rig(i, cfg.cameras, 1.6, 8.0, 100.0, cfg.image_size))
        .collect()
}

/// Deterministic random images and targets, for gradient checks and tests.
pub fn synthetic_sample(cfg: &ModelConfig, rng: &mut SplitMix64) -> (Tensor, SceneTargets) {
    let (h, w) = cfg.image_size;
    let (fh, fw) = cfg.feat_size();
    let images = rng.uniform_tensor(&[cfg.cameras, 3, h, w], 0.0, 1.0);
    let n = cfg.cameras;
    let d = cfg.depth_bins.count;
    let zh = cfg.height_z();
    let plane = fh * fw;
    let mut depth_target = Tensor::zeros(&[n, d, fh, fw]);
    let mut height_target = Tensor::zeros(&[n, zh, fh, fw]);
    let mut depth_valid = vec![false; n * plane];
    for ni in 0..n {
        for pix in 0..plane {
            if rng.next_f64() < 0.8 {
                depth_valid[ni * plane + pix] = true;
                let db = rng.below(d);
                depth_target.data_mut()[(ni * d + db) * plane + pix] = 1.0;
                let hb = rng.below(zh);
                height_target.data_mut()[(ni * zh + hb) * plane + pix] = 1.0;
            }
        }
    }
    let height_valid = depth_valid.clone();
    let voxels = cfg.out_z * cfg.bev_grid.counts[1] * cfg.bev_grid.counts[0];
    let labels: Vec<u8> = (0..voxels).map(|_| rng.below(cfg.classes) as u8).collect();
    let visibility = if cfg.use_visibility_mask {
        Some((0..voxels).map(|_| rng.next_f64() < 0.9).collect())
    } else {
        None
    };
    (
        images,
        SceneTargets {
            depth_target,
            depth_valid,
            height_target,
            height_valid,
            labels,
            visibility,
        },
    )
}

/// Central-difference check of the entire model: every parameter group is
/// probed coordinate by coordinate (up to `per_group_limit` coordinates per
/// tensor, 0 meaning all) against the analytic gradients of the total loss.
/// Returns the max relative error, or the offending coordinates.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    eps: f64,
    tolerance: f64,
    per_group_limit: usize,
) -> Result<f64> {
    let mut model = DaOccModel::new(cfg.clone())?;
    let rigs = default_rigs(cfg);
    let indices = build_view_indices(cfg, &rigs)?;
    let mut rng = SplitMix64::new(cfg.seed ^ 0x6AD_C4EC);
    let (images, targets) = synthetic_sample(cfg, &mut rng);

    let (outputs, cache) = model.forward_cached(&images, &indices)?;
    let (_, grads) = total_loss(&outputs, &targets, cfg)?;
    model.params.zero_grads();
    model.backward(&outputs, &cache, &indices, &grads)?;
    let analytic: Vec<Tensor> = model
        .params
        .ids()
        .map(|id| model.params.grad(id).clone())
        .collect();

    let loss_of = |model: &DaOccModel| -> Result<f64> {
        let outputs = model.forward(&images, &indices)?;
        Ok(total_loss(&outputs, &targets, cfg)?.0.total)
    };

    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    let ids: Vec<_> = model.params.ids().collect();
    for (gi, id) in ids.into_iter().enumerate() {
        let len = model.params.value(id).len();
        let step = if per_group_limit == 0 || len <= per_group_limit {
            1
        } else {
            len.div_ceil(per_group_limit)
        };
        let mut coord = 0;
        while coord < len {
            let orig = model.params.value(id).data()[coord];
            model.params.value_mut(id).data_mut()[coord] = orig + eps;
            let up = loss_of(&model)?;
            model.params.value_mut(id).data_mut()[coord] = orig - eps;
            let dn = loss_of(&model)?;
            model.params.value_mut(id).data_mut()[coord] = orig;
            let numeric = (up - dn) / (2.0 * eps);
            let a = analytic[gi].data()[coord];
            let rel = crate::gradcheck::rel_err(a, numeric);
            max_rel = max_rel.max(rel);
            if rel > tolerance {
                failures.push(crate::error::CheckFailure {
                    input: gi,
                    coord,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
            coord += step;
        }
    }
    if failures.is_empty() {
        Ok(max_rel)
    } else {
        Err(Error::CheckFailed {
            op: "model".into(),
            failures,
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub loss: LossBreakdown,
}

/// One optimization step: forward, loss, backward, update. Aborts with a
/// term breakdown if the loss goes non-finite.
pub fn train_step(
    model: &mut DaOccModel,
    indices: &ViewIndices,
    images: &Tensor,
    targets: &SceneTargets,
    opt: &mut AdamW,
) -> Result<StepMetrics> {
    let (outputs, cache) = model.forward_cached(images, indices)?;
    let (breakdown, grads) = total_loss(&outputs, targets, &model.cfg)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss, aborting step:\n{}",
            breakdown.describe()
        )));
    }
    model.params.zero_grads();
    model.backward(&outputs, &cache, indices, &grads)?;
    opt.step(&mut model.params);
    Ok(StepMetrics { loss: breakdown })
}
