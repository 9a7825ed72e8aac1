//! Analytic multiply-add accounting for the whole pipeline, derived purely
//! from the model configuration. Reported both as multiply-adds and as
//! FLOPs (2 x MACs) to avoid convention ambiguity.

use crate::model::{FusionMode, ModelConfig, BACKBONE_STRIDE};

#[derive(Clone, Debug)]
pub struct FlopsReport {
    /// (module name, multiply-adds), in pipeline order.
    pub entries: Vec<(String, u64)>,
}

impl FlopsReport {
    pub fn total_macs(&self) -> u64 {
        self.entries.iter().map(|(_, m)| m).sum()
    }

    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs()
    }

    pub fn macs_of(&self, prefix: &str) -> u64 {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, m)| m)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, macs) in &self.entries {
            s.push_str(&format!("{name} = {macs} MACs\n"));
        }
        s.push_str(&format!("total_macs = {}\n", self.total_macs()));
        s.push_str(&format!("total_flops = {}\n", self.total_flops()));
        s
    }
}

/// MACs of one dense convolution.
pub fn conv_macs(batch: usize, cin: usize, cout: usize, k: usize, oh: usize, ow: usize) -> u64 {
    (batch * cout * oh * ow) as u64 * (cin * k * k) as u64
}

/// MACs of one directional attention module on a (batch, c, l, other) map:
/// direction pooling, the kernel MLP, and the length-l dynamic convolution
/// applied at every position.
pub fn da_macs(batch: usize, c: usize, l: usize, other: usize, hidden: usize) -> u64 {
    let pool = (batch * c * l * other) as u64;
    let mlp = (batch * c) as u64 * (2 * l * hidden) as u64;
    let conv = (batch * c * other) as u64 * (l * l) as u64;
    pool + mlp + conv
}

/// Per-module multiply-add counts for a configuration. Splat counts assume
/// every frustum point lands in the grid (the shape-level upper bound).
pub fn count_flops(cfg: &ModelConfig) -> FlopsReport {
    let n = cfg.cameras;
    let (ih, iw) = cfg.image_size;
    let c = cfg.feat_channels();
    let [c0, c1, c2] = cfg.backbone_channels;
    let (fh, fw) = cfg.feat_size();
    let d = cfg.depth_bins.count;
    let zh = cfg.height_z();
    let (bx, by) = (cfg.bev_grid.counts[0], cfg.bev_grid.counts[1]);
    let (hx, hy) = (cfg.height_grid.counts[0], cfg.height_grid.counts[1]);
    let hidden = cfg.da_hidden_width();
    let mut entries = Vec::new();
    let mut push = |name: &str, macs: u64| entries.push((name.to_string(), macs));

    push("backbone.0", conv_macs(n, 3, c0, 3, ih / 2, iw / 2));
    push("backbone.1", conv_macs(n, c0, c1, 3, ih / 4, iw / 4));
    push(
        "backbone.2",
        conv_macs(n, c1, c2, 3, ih / BACKBONE_STRIDE, iw / BACKBONE_STRIDE),
    );

    push("depthnet.trunk", conv_macs(n, c, c, 3, fh, fw));
    push("depthnet.depth_head", conv_macs(n, c, d, 1, fh, fw));
    push("depthnet.feat_head", conv_macs(n, c, c, 1, fh, fw));

    push("heightnet.trunk", conv_macs(n, c, c, 3, fh, fw));
    push("heightnet.res.0", conv_macs(n, c, c, 3, fh, fw));
    push("heightnet.res.1", conv_macs(n, c, c, 3, fh, fw));
    if cfg.use_encoder_da {
        push("heightnet.da_h", da_macs(n, c, fh, fw, hidden));
        push("heightnet.da_v", da_macs(n, c, fw, fh, hidden));
    }
    push("heightnet.head", conv_macs(n, c, zh, 1, fh, fw));

    push("view.splat_bev", (n * d * fh * fw) as u64 * c as u64);
    push("view.splat_height", (n * zh * fh * fw) as u64 * c as u64);

    if cfg.use_dba {
        push("decoder.dba_h", da_macs(1, c, by, bx, hidden));
        push("decoder.dba_v", da_macs(1, c, bx, by, hidden));
    }
    if cfg.use_dha {
        push("decoder.dha", da_macs(1, c, zh, hy * hx, hidden));
    }

    // Fusion: bilinear resize (4 MACs per output value) + 1x1 projection.
    push("decoder.fuse_resize", (c * zh * by * bx) as u64 * 4);
    push("decoder.fuse_proj", conv_macs(1, c * zh, c, 1, by, bx));

    let cf = match cfg.fusion {
        FusionMode::ConcatProject => 2 * c,
        FusionMode::AddProject => c,
    };
    push(
        "decoder.occ_head",
        conv_macs(1, cf, cfg.classes * cfg.out_z, 3, by, bx),
    );

    FlopsReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_channels_quadruples_a_convolution() {
        let base = conv_macs(1, 8, 8, 3, 10, 10);
        let doubled = conv_macs(1, 16, 16, 3, 10, 10);
        assert_eq!(doubled, 4 * base);
    }

    #[test]
    fn da_conv_cost_linear_in_axis_length_per_output() {
        // Per output position the dynamic convolution applies l taps, so
        // the per-position cost grows linearly in the attended length.
        let per_out = |l: usize| {
            (da_macs(1, 4, l, 7, 4) - (4 * l * 7) as u64 - (4 * 2 * l * 4) as u64) / (l * 7) as u64
        };
        assert_eq!(per_out(16), 2 * per_out(8));
        assert_eq!(per_out(32), 2 * per_out(16));
    }

    #[test]
    fn pure_function_of_config() {
        let cfg = ModelConfig::toy();
        let a = count_flops(&cfg);
        let b = count_flops(&cfg);
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.total_flops(), 2 * a.total_macs());
    }

    #[test]
    fn height_grid_z_only_moves_height_branch_terms() {
        let mut c16 = ModelConfig::toy();
        c16.height_grid.counts[2] = 16;
        let mut c8 = ModelConfig::toy();
        c8.height_grid.counts[2] = 8;
        let r16 = count_flops(&c16);
        let r8 = count_flops(&c8);
        // Totals follow the grid direction: more height layers, more work.
        assert!(r16.total_macs() > r8.total_macs());
        // Non-height terms stay identical.
        let height_terms = [
            "heightnet.head",
            "view.splat_height",
            "decoder.dha",
            "decoder.fuse_resize",
            "decoder.fuse_proj",
        ];
        for ((n16, m16), (n8, m8)) in r16.entries.iter().zip(&r8.entries) {
            assert_eq!(n16, n8);
            if !height_terms.contains(&n16.as_str()) {
                assert_eq!(m16, m8, "{n16} moved");
            }
        }
    }

    #[test]
    fn ablation_flags_remove_their_terms() {
        let mut cfg = ModelConfig::toy();
        cfg.use_dha = false;
        cfg.use_dba = false;
        let report = count_flops(&cfg);
        assert_eq!(report.macs_of("decoder.dha"), 0);
        assert_eq!(report.macs_of("decoder.dba"), 0);
        assert!(report.total_macs() < count_flops(&ModelConfig::toy()).total_macs());
    }
}
