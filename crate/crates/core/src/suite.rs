//! Runnable verification suites: the gradient-check matrix over every
//! differentiable operation (plus the end-to-end miniature model) and the
//! oracle comparisons pitting each optimized kernel against its naive
//! reference. Both return structured results for the command line and the
//! acceptance tests.

use crate::attention::{
    da_apply, da_apply_backward, da_backward, da_forward, da_forward_cached, DAParams, Direction,
};
use crate::error::Result;
use crate::geometry::{
    back_project, build_height_map, discretize_supervision, project_point, ring_rig, PixelMap,
    PointCloud, RigidTransform,
};
use crate::gradcheck::GradCheck;
use crate::grid::{BinSpec, GridSpec};
use crate::loss::{bce_masked, ce_from_logits, geo_scal, sem_scal};
use crate::metrics::{miou, OccupancyGrid};
use crate::model::{gradcheck_model, ModelConfig};
use crate::nn::{bilinear_resize, bilinear_resize_backward, conv2d, conv2d_backward};
use crate::ops::{self, MlpLayer};
use crate::oracles;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::view::{compute_ranks, splat_backward, splat_bev, splat_height, Frustum, OUT_OF_GRID};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from(name: &str, outcome: std::result::Result<String, String>) -> CheckResult {
        match outcome {
            Ok(detail) => CheckResult {
                name: name.into(),
                passed: true,
                detail,
            },
            Err(detail) => CheckResult {
                name: name.into(),
                passed: false,
                detail,
            },
        }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn render_results(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "[{}] {} — {}\n",
            if r.passed { "pass" } else { "FAIL" },
            r.name,
            r.detail
        ));
    }
    s
}

fn grad_result(name: &str, run: impl FnOnce() -> Result<f64>) -> CheckResult {
    CheckResult::from(
        name,
        run()
            .map(|max| format!("max rel err {max:.3e}"))
            .map_err(|e| e.to_string()),
    )
}

/// A random frustum over a small grid: most points inside, some outside.
fn random_splat_instance(
    rng: &mut SplitMix64,
    cameras: usize,
    bins: usize,
    feat: (usize, usize),
    grid: &GridSpec,
) -> (Frustum, Tensor, Tensor) {
    let n_points = cameras * bins * feat.0 * feat.1;
    let b = &grid.bounds;
    let points = (0..n_points)
        .map(|_| {
            if rng.next_f64() < 0.85 {
                [
                    rng.uniform(b[0], b[3]),
                    rng.uniform(b[1], b[4]),
                    rng.uniform(b[2], b[5]),
                ]
            } else {
                [b[3] + 1.0 + rng.next_f64(), 0.0, 0.0]
            }
        })
        .collect();
    let frustum = Frustum {
        points,
        valid: vec![true; n_points],
        cameras,
        bins,
        feat_h: feat.0,
        feat_w: feat.1,
    };
    let feat_t = rng.uniform_tensor(&[cameras, 3, feat.0, feat.1], -1.0, 1.0);
    let score_t = rng.uniform_tensor(&[cameras, bins, feat.0, feat.1], 0.0, 1.0);
    (frustum, feat_t, score_t)
}

/// The gradient-check matrix: every differentiable op at (eps, tolerance),
/// then the miniature end-to-end model at ten times the tolerance.
pub fn gradcheck_suite(eps: f64, tolerance: f64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = SplitMix64::new(0x6AD5);

    {
        let x = rng.uniform_tensor(&[2, 7], -3.0, 3.0);
        results.push(grad_result("softmax", || {
            let fwd = |xs: &[Tensor]| ops::softmax(&xs[0], 1);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                let y = ops::softmax(&xs[0], 1)?;
                Ok(vec![ops::softmax_backward(&y, g, 1)])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("softmax", &[x])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let x = rng.uniform_tensor(&[2, 3, 4, 5], -1.0, 1.0);
        results.push(grad_result("avgpool_axis", || {
            let fwd = |xs: &[Tensor]| ops::avgpool_axis(&xs[0], 2);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                Ok(vec![ops::avgpool_axis_backward(g, xs[0].shape(), 2)])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("avgpool_axis", &[x])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let x = rng.uniform_tensor(&[2, 3, 9], -1.0, 1.0);
        let k = rng.uniform_tensor(&[2, 3, 4], -1.0, 1.0);
        results.push(grad_result("conv1d_depthwise", || {
            let fwd = |xs: &[Tensor]| ops::conv1d_depthwise(&xs[0], &xs[1]);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                let (gx, gk) = ops::conv1d_depthwise_backward(&xs[0], &xs[1], g);
                Ok(vec![gx, gk])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("conv1d_depthwise", &[x, k])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let inputs = vec![
            rng.uniform_tensor(&[2, 4], -1.0, 1.0),
            rng.uniform_tensor(&[5, 4], -1.0, 1.0),
            rng.uniform_tensor(&[5], -1.0, 1.0),
            rng.uniform_tensor(&[3, 5], -1.0, 1.0),
            rng.uniform_tensor(&[3], -1.0, 1.0),
        ];
        results.push(grad_result("mlp_forward", || {
            let rebuild = |xs: &[Tensor]| {
                vec![
                    MlpLayer {
                        weight: xs[1].clone(),
                        bias: xs[2].clone(),
                    },
                    MlpLayer {
                        weight: xs[3].clone(),
                        bias: xs[4].clone(),
                    },
                ]
            };
            let fwd = move |xs: &[Tensor]| ops::mlp_forward(&xs[0], &rebuild(xs));
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let layers = rebuild(xs);
                let (_, cache) = ops::mlp_forward_cached(&xs[0], &layers)?;
                let (gx, grads) = ops::mlp_backward(&layers, &cache, g);
                let mut out = vec![gx];
                for (gw, gb) in grads {
                    out.push(gw);
                    out.push(gb);
                }
                Ok(out)
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("mlp_forward", &inputs)
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let x = rng.uniform_tensor(&[1, 2, 6, 6], -1.0, 1.0);
        let w = rng.uniform_tensor(&[3, 2, 3, 3], -1.0, 1.0);
        let b = rng.uniform_tensor(&[3], -1.0, 1.0);
        results.push(grad_result("conv2d", || {
            let fwd = |xs: &[Tensor]| conv2d(&xs[0], &xs[1], &xs[2], 2, 1);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                let (gx, gw, gb) = conv2d_backward(&xs[0], &xs[1], 2, 1, g);
                Ok(vec![gx, gw, gb])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("conv2d", &[x, w, b])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let x = rng.uniform_tensor(&[1, 2, 5, 4], -1.0, 1.0);
        results.push(grad_result("bilinear_resize", || {
            let fwd = |xs: &[Tensor]| bilinear_resize(&xs[0], 9, 7);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                Ok(vec![bilinear_resize_backward(
                    g,
                    xs[0].shape()[2],
                    xs[0].shape()[3],
                )])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("bilinear_resize", &[x])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let x = rng.uniform_tensor(&[1, 2, 5, 3], -1.0, 1.0);
        let k = rng.uniform_tensor(&[1, 2, 5], -1.0, 1.0);
        let p = rng.uniform_tensor(&[5], -0.5, 0.5);
        results.push(grad_result("da_apply", || {
            let fwd = |xs: &[Tensor]| da_apply(&xs[0], &xs[1], &xs[2], 2);
            let vjp = |xs: &[Tensor], g: &Tensor| {
                let (gx, gk, gp) = da_apply_backward(&xs[0], &xs[1], &xs[2], 2, g)?;
                Ok(vec![gx, gk, gp])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("da_apply", &[x, k, p])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let params = DAParams::init(Direction::Vertical, 4, 3, &mut rng);
        let x = rng.uniform_tensor(&[1, 2, 3, 4], -1.0, 1.0);
        let inputs = vec![
            x,
            params.mlp[0].weight.clone(),
            params.mlp[0].bias.clone(),
            params.mlp[1].weight.clone(),
            params.mlp[1].bias.clone(),
            rng.uniform_tensor(&[1, 4], -0.5, 0.5),
        ];
        results.push(grad_result("da_forward", || {
            let rebuild = |xs: &[Tensor]| DAParams {
                direction: Direction::Vertical,
                mlp: vec![
                    MlpLayer {
                        weight: xs[1].clone(),
                        bias: xs[2].clone(),
                    },
                    MlpLayer {
                        weight: xs[3].clone(),
                        bias: xs[4].clone(),
                    },
                ],
                pos: xs[5].clone(),
            };
            let fwd = move |xs: &[Tensor]| da_forward(&xs[0], &rebuild(xs));
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let p = rebuild(xs);
                let (_, cache) = da_forward_cached(&xs[0], &p)?;
                let grads = da_backward(&xs[0], &p, &cache, g)?;
                Ok(vec![
                    grads.input,
                    grads.mlp[0].0.clone(),
                    grads.mlp[0].1.clone(),
                    grads.mlp[1].0.clone(),
                    grads.mlp[1].1.clone(),
                    grads.pos,
                ])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("da_forward", &inputs)
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let grid = GridSpec::new([0.0, 0.0, 0.0, 4.0, 4.0, 1.0], [4, 4, 1]).unwrap();
        let (frustum, feat, score) = random_splat_instance(&mut rng, 1, 3, (2, 2), &grid);
        let index = compute_ranks(&frustum, &grid);
        results.push(grad_result("splat_bev", || {
            let idx = index.clone();
            let fwd = move |xs: &[Tensor]| splat_bev(&xs[0], &xs[1], &idx);
            let idx2 = index.clone();
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let (gf, gs) = splat_backward(&xs[0], &xs[1], &idx2, g)?;
                Ok(vec![gf, gs])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("splat_bev", &[feat, score])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let grid = GridSpec::new([0.0, 0.0, 0.0, 4.0, 4.0, 4.0], [4, 4, 4]).unwrap();
        let (frustum, feat, score) = random_splat_instance(&mut rng, 2, 4, (2, 2), &grid);
        let index = compute_ranks(&frustum, &grid);
        results.push(grad_result("splat_height", || {
            let idx = index.clone();
            let fwd = move |xs: &[Tensor]| splat_height(&xs[0], &xs[1], &idx);
            let idx2 = index.clone();
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let (gf, gs) = splat_backward(&xs[0], &xs[1], &idx2, g)?;
                Ok(vec![gf, gs])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps,
                tolerance,
            }
            .run("splat_height", &[feat, score])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        // Loss terms as scalar maps of logits.
        let logits = rng.uniform_tensor(&[1, 3, 2, 2, 2], -1.0, 1.0);
        let labels = vec![0u8, 1, 2, 0, 1, 2, 0, 1];
        let labels2 = labels.clone();
        results.push(grad_result("losses(ce+sem+geo)", || {
            let fwd = move |xs: &[Tensor]| {
                let ce = ce_from_logits(&xs[0], &labels, None)?;
                let p = ops::softmax(&xs[0], 1)?;
                let sem = sem_scal(&p, &labels, None)?;
                let geo = geo_scal(&p, &labels, None, 2)?;
                Ok(Tensor::scalar(ce.value + sem.value + geo.value))
            };
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let s = g.data()[0];
                let ce = ce_from_logits(&xs[0], &labels2, None)?;
                let p = ops::softmax(&xs[0], 1)?;
                let sem = sem_scal(&p, &labels2, None)?;
                let geo = geo_scal(&p, &labels2, None, 2)?;
                let mut gp = sem.grad;
                gp.add_assign(&geo.grad)?;
                let mut gl = ops::softmax_backward(&p, &gp, 1);
                gl.add_assign(&ce.grad)?;
                Ok(vec![gl.scale(s)])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps: eps.min(1e-6),
                tolerance,
            }
            .run("losses", &[logits])
            .map(|r| r.max_rel_err())
        }));
    }
    {
        let probs = ops::softmax(&rng.uniform_tensor(&[1, 3, 2, 2], -1.0, 1.0), 1).unwrap();
        let mut target = Tensor::zeros(&[1, 3, 2, 2]);
        for pix in 0..4 {
            target.data_mut()[(pix % 3) * 4 + pix] = 1.0;
        }
        let valid = vec![true, true, false, true];
        let (t2, v2) = (target.clone(), valid.clone());
        results.push(grad_result("bce_masked", || {
            let fwd = move |xs: &[Tensor]| {
                let t = bce_masked(&xs[0], &target, &valid)?;
                Ok(Tensor::scalar(t.value))
            };
            let vjp = move |xs: &[Tensor], g: &Tensor| {
                let t = bce_masked(&xs[0], &t2, &v2)?;
                Ok(vec![t.grad.scale(g.data()[0])])
            };
            GradCheck {
                forward: &fwd,
                vjp: &vjp,
                eps: eps.min(1e-6),
                tolerance,
            }
            .run("bce_masked", &[probs])
            .map(|r| r.max_rel_err())
        }));
    }
    results.push(grad_result("model_end_to_end", || {
        gradcheck_model(&ModelConfig::mini(), eps, (tolerance * 10.0).max(1e-3), 0)
    }));
    results
}

fn ok_if(cond: bool, detail: String) -> std::result::Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Every optimized path against its independent brute-force reference.
pub fn oracle_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = SplitMix64::new(0x04AC_1E);

    {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let x = rng.uniform_tensor(&[2, 3, 9], -2.0, 2.0);
            let k = rng.uniform_tensor(&[2, 3, 5], -2.0, 2.0);
            let fast = ops::conv1d_depthwise(&x, &k).unwrap();
            worst = worst.max(fast.max_abs_diff(&oracles::naive_conv1d(&x, &k)));
        }
        results.push(CheckResult::from(
            "conv1d vs quadruple-loop",
            ok_if(worst < 1e-12, format!("max abs diff {worst:.3e}")),
        ));
    }
    {
        // Two-layer MLP against an inline matrix-product oracle.
        let layers = vec![
            MlpLayer {
                weight: rng.uniform_tensor(&[5, 4], -1.0, 1.0),
                bias: rng.uniform_tensor(&[5], -1.0, 1.0),
            },
            MlpLayer {
                weight: rng.uniform_tensor(&[3, 5], -1.0, 1.0),
                bias: rng.uniform_tensor(&[3], -1.0, 1.0),
            },
        ];
        let x = rng.uniform_tensor(&[4, 4], -1.0, 1.0);
        let y = ops::mlp_forward(&x, &layers).unwrap();
        let mut worst = 0.0f64;
        for b in 0..4 {
            let mut h = vec![0.0f64; 5];
            for (o, ho) in h.iter_mut().enumerate() {
                let mut s = layers[0].bias.at(&[o]);
                for i in 0..4 {
                    s += layers[0].weight.at(&[o, i]) * x.at(&[b, i]);
                }
                *ho = s.max(0.0);
            }
            for o in 0..3 {
                let mut s = layers[1].bias.at(&[o]);
                for (i, hi) in h.iter().enumerate() {
                    s += layers[1].weight.at(&[o, i]) * hi;
                }
                worst = worst.max((y.at(&[b, o]) - s).abs());
            }
        }
        results.push(CheckResult::from(
            "mlp vs matrix product",
            ok_if(worst < 1e-12, format!("max abs diff {worst:.3e}")),
        ));
    }
    {
        let x = rng.uniform_tensor(&[16], -40.0, 40.0);
        let y = ops::softmax(&x, 0).unwrap();
        let err = (y.sum() - 1.0).abs();
        results.push(CheckResult::from(
            "softmax unit sum",
            ok_if(err < 1e-12, format!("deviation {err:.3e}")),
        ));
    }
    {
        let mut worst = 0.0f64;
        for i in 0..10 {
            let grid = GridSpec::new(
                [0.0, 0.0, 0.0, 4.0, 4.0, 2.0],
                [8, 8, if i % 2 == 0 { 1 } else { 4 }],
            )
            .unwrap();
            let (frustum, feat, score) = random_splat_instance(&mut rng, 2, 3, (3, 3), &grid);
            let index = compute_ranks(&frustum, &grid);
            let fast = splat_height(&feat, &score, &index).unwrap();
            let naive = oracles::naive_splat(&feat, &score, &frustum, &grid);
            worst = worst.max(fast.max_abs_diff(&naive));
        }
        results.push(CheckResult::from(
            "segment splat vs naive scatter",
            ok_if(worst <= 1e-12, format!("max abs diff {worst:.3e}")),
        ));
    }
    {
        // Mass conservation: in-grid frustum with softmax scores.
        let grid = GridSpec::new([0.0, 0.0, 0.0, 4.0, 4.0, 4.0], [8, 8, 8]).unwrap();
        let n_points = 2 * 4 * 3 * 3;
        let points = (0..n_points)
            .map(|_| {
                [
                    rng.uniform(0.01, 3.99),
                    rng.uniform(0.01, 3.99),
                    rng.uniform(0.01, 3.99),
                ]
            })
            .collect();
        let frustum = Frustum {
            points,
            valid: vec![true; n_points],
            cameras: 2,
            bins: 4,
            feat_h: 3,
            feat_w: 3,
        };
        let index = compute_ranks(&frustum, &grid);
        let feat = rng.uniform_tensor(&[2, 3, 3, 3], -1.0, 1.0);
        let score = ops::softmax(&rng.uniform_tensor(&[2, 4, 3, 3], -1.0, 1.0), 1).unwrap();
        let out = splat_height(&feat, &score, &index).unwrap();
        let mut worst = 0.0f64;
        for c in 0..3 {
            let total: f64 = (0..8 * 8 * 8).map(|v| out.data()[c * 512 + v]).sum();
            let mut want = 0.0;
            for n in 0..2 {
                for pix in 0..9 {
                    want += feat.data()[(n * 3 + c) * 9 + pix];
                }
            }
            worst = worst.max((total - want).abs());
        }
        results.push(CheckResult::from(
            "splat mass conservation",
            ok_if(worst < 1e-9, format!("max channel deviation {worst:.3e}")),
        ));
    }
    {
        let f3d = rng.uniform_tensor(&[1, 8, 16, 32, 32], -1.0, 1.0);
        let fh = crate::view::slice_heightwise(&f3d).unwrap();
        let back = crate::view::unslice_heightwise(&fh, 32, 32).unwrap();
        let exact = back.data() == f3d.data() && fh.shape() == [1, 8, 16, 1024];
        results.push(CheckResult::from(
            "slice/unslice bijection",
            ok_if(exact, format!("output shape {:?}", fh.shape())),
        ));
    }
    {
        let mut worst = 0.0f64;
        for &l in &[1usize, 2, 3, 8, 16, 200] {
            for &axis in &[2usize, 3] {
                let shape = if axis == 2 {
                    [1, 2, l, 3]
                } else {
                    [1, 2, 3, l]
                };
                let x = rng.uniform_tensor(&shape, -1.0, 1.0);
                let k = rng.uniform_tensor(&[1, 2, l], -1.0, 1.0);
                let pos = Tensor::zeros(&[l]);
                let fast = da_apply(&x, &k, &pos, axis).unwrap();
                worst = worst.max(fast.max_abs_diff(&oracles::circular_conv(&x, &k, axis)));
            }
        }
        results.push(CheckResult::from(
            "directional conv vs circular oracle",
            ok_if(worst <= 1e-12, format!("max abs diff {worst:.3e}")),
        ));
    }
    {
        let rig = ring_rig(0, 2, 1.6, 10.0, 90.0, (12, 16));
        let mut worst_cases = 0usize;
        for _ in 0..5 {
            let points = (0..100)
                .map(|_| {
                    [
                        rng.uniform(-6.0, 6.0),
                        rng.uniform(-6.0, 6.0),
                        rng.uniform(0.0, 3.0),
                    ]
                })
                .collect();
            let cloud = PointCloud {
                points,
                sensor_to_ego: RigidTransform::identity(),
            };
            let map = build_height_map(&rig, &cloud);
            let (_, oracle_height, oracle_valid) = oracles::naive_min_depth_scan(&rig, &cloud);
            for i in 0..map.valid.len() {
                if map.valid[i] != oracle_valid[i]
                    || (map.valid[i] && map.values.data()[i] != oracle_height[i])
                {
                    worst_cases += 1;
                }
            }
        }
        results.push(CheckResult::from(
            "height map vs per-pixel min-depth scan",
            ok_if(
                worst_cases == 0,
                format!("{worst_cases} mismatching pixels"),
            ),
        ));
    }
    {
        // 16 uniform bins over [-1, 5.4]: 0.0 falls in bin 2.
        let bins = BinSpec::new(16, -1.0, 5.4).unwrap();
        let mut map = PixelMap::invalid(1, 1);
        map.values.data_mut()[0] = 0.0;
        map.valid[0] = true;
        let t = discretize_supervision(&map, &bins, true).unwrap();
        let ok = t.at(&[2, 0, 0]) == 1.0 && t.sum() == 1.0;
        results.push(CheckResult::from(
            "supervision bin index arithmetic",
            ok_if(ok, "value 0.0 in bin 2 of [-1, 5.4]/16".into()),
        ));
    }
    {
        let x = rng.uniform_tensor(&[1, 2, 8, 9], -1.0, 1.0);
        let y = bilinear_resize(&x, 20, 13).unwrap();
        let mut worst = 0.0f64;
        for oy in 0..20 {
            for ox in 0..13 {
                for c in 0..2 {
                    let want = oracles::naive_bilinear_at(&x, 0, c, oy, ox, 20, 13);
                    worst = worst.max((y.at(&[0, c, oy, ox]) - want).abs());
                }
            }
        }
        results.push(CheckResult::from(
            "bilinear resize vs naive interpolation",
            ok_if(worst < 1e-12, format!("max abs diff {worst:.3e}")),
        ));
    }
    {
        let grid = GridSpec::new([0.0, 0.0, 0.0, 4.0, 4.0, 4.0], [4, 4, 4]).unwrap();
        let mut mismatches = 0usize;
        for _ in 0..10 {
            let labels: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
            let labels2: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
            let mask: Vec<bool> = (0..64).map(|_| rng.next_f64() < 0.7).collect();
            let pred = OccupancyGrid::new(grid.clone(), 3, labels, None).unwrap();
            let gt = OccupancyGrid::new(grid.clone(), 3, labels2, Some(mask)).unwrap();
            for use_mask in [false, true] {
                let fast = miou(&pred, &gt, use_mask, Some(0), &[]).unwrap();
                let naive = oracles::naive_miou(&pred, &gt, use_mask, Some(0), &[]);
                if fast.miou.to_bits() != naive.to_bits() {
                    mismatches += 1;
                }
            }
        }
        results.push(CheckResult::from(
            "miou vs confusion-matrix oracle",
            ok_if(mismatches == 0, format!("{mismatches} mismatches")),
        ));
    }
    {
        let rig = ring_rig(1, 4, 1.5, 12.0, 100.0, (24, 32));
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = [
                rng.uniform(-5.0, 5.0),
                rng.uniform(-5.0, 5.0),
                rng.uniform(0.0, 3.0),
            ];
            if let Ok((u, v, d)) = project_point(&rig, p) {
                let q = back_project(&rig, u, v, d);
                for a in 0..3 {
                    worst = worst.max((p[a] - q[a]).abs());
                }
            }
        }
        results.push(CheckResult::from(
            "projection round trip",
            ok_if(worst < 1e-9, format!("max abs deviation {worst:.3e}")),
        ));
    }
    {
        // Rank assignment is independent of point order after sorting.
        let grid = GridSpec::new([0.0, 0.0, 0.0, 2.0, 2.0, 2.0], [4, 4, 4]).unwrap();
        let (frustum, _, _) = random_splat_instance(&mut rng, 1, 4, (2, 2), &grid);
        let index = compute_ranks(&frustum, &grid);
        let again = compute_ranks(&frustum, &grid);
        let idempotent = index.ranks == again.ranks && index.order == again.order;
        let sorted = index
            .order
            .windows(2)
            .all(|w| index.ranks[w[0] as usize] <= index.ranks[w[1] as usize]);
        let in_range = index
            .ranks
            .iter()
            .all(|&r| r == OUT_OF_GRID || (r as usize) < grid.num_voxels());
        results.push(CheckResult::from(
            "rank computation invariants",
            ok_if(
                idempotent && sorted && in_range,
                "idempotent, sorted, in-range".into(),
            ),
        ));
    }
    {
        use crate::scene::{sample_scene_spec, voxelize, SceneDistribution};
        let dist = SceneDistribution::toy(
            GridSpec::new([-8.0, -8.0, 0.0, 8.0, 8.0, 4.0], [32, 32, 8]).unwrap(),
            6,
            5,
            2,
            (16, 24),
        );
        let mut mismatches = 0usize;
        for seed in 0..2u64 {
            let spec = sample_scene_spec(&dist, seed);
            let fast = voxelize(&spec);
            let g = &spec.grid;
            let order = spec.paint_order();
            for z in 0..g.counts[2] {
                for y in 0..g.counts[1] {
                    for x in 0..g.counts[0] {
                        let c = g.voxel_center([x, y, z]);
                        let mut want = spec.empty_class;
                        for b in &order {
                            if b.contains(c) {
                                want = b.class;
                            }
                        }
                        if fast[(z * g.counts[1] + y) * g.counts[0] + x] != want {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
        results.push(CheckResult::from(
            "scene voxelization vs point-in-box",
            ok_if(mismatches == 0, format!("{mismatches} mismatching voxels")),
        ));
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suite_is_green() {
        let results = oracle_suite();
        assert!(all_passed(&results), "{}", render_results(&results));
        assert!(results.len() >= 12);
    }

    #[test]
    fn gradcheck_suite_core_ops_green() {
        // The end-to-end entry is exercised by the acceptance tests; keep
        // the unit run quick by checking the per-op entries here.
        let results: Vec<_> = gradcheck_suite(1e-5, 1e-4)
            .into_iter()
            .filter(|r| r.name != "model_end_to_end")
            .collect();
        assert!(all_passed(&results), "{}", render_results(&results));
    }
}
