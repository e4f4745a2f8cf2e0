//! Finite-difference checks over every differentiable operation, the
//! composite layers, and a complete toy network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{total_loss, weight_map};
use crate::model::layers::BN_EPS;
use crate::model::{Ctx, Model, ModelConfig};
use crate::tensor::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::tensor::{BnMode, ConvSpec, Tape, Tensor, Var};

type Inputs = Vec<(String, Tensor<f64>)>;

fn named(items: Vec<(&str, Tensor<f64>)>) -> Inputs {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// Fixed, non-symmetric projection so every output coordinate carries a
/// distinct weight in the scalar loss.
fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i * 7919 % 97) as f64 / 97.0) - 0.4);
    let c = tape.constant(w)?;
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

/// Every tape operation and layer type, each reduced to a scalar.
pub fn layer_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut randn = |shape: &[usize], std: f64| Tensor::<f64>::randn(shape, std, &mut rng);

    let convs = [
        ("conv3x3_s1", ConvSpec::new(1, 1, 1), 4, 3),
        ("conv3x3_s2", ConvSpec::new(2, 1, 1), 4, 3),
        ("conv7x7_s2", ConvSpec::new(2, 3, 1), 2, 7),
        ("conv1x1_grouped", ConvSpec::new(1, 0, 2), 4, 1),
    ];
    for (name, spec, cin, k) in convs {
        let x = randn(&[2, cin, 7, 6], 1.0);
        let w = randn(&[4, cin / spec.groups, k, k], 0.5);
        let b = randn(&[4], 0.5);
        out.push(grad_check(name, named(vec![("x", x), ("w", w), ("b", b)]), cfg, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
            project(t, y)
        })?);
    }

    let x = randn(&[3, 2, 3, 3], 1.0);
    let (g, b) = (randn(&[2], 1.0), randn(&[2], 1.0));
    out.push(grad_check(
        "batchnorm_train",
        named(vec![("x", x.clone()), ("gamma", g.clone()), ("beta", b.clone())]),
        cfg,
        |t, v| {
            let (y, _) = t.batchnorm(v[0], v[1], v[2], BnMode::Train { eps: BN_EPS })?;
            project(t, y)
        },
    )?);
    let (rm, rv) = ([0.3, -0.2], [0.8, 1.7]);
    out.push(grad_check(
        "batchnorm_eval",
        named(vec![("x", x), ("gamma", g), ("beta", b)]),
        cfg,
        |t, v| {
            let mode = BnMode::Eval {
                running_mean: &rm,
                running_var: &rv,
                eps: BN_EPS,
            };
            let (y, _) = t.batchnorm(v[0], v[1], v[2], mode)?;
            project(t, y)
        },
    )?);

    let unary: [(&str, fn(&mut Tape<f64>, Var) -> Result<Var>); 8] = [
        ("relu", |t, x| t.relu(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("scale", |t, x| t.scale(x, -1.7)),
        ("resize_up", |t, x| t.resize(x, 9, 11)),
        ("resize_down", |t, x| t.resize(x, 3, 2)),
        ("avgpool_k3_pad", |t, x| t.avgpool(x, 3, 1, 1)),
        ("avgpool_k5_s2", |t, x| t.avgpool(x, 5, 2, 2)),
        ("gather_channels", |t, x| t.gather_channels(x, vec![3, 0, 2, 1, 0])),
    ];
    for (name, op) in unary {
        let x = randn(&[2, 4, 5, 6], 1.0);
        out.push(grad_check(name, named(vec![("x", x)]), cfg, |t, v| {
            let y = op(t, v[0])?;
            project(t, y)
        })?);
    }

    let (a, b) = (randn(&[2, 3, 4, 4], 1.0), randn(&[2, 3, 4, 4], 1.0));
    out.push(grad_check("add", named(vec![("a", a.clone()), ("b", b.clone())]), cfg, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y)
    })?);
    out.push(grad_check("mul", named(vec![("a", a.clone()), ("b", b.clone())]), cfg, |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y)
    })?);
    let c = randn(&[2, 1, 4, 4], 1.0);
    out.push(grad_check(
        "concat_split",
        named(vec![("a", a), ("b", b), ("c", c)]),
        cfg,
        |t, v| {
            let cat = t.concat(&[v[0], v[1], v[2]])?;
            let parts = t.split(cat, 7)?;
            let y = t.mul(parts[1], parts[5])?;
            let y = t.add(y, parts[6])?;
            project(t, y)
        },
    )?);
    let x = randn(&[2, 3, 4, 4], 1.0);
    out.push(grad_check("sum_mean", named(vec![("x", x)]), cfg, |t, v| {
        let s = t.sum(v[0])?;
        let q = t.mul(v[0], v[0])?;
        let m = t.mean(q)?;
        t.add(s, m)
    })?);

    let logits = randn(&[2, 1, 8, 8], 2.0);
    let g = Tensor::from_fn(&[2, 1, 8, 8], |i| ((i % 8 > 2 && (i / 8) % 8 < 5) as u8) as f64);
    let w = weight_map(&g)?;
    out.push(grad_check("weighted_bce", named(vec![("logits", logits.clone())]), cfg, |t, v| {
        t.weighted_bce(v[0], &g, &w)
    })?);
    out.push(grad_check("weighted_iou", named(vec![("logits", logits.clone())]), cfg, |t, v| {
        t.weighted_iou(v[0], &g, &w)
    })?);
    out.push(grad_check("mse", named(vec![("x", logits)]), cfg, |t, v| t.mse(v[0], &g))?);

    // composite layers with the toy model's own weights
    let model = Model::<f32>::new(ModelConfig::toy(), cfg.seed)?.cast::<f64>();
    let x = randn(&[2, 3, 8, 8], 1.0);
    let layer = model.arch.backbone[0].clone();
    out.push(grad_check("conv_br", named(vec![("x", x)]), cfg, |t, v| {
        let mut ctx = Ctx::new(t, &model.params, true)?;
        let y = ctx.conv_br(&layer, v[0])?;
        project(ctx.tape, y)
    })?);
    let (xr, xg) = (randn(&[2, 8, 6, 6], 1.0), randn(&[2, 8, 6, 6], 1.0));
    out.push(grad_check("git_transition", named(vec![("xr", xr), ("xg", xg)]), cfg, |t, v| {
        let mut ctx = Ctx::new(t, &model.params, true)?;
        let z = model.fuse_level(&mut ctx, 0, v[0], Some(v[1]))?;
        project(ctx.tape, z)
    })?);
    // Running statistics here: with batch statistics over an 8× upsampled
    // output, f64 roundoff in the loss exceeds the smallest gradients.
    // Train-mode normalization in the decoder is covered by `model_check`.
    let zt = [8, 4, 2].map(|s| randn(&[2, 8, s, s], 1.0));
    out.push(grad_check(
        "ncd_decode",
        named(vec![("z3", zt[0].clone()), ("z4", zt[1].clone()), ("z5", zt[2].clone())]),
        cfg,
        |t, v| {
            let mut ctx = Ctx::new(t, &model.params, false)?;
            let pc = model.ncd_decode(&mut ctx, [v[0], v[1], v[2]])?;
            project(ctx.tape, pc)
        },
    )?);
    Ok(out)
}

/// Image size used by [`model_check`].
pub const MODEL_CHECK_SIZE: usize = 64;

/// The full training objective of a toy network, differentiated with respect
/// to the input batch and every trainable tensor.
pub fn model_check(config: ModelConfig, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::<f32>::new(config, cfg.seed)?.cast::<f64>();
    let s = MODEL_CHECK_SIZE;
    let image = Tensor::<f64>::uniform(&[2, 3, s, s], 0.0, 1.0, &mut rng);
    let mask = Tensor::<f64>::from_fn(&[2, 1, s, s], |i| {
        let (y, x) = ((i / s) % s, i % s);
        (((y as f64 - 30.0).powi(2) + (x as f64 - 26.0).powi(2)) < 300.0) as u8 as f64
    });
    let label = Tensor::<f64>::from_fn(&[2, 1, s, s], |i| ((i * 31 % 17) < 3) as u8 as f64);
    let mut inputs = vec![("image".to_string(), image)];
    for i in model.params.weight_indices() {
        inputs.push((model.params.name(i).to_string(), model.params.get(i).clone()));
    }
    let name = if model.config.ablation.texture_branch {
        "full_model"
    } else {
        "full_model_base"
    };
    grad_check(name, inputs, cfg, |t, v| {
        let mut ctx = Ctx::with_vars(t, &model.params, &v[1..], true)?;
        let f = model.forward(&mut ctx, v[0])?;
        let texture = f.pg.map(|pg| (pg, &label));
        Ok(total_loss(ctx.tape, f.pc, &mask, texture)?.0.total)
    })
}

/// Layer suite at full coverage plus the toy network with a coordinate
/// budget per tensor.
pub fn full_suite(cfg: &GradCheckConfig, coords_per_tensor: usize) -> Result<Vec<GradCheckReport>> {
    let mut reports = layer_suite(cfg)?;
    let sampled = GradCheckConfig {
        max_coords_per_input: Some(coords_per_tensor),
        ..*cfg
    };
    reports.push(model_check(ModelConfig::toy(), &sampled)?);
    Ok(reports)
}
