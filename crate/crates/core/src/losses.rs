//! Training objective: weighted BCE + weighted IoU on the camouflage map and
//! MSE between the upsampled texture map and the object gradient label.

use crate::error::{shape_err, Result};
use crate::tensor::kernels::avgpool2d;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Window of the boundary-difficulty weighting.
pub const WEIGHT_KERNEL: usize = 31;
pub const WEIGHT_GAIN: f64 = 5.0;
/// Stride of the texture head relative to the input.
pub const TEXTURE_STRIDE: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub wbce: f64,
    pub wiou: f64,
    pub mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.wbce, self.wiou, self.mse, self.total].iter().all(|v| v.is_finite())
    }
}

/// Tape handles of the individual loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub wbce: Var,
    pub wiou: Var,
    pub mse: Option<Var>,
    pub total: Var,
}

fn as_batch<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    match t.shape().len() {
        3 => t.clone().reshape([&[1], t.shape()].concat()),
        4 => Ok(t.clone()),
        _ => Err(shape_err(op, format!("expected [1, H, W] or [N, 1, H, W], got {:?}", t.shape()))),
    }
}

/// `1 + 5·|avgpool31(g) − g|`, zero padding excluded from the window mean.
/// Accepts `[1, H, W]` or `[N, 1, H, W]` and keeps the input shape.
pub fn weight_map<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = as_batch(g, "weight_map")?;
    let pooled = avgpool2d(&batch, WEIGHT_KERNEL, 1, WEIGHT_KERNEL / 2)?;
    let gain = T::from_f64_lossy(WEIGHT_GAIN);
    let data = pooled
        .data()
        .iter()
        .zip(g.data())
        .map(|(&a, &b)| T::one() + gain * (a - b).abs())
        .collect();
    Tensor::new(g.shape().to_vec(), data)
}

/// Weighted BCE and weighted IoU of `logits` against the binary mask `g`.
pub fn structure_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, g: &Tensor<T>) -> Result<(Var, Var)> {
    let g = as_batch(g, "structure_loss")?;
    let w = weight_map(&g)?;
    Ok((tape.weighted_bce(logits, &g, &w)?, tape.weighted_iou(logits, &g, &w)?))
}

/// MSE between `pg` upsampled ×8 (bilinear) and the full-resolution label.
pub fn gradient_loss<T: Scalar>(tape: &mut Tape<T>, pg: Var, zg: &Tensor<T>) -> Result<Var> {
    let zg = as_batch(zg, "gradient_loss")?;
    let (_, _, h, w) = zg.dims4()?;
    let (_, _, ph, pw) = tape.value(pg).dims4()?;
    if ph * TEXTURE_STRIDE != h || pw * TEXTURE_STRIDE != w {
        return Err(shape_err(
            "gradient_loss",
            format!("texture map {ph}×{pw} does not upsample ×8 to label {h}×{w}"),
        ));
    }
    let up = tape.resize(pg, h, w)?;
    tape.mse(up, &zg)
}

/// Unit-weighted sum of the three terms. Without a texture head (`pg` is
/// `None`) the MSE term is zero and contributes no gradient.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pc_logits: Var,
    g: &Tensor<T>,
    texture: Option<(Var, &Tensor<T>)>,
) -> Result<(LossVars, LossBreakdown)> {
    let (wbce, wiou) = structure_loss(tape, pc_logits, g)?;
    let mut total = tape.add(wbce, wiou)?;
    let mse = match texture {
        Some((pg, zg)) => {
            let m = gradient_loss(tape, pg, zg)?;
            total = tape.add(total, m)?;
            Some(m)
        }
        None => None,
    };
    let read = |v: Var| tape.value(v).data()[0].to_f64_lossy();
    let breakdown = LossBreakdown {
        wbce: read(wbce),
        wiou: read(wiou),
        mse: mse.map(read).unwrap_or(0.0),
        total: read(total),
    };
    Ok((LossVars { wbce, wiou, mse, total }, breakdown))
}

/// Loss values for fixed predictions.
pub fn evaluate<T: Scalar>(
    pc_logits: &Tensor<T>,
    g: &Tensor<T>,
    texture: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let pc = tape.constant(as_batch(pc_logits, "evaluate")?)?;
    let texture = match texture {
        Some((pg, zg)) => Some((tape.constant(as_batch(pg, "evaluate")?)?, zg)),
        None => None,
    };
    Ok(total_loss(&mut tape, pc, g, texture)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, GradCheckConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_mask(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        // blobby mask: a few random rectangles
        let mut r = rng(seed);
        let mut m = Tensor::zeros(&[1, h, w]);
        for _ in 0..3 {
            let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
            let (y1, x1) = ((y0 + r.random_range(1..h)).min(h), (x0 + r.random_range(1..w)).min(w));
            for y in y0..y1 {
                for x in x0..x1 {
                    m.data_mut()[y * w + x] = 1.0;
                }
            }
        }
        m
    }

    /// Window mean over in-bounds pixels only, by direct enumeration.
    fn weight_oracle(g: &[f64], h: usize, w: usize) -> Vec<f64> {
        let r = 15i64;
        let mut out = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (mut sum, mut cnt) = (0.0, 0.0);
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        if (0..h as i64).contains(&yy) && (0..w as i64).contains(&xx) {
                            sum += g[(yy * w as i64 + xx) as usize];
                            cnt += 1.0;
                        }
                    }
                }
                let gi = g[(y * w as i64 + x) as usize];
                out[(y * w as i64 + x) as usize] = 1.0 + 5.0 * (sum / cnt - gi).abs();
            }
        }
        out
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn constant_mask_has_unit_weight() {
        for v in [0.0, 1.0] {
            let w = weight_map(&Tensor::<f64>::full(&[1, 40, 40], v)).unwrap();
            assert!(w.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn border_weight_matches_window_count() {
        let (h, w) = (64, 64);
        let g = Tensor::<f64>::from_fn(&[1, h, w], |i| if i % w < 32 { 1.0 } else { 0.0 });
        let wm = weight_map(&g).unwrap();
        let oracle = weight_oracle(g.data(), h, w);
        for (a, b) in wm.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        // last foreground column, mid-height: 16 of 31 window columns are foreground
        let v = wm.data()[32 * w + 31];
        assert!((v - (1.0 + 5.0 * (15.0 / 31.0))).abs() < 1e-12);
        assert!((v - 3.5).abs() < 0.1);
    }

    #[test]
    fn weight_map_flip_equivariant() {
        let g = random_mask(24, 40, 3);
        let a = weight_map(&g).unwrap().flip_horizontal();
        let b = weight_map(&g.flip_horizontal()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn perfect_and_disjoint_predictions() {
        let g = random_mask(32, 32, 1);
        let perfect = g.map(|v| if v > 0.5 { 40.0 } else { -40.0 });
        let l = evaluate(&perfect, &g, None).unwrap();
        assert!(l.wbce < 1e-12 && l.wiou < 1e-12, "{l:?}");
        let inverse = perfect.map(|v| -v);
        let l = evaluate(&inverse, &g, None).unwrap();
        let sw = weight_map(&g).unwrap().sum();
        assert!((l.wiou - (1.0 - 1.0 / (sw + 1.0))).abs() < 1e-9);
    }

    #[test]
    fn structure_loss_matches_loop_oracle() {
        let g = random_mask(20, 28, 5);
        let logits = Tensor::<f64>::randn(&[1, 20, 28], 2.0, &mut rng(6));
        let l = evaluate(&logits, &g, None).unwrap();
        let w = weight_oracle(g.data(), 20, 28);
        let (mut wb, mut ws, mut inter, mut uni) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..g.len() {
            let (x, t) = (logits.data()[i], g.data()[i]);
            let p = sigmoid(x);
            let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            wb += w[i] * bce;
            ws += w[i];
            inter += w[i] * p * t;
            uni += w[i] * (p + t - p * t);
        }
        assert!((l.wbce - wb / ws).abs() < 1e-6);
        assert!((l.wiou - (1.0 - (inter + 1.0) / (uni + 1.0))).abs() < 1e-6);
        assert!((l.total - (l.wbce + l.wiou)).abs() < 1e-12);
        assert_eq!(l.mse, 0.0);
    }

    /// Half-pixel bilinear sample of an `h × w` plane at output pixel `(oy, ox)` of an ×8 grid.
    fn upsample_at(p: &[f64], h: usize, w: usize, oy: usize, ox: usize) -> f64 {
        let src = |o: usize, n: usize| {
            let c = ((o as f64 + 0.5) / 8.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = c.floor() as usize;
            (i0, (i0 + 1).min(n - 1), c - i0 as f64)
        };
        let (y0, y1, fy) = src(oy, h);
        let (x0, x1, fx) = src(ox, w);
        let at = |y: usize, x: usize| p[y * w + x];
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    }

    #[test]
    fn gradient_loss_cases() {
        let zg = random_mask(32, 24, 9);
        let rho = zg.mean();
        let pc = Tensor::<f64>::zeros(&[1, 32, 24]);
        let l = evaluate(&pc, &zg, Some((&Tensor::zeros(&[1, 4, 3]), &zg))).unwrap();
        assert!((l.mse - rho).abs() < 1e-12);

        let flat = Tensor::<f64>::full(&[1, 32, 24], 0.25);
        let l = evaluate(&pc, &flat, Some((&Tensor::full(&[1, 4, 3], 0.25), &flat))).unwrap();
        assert!(l.mse.abs() < 1e-15);

        let pg = Tensor::<f64>::uniform(&[1, 4, 3], 0.0, 1.0, &mut rng(2));
        let l = evaluate(&pc, &zg, Some((&pg, &zg))).unwrap();
        let mut acc = 0.0;
        for y in 0..32 {
            for x in 0..24 {
                acc += (upsample_at(pg.data(), 4, 3, y, x) - zg.data()[y * 24 + x]).powi(2);
            }
        }
        assert!((l.mse - acc / (32.0 * 24.0)).abs() < 1e-7);
        assert!((l.total - (l.wbce + l.wiou + l.mse)).abs() < 1e-6);

        let bad = evaluate(&pc, &zg, Some((&Tensor::zeros(&[1, 5, 3]), &zg)));
        assert!(bad.is_err());
    }

    #[test]
    fn moving_toward_target_lowers_loss() {
        let g = random_mask(16, 16, 4);
        let logits = Tensor::<f64>::randn(&[1, 16, 16], 1.0, &mut rng(3));
        let base = evaluate(&logits, &g, None).unwrap();
        for i in [0, 37, 100, 255] {
            let mut moved = logits.clone();
            let dir = if g.data()[i] > 0.5 { 1.0 } else { -1.0 };
            moved.data_mut()[i] += dir * 0.5;
            let l = evaluate(&moved, &g, None).unwrap();
            assert!(l.wbce + l.wiou < base.wbce + base.wiou, "pixel {i}");
        }
    }

    #[test]
    fn total_loss_gradients() {
        let mut r = rng(12);
        let g = random_mask(16, 16, 8).reshape(vec![1, 1, 16, 16]).unwrap();
        let g = Tensor::stack(&[g.clone(), g.flip_horizontal()]).unwrap().reshape(vec![2, 1, 16, 16]).unwrap();
        let zg = g.map(|v| v * 0.5);
        let inputs = vec![
            ("pc".to_string(), Tensor::<f64>::randn(&[2, 1, 16, 16], 1.5, &mut r)),
            ("pg".to_string(), Tensor::<f64>::uniform(&[2, 1, 2, 2], 0.0, 1.0, &mut r)),
        ];
        let report = grad_check("total_loss", inputs, &GradCheckConfig::default(), |tape, v| {
            Ok(total_loss(tape, v[0], &g, Some((v[1], &zg)))?.0.total)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn base_ablation_has_no_texture_gradient() {
        let g = random_mask(16, 16, 2);
        let mut tape = Tape::<f64>::new();
        let pc = tape.leaf(Tensor::randn(&[1, 1, 16, 16], 1.0, &mut rng(0))).unwrap();
        let pg = tape.leaf(Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        let (vars, b) = total_loss(&mut tape, pc, &g, None).unwrap();
        assert!(vars.mse.is_none());
        assert_eq!(b.mse, 0.0);
        let grads = tape.backward(vars.total).unwrap();
        assert!(!grads.reached(pg));
    }

    proptest! {
        #[test]
        fn weights_are_bounded(seed in 0u64..1000, h in 4usize..40, w in 4usize..40) {
            let mut r = rng(seed);
            let g = Tensor::<f64>::from_fn(&[1, h, w], |_| if r.random_bool(0.4) { 1.0 } else { 0.0 });
            let wm = weight_map(&g).unwrap();
            prop_assert!(wm.data().iter().all(|&v| (1.0..=6.0).contains(&v)));
        }

        #[test]
        fn losses_are_nonnegative_and_additive(seed in 0u64..1000) {
            let mut r = rng(seed);
            let g = random_mask(16, 16, seed);
            let pc = Tensor::<f64>::randn(&[1, 16, 16], 3.0, &mut r);
            let pg = Tensor::<f64>::randn(&[1, 2, 2], 1.0, &mut r);
            let l = evaluate(&pc, &g, Some((&pg, &g))).unwrap();
            prop_assert!(l.wbce >= 0.0 && l.wiou >= 0.0 && l.mse >= 0.0);
            prop_assert!((l.total - (l.wbce + l.wiou + l.mse)).abs() < 1e-6);
        }
    }
}
