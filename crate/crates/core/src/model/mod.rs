//! The two-branch segmentation network: a context backbone with channel
//! reduction, a shallow texture encoder, the grouping transition that fuses
//! them, and a neighbour-connection decoder.

pub mod checkpoint;
pub mod config;
pub mod layers;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, IntoStored, Stored};
pub use config::{Ablation, Fusion, ModelConfig, Supervision};
pub use layers::{apply_bn_updates, BnUpdate, Builder, ConvBr, Ctx, Kind, ParamStore};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ConvSpec, Scalar, Tape, Tensor, Var};

/// Pyramid levels fed to the decoder, by log2 of their stride.
pub const LEVELS: [usize; 3] = [3, 4, 5];

/// One soft-grouping branch: a 1×1 ConvBR with `n` groups, `(ci+cg) → ci`.
#[derive(Clone, Debug)]
pub struct GitBranch {
    pub n: usize,
    pub proj: ConvBr,
}

#[derive(Clone, Debug)]
pub enum FusionLayer {
    Git(Vec<GitBranch>),
    Concat(ConvBr),
    /// Base network: the reduced context feature passes straight through.
    Identity,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub up5_4: ConvBr,
    pub up4_3: ConvBr,
    pub up5_3: ConvBr,
    pub cat4: ConvBr,
    pub cat3: ConvBr,
    pub head: ConvBr,
}

/// Layer wiring; parameters live in [`Model::params`].
#[derive(Clone, Debug)]
pub struct Arch {
    pub backbone: Vec<ConvBr>,
    pub reduce: Vec<[ConvBr; 2]>,
    pub texture: Option<[ConvBr; 4]>,
    pub fusion: Vec<FusionLayer>,
    pub decoder: Decoder,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub arch: Arch,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Camouflage logits, `[N, 1, H, W]`.
    pub pc: Var,
    /// Texture head output, `[N, 1, H/8, W/8]`; absent without the texture branch.
    pub pg: Option<Var>,
    pub xg: Option<Var>,
    pub xr: [Var; 3],
    pub zt: [Var; 3],
}

/// Source channel for each output channel of the regrouped tensor.
///
/// Sources are `concat(xg, xr)`; output block `m` holds texture channels
/// `m·Kg..(m+1)·Kg` followed by context channels `m·Ki..(m+1)·Ki`.
pub fn regroup_index(ci: usize, cg: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || ci % m != 0 || cg % m != 0 {
        return Err(Error::Indivisible {
            count: if m != 0 && ci % m != 0 { ci } else { cg },
            groups: m,
        });
    }
    let (ki, kg) = (ci / m, cg / m);
    let mut idx = Vec::with_capacity(ci + cg);
    for g in 0..m {
        idx.extend(g * kg..(g + 1) * kg);
        idx.extend(cg + g * ki..cg + (g + 1) * ki);
    }
    Ok(idx)
}

fn spatial<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<(usize, usize, usize, usize)> {
    tape.value(v).dims4()
}

/// Interleaves the texture feature (resized to `xr`'s grid) with the context
/// feature in `m` groups.
pub fn git_regroup<T: Scalar>(tape: &mut Tape<T>, xr: Var, xg: Var, m: usize) -> Result<Var> {
    let (_, ci, h, w) = spatial(tape, xr)?;
    let cg = spatial(tape, xg)?.1;
    let index = regroup_index(ci, cg, m)?;
    let xg = tape.resize(xg, h, w)?;
    let cat = tape.concat(&[xg, xr])?;
    tape.gather_channels(cat, index)
}

/// `xr + Σ_N ConvBR_N(regroup(xr, xg))`.
pub fn git_transition<T: Scalar>(ctx: &mut Ctx<'_, T>, branches: &[GitBranch], xr: Var, xg: Var, m: usize) -> Result<Var> {
    let q = git_regroup(ctx.tape, xr, xg, m)?;
    let mut z = xr;
    for b in branches {
        let a = ctx.conv_br(&b.proj, q)?;
        z = ctx.tape.add(z, a)?;
    }
    Ok(z)
}

impl<T: Scalar> Model<T> {
    /// Fan-in normal weights, zero biases, unit BN scale, from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let (ci, cg) = (c.ci, c.cg);
        let k3 = ConvSpec::new(1, 1, 1);
        let k1 = ConvSpec::default();

        let mut backbone = Vec::new();
        let mut cin = 3;
        for (i, &w) in c.backbone_widths.iter().enumerate() {
            backbone.push(b.conv_br(&format!("backbone.stage{}", i + 1), cin, w, 3, ConvSpec::new(2, 1, 1), false));
            cin = w;
        }
        let reduce = LEVELS
            .iter()
            .map(|&l| {
                let win = c.backbone_widths[l - 1];
                [
                    b.conv_br(&format!("reduce{l}.0"), win, ci, 3, k3, false),
                    b.conv_br(&format!("reduce{l}.1"), ci, ci, 3, k3, false),
                ]
            })
            .collect();

        let texture = c.ablation.texture_branch.then(|| {
            let tw = c.texture_width;
            [
                b.conv_br("texture.l1", 3, tw, 7, ConvSpec::new(2, 3, 1), false),
                b.conv_br("texture.l2", tw, tw, 3, ConvSpec::new(2, 1, 1), false),
                b.conv_br("texture.l3", tw, cg, 3, ConvSpec::new(2, 1, 1), false),
                b.conv_br("texture.l4", cg, 1, 1, k1, false),
            ]
        });

        let fusion = LEVELS
            .iter()
            .map(|&l| match (c.ablation.texture_branch, c.ablation.fusion) {
                (false, _) => FusionLayer::Identity,
                (true, Fusion::Git) => FusionLayer::Git(
                    c.n_set
                        .iter()
                        .map(|&n| GitBranch {
                            n,
                            proj: b.conv_br(&format!("git{l}.n{n}"), ci + cg, ci, 1, ConvSpec::new(1, 0, n), true),
                        })
                        .collect(),
                ),
                (true, Fusion::Concat) => FusionLayer::Concat(b.conv_br(&format!("concat{l}"), ci + cg, ci, 1, k1, false)),
            })
            .collect();

        let decoder = Decoder {
            up5_4: b.conv_br("ncd.up5_4", ci, ci, 3, k3, false),
            up4_3: b.conv_br("ncd.up4_3", ci, ci, 3, k3, false),
            up5_3: b.conv_br("ncd.up5_3", ci, ci, 3, k3, false),
            cat4: b.conv_br("ncd.cat4", 2 * ci, ci, 3, k3, false),
            cat3: b.conv_br("ncd.cat3", 2 * ci, ci, 3, k3, false),
            head: b.conv_only("ncd.head", ci, 1, 1, k1, true),
        };

        Ok(Self {
            config,
            params,
            arch: Arch {
                backbone,
                reduce,
                texture,
                fusion,
                decoder,
            },
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            arch: self.arch.clone(),
        }
    }

    fn check_input(&self, tape: &Tape<T>, image: Var, multiple: usize) -> Result<()> {
        let (_, c, h, w) = spatial(tape, image)?;
        if c != 3 || h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
            return Err(shape_err(
                "model input",
                &format!("expected [N, 3, H, W] with H, W divisible by {multiple}, got {:?}", tape.value(image).shape()),
            ));
        }
        Ok(())
    }

    /// Layers #01–#04: returns the texture feature (#03) and the texture map (#04).
    pub fn texture_forward(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<(Var, Var)> {
        self.check_input(ctx.tape, image, 8)?;
        let t = self
            .arch
            .texture
            .as_ref()
            .ok_or_else(|| Error::Config("texture branch is disabled".into()))?;
        let mut x = image;
        for l in &t[..3] {
            x = ctx.conv_br(l, x)?;
        }
        let pg = ctx.conv_br(&t[3], x)?;
        Ok((x, pg))
    }

    /// Reduced features at strides 8, 16 and 32, each with `ci` channels.
    pub fn context_forward(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<[Var; 3]> {
        self.check_input(ctx.tape, image, 32)?;
        let mut taps = Vec::with_capacity(3);
        let mut x = image;
        for (i, stage) in self.arch.backbone.iter().enumerate() {
            x = ctx.conv_br(stage, x)?;
            if let Some(level) = LEVELS.iter().position(|&l| l == i + 1) {
                let [r0, r1] = &self.arch.reduce[level];
                let r = ctx.conv_br(r0, x)?;
                taps.push(ctx.conv_br(r1, r)?);
            }
        }
        Ok([taps[0], taps[1], taps[2]])
    }

    /// Merges texture into one context level according to the fusion mode.
    pub fn fuse_level(&self, ctx: &mut Ctx<'_, T>, level: usize, xr: Var, xg: Option<Var>) -> Result<Var> {
        match (&self.arch.fusion[level], xg) {
            (FusionLayer::Identity, _) => Ok(xr),
            (FusionLayer::Git(branches), Some(xg)) => git_transition(ctx, branches, xr, xg, self.config.m),
            (FusionLayer::Concat(layer), Some(xg)) => {
                let (_, _, h, w) = spatial(ctx.tape, xr)?;
                let xg = ctx.tape.resize(xg, h, w)?;
                let cat = ctx.tape.concat(&[xg, xr])?;
                ctx.conv_br(layer, cat)
            }
            (_, None) => Err(Error::Config("fusion needs the texture feature".into())),
        }
    }

    /// Neighbour gating from coarse to fine, progressive fusion, 1×1 head and
    /// ×8 bilinear upsampling to logits at input resolution.
    pub fn ncd_decode(&self, ctx: &mut Ctx<'_, T>, zt: [Var; 3]) -> Result<Var> {
        let d = &self.arch.decoder;
        let [z3, z4, z5] = zt;
        let (_, c3, h3, w3) = spatial(ctx.tape, z3)?;
        let (_, c4, h4, w4) = spatial(ctx.tape, z4)?;
        let c5 = spatial(ctx.tape, z5)?.1;
        if c3 != c4 || c4 != c5 || c3 != self.config.ci {
            return Err(shape_err("ncd_decode", &format!("channel counts {c3}, {c4}, {c5} must all be ci")));
        }
        let t = &mut *ctx;

        let g5 = z5;
        let a = t.conv_br(&d.up5_4, z5)?;
        let a = t.tape.resize(a, h4, w4)?;
        let g4 = t.tape.mul(z4, a)?;
        let b = t.conv_br(&d.up4_3, g4)?;
        let b = t.tape.resize(b, h3, w3)?;
        let c = t.conv_br(&d.up5_3, z5)?;
        let c = t.tape.resize(c, h3, w3)?;
        let g3 = t.tape.mul(z3, b)?;
        let g3 = t.tape.mul(g3, c)?;

        let u5 = t.tape.resize(g5, h4, w4)?;
        let cat = t.tape.concat(&[g4, u5])?;
        let d4 = t.conv_br(&d.cat4, cat)?;
        let u4 = t.tape.resize(d4, h3, w3)?;
        let cat = t.tape.concat(&[g3, u4])?;
        let d3 = t.conv_br(&d.cat3, cat)?;
        let logits = t.conv_br(&d.head, d3)?;
        t.tape.resize(logits, h3 * 8, w3 * 8)
    }

    /// Full network on an `[N, 3, H, W]` batch.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Forward> {
        self.check_input(ctx.tape, image, 32)?;
        let (xg, pg) = match self.arch.texture {
            Some(_) => {
                let (xg, pg) = self.texture_forward(ctx, image)?;
                (Some(xg), Some(pg))
            }
            None => (None, None),
        };
        let xr = self.context_forward(ctx, image)?;
        let mut zt = xr;
        for (level, z) in zt.iter_mut().enumerate() {
            *z = self.fuse_level(ctx, level, *z, xg)?;
        }
        let pc = self.ncd_decode(ctx, zt)?;
        Ok(Forward { pc, pg, xg, xr, zt })
    }

    /// Eval-mode forward on one `[3, H, W]` image or an `[N, 3, H, W]` batch.
    /// Returns the logits and the texture map.
    pub fn predict(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let batch = match image.shape().len() {
            3 => image.clone().reshape([&[1], image.shape()].concat())?,
            _ => image.clone(),
        };
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false)?;
        let x = ctx.tape.constant(batch)?;
        let f = self.forward(&mut ctx, x)?;
        let pc = tape.value(f.pc).clone();
        let pg = f.pg.map(|v| tape.value(v).clone());
        Ok((pc, pg))
    }

    /// Trainable scalars (weights, biases, BN affine).
    pub fn count_params(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, _, k)| *k == Kind::Weight)
            .map(|(_, t, _)| t.len())
            .sum()
    }

    /// Trainable scalars grouped by top-level module name.
    pub fn param_breakdown(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, t, k) in self.params.iter() {
            if k == Kind::Weight {
                let module = name.split('.').next().unwrap_or(name);
                let module = module.trim_end_matches(|c: char| c.is_ascii_digit());
                *out.entry(module.to_string()).or_insert(0) += t.len();
            }
        }
        out
    }

    /// Convolution multiply-accumulates for one `h × w` image, computed from
    /// layer shapes alone. Normalization, activations, resizes and
    /// elementwise products are not counted.
    pub fn count_macs(&self, h: usize, w: usize) -> u64 {
        let mut total = 0u64;
        let mut run = |layer: &ConvBr, (h, w): (usize, usize)| {
            let (m, oh, ow) = layer.conv.macs(h, w);
            total += m;
            (oh, ow)
        };
        let mut size = (h, w);
        let mut level_sizes = Vec::new();
        for (i, stage) in self.arch.backbone.iter().enumerate() {
            size = run(stage, size);
            if let Some(level) = LEVELS.iter().position(|&l| l == i + 1) {
                let [r0, r1] = &self.arch.reduce[level];
                let s = run(r0, size);
                level_sizes.push(run(r1, s));
            }
        }
        if let Some(t) = &self.arch.texture {
            let mut s = (h, w);
            for l in t {
                s = run(l, s);
            }
        }
        for (fusion, &s) in self.arch.fusion.iter().zip(&level_sizes) {
            match fusion {
                FusionLayer::Git(branches) => {
                    for b in branches {
                        run(&b.proj, s);
                    }
                }
                FusionLayer::Concat(l) => {
                    run(l, s);
                }
                FusionLayer::Identity => {}
            }
        }
        let d = &self.arch.decoder;
        let (s3, s4, s5) = (level_sizes[0], level_sizes[1], level_sizes[2]);
        run(&d.up5_4, s5);
        run(&d.up4_3, s4);
        run(&d.up5_3, s5);
        run(&d.cat4, s4);
        run(&d.cat3, s3);
        run(&d.head, s3);
        total
    }

    /// Config as `key=value` metadata plus every parameter and buffer.
    pub fn to_checkpoint(&self) -> Checkpoint
    where
        Tensor<T>: IntoStored,
    {
        Checkpoint {
            meta: self.config.to_pairs(),
            tensors: self
                .params
                .iter()
                .map(|(n, t, _)| (n.to_string(), t.clone().into_stored()))
                .collect(),
        }
    }

    /// Rebuilds the model described by a checkpoint. Tensors whose names do
    /// not belong to the model (optimizer state) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let map: BTreeMap<String, String> = ckpt.meta.iter().cloned().collect();
        let config = ModelConfig::from_pairs(&map)?;
        let mut model = Self::new(config, 0)?;
        let named: Vec<(String, Tensor<T>)> = ckpt
            .tensors
            .iter()
            .filter(|(n, _)| model.params.find(n).is_some())
            .map(|(n, t)| (n.clone(), t.to()))
            .collect();
        model.params.load_from(&named)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
