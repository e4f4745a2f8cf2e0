use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// What the texture head is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Object-level Canny gradients.
    Gradient,
    /// Morphological object boundary.
    Boundary,
}

/// How texture and context features are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Interleaved regrouping + soft-grouped projections + residual.
    Git,
    /// 1×1 ConvBR over a plain channel concatenation.
    Concat,
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Supervision::Gradient => "gradient",
            Supervision::Boundary => "boundary",
        })
    }
}

impl FromStr for Supervision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "boundary" => Ok(Self::Boundary),
            _ => Err(Error::Config(format!("supervision must be gradient|boundary, got `{s}`"))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Git => "git",
            Fusion::Concat => "concat",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "git" => Ok(Self::Git),
            "concat" => Ok(Self::Concat),
            _ => Err(Error::Config(format!("fusion must be git|concat, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub texture_branch: bool,
    pub supervision: Supervision,
    pub fusion: Fusion,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            texture_branch: true,
            supervision: Supervision::Gradient,
            fusion: Fusion::Git,
        }
    }
}

/// Every architecture knob.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Context channels after dimensional reduction.
    pub ci: usize,
    /// Texture channels.
    pub cg: usize,
    /// Group number for the interleaved regrouping.
    pub m: usize,
    /// Soft-grouping scaling factors, one projection branch per entry.
    pub n_set: Vec<usize>,
    /// Output widths of the five stride-2 backbone stages.
    pub backbone_widths: Vec<usize>,
    /// Width of texture layers #01 and #02.
    pub texture_width: usize,
    pub input_size: usize,
    pub ablation: Ablation,
}

pub const CONFIG_KEYS: [&str; 10] = [
    "ci",
    "cg",
    "m",
    "n_set",
    "backbone_widths",
    "texture_width",
    "input_size",
    "texture_branch",
    "supervision",
    "fusion",
];

impl Default for ModelConfig {
    fn default() -> Self {
        Self::dgnet_s()
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{s}` is not a comma-separated list of integers")))
        })
        .collect()
}

pub(crate) fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key} = `{v}` is not a non-negative integer")))
}

pub(crate) fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} must be on|off, got `{v}`"))),
    }
}

impl ModelConfig {
    /// Small variant: EfficientNet-B1-like stage widths.
    pub fn dgnet_s() -> Self {
        Self {
            ci: 32,
            cg: 32,
            m: 8,
            n_set: vec![8, 16, 32],
            backbone_widths: vec![16, 24, 40, 112, 320],
            texture_width: 64,
            input_size: 352,
            ablation: Ablation::default(),
        }
    }

    /// Large variant: EfficientNet-B4-like stage widths.
    pub fn dgnet() -> Self {
        Self {
            ci: 64,
            n_set: vec![4, 8, 16],
            backbone_widths: vec![24, 32, 56, 160, 448],
            ..Self::dgnet_s()
        }
    }

    /// Width-8 desk configuration at 96×96.
    pub fn toy() -> Self {
        Self {
            ci: 8,
            cg: 8,
            m: 2,
            n_set: vec![2, 4, 8],
            backbone_widths: vec![8, 8, 16, 16, 16],
            texture_width: 8,
            input_size: 96,
            ablation: Ablation::default(),
        }
    }

    pub fn with_ablation(mut self, texture_branch: bool, supervision: Supervision, fusion: Fusion) -> Self {
        self.ablation = Ablation {
            texture_branch,
            supervision,
            fusion,
        };
        self
    }

    /// Base network: context encoder and decoder only.
    pub fn base(self) -> Self {
        let sup = self.ablation.supervision;
        self.with_ablation(false, sup, Fusion::Git)
    }

    pub fn uses_git(&self) -> bool {
        self.ablation.texture_branch && self.ablation.fusion == Fusion::Git
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.ci == 0 || self.cg == 0 || self.texture_width == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.backbone_widths.len() != 5 || self.backbone_widths.contains(&0) {
            return bad(format!(
                "backbone_widths needs five positive stage widths, got {:?}",
                self.backbone_widths
            ));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad(format!("input_size {} must be a positive multiple of 32", self.input_size));
        }
        if self.uses_git() {
            if self.m == 0 || self.ci % self.m != 0 || self.cg % self.m != 0 {
                return bad(format!(
                    "ci={} and cg={} must both be divisible by m={}",
                    self.ci, self.cg, self.m
                ));
            }
            if self.n_set.is_empty() {
                return bad("n_set must not be empty".into());
            }
            for &n in &self.n_set {
                if n == 0 || (self.ci + self.cg) % n != 0 || self.ci % n != 0 {
                    return bad(format!(
                        "scaling factor {n} must divide ci+cg={} and ci={}",
                        self.ci + self.cg,
                        self.ci
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let a = &self.ablation;
        vec![
            ("ci".into(), self.ci.to_string()),
            ("cg".into(), self.cg.to_string()),
            ("m".into(), self.m.to_string()),
            ("n_set".into(), join(&self.n_set)),
            ("backbone_widths".into(), join(&self.backbone_widths)),
            ("texture_width".into(), self.texture_width.to_string()),
            ("input_size".into(), self.input_size.to_string()),
            ("texture_branch".into(), if a.texture_branch { "on" } else { "off" }.into()),
            ("supervision".into(), a.supervision.to_string()),
            ("fusion".into(), a.fusion.to_string()),
        ]
    }

    /// Applies recognised keys on top of `self`; other keys are ignored so
    /// callers can share one map between several consumers.
    pub fn overlay(mut self, map: &BTreeMap<String, String>) -> Result<Self> {
        for (k, v) in map {
            match k.as_str() {
                "ci" => self.ci = parse_usize(k, v)?,
                "cg" => self.cg = parse_usize(k, v)?,
                "m" => self.m = parse_usize(k, v)?,
                "n_set" => self.n_set = parse_list(v)?,
                "backbone_widths" => self.backbone_widths = parse_list(v)?,
                "texture_width" => self.texture_width = parse_usize(k, v)?,
                "input_size" => self.input_size = parse_usize(k, v)?,
                "texture_branch" => self.ablation.texture_branch = parse_switch(k, v)?,
                "supervision" => self.ablation.supervision = v.trim().parse()?,
                "fusion" => self.ablation.fusion = v.trim().parse()?,
                _ => {}
            }
        }
        Ok(self)
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = Self::dgnet_s().overlay(map)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
