//! Central finite-difference verification of tape gradients (64-bit).
//!
//! The checker perturbs one coordinate at a time and compares
//! `(L(x+h) − L(x−h)) / 2h` against the analytic gradient. A step that flips
//! the sign of any ReLU input straddles a kink where the loss is not
//! differentiable; such coordinates are retried with a smaller step and, if
//! they still straddle, counted as skipped rather than scored.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that gradients that
    /// are zero up to rounding are judged on absolute error.
    pub floor: f64,
    /// Checks at most this many coordinates per input tensor (all when `None`).
    pub max_coords_per_input: Option<usize>,
    /// Upper bound on the fraction of coordinates skipped at kinks.
    pub max_skip_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-5,
            floor: 1e-6,
            max_coords_per_input: None,
            max_skip_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCoordinate {
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub skipped_at_kinks: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstCoordinate>,
    pub tolerance: f64,
    pub max_skip_fraction: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        let total = self.checked + self.skipped_at_kinks;
        self.checked > 0
            && self.max_rel_err < self.tolerance
            && (self.skipped_at_kinks as f64) <= self.max_skip_fraction * total as f64
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {} max_rel_err={:.3e} checked={} kinks_skipped={}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.checked,
            self.skipped_at_kinks
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                " worst={}[{}] analytic={:.6e} numeric={:.6e}",
                w.input, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Eval {
    loss: f64,
    signature: Vec<bool>,
}

fn evaluate<F>(inputs: &[(String, Tensor<f64>)], build: &F) -> Result<(Tape<f64>, Vec<Var>, Var, Eval)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|(_, t)| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "grad_check loss" });
    }
    let signature = tape.relu_signature();
    Ok((tape, vars, loss, Eval { loss: value, signature }))
}

/// Compares analytic and numeric gradients of the scalar built by `build`
/// with respect to every tensor in `inputs`.
pub fn grad_check<F>(
    name: &str,
    inputs: Vec<(String, Tensor<f64>)>,
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss, base) = evaluate(&inputs, &build)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        skipped_at_kinks: 0,
        max_rel_err: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
        max_skip_fraction: cfg.max_skip_fraction,
    };
    let mut work = inputs;
    for k in 0..work.len() {
        let len = work[k].1.len();
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(m) if m < len => {
                let mut c = sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for idx in coords {
            let orig = work[k].1.data()[idx];
            let mut numeric = None;
            for h in [cfg.step, cfg.step * 1e-2] {
                work[k].1.data_mut()[idx] = orig + h;
                let plus = evaluate(&work, &build)?.3;
                work[k].1.data_mut()[idx] = orig - h;
                let minus = evaluate(&work, &build)?.3;
                work[k].1.data_mut()[idx] = orig;
                if plus.signature == base.signature && minus.signature == base.signature {
                    numeric = Some((plus.loss - minus.loss) / (2.0 * h));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped_at_kinks += 1;
                continue;
            };
            let a = analytic[k].data()[idx];
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some(WorstCoordinate {
                    input: work[k].0.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
