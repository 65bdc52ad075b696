//! Gradient-based search for the subset with the highest score.
//!
//! The subset becomes a relaxed mask `s in [0,1]^d`. Distances are weighted by
//! `s` or `1 - s`, perturbations are interpolated by the mask and the hard
//! indicators of the interventional stage become `1 - exp(-|delta|)` and
//! `exp(-|delta|)`. The resulting objective is maximised with Adam, clamping
//! `s` back into the box after every step.
//!
//! All randomness in one objective evaluation comes from a single draw key,
//! so evaluating twice with the same key gives the same function of `s`.
//! Resampled indices are treated as constants when differentiating.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::datasets::DataKind;
use crate::error::{check_len, FansError, Result, Side};
use crate::parallel;
use crate::perturb::{check_phi, sample_mask, Baseline, NormOrder, RelaxedMask};
use crate::pns::{Ablation, FactualSets, Problem};
use crate::rng::{derive, task_rng, Domain};
use crate::sir::{changed_kernel, check_bc, resample_with_uniforms, unchanged_kernel};

/// `1 - exp(-|delta|)`: soft "prediction changed".
pub fn smooth_change(delta: f64) -> f64 {
    1.0 - (-delta.abs()).exp()
}

/// `exp(-|delta|)`: soft "prediction unchanged".
pub fn smooth_same(delta: f64) -> f64 {
    (-delta.abs()).exp()
}

fn smooth_change_deriv(delta: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        delta.signum() * (-delta.abs()).exp()
    }
}

/// How a relaxed mask enters the perturbation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relaxation {
    /// `x + s * m * (x' - x)`; equals the hard perturbation at binary `s`.
    #[default]
    Interpolated,
    /// `((1 - m) x + m x') * s`; zeroes every coordinate outside `s`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Interventional draws per factual sample, both sides.
    pub t: usize,
    pub resample_size: usize,
    pub n_inner: usize,
    pub phi: f64,
    pub p: NormOrder,
    pub ablation: Ablation,
    pub relaxation: Relaxation,
    pub seed: u64,
}

impl OptimizeConfig {
    /// Learning rate 0.1 and 30 epochs for tabular data, 0.001 and 50 for images.
    pub fn for_kind(kind: DataKind) -> Self {
        let (learning_rate, epochs) = match kind {
            DataKind::Tabular => (0.1, 30),
            DataKind::Image => (0.001, 50),
        };
        Self {
            learning_rate,
            epochs,
            t: 50,
            resample_size: 1,
            n_inner: 8,
            phi: 0.5,
            p: NormOrder::L2,
            ablation: Ablation::default(),
            relaxation: Relaxation::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FansError::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.t == 0 || self.resample_size == 0 || self.n_inner == 0 {
            return Err(FansError::config("draw counts and resample size must be at least 1"));
        }
        check_phi(self.phi)?;
        self.ablation.validate()
    }
}

/// The four estimated quantities and the two products they form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub pn: f64,
    pub ps: f64,
    pub p_ab: f64,
    pub p_nanb: f64,
    /// `pn * p_ab`
    pub necessity: f64,
    /// `ps * p_nanb`
    pub sufficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub terms: Terms,
    pub factual: FactualSets,
}

/// Relaxed perturbation of `x` under mask `r` and its diagonal derivative.
fn relax(mode: Relaxation, x: &[f64], r: &[f64], base: &[f64], m: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut out = Vec::with_capacity(x.len());
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let (v, g) = match (mode, m[k]) {
            (Relaxation::Interpolated, true) => ((1.0 - r[k]) * x[k] + r[k] * base[k], base[k] - x[k]),
            (Relaxation::Interpolated, false) => (x[k], 0.0),
            (Relaxation::Literal, true) => (base[k] * r[k], base[k]),
            (Relaxation::Literal, false) => (x[k] * r[k], x[k]),
        };
        out.push(v);
        grad.push(g);
    }
    (out, grad)
}

/// Shared state of one objective evaluation.
struct Eval<'p, 'a> {
    problem: &'p Problem<'a>,
    b: f64,
    c: f64,
    cfg: &'p OptimizeConfig,
    key: u64,
    with_grad: bool,
}

/// A value and its derivative w.r.t. the mask argument that produced it.
struct Diff {
    value: f64,
    grad: Vec<f64>,
}

impl Eval<'_, '_> {
    fn d(&self) -> usize {
        self.problem.dim()
    }

    fn fx(&self, x: &[f64]) -> Result<f64> {
        self.problem.model.predict_scalar(x, self.problem.readout)
    }

    /// `f(G(x, r, m)) - f(x)` and, when requested, its gradient w.r.t. `r`.
    fn shift(&self, x: &[f64], fx: f64, r: &[f64], m: &[bool]) -> Result<(f64, Vec<f64>)> {
        let base: &Baseline = self.problem.baseline;
        let (z, dz) = relax(self.cfg.relaxation, x, r, &base.values, m);
        let delta = self.fx(&z)? - fx;
        if !self.with_grad {
            return Ok((delta, Vec::new()));
        }
        let gf = self.problem.model.input_gradient(&z, self.problem.readout)?;
        Ok((delta, gf.iter().zip(&dz).map(|(a, b)| a * b).collect()))
    }

    /// Soft weight of sample `x` for the event defined by mask `r`.
    fn weight(&self, x: &[f64], r: &[f64], side: Side, index: usize) -> Result<Diff> {
        let d = self.d();
        let t = self.problem.target;
        let dist = |k: usize| (x[k] - t[k]) * r[k];
        let (dist2, ddist2): (f64, Vec<f64>) = match self.cfg.p {
            NormOrder::L2 => (
                (0..d).map(|k| dist(k).powi(2)).sum(),
                (0..d).map(|k| 2.0 * (x[k] - t[k]).powi(2) * r[k]).collect(),
            ),
            NormOrder::L1 => {
                let n: f64 = (0..d).map(|k| dist(k).abs()).sum();
                (
                    n * n,
                    (0..d).map(|k| 2.0 * n * (x[k] - t[k]).abs() * r[k].signum()).collect(),
                )
            }
        };
        let two_b2 = 2.0 * self.b * self.b;
        let prox = (-dist2 / two_b2).exp();

        let domain = match side {
            Side::Sufficiency => Domain::WeightSufficiency,
            Side::Necessity => Domain::WeightNecessity,
        };
        let mut rng = task_rng(self.key, domain, index as u64);
        let fx = self.fx(x)?;
        let c2 = self.c * self.c;
        let mut kern = 0.0;
        let mut dkern = vec![0.0; if self.with_grad { d } else { 0 }];
        for _ in 0..self.cfg.n_inner {
            let m = sample_mask(d, self.cfg.phi, &mut rng);
            let (delta, ddelta) = self.shift(x, fx, r, &m)?;
            let (k, dk) = match side {
                Side::Sufficiency => {
                    let k = unchanged_kernel(delta, self.c);
                    (k, if self.c == 0.0 { 0.0 } else { -delta / c2 * k })
                }
                Side::Necessity => {
                    let k = changed_kernel(delta, self.c);
                    (k, if self.c == 0.0 { 0.0 } else { delta / c2 * (1.0 - k) })
                }
            };
            kern += k;
            for (g, dd) in dkern.iter_mut().zip(&ddelta) {
                *g += dk * dd;
            }
        }
        let n = self.cfg.n_inner as f64;
        kern /= n;
        let grad = if self.with_grad {
            (0..d)
                .map(|k| prox * (-ddist2[k] / two_b2) * kern + prox * dkern[k] / n)
                .collect()
        } else {
            Vec::new()
        };
        Ok(Diff {
            value: prox * kern,
            grad,
        })
    }

    /// Mean weight over all samples, plus the per-sample values for resampling.
    fn joint(&self, r: &[f64], side: Side) -> Result<(Diff, Vec<f64>)> {
        let samples = self.problem.samples;
        let per = parallel::try_map_indexed(samples.len(), |i| self.weight(&samples.rows()[i], r, side, i))?;
        Ok((
            mean_diff(&per, self.d(), self.with_grad),
            per.iter().map(|w| w.value).collect(),
        ))
    }

    /// Mean soft interventional indicator over the factual set.
    fn intervention(&self, factual: &[usize], r: &[f64], side: Side) -> Result<Diff> {
        let d = self.d();
        let domain = match side {
            Side::Sufficiency => Domain::InterventionSufficiency,
            Side::Necessity => Domain::InterventionNecessity,
        };
        let per = parallel::try_map_indexed(factual.len(), |j| {
            let x = &self.problem.samples.rows()[factual[j]];
            let mut rng = task_rng(self.key, domain, j as u64);
            let fx = self.fx(x)?;
            let mut value = 0.0;
            let mut grad = vec![0.0; if self.with_grad { d } else { 0 }];
            for _ in 0..self.cfg.t {
                let m = sample_mask(d, self.cfg.phi, &mut rng);
                let (delta, ddelta) = self.shift(x, fx, r, &m)?;
                let (v, dv) = match side {
                    Side::Sufficiency => (smooth_change(delta), smooth_change_deriv(delta)),
                    Side::Necessity => (smooth_same(delta), -smooth_change_deriv(delta)),
                };
                value += v;
                for (g, dd) in grad.iter_mut().zip(&ddelta) {
                    *g += dv * dd;
                }
            }
            let t = self.cfg.t as f64;
            Ok::<_, FansError>(Diff {
                value: value / t,
                grad: grad.into_iter().map(|g| g / t).collect(),
            })
        })?;
        Ok(mean_diff(&per, d, self.with_grad))
    }

    fn factual(&self, weights: &[f64], side: Side) -> Result<Option<Vec<usize>>> {
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(None);
        }
        if self.cfg.ablation.disable_sir {
            return Ok(Some((0..weights.len()).collect()));
        }
        let domain = match side {
            Side::Sufficiency => Domain::ResampleSufficiency,
            Side::Necessity => Domain::ResampleNecessity,
        };
        let mut rng = task_rng(self.key, domain, 0);
        let uniforms: Vec<f64> = (0..self.cfg.resample_size)
            .map(|_| rand::Rng::random::<f64>(&mut rng))
            .collect();
        resample_with_uniforms(weights, &uniforms, side).map(Some)
    }

    /// One side's product term. The mask argument is `s` for necessity and
    /// `1 - s` for sufficiency; the returned gradient is w.r.t. `s`.
    fn side(
        &self,
        s: &[f64],
        side: Side,
        frozen: Option<&Option<Vec<usize>>>,
    ) -> Result<(f64, f64, Diff, Option<Vec<usize>>)> {
        let d = self.d();
        let comp: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        // Weights condition on the perturbed side, interventions perturb the other.
        let (r_weight, r_int, sign_weight, sign_int) = match side {
            Side::Necessity => (s, comp.as_slice(), 1.0, -1.0),
            Side::Sufficiency => (comp.as_slice(), s, -1.0, 1.0),
        };
        let (joint, weights) = self.joint(r_weight, side)?;
        let set = match frozen {
            Some(set) => set.clone(),
            None => self.factual(&weights, side)?,
        };
        let int = match &set {
            Some(idx) if !idx.is_empty() => self.intervention(idx, r_int, side)?,
            _ => Diff {
                value: 0.0,
                grad: vec![0.0; if self.with_grad { d } else { 0 }],
            },
        };
        let term = int.value * joint.value;
        let grad = if self.with_grad {
            (0..d)
                .map(|k| sign_int * int.grad[k] * joint.value + int.value * sign_weight * joint.grad[k])
                .collect()
        } else {
            Vec::new()
        };
        Ok((int.value, joint.value, Diff { value: term, grad }, set))
    }
}

fn mean_diff(parts: &[Diff], d: usize, with_grad: bool) -> Diff {
    let n = parts.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; if with_grad { d } else { 0 }];
    for p in parts {
        value += p.value;
        for (g, pg) in grad.iter_mut().zip(&p.grad) {
            *g += pg;
        }
    }
    Diff {
        value: value / n,
        grad: grad.into_iter().map(|g| g / n).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    s: &[f64],
    problem: &Problem<'_>,
    b: f64,
    c: f64,
    cfg: &OptimizeConfig,
    key: u64,
    frozen: Option<&FactualSets>,
    with_grad: bool,
) -> Result<Objective> {
    let eval = Eval {
        problem,
        b,
        c,
        cfg,
        key,
        with_grad,
    };
    let d = problem.dim();
    let zero = || Diff {
        value: 0.0,
        grad: vec![0.0; if with_grad { d } else { 0 }],
    };
    let (pn, p_ab, nc, nc_set) = if cfg.ablation.disable_necessity {
        (0.0, 0.0, zero(), None)
    } else {
        eval.side(s, Side::Necessity, frozen.map(|f| &f.necessity))?
    };
    let (ps, p_nanb, sf, sf_set) = if cfg.ablation.disable_sufficiency {
        (0.0, 0.0, zero(), None)
    } else {
        eval.side(s, Side::Sufficiency, frozen.map(|f| &f.sufficiency))?
    };
    let terms = Terms {
        pn,
        ps,
        p_ab,
        p_nanb,
        necessity: nc.value,
        sufficiency: sf.value,
    };
    for (name, v) in [("pn", pn), ("ps", ps), ("p_ab", p_ab), ("p_nanb", p_nanb)] {
        if !v.is_finite() {
            return Err(FansError::numeric(format!("smooth objective term {name} is {v}")));
        }
    }
    let gradient: Vec<f64> = nc.grad.iter().zip(&sf.grad).map(|(a, b)| a + b).collect();
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(FansError::numeric("smooth objective gradient is not finite"));
    }
    Ok(Objective {
        value: nc.value + sf.value,
        gradient,
        terms,
        factual: FactualSets {
            necessity: nc_set,
            sufficiency: sf_set,
        },
    })
}

/// Central finite differences over every coordinate with the factual sets and
/// draws held fixed. Costs `2d` objective evaluations.
#[allow(clippy::too_many_arguments)]
fn finite_difference(
    s: &[f64],
    problem: &Problem<'_>,
    b: f64,
    c: f64,
    cfg: &OptimizeConfig,
    key: u64,
    frozen: &FactualSets,
    h: f64,
) -> Result<Vec<f64>> {
    (0..s.len())
        .map(|k| {
            let mut up = s.to_vec();
            let mut down = s.to_vec();
            up[k] += h;
            down[k] -= h;
            let fu = evaluate(&up, problem, b, c, cfg, key, Some(frozen), false)?.value;
            let fd = evaluate(&down, problem, b, c, cfg, key, Some(frozen), false)?.value;
            Ok((fu - fd) / (2.0 * h))
        })
        .collect()
}

/// Step used when the model has no gradient channel.
pub const FALLBACK_STEP: f64 = 1e-3;

/// Value and gradient of the relaxed objective at `s`. Draws come from `key`;
/// the factual sets are resampled from the weights at `s`.
pub fn smooth_objective(
    s: &RelaxedMask,
    problem: &Problem<'_>,
    b: f64,
    c: f64,
    cfg: &OptimizeConfig,
    key: u64,
) -> Result<Objective> {
    objective_at(s.values(), problem, b, c, cfg, key, None)
}

/// As [`smooth_objective`] with the factual sets fixed in advance, which makes
/// the objective a smooth function of `s` for a given key.
pub fn smooth_objective_frozen(
    s: &[f64],
    problem: &Problem<'_>,
    b: f64,
    c: f64,
    cfg: &OptimizeConfig,
    key: u64,
    factual: &FactualSets,
) -> Result<Objective> {
    objective_at(s, problem, b, c, cfg, key, Some(factual))
}

fn objective_at(
    s: &[f64],
    problem: &Problem<'_>,
    b: f64,
    c: f64,
    cfg: &OptimizeConfig,
    key: u64,
    frozen: Option<&FactualSets>,
) -> Result<Objective> {
    check_len("relaxed mask", problem.dim(), s.len())?;
    check_bc(b, c)?;
    cfg.validate()?;
    if problem.model.has_gradient() {
        return evaluate(s, problem, b, c, cfg, key, frozen, true);
    }
    let mut obj = evaluate(s, problem, b, c, cfg, key, frozen, false)?;
    let sets = obj.factual.clone();
    obj.gradient = finite_difference(s, problem, b, c, cfg, key, &sets, FALLBACK_STEP)?;
    Ok(obj)
}

/// Per-epoch record of one optimisation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Objective at the start of each epoch, under that epoch's draws.
    pub objectives: Vec<f64>,
    /// Objective of the initial and final mask under one shared evaluation key.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub mask: RelaxedMask,
    /// First epoch whose objective or gradient was not finite.
    pub diverged_at: Option<usize>,
    #[serde(skip)]
    pub wall_clock: Vec<Duration>,
}

impl TrainTrace {
    /// `epoch,objective` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["epoch", "objective"]).map_err(|e| csv_io(path, e))?;
        for (e, v) in self.objectives.iter().enumerate() {
            w.write_record([e.to_string(), v.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| FansError::io(path, e))
    }

    pub fn divergence(&self) -> Option<FansError> {
        self.diverged_at.map(|epoch| FansError::Divergence { epoch })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> FansError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FansError::io(path, io),
        other => FansError::numeric(format!("{}: {other:?}", path.display())),
    }
}

/// Key of the fixed draws used for the initial/final comparison.
pub fn evaluation_key(seed: u64) -> u64 {
    derive(seed, Domain::Epoch, u64::MAX)
}

/// Adam ascent from `s = 0.5` for `cfg.epochs` epochs with fresh draws each
/// epoch. A non-finite objective stops the run; the trace then ends early and
/// records the epoch.
pub fn optimize_mask(problem: &Problem<'_>, b: f64, c: f64, cfg: &OptimizeConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_bc(b, c)?;
    let d = problem.dim();
    let init = vec![0.5; d];
    let mut s = init.clone();
    let mut adam = Adam::new(d, cfg.learning_rate);
    let mut objectives = Vec::with_capacity(cfg.epochs);
    let mut wall_clock = Vec::with_capacity(cfg.epochs);
    let mut diverged_at = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let key = derive(cfg.seed, Domain::Epoch, epoch as u64);
        let obj = match objective_at(&s, problem, b, c, cfg, key, None) {
            Ok(obj) => obj,
            Err(FansError::Numeric(_)) => {
                diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        objectives.push(obj.value);
        for (si, step) in s.iter_mut().zip(adam.step(&obj.gradient)) {
            *si = (*si + step).clamp(0.0, 1.0);
        }
        wall_clock.push(start.elapsed());
    }
    let key = evaluation_key(cfg.seed);
    let value_of = |m: &[f64]| evaluate(m, problem, b, c, cfg, key, None, false).map(|o| o.value);
    Ok(TrainTrace {
        objectives,
        initial_objective: value_of(&init)?,
        final_objective: value_of(&s)?,
        mask: RelaxedMask::clamped(s),
        diverged_at,
        wall_clock,
    })
}
