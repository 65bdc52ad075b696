//! The dual-stage perturbation test for a fixed dimension subset.
//!
//! Factual stage: weight every observed sample by how well it matches the
//! factual event and resample. Interventional stage: apply the opposite
//! perturbation to the resampled inputs and count how often the prediction
//! moves (sufficiency) or stays (necessity). The two are combined with the
//! joint probabilities of the factual events into a single score.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FansError, Result, Side};
use crate::model::{Predictor, ScalarReadout};
use crate::parallel;
use crate::perturb::{check_phi, Baseline, DimSubset, NormOrder};
use crate::rng::{task_rng, Domain};
use crate::sir::{
    check_bc, compute_weights, estimate_joint_probs, prediction_shift, sir_resample, EventParams, SampleSet,
    WeightContext,
};

/// Target input, observed samples and model, checked for consistent shapes.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a dyn Predictor,
    pub target: &'a [f64],
    pub samples: &'a SampleSet,
    pub baseline: &'a Baseline,
    pub readout: ScalarReadout,
}

impl<'a> Problem<'a> {
    pub fn new(
        model: &'a dyn Predictor,
        target: &'a [f64],
        samples: &'a SampleSet,
        baseline: &'a Baseline,
        readout: ScalarReadout,
    ) -> Result<Self> {
        let d = target.len();
        if d == 0 {
            return Err(FansError::config("target input is empty"));
        }
        check_len("model input", model.input_dim(), d)?;
        check_len("sample dimension", d, samples.dim())?;
        check_len("baseline", d, baseline.dim())?;
        readout.check(model.output_dim())?;
        Ok(Self {
            model,
            target,
            samples,
            baseline,
            readout,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub(crate) fn context(&self, phi: f64) -> WeightContext<'a> {
        WeightContext {
            model: self.model,
            target: self.target,
            baseline: self.baseline,
            readout: self.readout,
            phi,
        }
    }
}

/// `1.06 * |E|^(1/(4+d))`, evaluated as written.
pub fn estimate_boundary_b(n_samples: usize, d: usize) -> Result<f64> {
    if n_samples == 0 || d == 0 {
        return Err(FansError::config("boundary heuristic needs |E| >= 1 and d >= 1"));
    }
    Ok(1.06 * (n_samples as f64).powf(1.0 / (4 + d) as f64))
}

/// Largest prediction change under `N(0, sigma^2 I)` input noise over
/// `n_noise` draws per sample.
pub fn estimate_threshold_c(
    samples: &SampleSet,
    model: &dyn Predictor,
    readout: ScalarReadout,
    sigma: f64,
    n_noise: usize,
    seed: u64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FansError::config(format!("noise scale must be positive, got {sigma}")));
    }
    if n_noise == 0 {
        return Err(FansError::config("need at least one noise draw per sample"));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| FansError::config(e.to_string()))?;
    let per_sample = parallel::try_map_indexed(samples.len(), |i| {
        let mut rng = task_rng(seed, Domain::Threshold, i as u64);
        let x = &samples.rows()[i];
        let fx = model.predict_scalar(x, readout)?;
        let mut worst = 0.0f64;
        for _ in 0..n_noise {
            let z: Vec<f64> = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
            worst = worst.max((model.predict_scalar(&z, readout)? - fx).abs());
        }
        Ok::<_, FansError>(worst)
    })?;
    Ok(per_sample.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heuristics {
    pub b: f64,
    pub c: f64,
    pub sigma: f64,
    pub n_noise: usize,
}

impl Heuristics {
    pub const DEFAULT_SIGMA: f64 = 0.001;
    pub const DEFAULT_N_NOISE: usize = 10;

    pub fn estimate(problem: &Problem<'_>, sigma: f64, n_noise: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            b: estimate_boundary_b(problem.samples.len(), problem.dim())?,
            c: estimate_threshold_c(problem.samples, problem.model, problem.readout, sigma, n_noise, seed)?,
            sigma,
            n_noise,
        })
    }
}

/// Switches that remove one part of the estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_sufficiency: bool,
    pub disable_necessity: bool,
    /// Use the raw samples as both factual sets instead of resampling.
    pub disable_sir: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.disable_sufficiency && self.disable_necessity {
            return Err(FansError::config(
                "cannot disable both the sufficiency and the necessity module",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub b: f64,
    pub c: f64,
    pub p: NormOrder,
    pub phi: f64,
    /// Mask draws per sample inside each soft weight.
    pub n_inner: usize,
    pub t_sf: usize,
    pub t_nc: usize,
    pub resample_size: usize,
    pub ablation: Ablation,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn new(b: f64, c: f64) -> Self {
        Self {
            b,
            c,
            p: NormOrder::L2,
            phi: 0.5,
            n_inner: 8,
            t_sf: 50,
            t_nc: 50,
            resample_size: 1,
            ablation: Ablation::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bc(self.b, self.c)?;
        check_phi(self.phi)?;
        self.ablation.validate()?;
        if self.n_inner == 0 || self.t_sf == 0 || self.t_nc == 0 || self.resample_size == 0 {
            return Err(FansError::config("draw counts and resample size must be at least 1"));
        }
        Ok(())
    }
}

fn intervention_rate(
    ctx: &WeightContext<'_>,
    factual: &[&[f64]],
    dims: &DimSubset,
    c: f64,
    t: usize,
    seed: u64,
    side: Side,
) -> Result<f64> {
    if factual.is_empty() {
        return Err(FansError::EmptySupport { side });
    }
    if t == 0 {
        return Err(FansError::config("need at least one perturbation draw"));
    }
    let domain = match side {
        Side::Sufficiency => Domain::InterventionSufficiency,
        Side::Necessity => Domain::InterventionNecessity,
    };
    let counts = parallel::try_map_indexed(factual.len(), |j| {
        let x = factual[j];
        check_len("factual sample", dims.dim(), x.len())?;
        let mut rng = task_rng(seed, domain, j as u64);
        let fx = ctx.model.predict_scalar(x, ctx.readout)?;
        let mut hits = 0u64;
        for _ in 0..t {
            let delta = prediction_shift(ctx, x, fx, dims.indices(), &mut rng)?;
            hits += u64::from(match side {
                Side::Sufficiency => delta.abs() > c,
                Side::Necessity => delta.abs() <= c,
            });
        }
        Ok::<_, FansError>(hits)
    })?;
    let hits: u64 = counts.into_iter().sum();
    Ok(hits as f64 / (factual.len() * t) as f64)
}

/// Fraction of perturbations of `s` on the sufficiency factual set that move
/// the prediction by more than `c`.
pub fn estimate_ps(
    ctx: &WeightContext<'_>,
    factual: &[&[f64]],
    s: &DimSubset,
    c: f64,
    t_sf: usize,
    seed: u64,
) -> Result<f64> {
    intervention_rate(ctx, factual, s, c, t_sf, seed, Side::Sufficiency)
}

/// Fraction of perturbations of the complement of `s` on the necessity
/// factual set that leave the prediction within `c`.
pub fn estimate_pn(
    ctx: &WeightContext<'_>,
    factual: &[&[f64]],
    s: &DimSubset,
    c: f64,
    t_nc: usize,
    seed: u64,
) -> Result<f64> {
    intervention_rate(ctx, factual, &s.complement(), c, t_nc, seed, Side::Necessity)
}

/// Output of the factual stage. A side is `None` when it was disabled or its
/// weights had no support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualSets {
    pub necessity: Option<Vec<usize>>,
    pub sufficiency: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualStage {
    pub w_nc: Vec<f64>,
    pub w_sf: Vec<f64>,
    pub sets: FactualSets,
    /// Sides whose factual set is empty, in necessity-then-sufficiency order.
    pub empty_support: Vec<Side>,
}

/// Weights on both sides followed by SIR (or the raw sample set under the
/// `disable_sir` ablation).
pub fn factual_stage(problem: &Problem<'_>, s: &DimSubset, cfg: &AttributionConfig) -> Result<FactualStage> {
    cfg.validate()?;
    check_len("subset dimension", problem.dim(), s.dim())?;
    let ctx = problem.context(cfg.phi);
    let ev = EventParams {
        subset: s.clone(),
        b: cfg.b,
        c: cfg.c,
        p: cfg.p,
    };
    let mut empty_support = Vec::new();
    let mut side_set = |side: Side, enabled: bool, weights: &[f64], domain: Domain| -> Result<Option<Vec<usize>>> {
        // With nothing left to perturb on the complement, the sufficiency
        // condition has an empty domain.
        let undefined = side == Side::Sufficiency && s.len() == s.dim();
        if !enabled || undefined || weights.iter().all(|&w| w == 0.0) {
            if enabled {
                empty_support.push(side);
            }
            return Ok(None);
        }
        if cfg.ablation.disable_sir {
            return Ok(Some((0..weights.len()).collect()));
        }
        let mut rng = task_rng(cfg.seed, domain, 0);
        sir_resample(weights, cfg.resample_size, side, &mut rng).map(Some)
    };
    let nc_on = !cfg.ablation.disable_necessity;
    let sf_on = !cfg.ablation.disable_sufficiency;
    let w_nc = if nc_on {
        compute_weights(&ctx, &ev, problem.samples, Side::Necessity, cfg.n_inner, cfg.seed)?
    } else {
        vec![0.0; problem.samples.len()]
    };
    let w_sf = if sf_on {
        compute_weights(&ctx, &ev, problem.samples, Side::Sufficiency, cfg.n_inner, cfg.seed)?
    } else {
        vec![0.0; problem.samples.len()]
    };
    let necessity = side_set(Side::Necessity, nc_on, &w_nc, Domain::ResampleNecessity)?;
    let sufficiency = side_set(Side::Sufficiency, sf_on, &w_sf, Domain::ResampleSufficiency)?;
    Ok(FactualStage {
        w_nc,
        w_sf,
        sets: FactualSets { necessity, sufficiency },
        empty_support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub samples: usize,
    pub resampled_necessity: usize,
    pub resampled_sufficiency: usize,
    pub n_inner: usize,
    pub t_sf: usize,
    pub t_nc: usize,
    pub raw_weight_sum_nc: f64,
    pub raw_weight_sum_sf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub pn: f64,
    pub ps: f64,
    pub p_ab: f64,
    pub p_nanb: f64,
    pub pns: f64,
    pub ev: EventParams,
    /// Sides whose contribution was set to zero for lack of factual samples.
    pub empty_support: Vec<Side>,
    pub diagnostics: Diagnostics,
}

impl AttributionResult {
    pub fn necessity_term(&self) -> f64 {
        self.pn * self.p_ab
    }

    pub fn sufficiency_term(&self) -> f64 {
        self.ps * self.p_nanb
    }
}

/// Full dual-stage estimate of the score of subset `s` at fixed `(b, c)`.
pub fn attribution_for_subset(
    problem: &Problem<'_>,
    s: &DimSubset,
    cfg: &AttributionConfig,
) -> Result<AttributionResult> {
    let stage = factual_stage(problem, s, cfg)?;
    let ctx = problem.context(cfg.phi);
    let rows = |set: &Option<Vec<usize>>| -> Vec<&[f64]> {
        set.iter()
            .flatten()
            .map(|&i| problem.samples.rows()[i].as_slice())
            .collect()
    };
    let nc_rows = rows(&stage.sets.necessity);
    let sf_rows = rows(&stage.sets.sufficiency);
    let pn = if nc_rows.is_empty() {
        0.0
    } else {
        estimate_pn(&ctx, &nc_rows, s, cfg.c, cfg.t_nc, cfg.seed)?
    };
    let ps = if sf_rows.is_empty() {
        0.0
    } else {
        estimate_ps(&ctx, &sf_rows, s, cfg.c, cfg.t_sf, cfg.seed)?
    };
    let joint = estimate_joint_probs(&stage.w_nc, &stage.w_sf)?;
    let pns = pn * joint.p_ab + ps * joint.p_nanb;
    Ok(AttributionResult {
        pn,
        ps,
        p_ab: joint.p_ab,
        p_nanb: joint.p_nanb,
        pns,
        ev: EventParams {
            subset: s.clone(),
            b: cfg.b,
            c: cfg.c,
            p: cfg.p,
        },
        empty_support: stage.empty_support,
        diagnostics: Diagnostics {
            samples: problem.samples.len(),
            resampled_necessity: nc_rows.len(),
            resampled_sufficiency: sf_rows.len(),
            n_inner: cfg.n_inner,
            t_sf: cfg.t_sf,
            t_nc: cfg.t_nc,
            raw_weight_sum_nc: joint.raw_sum_ab,
            raw_weight_sum_sf: joint.raw_sum_nanb,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    pub c: f64,
    pub pns: f64,
    pub heuristic: bool,
}

/// Score of `s` at every `(b, c)` on the grid, b-major. The heuristic point is
/// appended when the grid does not already contain it, and flagged either way.
pub fn sweep(
    problem: &Problem<'_>,
    s: &DimSubset,
    bs: &[f64],
    cs: &[f64],
    heuristic: (f64, f64),
    cfg: &AttributionConfig,
) -> Result<Vec<SweepRow>> {
    if bs.is_empty() || cs.is_empty() {
        return Err(FansError::config("sweep grid is empty"));
    }
    let mut points: Vec<(f64, f64)> = bs.iter().flat_map(|&b| cs.iter().map(move |&c| (b, c))).collect();
    if !points.contains(&heuristic) {
        points.push(heuristic);
    }
    points
        .into_iter()
        .map(|(b, c)| {
            let r = attribution_for_subset(problem, s, &AttributionConfig { b, c, ..*cfg })?;
            Ok(SweepRow {
                b,
                c,
                pns: r.pns,
                heuristic: (b, c) == heuristic,
            })
        })
        .collect()
}
