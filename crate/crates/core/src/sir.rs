//! Sampling-importance-resampling for the factual stage.
//!
//! The observed sample set is the proposal. Each sample gets a weight
//! proportional to the probability of the factual event given that sample:
//! near the target on the kept dimensions and, after perturbing the other
//! side, a prediction that stays put (sufficiency) or moves (necessity).
//! The normalising constant is never materialised; it cancels in resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FansError, Result, Side};
use crate::model::{Predictor, ScalarReadout};
use crate::parallel;
use crate::perturb::{perturb_in_place, sample_mask, subset_distance, Baseline, DimSubset, NormOrder};
use crate::rng::{task_rng, Domain};

/// Draws from the data distribution, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    rows: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(FansError::config("sample set is empty"));
        }
        let d = rows[0].len();
        if let Some((row, x)) = rows.iter().enumerate().find(|(_, x)| x.len() != d) {
            return Err(FansError::RowLength {
                row,
                expected: d,
                found: x.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.rows[i].clone()).collect()
    }
}

/// The triple defining the perturbation event on `subset` within boundary
/// `b` and the prediction-change event with threshold `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub subset: DimSubset,
    pub b: f64,
    pub c: f64,
    pub p: NormOrder,
}

impl EventParams {
    pub fn new(subset: DimSubset, b: f64, c: f64) -> Result<Self> {
        let ev = Self {
            subset,
            b,
            c,
            p: NormOrder::L2,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn validate(&self) -> Result<()> {
        check_bc(self.b, self.c)
    }
}

pub(crate) fn check_bc(b: f64, c: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(FansError::config(format!(
            "boundary b must be positive and finite, got {b}"
        )));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(FansError::config(format!(
            "threshold c must be non-negative and finite, got {c}"
        )));
    }
    Ok(())
}

/// Everything a weight needs besides the sample and the event.
#[derive(Clone, Copy)]
pub struct WeightContext<'a> {
    pub model: &'a dyn Predictor,
    pub target: &'a [f64],
    pub baseline: &'a Baseline,
    pub readout: ScalarReadout,
    pub phi: f64,
}

/// `exp(-dist^2 / 2b^2)`
pub fn distance_kernel(dist: f64, b: f64) -> f64 {
    (-(dist * dist) / (2.0 * b * b)).exp()
}

/// Soft version of `|delta| <= c`. With `c == 0` it degenerates to the exact
/// indicator `delta == 0`.
pub fn unchanged_kernel(delta: f64, c: f64) -> f64 {
    if c == 0.0 {
        f64::from(u8::from(delta == 0.0))
    } else {
        (-(delta * delta) / (2.0 * c * c)).exp()
    }
}

pub fn changed_kernel(delta: f64, c: f64) -> f64 {
    1.0 - unchanged_kernel(delta, c)
}

/// Prediction shift `f(g(x, dims, x')) - f(x)` for one mask draw.
pub(crate) fn prediction_shift(
    ctx: &WeightContext<'_>,
    x: &[f64],
    fx: f64,
    dims: &[usize],
    rng: &mut impl Rng,
) -> Result<f64> {
    let m = sample_mask(x.len(), ctx.phi, rng);
    let mut xp = x.to_vec();
    perturb_in_place(&mut xp, dims, &ctx.baseline.values, &m);
    Ok(ctx.model.predict_scalar(&xp, ctx.readout)? - fx)
}

fn check_sample(ctx: &WeightContext<'_>, x: &[f64], ev: &EventParams) -> Result<()> {
    check_len("sample", ctx.target.len(), x.len())?;
    check_len("event subset", x.len(), ev.subset.dim())?;
    check_len("baseline", x.len(), ctx.baseline.dim())
}

fn soft_weight(
    ctx: &WeightContext<'_>,
    ev: &EventParams,
    x: &[f64],
    side: Side,
    n_inner: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    check_sample(ctx, x, ev)?;
    if n_inner == 0 {
        return Err(FansError::config("n_inner must be at least 1"));
    }
    // Sufficiency conditions on the complement and perturbs it; necessity
    // conditions on and perturbs the subset itself.
    let dims = match side {
        Side::Sufficiency => ev.subset.complement(),
        Side::Necessity => ev.subset.clone(),
    };
    let proximity = distance_kernel(subset_distance(x, ctx.target, &dims, ev.p), ev.b);
    let fx = ctx.model.predict_scalar(x, ctx.readout)?;
    let mut acc = 0.0;
    for _ in 0..n_inner {
        let delta = prediction_shift(ctx, x, fx, dims.indices(), rng)?;
        acc += match side {
            Side::Sufficiency => unchanged_kernel(delta, ev.c),
            Side::Necessity => changed_kernel(delta, ev.c),
        };
    }
    Ok(proximity * acc / n_inner as f64)
}

/// Soft sufficiency weight: proximity on the complement of `s` times the
/// averaged kernel for "prediction unchanged after perturbing the complement".
pub fn weight_sufficiency(
    ctx: &WeightContext<'_>,
    ev: &EventParams,
    x: &[f64],
    n_inner: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    soft_weight(ctx, ev, x, Side::Sufficiency, n_inner, rng)
}

/// Soft necessity weight: proximity on `s` times the averaged kernel for
/// "prediction changed after perturbing `s`".
pub fn weight_necessity(
    ctx: &WeightContext<'_>,
    ev: &EventParams,
    x: &[f64],
    n_inner: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    soft_weight(ctx, ev, x, Side::Necessity, n_inner, rng)
}

/// Hard sufficiency weight: zero outside the `b`-ball on the complement,
/// otherwise the Monte-Carlo frequency of `|delta| <= c`.
pub fn weight_hard(
    ctx: &WeightContext<'_>,
    ev: &EventParams,
    x: &[f64],
    n_inner: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    check_sample(ctx, x, ev)?;
    if n_inner == 0 {
        return Err(FansError::config("n_inner must be at least 1"));
    }
    let comp = ev.subset.complement();
    if subset_distance(x, ctx.target, &comp, ev.p) > ev.b {
        return Ok(0.0);
    }
    let fx = ctx.model.predict_scalar(x, ctx.readout)?;
    let mut kept = 0usize;
    for _ in 0..n_inner {
        let delta = prediction_shift(ctx, x, fx, comp.indices(), rng)?;
        kept += usize::from(delta.abs() <= ev.c);
    }
    Ok(kept as f64 / n_inner as f64)
}

/// Soft weights for every sample; sample `i` draws from its own stream.
pub fn compute_weights(
    ctx: &WeightContext<'_>,
    ev: &EventParams,
    samples: &SampleSet,
    side: Side,
    n_inner: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let domain = match side {
        Side::Sufficiency => Domain::WeightSufficiency,
        Side::Necessity => Domain::WeightNecessity,
    };
    parallel::try_map_indexed(samples.len(), |i| {
        let mut rng = task_rng(seed, domain, i as u64);
        soft_weight(ctx, ev, &samples.rows[i], side, n_inner, &mut rng)
    })
}

fn cumulative(weights: &[f64], side: Side) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(FansError::numeric(format!(
            "resampling weight {w} is not a finite non-negative number"
        )));
    }
    let cum: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    match cum.last() {
        Some(&total) if total > 0.0 => Ok(cum),
        _ => Err(FansError::EmptySupport { side }),
    }
}

/// Inverse-CDF lookup of pre-drawn uniforms in `[0, 1)`. Zero-weight entries
/// are never selected.
pub fn resample_with_uniforms(weights: &[f64], uniforms: &[f64], side: Side) -> Result<Vec<usize>> {
    let cum = cumulative(weights, side)?;
    let total = *cum.last().expect("non-empty");
    let last_positive = weights.iter().rposition(|&w| w > 0.0).expect("total > 0");
    Ok(uniforms
        .iter()
        .map(|&u| cum.partition_point(|&c| c <= u * total).min(last_positive))
        .collect())
}

/// Draw `k` indices with replacement, `P(i) = w_i / sum(w)`.
pub fn sir_resample(weights: &[f64], k: usize, side: Side, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(FansError::config("resample size must be at least 1"));
    }
    let uniforms: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    resample_with_uniforms(weights, &uniforms, side)
}

/// Estimates of `P(A, B)` and `P(not A, not B)` as mean weights, clamped to
/// `[0, 1]`. The raw sums are kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProbs {
    pub p_ab: f64,
    pub p_nanb: f64,
    pub raw_sum_ab: f64,
    pub raw_sum_nanb: f64,
}

pub fn estimate_joint_probs(w_nc: &[f64], w_sf: &[f64]) -> Result<JointProbs> {
    if w_nc.is_empty() || w_sf.is_empty() {
        return Err(FansError::config("joint probabilities need a non-empty sample set"));
    }
    check_len("sufficiency weights", w_nc.len(), w_sf.len())?;
    let raw_sum_ab: f64 = w_nc.iter().sum();
    let raw_sum_nanb: f64 = w_sf.iter().sum();
    Ok(JointProbs {
        p_ab: (raw_sum_ab / w_nc.len() as f64).clamp(0.0, 1.0),
        p_nanb: (raw_sum_nanb / w_sf.len() as f64).clamp(0.0, 1.0),
        raw_sum_ab,
        raw_sum_nanb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mlp;

    fn ctx<'a>(model: &'a dyn Predictor, target: &'a [f64], baseline: &'a Baseline) -> WeightContext<'a> {
        WeightContext {
            model,
            target,
            baseline,
            readout: ScalarReadout::new(0),
            phi: 0.5,
        }
    }

    #[test]
    fn constant_model_weights() {
        let m = Mlp::constant(3, 1);
        let t = [1.0, 1.0, 1.0];
        let base = Baseline::zeros(3);
        let c = ctx(&m, &t, &base);
        let ev = EventParams::new(DimSubset::new(vec![0], 3).unwrap(), 1.0, 0.05).unwrap();
        let mut rng = task_rng(0, Domain::Resample, 0);
        assert_eq!(weight_sufficiency(&c, &ev, &t, 8, &mut rng).unwrap(), 1.0);
        assert_eq!(weight_necessity(&c, &ev, &t, 8, &mut rng).unwrap(), 0.0);
        assert_eq!(weight_hard(&c, &ev, &t, 8, &mut rng).unwrap(), 1.0);
        // complement distance sqrt(0.6^2 + 0.8^2) = 1 = b
        let x = [5.0, 1.6, 1.8];
        let w = weight_sufficiency(&c, &ev, &x, 8, &mut rng).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w - 0.6065).abs() < 1e-4);
        let far = [1.0, 3.0, 3.0];
        assert_eq!(weight_hard(&c, &ev, &far, 8, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn kernel_values() {
        let c = 0.2;
        assert!((changed_kernel(c, c) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((changed_kernel(c, c) - 0.3935).abs() < 1e-4);
        // exp(-d^2/2c^2) < 0.1 once |d| > c * sqrt(2 ln 10) ~ 2.146 c
        assert!(unchanged_kernel(2.146 * c, c) < 0.1001);
        assert!(unchanged_kernel(2.15 * c, c) < 0.1);
        assert_eq!(unchanged_kernel(0.0, 0.0), 1.0);
        assert_eq!(unchanged_kernel(1e-300, 0.0), 0.0);
        assert!(changed_kernel(1e3, 1e-3) > 1.0 - 1e-12);
    }

    #[test]
    fn necessity_weight_for_a_unit_shift() {
        // f(x) = 0.5 + x_1 / 10 clipped into [0,1]; perturbing x_1 from 1 to 0
        // moves the prediction by exactly 0.1 = c when the mask fires.
        let m = crate::model::FnModel::new(1, 1, |x: &[f64]| vec![0.5 + x[0] / 10.0]);
        let t = [1.0];
        let base = Baseline::zeros(1);
        let c = WeightContext {
            phi: 1.0,
            ..ctx(&m, &t, &base)
        };
        let ev = EventParams::new(DimSubset::full(1), 1.0, 0.1).unwrap();
        let mut rng = task_rng(0, Domain::Resample, 0);
        let w = weight_necessity(&c, &ev, &t, 4, &mut rng).unwrap();
        assert!((w - 0.3935).abs() < 1e-4, "{w}");
    }

    #[test]
    fn hard_weight_enumerates_single_coordinate() {
        // Example-1 logistic with the complement {1}: perturbing x_2 to 0 at
        // x_t = (1,1,1) moves f from s(-20) to s(0) which exceeds c; keeping it does not.
        let m = Mlp::logistic(vec![20.0, -20.0, 0.0], -20.0).unwrap();
        let t = [1.0, 1.0, 1.0];
        let base = Baseline::zeros(3);
        let c = ctx(&m, &t, &base);
        let ev = EventParams::new(DimSubset::new(vec![0, 2], 3).unwrap(), 1.0, 0.01).unwrap();
        let mut rng = task_rng(4, Domain::Resample, 0);
        let w = weight_hard(&c, &ev, &t, 4000, &mut rng).unwrap();
        // exact: P(mask off) = 1/2
        assert!((w - 0.5).abs() < 0.03, "{w}");
    }

    #[test]
    fn large_b_and_c_limits() {
        let m = Mlp::logistic(vec![1.0, -2.0, 0.5], 0.3).unwrap();
        let t = [0.3, -0.2, 1.0];
        let base = Baseline::zeros(3);
        let c = ctx(&m, &t, &base);
        let ev = EventParams::new(DimSubset::new(vec![1], 3).unwrap(), 1e6, 1e6).unwrap();
        let mut rng = task_rng(1, Domain::Resample, 0);
        for x in [[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]] {
            assert!(weight_sufficiency(&c, &ev, &x, 8, &mut rng).unwrap() > 1.0 - 1e-9);
            assert!(weight_necessity(&c, &ev, &x, 8, &mut rng).unwrap() < 1e-9);
        }
    }

    #[test]
    fn sufficiency_weight_decreases_with_distance() {
        let m = Mlp::constant(2, 1);
        let t = [0.0, 0.0];
        let base = Baseline::zeros(2);
        let c = ctx(&m, &t, &base);
        let ev = EventParams::new(DimSubset::new(vec![0], 2).unwrap(), 0.7, 0.1).unwrap();
        let mut rng = task_rng(1, Domain::Resample, 0);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let w = weight_sufficiency(&c, &ev, &[3.0, k as f64 * 0.1], 2, &mut rng).unwrap();
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn resample_single_positive_weight() {
        let mut rng = task_rng(2, Domain::Resample, 0);
        let idx = sir_resample(&[0.0, 0.0, 0.3, 0.0], 50, Side::Necessity, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 2));
        assert!(matches!(
            sir_resample(&[0.0, 0.0], 5, Side::Sufficiency, &mut rng),
            Err(FansError::EmptySupport {
                side: Side::Sufficiency
            })
        ));
    }

    #[test]
    fn resample_frequencies() {
        let mut rng = task_rng(3, Domain::Resample, 0);
        let k = 100_000;
        let idx = sir_resample(&[0.75, 0.25], k, Side::Necessity, &mut rng).unwrap();
        let first = idx.iter().filter(|&&i| i == 0).count() as f64 / k as f64;
        assert!((first - 0.75).abs() < 0.01);
        let idx = sir_resample(&[1.0; 5], k, Side::Necessity, &mut rng).unwrap();
        for j in 0..5 {
            let p = idx.iter().filter(|&&i| i == j).count() as f64 / k as f64;
            let sigma = (0.2f64 * 0.8 / k as f64).sqrt();
            assert!((p - 0.2).abs() < 3.0 * sigma + 1e-12, "{j}: {p}");
        }
    }

    #[test]
    fn joint_probabilities() {
        let jp = estimate_joint_probs(&[0.2, 0.4, 0.6], &[1.0, 1.0, 1.0]).unwrap();
        assert!((jp.p_ab - 0.4).abs() < 1e-15);
        assert_eq!(jp.p_nanb, 1.0);
        assert!((jp.raw_sum_ab - 1.2).abs() < 1e-15);
        assert!(estimate_joint_probs(&[], &[]).is_err());
    }

    #[test]
    fn weights_do_not_depend_on_scheduling() {
        let m = Mlp::logistic(vec![3.0, -2.0, 1.0], 0.1).unwrap();
        let t = [0.5, 0.5, 0.5];
        let base = Baseline::zeros(3);
        let c = ctx(&m, &t, &base);
        let ev = EventParams::new(DimSubset::new(vec![0, 2], 3).unwrap(), 1.2, 0.05).unwrap();
        let rows = (0..64)
            .map(|i| vec![i as f64 / 32.0 - 1.0, 0.3, -(i as f64) / 64.0])
            .collect();
        let set = SampleSet::new(rows).unwrap();
        let par = compute_weights(&c, &ev, &set, Side::Necessity, 8, 5).unwrap();
        let seq = parallel::sequential(|| compute_weights(&c, &ev, &set, Side::Necessity, 8, 5).unwrap());
        assert_eq!(par, seq);
        assert!(par.iter().all(|w| (0.0..=1.0).contains(w)));
    }
}
