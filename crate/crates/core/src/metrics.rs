//! Evaluation battery for attributions: infidelity, IROF, fidelity+/-,
//! max-sensitivity, sparseness and recall against a known support.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FansError, Result};
use crate::model::{predicted_class, Predictor, ScalarReadout};
use crate::parallel;
use crate::perturb::{Baseline, DimSubset};
use crate::rng::{task_rng, Domain};

fn degenerate(metric: &'static str, message: impl Into<String>) -> FansError {
    FansError::Degenerate {
        metric,
        message: message.into(),
    }
}

fn check_finite(metric: &'static str, a: &[f64]) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(degenerate(metric, "attribution has non-finite entries"))
    }
}

/// `E_m[((x - x*m) . a - (f(x) - f(x*m)))^2]` with `m ~ U(0,1)^d`, estimated
/// from `n` draws.
pub fn infidelity(
    a: &[f64],
    x: &[f64],
    model: &dyn Predictor,
    readout: ScalarReadout,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_len("attribution", x.len(), a.len())?;
    check_finite("infidelity", a)?;
    if n == 0 {
        return Err(degenerate("infidelity", "need at least one draw"));
    }
    let fx = model.predict_scalar(x, readout)?;
    let sq = parallel::try_map_indexed(n, |j| {
        let mut rng = task_rng(seed, Domain::Infidelity, j as u64);
        let m: Vec<f64> = (0..x.len()).map(|_| rng.random::<f64>()).collect();
        let xm: Vec<f64> = x.iter().zip(&m).map(|(xi, mi)| xi * mi).collect();
        let lhs: f64 = x.iter().zip(&xm).zip(a).map(|((xi, xmi), ai)| (xi - xmi) * ai).sum();
        let rhs = fx - model.predict_scalar(&xm, readout)?;
        Ok::<_, FansError>((lhs - rhs).powi(2))
    })?;
    Ok(sq.iter().sum::<f64>() / n as f64)
}

/// Partition of `0..d` into non-empty segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    segments: Vec<Vec<usize>>,
    dim: usize,
}

impl Segmentation {
    pub fn new(segments: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for seg in &segments {
            if seg.is_empty() {
                return Err(FansError::config("segments must be non-empty"));
            }
            for &i in seg {
                if i >= dim {
                    return Err(FansError::Index { index: i, dim });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(FansError::config(format!("feature {i} appears in two segments")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(FansError::config(format!("feature {i} is not covered by any segment")));
        }
        Ok(Self { segments, dim })
    }

    /// One segment per feature.
    pub fn features(dim: usize) -> Self {
        Self {
            segments: (0..dim).map(|i| vec![i]).collect(),
            dim,
        }
    }

    /// Square `tile x tile` patches of a row-major `h x w` image; edge tiles
    /// may be smaller.
    pub fn tiles(h: usize, w: usize, tile: usize) -> Result<Self> {
        if tile == 0 || h == 0 || w == 0 {
            return Err(FansError::config("image shape and tile size must be positive"));
        }
        let mut segments = Vec::new();
        for r0 in (0..h).step_by(tile) {
            for c0 in (0..w).step_by(tile) {
                segments.push(
                    (r0..(r0 + tile).min(h))
                        .flat_map(|r| (c0..(c0 + tile).min(w)).map(move |c| r * w + c))
                        .collect(),
                );
            }
        }
        Self::new(segments, h * w)
    }

    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Area over a curve that starts at 1: `L - trapezoid(y_0..y_L)` with unit spacing.
pub fn area_over_curve(curve: &[f64]) -> f64 {
    let l = curve.len().saturating_sub(1);
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    l as f64 - area
}

/// Normalised class-score curve for one input: `y_0 = 1`, then the score
/// after removing the `l` highest-ranked segments, divided by `f(x)_i`.
pub fn irof_curve(
    a: &[f64],
    x: &[f64],
    model: &dyn Predictor,
    readout: ScalarReadout,
    seg: &Segmentation,
    baseline: &Baseline,
) -> Result<Vec<f64>> {
    check_len("attribution", x.len(), a.len())?;
    check_len("segmentation", x.len(), seg.dim)?;
    check_len("baseline", x.len(), baseline.dim())?;
    check_finite("irof", a)?;
    if seg.len() < 2 {
        return Err(degenerate("irof", "need at least two segments"));
    }
    let f0 = model.predict_scalar(x, readout)?;
    if f0 == 0.0 {
        return Err(degenerate("irof", "class score of the unperturbed input is 0"));
    }
    let mean = |s: &Vec<usize>| s.iter().map(|&i| a[i]).sum::<f64>() / s.len() as f64;
    let mut order: Vec<usize> = (0..seg.len()).collect();
    order.sort_by(|&p, &q| mean(&seg.segments[q]).total_cmp(&mean(&seg.segments[p])));
    let mut z = x.to_vec();
    let mut curve = vec![1.0];
    for &k in &order {
        for &i in &seg.segments[k] {
            z[i] = baseline.values[i];
        }
        curve.push(model.predict_scalar(&z, readout)? / f0);
    }
    Ok(curve)
}

/// Mean area over the IROF curve. `readout = None` scores each input's own
/// predicted class.
pub fn irof(
    attributions: &[Vec<f64>],
    inputs: &[Vec<f64>],
    model: &dyn Predictor,
    readout: Option<ScalarReadout>,
    seg: &Segmentation,
    baseline: &Baseline,
) -> Result<f64> {
    check_len("attribution list", inputs.len(), attributions.len())?;
    if inputs.is_empty() {
        return Err(degenerate("irof", "no inputs"));
    }
    let aocs = parallel::try_map_indexed(inputs.len(), |j| {
        let r = match readout {
            Some(r) => r,
            None => ScalarReadout::argmax(model, &inputs[j])?,
        };
        irof_curve(&attributions[j], &inputs[j], model, r, seg, baseline).map(|c| area_over_curve(&c))
    })?;
    Ok(aocs.iter().sum::<f64>() / inputs.len() as f64)
}

/// Binary mask of the `k` highest entries of `a`; ties go to the lower index.
pub fn top_k_mask(a: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; a.len()];
    for i in top_n(a, k) {
        mask[i] = true;
    }
    mask
}

fn top_n(a: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&p, &q| a[q].total_cmp(&a[p]));
    order.truncate(n);
    order
}

/// `ceil(keep_fraction * d)`, at least 1.
pub fn keep_count(keep_fraction: f64, d: usize) -> Result<usize> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(degenerate(
            "fidelity",
            format!("keep fraction {keep_fraction} outside (0, 1]"),
        ));
    }
    Ok(((keep_fraction * d as f64).ceil() as usize).clamp(1, d.max(1)))
}

fn fidelity_masks(inputs: &[Vec<f64>], masks: &[Vec<bool>], model: &dyn Predictor, keep: bool) -> Result<f64> {
    check_len("mask list", inputs.len(), masks.len())?;
    if inputs.is_empty() {
        return Err(degenerate("fidelity", "no inputs"));
    }
    let same = parallel::try_map_indexed(inputs.len(), |j| {
        let x = &inputs[j];
        check_len("fidelity mask", x.len(), masks[j].len())?;
        let z: Vec<f64> = x
            .iter()
            .zip(&masks[j])
            .map(|(&v, &m)| if m == keep { v } else { 0.0 })
            .collect();
        Ok::<_, FansError>(predicted_class(model, x)? == predicted_class(model, &z)?)
    })?;
    let kept = same.iter().filter(|&&s| s).count();
    Ok(1.0 - kept as f64 / inputs.len() as f64)
}

/// Share of inputs whose predicted class changes when the masked features are
/// zeroed (`x * (1 - m)`).
pub fn fidelity_plus_masks(inputs: &[Vec<f64>], masks: &[Vec<bool>], model: &dyn Predictor) -> Result<f64> {
    fidelity_masks(inputs, masks, model, false)
}

/// Share of inputs whose predicted class changes when only the masked
/// features are kept (`x * m`).
pub fn fidelity_minus_masks(inputs: &[Vec<f64>], masks: &[Vec<bool>], model: &dyn Predictor) -> Result<f64> {
    fidelity_masks(inputs, masks, model, true)
}

fn top_masks(attribs: &[Vec<f64>], keep_fraction: f64) -> Result<Vec<Vec<bool>>> {
    attribs
        .iter()
        .map(|a| {
            check_finite("fidelity", a)?;
            Ok(top_k_mask(a, keep_count(keep_fraction, a.len())?))
        })
        .collect()
}

pub fn fidelity_plus(
    attribs: &[Vec<f64>],
    inputs: &[Vec<f64>],
    model: &dyn Predictor,
    keep_fraction: f64,
) -> Result<f64> {
    fidelity_plus_masks(inputs, &top_masks(attribs, keep_fraction)?, model)
}

pub fn fidelity_minus(
    attribs: &[Vec<f64>],
    inputs: &[Vec<f64>],
    model: &dyn Predictor,
    keep_fraction: f64,
) -> Result<f64> {
    fidelity_minus_masks(inputs, &top_masks(attribs, keep_fraction)?, model)
}

/// Largest L2 change of the explanation over `n` points drawn uniformly from
/// the L-infinity ball of radius `r` around `x`. Draw `j` uses the same
/// direction for every `r`.
pub fn max_sensitivity<F>(explainer: F, x: &[f64], r: f64, n: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(degenerate("max-sensitivity", "need at least one draw"));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(degenerate(
            "max-sensitivity",
            format!("radius {r} must be finite and non-negative"),
        ));
    }
    let reference = explainer(x)?;
    let diffs = parallel::try_map_indexed(n, |j| {
        let mut rng = task_rng(seed, Domain::Sensitivity, j as u64);
        let z: Vec<f64> = x.iter().map(|v| v + r * rng.random_range(-1.0..=1.0)).collect();
        let e = explainer(&z)?;
        check_len("explanation", reference.len(), e.len())?;
        Ok::<_, FansError>(
            e.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
        )
    })?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Which way `|a|` is sorted before the Gini weights are applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    #[default]
    Ascending,
    Descending,
}

/// Gini index of `|a|`, ascending order: 0 for uniform, `1 - 1/D` for one-hot.
pub fn sparseness(a: &[f64]) -> Result<f64> {
    sparseness_with(a, SortOrder::Ascending)
}

/// `1 - 2 sum_d (s_d / |s|_1) (D - d + 1/2) / D` over the sorted magnitudes,
/// evaluated as `1 - sum_d s_d (2(D - d) + 1) / (D |s|_1)` after scaling by the
/// largest magnitude so the closed-form cases are exact.
pub fn sparseness_with(a: &[f64], order: SortOrder) -> Result<f64> {
    check_finite("sparseness", a)?;
    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(degenerate("sparseness", "attribution is all zeros"));
    }
    let mut s: Vec<f64> = a.iter().map(|v| v.abs() / max).collect();
    s.sort_by(f64::total_cmp);
    if order == SortOrder::Descending {
        s.reverse();
    }
    let dd = s.len() as f64;
    let l1: f64 = s.iter().sum();
    let weighted: f64 = s
        .iter()
        .enumerate()
        .map(|(i, v)| v * (2.0 * (dd - (i + 1) as f64) + 1.0))
        .sum();
    Ok(1.0 - weighted / (dd * l1))
}

/// `|top_N(a) & truth| / |truth|`; ties go to the lower index.
pub fn recall_at_n(a: &[f64], truth: &DimSubset, n: usize) -> Result<f64> {
    check_len("attribution", truth.dim(), a.len())?;
    check_finite("recall", a)?;
    if truth.is_empty() || n == 0 {
        return Err(degenerate("recall", "need a non-empty ground truth and N >= 1"));
    }
    let hits = top_n(a, n).into_iter().filter(|&i| truth.contains(i)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Metric values and the settings that produced them, with sorted keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    pub config: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) {
        self.config.insert(key.into(), value.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mlp;
    use proptest::prelude::{prop_assert, prop_assume, proptest};

    #[test]
    fn infidelity_of_linear_model_with_its_weights() {
        let w = vec![0.7, -1.3, 2.1, 0.05];
        let m = Mlp::linear(w.clone(), 0.4).unwrap();
        let x = [1.5, -0.2, 0.3, 9.0];
        let v = infidelity(&w, &x, &m, ScalarReadout::new(0), 200, 1).unwrap();
        assert!(v <= 1e-18, "{v}");
        let c = Mlp::constant(4, 1);
        assert_eq!(
            infidelity(&[0.0; 4], &x, &c, ScalarReadout::new(0), 50, 1).unwrap(),
            0.0
        );
        let a = [0.3, -0.1, 0.2, 0.5];
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let one = infidelity(&a, &x, &c, ScalarReadout::new(0), 50, 1).unwrap();
        let two = infidelity(&a2, &x, &c, ScalarReadout::new(0), 50, 1).unwrap();
        assert!((two - 4.0 * one).abs() <= 1e-12 * two);
    }

    #[test]
    fn aoc_by_hand() {
        // trapezoid: (1 + .5)/2 + (.5 + .5)/2 = 1.25, area over = 2 - 1.25
        assert_eq!(area_over_curve(&[1.0, 0.5, 0.5]), 0.75);
        assert_eq!(area_over_curve(&[1.0, 1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn irof_prefers_the_decisive_ranking() {
        let m = Mlp::logistic(vec![20.0, -20.0, 0.0], -20.0).unwrap();
        let inputs = vec![vec![1.8, 0.3, 1.0], vec![1.5, -0.2, -1.0], vec![2.0, 0.9, 0.5]];
        let seg = Segmentation::features(3);
        let base = Baseline::zeros(3);
        let good = vec![vec![1.0, 0.9, 0.0]; 3];
        let bad = vec![vec![0.0, 0.1, 1.0]; 3];
        let hi = irof(&good, &inputs, &m, Some(ScalarReadout::new(0)), &seg, &base).unwrap();
        let lo = irof(&bad, &inputs, &m, Some(ScalarReadout::new(0)), &seg, &base).unwrap();
        assert!(hi > lo, "{hi} vs {lo}");
        let c = Mlp::constant(3, 2);
        assert_eq!(irof(&good, &inputs, &c, None, &seg, &base).unwrap(), 0.0);
        let zero = Mlp::linear(vec![1.0, 0.0, 0.0], 0.0).unwrap();
        assert!(matches!(
            irof(
                &good[..1],
                &[vec![0.0, 1.0, 1.0]],
                &zero,
                Some(ScalarReadout::new(0)),
                &seg,
                &base
            ),
            Err(FansError::Degenerate { metric: "irof", .. })
        ));
    }

    #[test]
    fn tiles_cover_the_image() {
        let seg = Segmentation::tiles(3, 4, 2).unwrap();
        assert_eq!(seg.len(), 4);
        assert_eq!(seg.segments()[0], vec![0, 1, 4, 5]);
        assert_eq!(seg.segments()[3], vec![10, 11]);
        assert!(Segmentation::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(Segmentation::new(vec![vec![0]], 2).is_err());
    }

    #[test]
    fn fidelity_boundaries_and_example1() {
        let m = Mlp::logistic(vec![20.0, -20.0, 0.0], -20.0).unwrap();
        // class 1 inputs where zeroing x1 and x2 flips to class 0
        let inputs = vec![vec![1.8, 0.3, 1.0], vec![1.5, -0.2, -1.0], vec![1.2, 0.1, 0.0]];
        let keep = vec![vec![true, true, false]; 3];
        assert_eq!(fidelity_minus_masks(&inputs, &keep, &m).unwrap(), 0.0);
        assert_eq!(fidelity_plus_masks(&inputs, &keep, &m).unwrap(), 1.0);
        assert_eq!(fidelity_minus_masks(&inputs, &vec![vec![true; 3]; 3], &m).unwrap(), 0.0);
        assert_eq!(fidelity_plus_masks(&inputs, &vec![vec![false; 3]; 3], &m).unwrap(), 0.0);
        let a = vec![vec![1.0, 0.9, 0.0]; 3];
        assert_eq!(fidelity_minus(&a, &inputs, &m, 2.0 / 3.0).unwrap(), 0.0);
        assert_eq!(fidelity_plus(&a, &inputs, &m, 2.0 / 3.0).unwrap(), 1.0);
        assert_eq!(fidelity_minus(&a, &inputs, &m, 1.0).unwrap(), 0.0);
        assert_eq!(keep_count(0.25, 20).unwrap(), 5);
        assert_eq!(keep_count(0.01, 3).unwrap(), 1);
        assert!(keep_count(0.0, 3).is_err());
    }

    #[test]
    fn sensitivity_cases() {
        let x = [0.3, -0.1, 2.0, 1.0];
        assert_eq!(max_sensitivity(|_| Ok(vec![1.0, 2.0]), &x, 0.5, 20, 0).unwrap(), 0.0);
        let ident = |z: &[f64]| Ok(z.to_vec());
        let v = max_sensitivity(ident, &x, 0.1, 50, 0).unwrap();
        assert!(v > 0.0 && v <= 0.2 + 1e-12, "{v}");
        assert_eq!(max_sensitivity(ident, &x, 0.0, 50, 0).unwrap(), 0.0);
        let mut last = 0.0;
        for r in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let v = max_sensitivity(ident, &x, r, 30, 4).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn sparseness_closed_forms() {
        for d in [1usize, 2, 3, 7, 20, 784] {
            assert_eq!(sparseness(&vec![0.37; d]).unwrap(), 0.0);
            let mut one_hot = vec![0.0; d];
            one_hot[d / 2] = -4.2;
            assert_eq!(sparseness(&one_hot).unwrap(), 1.0 - 1.0 / d as f64);
        }
        let a = [0.1, 0.5, 0.2];
        let ten: Vec<f64> = a.iter().map(|v| v * 10.0).collect();
        assert!((sparseness(&a).unwrap() - sparseness(&ten).unwrap()).abs() < 1e-15);
        assert!(sparseness(&[0.0, 0.0]).is_err());
        // the descending variant goes negative on one-hot input
        assert!(sparseness_with(&[0.0, 0.0, 1.0], SortOrder::Descending).unwrap() < 0.0);
    }

    #[test]
    fn sparseness_majorization() {
        // moving mass from a small entry to a large one never lowers the index
        let base = [1.0, 2.0, 3.0];
        let moved = [0.5, 2.0, 3.5];
        assert!(sparseness(&moved).unwrap() > sparseness(&base).unwrap());
    }

    #[test]
    fn recall_cases() {
        let truth = DimSubset::new(vec![1, 2, 3], 6).unwrap();
        let a = [0.0, 5.0, 0.1, 4.0, 3.0, 2.0];
        assert!((recall_at_n(&a, &truth, 4).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_n(&[0.0, 3.0, 2.0, 1.0, 0.0, 0.0], &truth, 3).unwrap(), 1.0);
        assert_eq!(recall_at_n(&[9.0, 0.0, 0.0, 0.0, 8.0, 7.0], &truth, 3).unwrap(), 0.0);
        // ties resolve to the lower index
        assert_eq!(top_n(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn report_keys_are_sorted() {
        let mut r = MetricReport::default();
        r.insert("spa", 0.5);
        r.insert("inf", 0.1);
        r.note("n", 100);
        let json = r.to_json();
        assert!(json.find("\"inf\"").unwrap() < json.find("\"spa\"").unwrap());
    }

    proptest! {
        #[test]
        fn sparseness_in_range(a in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            prop_assume!(a.iter().any(|v| *v != 0.0));
            let g = sparseness(&a).unwrap();
            let d = a.len() as f64;
            prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / d + 1e-12);
        }

        #[test]
        fn fidelity_in_unit_interval(seed in 0u64..200) {
            let mut rng = task_rng(seed, Domain::Generator, 0);
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = Mlp::logistic(w, rng.random_range(-1.0..1.0)).unwrap();
            let inputs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let attribs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
            for v in [
                fidelity_plus(&attribs, &inputs, &m, 0.5).unwrap(),
                fidelity_minus(&attribs, &inputs, &m, 0.5).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
