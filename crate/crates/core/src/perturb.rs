//! Baselines, Bernoulli masks, the hard perturbation `g(x, S, x')` and its
//! relaxations over a continuous mask `s in [0,1]^d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DataKind;
use crate::error::{check_len, FansError, Result};
use crate::rng::{task_rng, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Zeros,
    Uniform,
    User,
}

/// Stand-in values a feature takes when it is "missing".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub values: Vec<f64>,
    pub kind: BaselineKind,
}

impl Baseline {
    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![0.0; d],
            kind: BaselineKind::Zeros,
        }
    }

    pub fn uniform(d: usize, seed: u64) -> Self {
        let mut rng = task_rng(seed, Domain::Baseline, 0);
        Self {
            values: (0..d).map(|_| rng.random::<f64>()).collect(),
            kind: BaselineKind::Uniform,
        }
    }

    pub fn user(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FansError::config("baseline entries must be finite"));
        }
        Ok(Self {
            values,
            kind: BaselineKind::User,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Uniform `[0,1]^d` noise for images, zeros for tabular data.
pub fn default_baseline(kind: DataKind, d: usize, seed: u64) -> Result<Baseline> {
    if d == 0 {
        return Err(FansError::config("baseline dimension must be positive"));
    }
    Ok(match kind {
        DataKind::Image => Baseline::uniform(d, seed),
        DataKind::Tabular => Baseline::zeros(d),
    })
}

/// Sorted, duplicate-free subset of `0..d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimSubset {
    indices: Vec<usize>,
    dim: usize,
}

impl DimSubset {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(FansError::Index { index: bad, dim });
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(FansError::config("subset indices must be distinct"));
        }
        Ok(Self { indices, dim })
    }

    /// Parse 1-based indices as used on the command line.
    pub fn from_one_based(one_based: &[usize], dim: usize) -> Result<Self> {
        let indices = one_based
            .iter()
            .map(|&i| i.checked_sub(1).ok_or(FansError::Index { index: 0, dim }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, dim)
    }

    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
            dim,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            dim,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> Self {
        Self {
            indices: (0..self.dim).filter(|&i| !self.contains(i)).collect(),
            dim: self.dim,
        }
    }

    /// 0/1 indicator vector.
    pub fn to_mask(&self) -> RelaxedMask {
        let mut v = vec![0.0; self.dim];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        RelaxedMask(v)
    }
}

/// Continuous stand-in for a subset, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedMask(Vec<f64>);

impl RelaxedMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FansError::config(format!("relaxed mask entry {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self(vec![value.clamp(0.0, 1.0); d])
    }

    /// Clamp every entry into `[0, 1]`.
    pub fn clamped(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `1 - s`
    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|v| 1.0 - v).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Norm used for neighbourhood distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormOrder {
    L1,
    #[default]
    L2,
}

impl NormOrder {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(NormOrder::L1),
            2 => Ok(NormOrder::L2),
            _ => Err(FansError::config(format!(
                "unsupported norm order p = {p} (use 1 or 2)"
            ))),
        }
    }

    fn norm(self, it: impl Iterator<Item = f64>) -> f64 {
        match self {
            NormOrder::L1 => it.map(f64::abs).sum(),
            NormOrder::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// I.i.d. Bernoulli(`phi`) entries for all `d` coordinates; `true` means
/// "replace with the baseline".
pub fn sample_mask(d: usize, phi: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..d).map(|_| rng.random::<f64>() < phi).collect()
}

pub fn check_phi(phi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&phi) {
        Ok(())
    } else {
        Err(FansError::config(format!("phi = {phi} outside [0, 1]")))
    }
}

/// Hard perturbation: coordinates in `s` with `m_i` set take the baseline
/// value, everything else is copied from `x` unchanged.
pub fn perturb(x: &[f64], s: &DimSubset, baseline: &Baseline, m: &[bool]) -> Result<Vec<f64>> {
    check_len("perturbation input", s.dim(), x.len())?;
    check_len("baseline", x.len(), baseline.dim())?;
    check_len("mask", x.len(), m.len())?;
    let mut out = x.to_vec();
    perturb_in_place(&mut out, s.indices(), &baseline.values, m);
    Ok(out)
}

pub(crate) fn perturb_in_place(x: &mut [f64], s: &[usize], baseline: &[f64], m: &[bool]) {
    for &i in s {
        if m[i] {
            x[i] = baseline[i];
        }
    }
}

/// Literal relaxation `((1 - m) x + m x') * s`. Off the support of `s` the
/// output is zero, unlike [`perturb`].
pub fn relaxed_perturb(x: &[f64], s: &RelaxedMask, baseline: &Baseline, m: &[bool]) -> Result<Vec<f64>> {
    check_relaxed_shapes(x, s, baseline, m)?;
    Ok(relaxed_parts(x, &baseline.values, m)
        .zip(s.values())
        .map(|(v, si)| v * si)
        .collect())
}

/// `d relaxed_perturb_i / d s_i`; the map is diagonal in `s`.
pub fn relaxed_perturb_grad(x: &[f64], baseline: &Baseline, m: &[bool]) -> Vec<f64> {
    relaxed_parts(x, &baseline.values, m).collect()
}

fn relaxed_parts<'a>(x: &'a [f64], baseline: &'a [f64], m: &'a [bool]) -> impl Iterator<Item = f64> + 'a {
    x.iter()
        .zip(baseline)
        .zip(m)
        .map(|((&xi, &bi), &mi)| if mi { bi } else { xi })
}

/// Interpolating relaxation `x + s * m * (x' - x)`. Agrees with [`perturb`]
/// at every binary `s`, including off the support.
pub fn interpolated_perturb(x: &[f64], s: &RelaxedMask, baseline: &Baseline, m: &[bool]) -> Result<Vec<f64>> {
    check_relaxed_shapes(x, s, baseline, m)?;
    Ok(x.iter()
        .zip(&baseline.values)
        .zip(m)
        .zip(s.values())
        .map(|(((&xi, &bi), &mi), &si)| if mi { (1.0 - si) * xi + si * bi } else { xi })
        .collect())
}

/// `d interpolated_perturb_i / d s_i`.
pub fn interpolated_perturb_grad(x: &[f64], baseline: &Baseline, m: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(&baseline.values)
        .zip(m)
        .map(|((&xi, &bi), &mi)| if mi { bi - xi } else { 0.0 })
        .collect()
}

fn check_relaxed_shapes(x: &[f64], s: &RelaxedMask, baseline: &Baseline, m: &[bool]) -> Result<()> {
    check_len("relaxed mask", x.len(), s.dim())?;
    check_len("baseline", x.len(), baseline.dim())?;
    check_len("mask", x.len(), m.len())
}

/// `||(x - x_t) * (1 - s)||_p`: distance on the soft complement of `s`.
pub fn masked_distance(x: &[f64], target: &[f64], s: &RelaxedMask, p: NormOrder) -> Result<f64> {
    check_len("masked distance input", target.len(), x.len())?;
    check_len("relaxed mask", x.len(), s.dim())?;
    Ok(weighted_distance(x, target, s.values().iter().map(|v| 1.0 - v), p))
}

/// `||(x - x_t) * w||_p`
pub fn weighted_distance(x: &[f64], target: &[f64], w: impl Iterator<Item = f64>, p: NormOrder) -> f64 {
    p.norm(x.iter().zip(target).zip(w).map(|((a, b), wi)| (a - b) * wi))
}

/// `||x_S - x_t,S||_p`
pub fn subset_distance(x: &[f64], target: &[f64], s: &DimSubset, p: NormOrder) -> f64 {
    p.norm(s.indices().iter().map(|&i| x[i] - target[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{task_rng, Domain};
    use proptest::prelude::*;

    #[test]
    fn default_baselines() {
        assert_eq!(default_baseline(DataKind::Tabular, 3, 0).unwrap().values, vec![0.0; 3]);
        let a = default_baseline(DataKind::Image, 4, 7).unwrap();
        assert_eq!(a.kind, BaselineKind::Uniform);
        assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, default_baseline(DataKind::Image, 4, 7).unwrap());
        assert!(default_baseline(DataKind::Tabular, 0, 0).is_err());
    }

    #[test]
    fn subset_validation() {
        assert!(matches!(
            DimSubset::new(vec![0, 3], 3),
            Err(FansError::Index { index: 3, dim: 3 })
        ));
        assert!(DimSubset::new(vec![1, 1], 3).is_err());
        let s = DimSubset::from_one_based(&[3, 1], 4).unwrap();
        assert_eq!(s.indices(), &[0, 2]);
        assert_eq!(s.complement().indices(), &[1, 3]);
        assert!(DimSubset::from_one_based(&[0], 4).is_err());
    }

    #[test]
    fn mask_extremes() {
        let mut rng = task_rng(1, Domain::Resample, 0);
        assert!(sample_mask(50, 0.0, &mut rng).iter().all(|&b| !b));
        assert!(sample_mask(50, 1.0, &mut rng).iter().all(|&b| b));
    }

    #[test]
    fn mask_frequency_matches_phi() {
        let mut rng = task_rng(2, Domain::Resample, 0);
        let d = 4;
        let mut counts = vec![0usize; d];
        let n = 100_000;
        for _ in 0..n {
            for (c, b) in counts.iter_mut().zip(sample_mask(d, 0.5, &mut rng)) {
                *c += usize::from(b);
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn perturb_examples() {
        let x = [1.0, 1.0, 1.0];
        let zero = Baseline::zeros(3);
        let s = DimSubset::from_one_based(&[1, 3], 3).unwrap();
        assert_eq!(
            perturb(&x, &s, &zero, &[true, true, false]).unwrap(),
            vec![0.0, 1.0, 1.0]
        );
        assert_eq!(perturb(&x, &s, &zero, &[false; 3]).unwrap(), x.to_vec());
        let b = Baseline::user(vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(perturb(&x, &DimSubset::full(3), &b, &[true; 3]).unwrap(), b.values);
        assert!(matches!(
            perturb(&x, &s, &zero, &[true; 2]),
            Err(FansError::Shape { .. })
        ));
    }

    #[test]
    fn relaxed_examples() {
        let x = [1.5, -2.0, 0.25];
        let b = Baseline::user(vec![0.5, 0.5, 0.5]).unwrap();
        let m = [true, false, true];
        let full = perturb(&x, &DimSubset::full(3), &b, &m).unwrap();
        assert_eq!(relaxed_perturb(&x, &RelaxedMask::filled(3, 1.0), &b, &m).unwrap(), full);
        assert_eq!(
            interpolated_perturb(&x, &RelaxedMask::filled(3, 1.0), &b, &m).unwrap(),
            full
        );
        assert_eq!(
            relaxed_perturb(&x, &RelaxedMask::filled(3, 0.0), &b, &m).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            interpolated_perturb(&x, &RelaxedMask::filled(3, 0.0), &b, &m).unwrap(),
            x.to_vec()
        );
    }

    #[test]
    fn relaxed_gradients_match_finite_differences() {
        let x = [1.5, -2.0, 0.25, 3.0];
        let b = Baseline::user(vec![0.5, -0.1, 0.9, 0.0]).unwrap();
        let m = [true, false, true, true];
        let s = vec![0.3, 0.6, 0.1, 0.9];
        let h = 1e-6;
        let analytic = [relaxed_perturb_grad(&x, &b, &m), interpolated_perturb_grad(&x, &b, &m)];
        type Map = fn(&[f64], &RelaxedMask, &Baseline, &[bool]) -> Result<Vec<f64>>;
        let maps: [Map; 2] = [relaxed_perturb, interpolated_perturb];
        for (f, grad) in maps.iter().zip(&analytic) {
            for i in 0..4 {
                let mut up = s.clone();
                let mut down = s.clone();
                up[i] += h;
                down[i] -= h;
                let fu = f(&x, &RelaxedMask::new(up).unwrap(), &b, &m).unwrap();
                let fd = f(&x, &RelaxedMask::new(down).unwrap(), &b, &m).unwrap();
                assert!(((fu[i] - fd[i]) / (2.0 * h) - grad[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn masked_distance_examples() {
        let p2 = NormOrder::L2;
        let x = [1.0, 0.0];
        let t = [0.0, 0.0];
        assert_eq!(masked_distance(&x, &t, &RelaxedMask::filled(2, 1.0), p2).unwrap(), 0.0);
        assert_eq!(
            masked_distance(&[3.0, 4.0], &t, &RelaxedMask::filled(2, 0.0), p2).unwrap(),
            5.0
        );
        let s = RelaxedMask::new(vec![0.5, 1.0]).unwrap();
        assert_eq!(masked_distance(&x, &t, &s, p2).unwrap(), 0.5);
        assert!(NormOrder::from_p(3).is_err());
    }

    #[test]
    fn expectation_of_perturbation() {
        let x = [2.0, -1.0, 4.0];
        let b = Baseline::user(vec![0.0, 3.0, 1.0]).unwrap();
        let s = DimSubset::new(vec![0, 1], 3).unwrap();
        let phi = 0.3;
        let n = 50_000;
        let mut rng = task_rng(3, Domain::Resample, 1);
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let m = sample_mask(3, phi, &mut rng);
            for (acc, v) in mean.iter_mut().zip(perturb(&x, &s, &b, &m).unwrap()) {
                *acc += v / n as f64;
            }
        }
        for i in 0..2 {
            let expected = (1.0 - phi) * x[i] + phi * b.values[i];
            let sigma = (phi * (1.0 - phi)).sqrt() * (x[i] - b.values[i]).abs() / (n as f64).sqrt();
            assert!((mean[i] - expected).abs() <= 3.0 * sigma, "coord {i}");
        }
        assert!((mean[2] - x[2]).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn hard_perturbation_leaves_complement_untouched(
            x in proptest::collection::vec(-5.0f64..5.0, 6),
            base in proptest::collection::vec(-5.0f64..5.0, 6),
            bits in proptest::collection::vec(any::<bool>(), 6),
            members in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let idx: Vec<usize> = (0..6).filter(|&i| members[i]).collect();
            let s = DimSubset::new(idx, 6).unwrap();
            let b = Baseline::user(base.clone()).unwrap();
            let out = perturb(&x, &s, &b, &bits).unwrap();
            for i in 0..6 {
                if s.contains(i) {
                    let expected = if bits[i] { base[i] } else { x[i] };
                    prop_assert_eq!(out[i].to_bits(), expected.to_bits());
                } else {
                    prop_assert_eq!(out[i].to_bits(), x[i].to_bits());
                }
            }
            // Corner consistency of the literal relaxation on supp(s).
            let relaxed = relaxed_perturb(&x, &s.to_mask(), &b, &bits).unwrap();
            for i in 0..6 {
                if s.contains(i) {
                    prop_assert_eq!(relaxed[i], out[i]);
                } else {
                    prop_assert_eq!(relaxed[i], 0.0);
                }
            }
            prop_assert_eq!(interpolated_perturb(&x, &s.to_mask(), &b, &bits).unwrap(), out);
        }
    }
}
