//! Black-box predictors and the built-in differentiable model zoo.
//!
//! Everything downstream sees a model only through [`Predictor`]: an evaluator
//! returning a class-probability vector, with an optional input-gradient
//! channel. [`Mlp`] covers the zoo (linear, logistic, multi-layer); [`FnModel`]
//! wraps an arbitrary closure as a gradient-free black box.

mod io;
mod mlp;
mod train;

pub use io::{load_model, save_model, ModelFile};
pub use mlp::{Activation, Dense, Head, Mlp};
pub use train::{accuracy, fit_mlp, ArchSpec, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, FansError, Result};

/// A predictor `f: R^d -> R^K`.
///
/// Implementations must be pure: the same input always yields the same output,
/// and calls may come from many threads at once.
pub trait Predictor: Send + Sync {
    fn input_dim(&self) -> usize;

    /// Number of outputs `K`; `K == 1` means a single sigmoid-style score.
    fn output_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn predict_scalar(&self, x: &[f64], readout: ScalarReadout) -> Result<f64> {
        readout.check(self.output_dim())?;
        Ok(self.predict(x)?[readout.class])
    }

    /// `d predict_scalar / dx`. Black boxes leave the default.
    fn input_gradient(&self, _x: &[f64], _readout: ScalarReadout) -> Result<Vec<f64>> {
        Err(FansError::Capability("model has no gradient channel"))
    }

    fn has_gradient(&self) -> bool {
        false
    }
}

/// The class whose probability stands in for the scalar `f(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalarReadout {
    pub class: usize,
}

impl ScalarReadout {
    pub fn new(class: usize) -> Self {
        Self { class }
    }

    /// Argmax class of `f(x)`, fixed once per attribution. Ties go to the lowest index.
    pub fn argmax(model: &dyn Predictor, x: &[f64]) -> Result<Self> {
        let p = model.predict(x)?;
        Ok(Self::new(argmax(&p)))
    }

    pub fn check(&self, classes: usize) -> Result<()> {
        if self.class < classes {
            Ok(())
        } else {
            Err(FansError::Readout {
                index: self.class,
                classes,
            })
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Predicted class label. A single-output model is read as a two-class
/// classifier with `P(class 1) = f(x)`.
pub fn predicted_class(model: &dyn Predictor, x: &[f64]) -> Result<usize> {
    let p = model.predict(x)?;
    Ok(if p.len() == 1 {
        usize::from(p[0] > 0.5)
    } else {
        argmax(&p)
    })
}

pub fn predict(model: &dyn Predictor, x: &[f64]) -> Result<Vec<f64>> {
    check_len("model input", model.input_dim(), x.len())?;
    model.predict(x)
}

pub fn predict_scalar(model: &dyn Predictor, x: &[f64], readout: ScalarReadout) -> Result<f64> {
    check_len("model input", model.input_dim(), x.len())?;
    model.predict_scalar(x, readout)
}

pub fn input_gradient(model: &dyn Predictor, x: &[f64], readout: ScalarReadout) -> Result<Vec<f64>> {
    check_len("model input", model.input_dim(), x.len())?;
    model.input_gradient(x, readout)
}

/// Elementwise absolute input gradient.
pub fn saliency(model: &dyn Predictor, x: &[f64], readout: ScalarReadout) -> Result<Vec<f64>> {
    Ok(input_gradient(model, x, readout)?.into_iter().map(f64::abs).collect())
}

/// A closure-backed black box without a gradient channel.
pub struct FnModel<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<F> Predictor for FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", self.input_dim, x.len())?;
        let out = (self.f)(x);
        check_len("model output", self.output_dim, out.len())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FansError::numeric("black-box model returned a non-finite output"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fn_model_has_no_gradient() {
        let m = FnModel::new(2, 1, |x: &[f64]| vec![x[0]]);
        assert!(!m.has_gradient());
        assert!(matches!(
            input_gradient(&m, &[0.0, 0.0], ScalarReadout::new(0)),
            Err(FansError::Capability(_))
        ));
    }

    #[test]
    fn readout_out_of_range() {
        let m = Mlp::constant(3, 2);
        assert!(matches!(
            predict_scalar(&m, &[0.0; 3], ScalarReadout::new(2)),
            Err(FansError::Readout { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn shape_error_on_wrong_input_length() {
        let m = Mlp::constant(3, 1);
        assert!(matches!(predict(&m, &[0.0; 2]), Err(FansError::Shape { .. })));
    }

    #[test]
    fn predicted_class_for_sigmoid_head() {
        let m = Mlp::logistic(vec![1.0], 0.0).unwrap();
        assert_eq!(predicted_class(&m, &[2.0]).unwrap(), 1);
        assert_eq!(predicted_class(&m, &[-2.0]).unwrap(), 0);
    }
}
