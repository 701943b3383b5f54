//! Single-output views of models, the common interface for path methods.

use crate::error::Result;
use crate::model::{Model, OutputMode};
use crate::tensor::TensorF;

/// A function `F: R^n -> R` with an input gradient.
pub trait ScalarModel: Sync {
    fn value(&self, x: &TensorF) -> Result<f64>;

    fn gradient(&self, x: &TensorF) -> Result<TensorF>;

    /// True only when feature `index` provably cannot affect the output.
    fn feature_unused(&self, _index: usize) -> bool {
        false
    }
}

/// One class output of a classifier.
#[derive(Debug, Clone, Copy)]
pub struct ClassOutput<'a> {
    pub model: &'a Model,
    pub class: usize,
    pub mode: OutputMode,
}

impl<'a> ClassOutput<'a> {
    pub fn new(model: &'a Model, class: usize, mode: OutputMode) -> Self {
        Self { model, class, mode }
    }

    /// Output of the class the model predicts for `x`.
    pub fn predicted(model: &'a Model, x: &TensorF, mode: OutputMode) -> Result<Self> {
        Ok(Self::new(model, model.predict(x)?, mode))
    }
}

impl ScalarModel for ClassOutput<'_> {
    fn value(&self, x: &TensorF) -> Result<f64> {
        self.model.output(x, self.class, self.mode)
    }

    fn gradient(&self, x: &TensorF) -> Result<TensorF> {
        self.model.grad_output(x, self.class, self.mode)
    }

    fn feature_unused(&self, index: usize) -> bool {
        self.model.feature_unused(index)
    }
}
