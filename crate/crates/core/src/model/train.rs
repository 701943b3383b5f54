use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, cross_entropy, softmax, Layer, Model, ModelSpec, ParamGrads};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::TensorF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            batch_size: 16,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean cross-entropy over the dataset after training.
    pub final_loss: f64,
    pub accuracy: f64,
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Minibatch SGD with momentum on mean cross-entropy, starting from the
/// weights already present in `spec`. Shuffling is the only use of the
/// seed, so identical inputs give bit-identical weights.
pub fn train_toy(
    spec: ModelSpec,
    dataset: &[(TensorF, usize)],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let mut model = Model::compile(spec)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some((_, y)) = dataset.iter().find(|(_, y)| *y >= model.num_classes()) {
        return Err(Error::ClassOutOfRange {
            index: *y,
            num_classes: model.num_classes(),
        });
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("batch_size and lr must be positive".into()));
    }
    let mut rng = rng::stream(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut velocity = ParamGrads::zeros_like(model.spec());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::zeros_like(model.spec());
            for &i in batch {
                let (x, y) = &dataset[i];
                let acts = model.trace(x.as_slice());
                let logits = acts.last().unwrap();
                let loss = cross_entropy(logits, *y);
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                let mut up = softmax(logits);
                up[*y] -= 1.0;
                model.backward(&acts, up, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            apply_update(&mut model.spec, &grads, &mut velocity, cfg.lr * scale, cfg.momentum);
            if !params_finite(&model.spec) {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::INFINITY,
                });
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }

    let model = Model::compile(model.spec)?;
    let (final_loss, accuracy) = evaluate(&model, dataset)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok((
        model,
        TrainReport {
            epochs: cfg.epochs,
            final_loss,
            accuracy,
            loss_history: history,
        },
    ))
}

fn apply_update(spec: &mut ModelSpec, grads: &ParamGrads, velocity: &mut ParamGrads, lr: f64, momentum: f64) {
    for ((layer, (gw, gb)), (vw, vb)) in spec
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(velocity.layers.iter_mut())
    {
        if let Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } = layer {
            for ((w, g), v) in weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
                *v = momentum * *v - lr * g;
                *w += *v;
            }
            for ((b, g), v) in bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = momentum * *v - lr * g;
                *b += *v;
            }
        }
    }
}

fn params_finite(spec: &ModelSpec) -> bool {
    spec.layers.iter().all(|l| match l {
        Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
            weights.iter().chain(bias).all(|v| v.is_finite())
        }
        _ => true,
    })
}

/// Mean cross-entropy and accuracy over a labeled set.
pub fn evaluate(model: &Model, dataset: &[(TensorF, usize)]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in dataset {
        let logits = model.forward_logits(x)?;
        loss += cross_entropy(&logits, *y);
        correct += usize::from(argmax(&logits) == *y);
    }
    let n = dataset.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
