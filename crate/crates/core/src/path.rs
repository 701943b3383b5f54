//! Straight-line path integration: integrated gradients via a Riemann sum
//! and multi-baseline expected gradients.
//!
//! Gradients along the path are evaluated in parallel, but summed in fixed
//! chunks and then by a fixed-shape pairwise reduction, so results are
//! bit-identical for any worker count.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::ScalarModel;
use crate::tensor::TensorF;

/// Steps per sequentially summed chunk.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `α_k = k / m`
    Left,
    /// `α_k = (k + 1/2) / m`
    Midpoint,
    /// `α_k ~ U[0, 1)` i.i.d. from the seeded stream.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiemannConfig {
    pub steps: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

impl RiemannConfig {
    pub fn midpoint(steps: usize) -> Self {
        Self {
            steps,
            sampling: Sampling::Midpoint,
            seed: 0,
        }
    }

    pub fn uniform(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            sampling: Sampling::UniformRandom,
            seed,
        }
    }

    /// The `steps` interpolation coefficients, in evaluation order.
    pub fn alphas(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("step count must be >= 1".into()));
        }
        let m = self.steps as f64;
        Ok(match self.sampling {
            Sampling::Left => (0..self.steps).map(|k| k as f64 / m).collect(),
            Sampling::Midpoint => (0..self.steps).map(|k| (k as f64 + 0.5) / m).collect(),
            Sampling::UniformRandom => uniform_alphas(self.steps, self.seed),
        })
    }
}

pub fn uniform_alphas(steps: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..steps).map(|_| r.gen::<f64>()).collect()
}

/// Provenance carried with every attribution map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub method: String,
    /// Digest of the baseline recipe (or of the baseline tensors).
    pub baseline_digest: String,
    pub steps: usize,
    pub num_baselines: usize,
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub scores: TensorF,
    pub meta: MapMeta,
}

/// `x' + α (x - x')`.
pub fn path_point(x: &TensorF, baseline: &TensorF, alpha: f64) -> Result<TensorF> {
    x.check_same_shape(baseline)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let values = x
        .as_slice()
        .iter()
        .zip(baseline.as_slice())
        .map(|(xi, bi)| bi + alpha * (xi - bi))
        .collect();
    x.with_values(values)
}

/// Gradient of `model` at `path_point(x, baseline, α)`, with non-finite
/// gradients reported against the offending α.
pub(crate) fn path_gradient<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    alpha: f64,
) -> Result<(TensorF, TensorF)> {
    let point = path_point(x, baseline, alpha)?;
    let grad = model.gradient(&point).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at alpha = {alpha}")),
        other => other,
    })?;
    point.check_same_shape(&grad)?;
    Ok((point, grad))
}

/// Sum of path gradients over `alphas`, in fixed evaluation order.
pub fn sum_path_gradients<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    x.check_same_shape(baseline)?;
    let n = x.len();
    let partials = alphas
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            for &a in chunk {
                let (_, g) = path_gradient(model, x, baseline, a)?;
                for (s, v) in acc.iter_mut().zip(g.as_slice()) {
                    *s += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(partials, n))
}

/// Elementwise sum by a balanced binary tree whose shape depends only on
/// the number of inputs.
pub fn pairwise_sum(mut parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; n];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(u, v)| *u += v);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Integrated gradients along the straight path from `baseline` to `x`:
/// `A_i = (x_i - x'_i) · (1/m) Σ_k ∂F/∂x_i(path_point(α_k))`.
pub fn riemann_ig<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    cfg: &RiemannConfig,
) -> Result<AttributionMap> {
    let scores = ig_scores(model, x, baseline, &cfg.alphas()?)?;
    Ok(AttributionMap {
        scores,
        meta: MapMeta {
            method: "ig".into(),
            baseline_digest: digest::tensor(baseline),
            steps: cfg.steps,
            num_baselines: 1,
            seed: cfg.seed,
            extra: BTreeMap::from([(
                "sampling".to_string(),
                serde_json::to_value(cfg.sampling).unwrap(),
            )]),
        },
    })
}

fn ig_scores<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    alphas: &[f64],
) -> Result<TensorF> {
    let sums = sum_path_gradients(model, x, baseline, alphas)?;
    let m = alphas.len() as f64;
    let values = x
        .as_slice()
        .iter()
        .zip(baseline.as_slice())
        .zip(&sums)
        .map(|((xi, bi), s)| (xi - bi) * (s / m))
        .collect();
    x.with_values(values)
}

/// Expected gradients over an explicit baseline set: each baseline gets
/// `⌊K/B⌋` uniform-random steps from the stream seeded `seed ^ b`, and the
/// per-baseline maps are averaged. Leftover steps are dropped.
pub fn expected_gradients<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baselines: &[TensorF],
    total_steps: usize,
    seed: u64,
) -> Result<AttributionMap> {
    if baselines.is_empty() {
        return Err(Error::InvalidArgument("expected gradients needs at least one baseline".into()));
    }
    let b = baselines.len();
    if total_steps < b {
        return Err(Error::InvalidArgument(format!(
            "total steps {total_steps} smaller than baseline count {b}"
        )));
    }
    let per = total_steps / b;
    let maps = baselines
        .iter()
        .enumerate()
        .map(|(i, base)| {
            let cfg = RiemannConfig::uniform(per, rng::baseline_seed(seed, i));
            ig_scores(model, x, base, &cfg.alphas()?).map(TensorF::into_vec)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = maps[0].clone();
    for m in &maps[1..] {
        acc.iter_mut().zip(m).for_each(|(a, v)| *a += v);
    }
    let inv = b as f64;
    let scores = x.with_values(acc.into_iter().map(|v| v / inv).collect())?;
    Ok(AttributionMap {
        scores,
        meta: MapMeta {
            method: "eg".into(),
            baseline_digest: digest::tensors(baselines),
            steps: total_steps,
            num_baselines: b,
            seed,
            extra: BTreeMap::from([("steps_per_baseline".to_string(), per.into())]),
        },
    })
}
