//! Validity-filtered path integration.
//!
//! A path sample contributes its gradient for feature `i` only when the
//! scaled path gradient `(x_i - x̃_i) ∂F/∂x̃_i` has the same sign as the
//! input gradient `∂F/∂x_i` and a strictly smaller magnitude. Accepted raw
//! gradients are averaged per feature and scaled by `x_i - x'_i`; features
//! with no accepted sample contribute zero.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{compute_baseline, BaselineResult, OptimizedParams};
use crate::digest;
use crate::error::{Error, Result};
use crate::model::{Model, OutputMode};
use crate::path::{pairwise_sum, path_gradient, uniform_alphas, AttributionMap, MapMeta};
use crate::rng;
use crate::scalar::{ClassOutput, ScalarModel};
use crate::tensor::TensorF;

const CHUNK: usize = 32;

/// Blur width step of the default schedule `σ_b = 1.5 b`.
pub const DEFAULT_SIGMA_STEP: f64 = 1.5;

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `sgn(ρ) = sgn(ρ̃) ∧ |ρ| > |ρ̃|`.
pub fn validity_check(rho: f64, rho_tilde: f64) -> bool {
    sgn(rho) == sgn(rho_tilde) && rho.abs() > rho_tilde.abs()
}

/// Per-baseline output of the filtered integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineIntegral {
    /// Sum of accepted raw gradients per feature.
    pub accum: Vec<f64>,
    /// Number of accepted samples per feature.
    pub counts: Vec<usize>,
    pub alphas: Vec<f64>,
    /// `accepted[k][i]`: sample `k` passed the test for feature `i`.
    /// Present only when requested.
    pub accepted: Option<Vec<Vec<bool>>>,
}

impl BaselineIntegral {
    /// `(x_i - x'_i) ϱ_i / count_i`, with zero where `count_i = 0`.
    pub fn contribution(&self, x: &TensorF, baseline: &TensorF) -> Vec<f64> {
        x.as_slice()
            .iter()
            .zip(baseline.as_slice())
            .zip(self.accum.iter().zip(&self.counts))
            .map(|((xi, bi), (acc, &c))| {
                if c == 0 {
                    0.0
                } else {
                    (xi - bi) * acc / c as f64
                }
            })
            .collect()
    }

    pub fn accepted_total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Runs the filter over `steps` uniform α values drawn from `seed`,
/// using the input gradient `rho`.
pub fn integrate_with_input_gradient<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    rho: &TensorF,
    steps: usize,
    seed: u64,
    record_masks: bool,
) -> Result<BaselineIntegral> {
    x.check_same_shape(baseline)?;
    x.check_same_shape(rho)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    let n = x.len();
    let alphas = uniform_alphas(steps, seed);
    let xs = x.as_slice();
    let rs = rho.as_slice();
    let parts = alphas
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut counts = vec![0usize; n];
            let mut masks = Vec::new();
            for &a in chunk {
                let (point, grad) = path_gradient(model, x, baseline, a)?;
                let mut mask = record_masks.then(|| vec![false; n]);
                for (i, (&g, &p)) in grad.as_slice().iter().zip(point.as_slice()).enumerate() {
                    if validity_check(rs[i], (xs[i] - p) * g) {
                        acc[i] += g;
                        counts[i] += 1;
                        if let Some(m) = mask.as_mut() {
                            m[i] = true;
                        }
                    }
                }
                masks.extend(mask);
            }
            Ok((acc, counts, masks))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0usize; n];
    let mut accepted = record_masks.then(Vec::new);
    let mut sums = Vec::with_capacity(parts.len());
    for (acc, c, m) in parts {
        counts.iter_mut().zip(&c).for_each(|(t, v)| *t += v);
        if let Some(all) = accepted.as_mut() {
            all.extend(m);
        }
        sums.push(acc);
    }
    Ok(BaselineIntegral {
        accum: pairwise_sum(sums, n),
        counts,
        alphas,
        accepted,
    })
}

/// Single-baseline integration with the input gradient computed at `x`.
pub fn integrate_single_baseline<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baseline: &TensorF,
    steps: usize,
    seed: u64,
    record_masks: bool,
) -> Result<BaselineIntegral> {
    let rho = model.gradient(x)?;
    integrate_with_input_gradient(model, x, baseline, &rho, steps, seed, record_masks)
}

/// Attribution map plus the per-baseline integrals that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredRun {
    pub map: AttributionMap,
    pub baselines: Vec<TensorF>,
    pub integrals: Vec<BaselineIntegral>,
}

/// Filtered integration over an explicit baseline set. Baseline `b` gets
/// `⌊K/B⌋` samples from the stream seeded `seed ^ b`; the map is the mean
/// of the per-baseline contributions.
pub fn attribute_with_baselines<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    baselines: &[TensorF],
    total_steps: usize,
    seed: u64,
    record_masks: bool,
) -> Result<FilteredRun> {
    if baselines.is_empty() {
        return Err(Error::InvalidArgument("need at least one baseline".into()));
    }
    let b = baselines.len();
    if total_steps < b {
        return Err(Error::InvalidArgument(format!(
            "total steps {total_steps} smaller than baseline count {b}"
        )));
    }
    let per = total_steps / b;
    let rho = model.gradient(x)?;
    let mut acc = vec![0.0; x.len()];
    let mut integrals = Vec::with_capacity(b);
    for (i, base) in baselines.iter().enumerate() {
        let integral = integrate_with_input_gradient(
            model,
            x,
            base,
            &rho,
            per,
            rng::baseline_seed(seed, i),
            record_masks,
        )?;
        acc.iter_mut()
            .zip(integral.contribution(x, base))
            .for_each(|(a, v)| *a += v);
        integrals.push(integral);
    }
    let scores = x.with_values(acc.into_iter().map(|v| v / b as f64).collect())?;
    let accepted: Vec<f64> = integrals
        .iter()
        .map(|g| g.accepted_total() as f64 / (per * x.len()) as f64)
        .collect();
    Ok(FilteredRun {
        map: AttributionMap {
            scores,
            meta: MapMeta {
                method: "filtered".into(),
                baseline_digest: digest::tensors(baselines),
                steps: total_steps,
                num_baselines: b,
                seed,
                extra: BTreeMap::from([
                    ("steps_per_baseline".to_string(), per.into()),
                    ("accepted_fraction".to_string(), accepted.into()),
                ]),
            },
        },
        baselines: baselines.to_vec(),
        integrals,
    })
}

/// Where the per-baseline starting points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSource {
    /// Optimized baselines, one per blur width.
    #[default]
    Optimized,
    /// All-zero baselines (the classic integrated-gradients choice).
    Black,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedConfig {
    pub num_baselines: usize,
    pub total_steps: usize,
    /// Blur widths, one per baseline. Empty means `σ_b = 1.5 b`.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// Search parameters; `sigma` is overridden by the schedule.
    pub search: OptimizedParams,
    #[serde(default)]
    pub source: BaselineSource,
    #[serde(default)]
    pub output: OutputMode,
    pub seed: u64,
}

impl Default for ProposedConfig {
    fn default() -> Self {
        Self {
            num_baselines: 3,
            total_steps: 150,
            sigmas: Vec::new(),
            search: OptimizedParams::default(),
            source: BaselineSource::Optimized,
            output: OutputMode::Logit,
            seed: 0,
        }
    }
}

impl ProposedConfig {
    pub fn sigma_schedule(&self) -> Result<Vec<f64>> {
        if self.num_baselines == 0 || self.total_steps < self.num_baselines {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= num_baselines <= total_steps, got B = {}, K = {}",
                self.num_baselines, self.total_steps
            )));
        }
        if self.sigmas.is_empty() {
            return Ok((1..=self.num_baselines)
                .map(|b| DEFAULT_SIGMA_STEP * b as f64)
                .collect());
        }
        if self.sigmas.len() != self.num_baselines {
            return Err(Error::InvalidArgument(format!(
                "{} blur widths for {} baselines",
                self.sigmas.len(),
                self.num_baselines
            )));
        }
        Ok(self.sigmas.clone())
    }

    pub fn method_name(&self) -> &'static str {
        match (self.source, self.num_baselines) {
            (BaselineSource::Black, _) => "proposed_igbase",
            (BaselineSource::Optimized, 1) => "proposed_single",
            (BaselineSource::Optimized, _) => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineDiagnostics {
    sigma: f64,
    achieved_eps: f64,
    achieved_delta: f64,
    feasible_delta: Option<f64>,
    infeasible_features: usize,
    iterations: usize,
    selected_iteration: usize,
    converged: bool,
    blur_unchanged: bool,
    eta: f64,
    eps: f64,
    delta: f64,
    max_iter: usize,
}

impl BaselineDiagnostics {
    fn new(r: &BaselineResult) -> Self {
        Self {
            sigma: r.params.sigma,
            achieved_eps: r.achieved_eps,
            achieved_delta: r.achieved_delta,
            feasible_delta: r.feasible_delta,
            infeasible_features: r.infeasible_features,
            iterations: r.iterations,
            selected_iteration: r.selected_iteration,
            converged: r.converged,
            blur_unchanged: r.blur_unchanged,
            eta: r.params.eta,
            eps: r.params.eps,
            delta: r.params.delta,
            max_iter: r.params.max_iter,
        }
    }
}

/// The full method: builds one baseline per blur width, then runs the
/// filtered integrator with `⌊K/B⌋` samples per baseline against the
/// predicted class of `x`.
///
/// Baselines whose search fails hard are skipped and listed in the map's
/// metadata; the map is the mean over the remaining ones. If every search
/// fails the call fails with the last error.
pub fn attribute_proposed(model: &Model, x: &TensorF, cfg: &ProposedConfig) -> Result<FilteredRun> {
    let sigmas = cfg.sigma_schedule()?;
    let target = ClassOutput::predicted(model, x, cfg.output)?;
    let per = cfg.total_steps / cfg.num_baselines;

    let mut baselines = Vec::new();
    let mut seeds = Vec::new();
    let mut diagnostics = Vec::new();
    let mut failures = Vec::new();
    let mut last_err = None;
    for (b, &sigma) in sigmas.iter().enumerate() {
        match cfg.source {
            BaselineSource::Black => baselines.push(TensorF::zeros(x.shape())),
            BaselineSource::Optimized => {
                let params = OptimizedParams {
                    sigma,
                    ..cfg.search.clone()
                };
                match compute_baseline(model, x, &params) {
                    Ok(r) => {
                        diagnostics.push(BaselineDiagnostics::new(&r));
                        baselines.push(r.baseline);
                    }
                    Err(e @ Error::BaselineFailed { .. }) => {
                        failures.push(serde_json::json!({
                            "index": b,
                            "sigma": sigma,
                            "error": e.to_string(),
                        }));
                        last_err = Some(e);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        seeds.push(rng::baseline_seed(cfg.seed, b));
    }
    if baselines.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::InvalidArgument("no baselines".into())));
    }

    let rho = target.gradient(x)?;
    let mut acc = vec![0.0; x.len()];
    let mut integrals = Vec::with_capacity(baselines.len());
    for (base, &seed) in baselines.iter().zip(&seeds) {
        let integral = integrate_with_input_gradient(&target, x, base, &rho, per, seed, false)?;
        acc.iter_mut()
            .zip(integral.contribution(x, base))
            .for_each(|(a, v)| *a += v);
        integrals.push(integral);
    }
    let used = baselines.len() as f64;
    let scores = x.with_values(acc.into_iter().map(|v| v / used).collect())?;
    let accepted: Vec<f64> = integrals
        .iter()
        .map(|g| g.accepted_total() as f64 / (per * x.len()) as f64)
        .collect();

    let mut extra = BTreeMap::new();
    extra.insert("config".to_string(), serde_json::to_value(cfg).unwrap());
    extra.insert("sigmas".to_string(), sigmas.into());
    extra.insert("steps_per_baseline".to_string(), per.into());
    extra.insert("target_class".to_string(), target.class.into());
    extra.insert("accepted_fraction".to_string(), accepted.into());
    extra.insert(
        "baseline_diagnostics".to_string(),
        serde_json::to_value(&diagnostics).unwrap(),
    );
    extra.insert("failed_baselines".to_string(), failures.into());
    Ok(FilteredRun {
        map: AttributionMap {
            scores,
            meta: MapMeta {
                method: cfg.method_name().into(),
                baseline_digest: digest::tensors(&baselines),
                steps: cfg.total_steps,
                num_baselines: cfg.num_baselines,
                seed: cfg.seed,
                extra,
            },
        },
        baselines,
        integrals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{riemann_ig, RiemannConfig};
    use crate::pwl::{HalfSpace, Piece, PwlModel};

    fn t(v: &[f64]) -> TensorF {
        TensorF::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn validity_examples() {
        assert!(validity_check(0.5, 0.2));
        assert!(!validity_check(0.5, -0.2));
        assert!(!validity_check(0.2, 0.5));
        assert!(!validity_check(0.0, 0.0));
        assert!(!validity_check(0.5, 0.5));
        assert!(validity_check(-0.5, -0.1));
    }

    #[test]
    fn affine_monotone_case_matches_ig() {
        // gaps below 1 and positive: ρ̃ = (1-α)(x-x')w < w = ρ for every α
        let w = vec![2.0, 0.5, 3.0];
        let f = PwlModel::affine(w.clone(), 0.1).unwrap();
        let x = t(&[0.9, 0.6, 0.7]);
        let base = t(&[0.1, 0.2, 0.3]);
        let g = integrate_single_baseline(&f, &x, &base, 64, 9, false).unwrap();
        assert_eq!(g.counts, vec![64; 3]);
        let contrib = g.contribution(&x, &base);
        for i in 0..3 {
            let want = w[i] * (x.as_slice()[i] - base.as_slice()[i]);
            assert!((contrib[i] - want).abs() < 1e-12);
        }
        let ig = riemann_ig(&f, &x, &base, &RiemannConfig::uniform(64, 9)).unwrap();
        let run = attribute_with_baselines(&f, &x, &[base], 64, 9, false).unwrap();
        for (a, b) in run.map.scores.as_slice().iter().zip(ig.scores.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_feature_gets_zero() {
        let f = PwlModel::affine(vec![1.0, 0.0], 0.0).unwrap();
        let x = t(&[0.8, 0.9]);
        let base = t(&[0.2, 0.1]);
        let g = integrate_single_baseline(&f, &x, &base, 20, 1, true).unwrap();
        assert_eq!(g.counts[1], 0);
        let run = attribute_with_baselines(&f, &x, &[base.clone(), base], 40, 1, false).unwrap();
        assert_eq!(run.map.scores.as_slice()[1], 0.0);
        assert!(run.map.scores.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn accepted_set_matches_enumeration_on_steeper_piece() {
        // F = 3x on x <= 0.5 and x + 1 above; the input sits on the shallow
        // piece, so samples on the steep piece can overshoot.
        let steep = Piece {
            region: vec![HalfSpace { normal: vec![1.0], offset: 0.5, strict: false }],
            weights: vec![3.0],
            bias: 0.0,
        };
        let shallow = Piece {
            region: vec![HalfSpace { normal: vec![-1.0], offset: -0.5, strict: true }],
            weights: vec![1.0],
            bias: 1.0,
        };
        let f = PwlModel::new(1, vec![steep, shallow], 0.0).unwrap();
        let x = t(&[1.0]);
        let base = t(&[0.0]);
        let g = integrate_single_baseline(&f, &x, &base, 200, 4, true).unwrap();
        let masks = g.accepted.as_ref().unwrap();
        let mut count = 0;
        for (k, &a) in g.alphas.iter().enumerate() {
            let p = a;
            let grad = if p <= 0.5 { 3.0 } else { 1.0 };
            let ok = validity_check(1.0, (1.0 - p) * grad);
            assert_eq!(masks[k][0], ok, "alpha {a}");
            count += usize::from(ok);
        }
        assert_eq!(g.counts[0], count);
        assert!(count > 0 && count < 200);
    }

    #[test]
    fn alpha_streams_follow_baseline_index() {
        let f = PwlModel::affine(vec![1.0], 0.0).unwrap();
        let x = t(&[0.5]);
        let bases = vec![t(&[0.0]), t(&[0.1]), t(&[0.2])];
        let run = attribute_with_baselines(&f, &x, &bases, 31, 77, false).unwrap();
        for (b, g) in run.integrals.iter().enumerate() {
            assert_eq!(g.alphas, uniform_alphas(10, 77 ^ b as u64));
        }
    }

    #[test]
    fn config_validation_and_names() {
        let cfg = ProposedConfig::default();
        assert_eq!(cfg.sigma_schedule().unwrap(), vec![1.5, 3.0, 4.5]);
        assert_eq!(cfg.method_name(), "proposed");
        let single = ProposedConfig { num_baselines: 1, ..cfg.clone() };
        assert_eq!(single.method_name(), "proposed_single");
        let black = ProposedConfig { source: BaselineSource::Black, ..cfg.clone() };
        assert_eq!(black.method_name(), "proposed_igbase");
        assert!(ProposedConfig { num_baselines: 0, ..cfg.clone() }.sigma_schedule().is_err());
        assert!(ProposedConfig { total_steps: 2, ..cfg.clone() }.sigma_schedule().is_err());
        assert!(ProposedConfig { sigmas: vec![1.0], ..cfg }.sigma_schedule().is_err());
    }
}
