//! Baseline constructions: black, Gaussian noise, input mean, Gaussian
//! blur, and the optimized baseline that keeps the model's logits close to
//! the input's while every feature stays at least `δ` away from it.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::rng;
use crate::tensor::{TensorF, ValueRange};

/// Default kernel radius in units of σ.
pub const BLUR_RADIUS_SIGMAS: f64 = 3.0;

/// A baseline recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    Black,
    GaussianNoise { std: f64, seed: u64 },
    InputMean,
    Blur { sigma: f64 },
    Optimized(OptimizedParams),
}

/// Which gradient drives the sign steps of the baseline search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchGradient {
    /// Cross-entropy toward the input's predicted class.
    #[default]
    Loss,
    /// The predicted-class logit itself.
    Raw,
}

/// Hyper-parameters of the optimized baseline. `None` fields take
/// input-dependent defaults, see [`OptimizedParams::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedParams {
    pub sigma: f64,
    pub eta: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub max_iter: usize,
    #[serde(default)]
    pub gradient: SearchGradient,
}

impl Default for OptimizedParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            eta: None,
            eps: None,
            delta: None,
            max_iter: 500,
            gradient: SearchGradient::Loss,
        }
    }
}

/// Fully resolved hyper-parameters, recorded in every result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub sigma: f64,
    pub eta: f64,
    pub eps: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub gradient: SearchGradient,
}

impl OptimizedParams {
    /// Defaults: `η = (hi - lo) / 255`, `ε = 0.05 ‖logits(x)‖₂`,
    /// `δ = 0.05 (hi - lo)`.
    pub fn resolve(&self, input_logits: &[f64], range: ValueRange) -> Result<ResolvedParams> {
        let norm = input_logits.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = ResolvedParams {
            sigma: self.sigma,
            eta: self.eta.unwrap_or(range.width() / 255.0),
            eps: self.eps.unwrap_or(0.05 * norm),
            delta: self.delta.unwrap_or(0.05 * range.width()),
            max_iter: self.max_iter,
            gradient: self.gradient,
        };
        if !(r.sigma > 0.0) || !(r.eta > 0.0) || !(r.eps > 0.0) || !(r.delta >= 0.0) || r.max_iter == 0
        {
            return Err(Error::InvalidArgument(format!(
                "need sigma > 0, eta > 0, eps > 0, delta >= 0, max_iter >= 1; got {r:?}"
            )));
        }
        Ok(r)
    }
}

/// Outcome of the optimized baseline search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub baseline: TensorF,
    /// Final `‖logits(x) - logits(x')‖₂`.
    pub achieved_eps: f64,
    /// `min_i |x_i - x'_i|` over all features.
    pub achieved_delta: f64,
    /// `min_i |x_i - x'_i|` over features where a `δ` gap fits inside the
    /// range; `None` when there are no such features.
    pub feasible_delta: Option<f64>,
    /// Features for which no value in range is `δ` away from `x_i`.
    pub infeasible_features: usize,
    pub iterations: usize,
    /// Iteration whose iterate was returned; equals `iterations` when
    /// the search converged.
    pub selected_iteration: usize,
    pub converged: bool,
    /// The blurred start coincided with `x`.
    pub blur_unchanged: bool,
    pub params: ResolvedParams,
}

/// Normalized 1-D Gaussian kernel of the given radius.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Gaussian blur with radius `⌈3σ⌉` and symmetric (mirror) borders.
///
/// `[n]` tensors are blurred as 1-D signals, `[h, w]` and `[h, w, c]`
/// images per channel along both spatial axes.
pub fn gaussian_blur(x: &TensorF, sigma: f64) -> Result<TensorF> {
    let radius = (BLUR_RADIUS_SIGMAS * sigma).ceil() as usize;
    gaussian_blur_with_radius(x, sigma, radius)
}

pub fn gaussian_blur_with_radius(x: &TensorF, sigma: f64, radius: usize) -> Result<TensorF> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma, radius);
    let (h, w, c) = match *x.shape() {
        [n] => (1, n, 1),
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "cannot blur tensor of shape {:?}",
                x.shape()
            )))
        }
    };
    let src = x.as_slice();
    // horizontal pass
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let sx = mirror(xx as isize + j as isize - radius as isize, w);
                    acc += k * src[(y * w + sx) * c + ch];
                }
                tmp[(y * w + xx) * c + ch] = acc;
            }
        }
    }
    if h == 1 {
        return x.with_values(tmp);
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let sy = mirror(y as isize + j as isize - radius as isize, h);
                    acc += k * tmp[(sy * w + xx) * c + ch];
                }
                out[(y * w + xx) * c + ch] = acc;
            }
        }
    }
    x.with_values(out)
}

/// Half-sample symmetric reflection into `0..n` (`-1 -> 0`, `n -> n-1`).
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - 1 - j) as usize
    }
}

/// Baselines that do not depend on the model.
pub fn fixed_baseline(x: &TensorF, spec: &BaselineSpec, range: ValueRange) -> Result<TensorF> {
    match spec {
        BaselineSpec::Black => Ok(TensorF::zeros(x.shape())),
        BaselineSpec::InputMean => Ok(TensorF::filled(x.shape(), x.mean())),
        BaselineSpec::GaussianNoise { std, seed } => {
            if !(*std >= 0.0 && std.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {std}")));
            }
            let mut r = rng::stream(*seed);
            let center = 0.5 * (range.lo + range.hi);
            let values = (0..x.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    range.clip_value(center + std * z)
                })
                .collect();
            x.with_values(values)
        }
        BaselineSpec::Blur { .. } | BaselineSpec::Optimized(_) => Err(Error::InvalidArgument(
            "fixed_baseline handles black, gaussian_noise and input_mean only".into(),
        )),
    }
}

fn sgn_tie_positive(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Moves `candidate` one ulp at a time away from `anchor` until the gap is
/// at least `delta`; absorbs rounding in `candidate = p ± δ`.
fn widen_to(anchor: f64, mut candidate: f64, delta: f64) -> f64 {
    while (anchor - candidate).abs() < delta {
        candidate = if candidate < anchor {
            candidate.next_down()
        } else {
            candidate.next_up()
        };
    }
    candidate
}

/// For every feature with `|x_i - x^p_i| < δ`, applies
/// `x^p_i ← -sgn(x_i - x^p_i) · δ + x^p_i` with `sgn(0) := +1`, then
/// widens by at most a few ulps so that `|x_i - x^p_i| ≥ δ` holds exactly.
pub fn enforce_min_gap(x: &TensorF, xp: &TensorF, delta: f64) -> Result<TensorF> {
    x.check_same_shape(xp)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }
    let values = x
        .as_slice()
        .iter()
        .zip(xp.as_slice())
        .map(|(&xi, &pi)| {
            if (xi - pi).abs() < delta {
                widen_to(xi, -sgn_tie_positive(xi - pi) * delta + pi, delta)
            } else {
                pi
            }
        })
        .collect();
    x.with_values(values)
}

/// Whether some value in `range` lies at least `delta` from `v`.
pub fn gap_feasible(v: f64, delta: f64, range: ValueRange) -> bool {
    v - range.lo >= delta || range.hi - v >= delta
}

/// Gap enforcement followed by clipping. When the gap update would be
/// undone by clipping, the feature is placed `δ` from `x_i` on the other
/// side instead, if that side fits. Returns the clipped tensor and the
/// number of features where `δ` cannot fit in range at all.
pub fn enforce_min_gap_clipped(
    x: &TensorF,
    xp: &TensorF,
    delta: f64,
    range: ValueRange,
) -> Result<(TensorF, usize)> {
    let moved = enforce_min_gap(x, xp, delta)?;
    let mut conflicts = 0;
    let values = x
        .as_slice()
        .iter()
        .zip(moved.as_slice())
        .map(|(&xi, &pi)| {
            let clipped = range.clip_value(pi);
            if (xi - clipped).abs() >= delta {
                return clipped;
            }
            if !gap_feasible(xi, delta, range) {
                conflicts += 1;
                return clipped;
            }
            // The side toward `pi` does not fit, so the other side must.
            let other = if pi < xi { xi + delta } else { xi - delta };
            range.clip_value(widen_to(xi, other, delta))
        })
        .collect();
    Ok((x.with_values(values)?, conflicts))
}

/// Optimized baseline search.
///
/// Starts from the blurred input, then repeats sign-gradient steps of size
/// `η`, gap enforcement and clipping until the logit distance to `x` is at
/// most `ε` or `max_iter` steps were taken. Without convergence the
/// closest iterate seen is kept. A final gap/clip pass follows. Ending
/// above `ε` is reported through `converged = false`; ending above `10 ε`
/// is an error.
pub fn compute_baseline(model: &Model, x: &TensorF, params: &OptimizedParams) -> Result<BaselineResult> {
    let range = model.input_range();
    let input_logits = model.forward_logits(x)?;
    let target = argmax(&input_logits);
    let p = params.resolve(&input_logits, range)?;

    let logit_distance = |t: &TensorF| -> Result<f64> {
        let l = model.forward_logits(t)?;
        Ok(input_logits
            .iter()
            .zip(&l)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    };

    let blurred = gaussian_blur(x, p.sigma)?;
    let blur_unchanged = blurred == *x;
    let mut xp = enforce_min_gap_clipped(x, &blurred, p.delta, range)?.0;
    let mut dist = logit_distance(&xp)?;
    let mut best = (dist, xp.clone(), 0);
    let mut iterations = 0;
    while iterations < p.max_iter && dist > p.eps {
        let grad = match p.gradient {
            SearchGradient::Loss => model.grad_xent_input(&xp, target)?,
            SearchGradient::Raw => model.grad_input(&xp, target)?,
        };
        let stepped = xp.with_values(
            xp.as_slice()
                .iter()
                .zip(grad.as_slice())
                .map(|(v, g)| v - p.eta * sign(*g))
                .collect(),
        )?;
        xp = enforce_min_gap_clipped(x, &stepped, p.delta, range)?.0;
        dist = logit_distance(&xp)?;
        iterations += 1;
        if dist < best.0 {
            best = (dist, xp.clone(), iterations);
        }
    }
    // the loss keeps pushing past the input's logits, so an unconverged
    // search hands back the closest iterate rather than the last one
    let selected_iteration = if dist > p.eps {
        xp = best.1;
        best.2
    } else {
        iterations
    };
    let (xp, infeasible_features) = enforce_min_gap_clipped(x, &xp, p.delta, range)?;
    let achieved_eps = logit_distance(&xp)?;
    if achieved_eps > 10.0 * p.eps {
        return Err(Error::BaselineFailed {
            achieved_eps,
            limit: 10.0 * p.eps,
        });
    }
    let gaps: Vec<(f64, bool)> = x
        .as_slice()
        .iter()
        .zip(xp.as_slice())
        .map(|(&a, &b)| ((a - b).abs(), gap_feasible(a, p.delta, range)))
        .collect();
    let achieved_delta = gaps.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
    let feasible_delta = gaps
        .iter()
        .filter(|g| g.1)
        .map(|g| g.0)
        .reduce(f64::min);
    Ok(BaselineResult {
        baseline: xp,
        achieved_eps,
        achieved_delta,
        feasible_delta,
        infeasible_features,
        iterations,
        selected_iteration,
        converged: achieved_eps <= p.eps,
        blur_unchanged,
        params: p,
    })
}

/// `sgn` with `sgn(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> TensorF {
        TensorF::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn blur_preserves_constants() {
        let img = TensorF::filled(&[9, 7], 0.37);
        let b = gaussian_blur(&img, 1.3).unwrap();
        for v in b.as_slice() {
            assert!((v - 0.37).abs() < 1e-12);
        }
        let rgb = TensorF::filled(&[5, 5, 3], 0.8);
        assert!(gaussian_blur(&rgb, 2.0)
            .unwrap()
            .as_slice()
            .iter()
            .all(|v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn impulse_gives_kernel() {
        let sigma: f64 = 1.5;
        let r = (3.0 * sigma).ceil() as usize;
        let n = 2 * r + 5;
        let c = n / 2;
        let mut px = vec![0.0; n * n];
        px[c * n + c] = 1.0;
        let out = gaussian_blur(&TensorF::new(vec![n, n], px).unwrap(), sigma).unwrap();
        let k = gaussian_kernel(sigma, r);
        for dy in 0..=2 * r {
            for dx in 0..=2 * r {
                let y = c + dy - r;
                let x = c + dx - r;
                assert!((out.as_slice()[y * n + x] - k[dy] * k[dx]).abs() < 1e-15);
            }
        }
        let total: f64 = out.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn test_image(n: usize) -> TensorF {
        // impulse plus a gentle ramp and a sinusoid
        let mut px = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                px[y * n + x] = 0.2 + 0.003 * x as f64 + 0.1 * (0.3 * y as f64).sin();
            }
        }
        px[(n / 2) * n + n / 2] += 1.0;
        TensorF::new(vec![n, n], px).unwrap()
    }

    #[test]
    fn semigroup_with_wide_kernel() {
        let sigma: f64 = 2.0;
        let wide = |s: f64| (5.0 * s).ceil() as usize;
        let img = test_image(64);
        let twice = gaussian_blur_with_radius(
            &gaussian_blur_with_radius(&img, sigma, wide(sigma)).unwrap(),
            sigma,
            wide(sigma),
        )
        .unwrap();
        let s2 = sigma * 2f64.sqrt();
        let once = gaussian_blur_with_radius(&img, s2, wide(s2)).unwrap();
        let margin = 20;
        let mut worst: f64 = 0.0;
        for y in margin..64 - margin {
            for x in margin..64 - margin {
                let i = y * 64 + x;
                worst = worst.max((twice.as_slice()[i] - once.as_slice()[i]).abs());
            }
        }
        assert!(worst <= 1e-6, "semigroup error {worst}");
    }

    #[test]
    fn default_radius_truncation_error_is_bounded() {
        // The 3σ kernel drops ~0.3% of the Gaussian mass; composition error
        // stays near 1e-4 on an impulse.
        let sigma: f64 = 2.0;
        let img = test_image(64);
        let twice = gaussian_blur(&gaussian_blur(&img, sigma).unwrap(), sigma).unwrap();
        let once = gaussian_blur(&img, sigma * 2f64.sqrt()).unwrap();
        let mut worst: f64 = 0.0;
        for y in 20..44 {
            for x in 20..44 {
                let i = y * 64 + x;
                worst = worst.max((twice.as_slice()[i] - once.as_slice()[i]).abs());
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let img = TensorF::filled(&[3, 3], 0.5);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 4), 0);
        assert_eq!(mirror(-2, 4), 1);
        assert_eq!(mirror(4, 4), 3);
        assert_eq!(mirror(9, 4), 1);
        assert_eq!(mirror(-7, 1), 0);
    }

    #[test]
    fn fixed_baselines() {
        let x = t(&[0.2, 0.4, 0.6]);
        let r = ValueRange::default();
        assert_eq!(fixed_baseline(&x, &BaselineSpec::Black, r).unwrap().as_slice(), &[0.0; 3]);
        let m = fixed_baseline(&x, &BaselineSpec::InputMean, r).unwrap();
        for v in m.as_slice() {
            assert!((v - 0.4).abs() < 1e-15);
        }
        let g = BaselineSpec::GaussianNoise { std: 0.3, seed: 5 };
        let a = fixed_baseline(&x, &g, r).unwrap();
        assert_eq!(a, fixed_baseline(&x, &g, r).unwrap());
        assert!(r.contains(&a));
        assert!(fixed_baseline(&x, &BaselineSpec::Blur { sigma: 1.0 }, r).is_err());
    }

    #[test]
    fn min_gap_update_examples() {
        let g = enforce_min_gap(&t(&[0.5]), &t(&[0.45]), 0.1).unwrap().as_slice()[0];
        assert!((g - 0.35).abs() < 1e-15);
        let g = enforce_min_gap(&t(&[0.5]), &t(&[0.58]), 0.1).unwrap().as_slice()[0];
        assert!((g - 0.68).abs() < 1e-15);
        let g = enforce_min_gap(&t(&[0.5]), &t(&[0.5]), 0.1).unwrap().as_slice()[0];
        assert!((g - 0.4).abs() < 1e-15);
        assert!((0.5 - g).abs() >= 0.1);
        // untouched when the gap is already wide enough
        let g = enforce_min_gap(&t(&[0.5]), &t(&[0.9]), 0.1).unwrap().as_slice()[0];
        assert_eq!(g, 0.9);
        // δ = 0 is a no-op
        let xp = t(&[0.3, 0.5]);
        assert_eq!(enforce_min_gap(&t(&[0.3, 0.1]), &xp, 0.0).unwrap(), xp);
    }

    #[test]
    fn clipped_gap_flips_side_or_counts_conflict() {
        let r = ValueRange::default();
        // x near the lower edge: moving down would clip, so go above.
        let (out, c) = enforce_min_gap_clipped(&t(&[0.02]), &t(&[0.01]), 0.05, r).unwrap();
        assert_eq!(c, 0);
        assert!(out.as_slice()[0] >= 0.07 - 1e-15 && (out.as_slice()[0] - 0.02) >= 0.05);
        // δ larger than either side: infeasible, counted.
        let (_, c) = enforce_min_gap_clipped(&t(&[0.5]), &t(&[0.5]), 0.6, r).unwrap();
        assert_eq!(c, 1);
    }
}

#[cfg(test)]
mod search_tests {
    use super::*;
    use crate::datasets;
    use crate::model::{train_toy, Layer, ModelSpec, TrainConfig};

    fn blob_model() -> Model {
        let mut spec = ModelSpec::new(
            vec![2],
            2,
            vec![Layer::dense(2, 8), Layer::Relu, Layer::dense(8, 2)],
        );
        spec.initialize(1);
        train_toy(spec, &datasets::blobs(200, 5), &TrainConfig::default()).unwrap().0
    }

    #[test]
    fn blob_search_meets_targets_on_most_inputs() {
        let model = blob_model();
        let data = datasets::blobs(100, 99);
        let ok = data
            .iter()
            .filter(|(x, _)| match compute_baseline(&model, x, &OptimizedParams::default()) {
                Ok(r) => {
                    r.converged && r.feasible_delta.map_or(true, |d| d >= r.params.delta)
                }
                Err(_) => false,
            })
            .count();
        assert!(ok >= 90, "{ok}/100");
    }

    #[test]
    fn outputs_stay_in_range_and_report_gaps() {
        let model = blob_model();
        for (x, _) in datasets::blobs(20, 3) {
            if let Ok(r) = compute_baseline(&model, &x, &OptimizedParams::default()) {
                assert!(model.input_range().contains(&r.baseline));
                assert!(r.achieved_delta >= r.params.delta || r.infeasible_features > 0);
            }
        }
    }

    #[test]
    fn zero_delta_is_plain_sign_descent() {
        let model = blob_model();
        let x = TensorF::from_vec(vec![0.3, 0.35]).unwrap();
        let params = OptimizedParams {
            delta: Some(0.0),
            eps: Some(1e-9),
            eta: Some(0.01),
            max_iter: 3,
            ..OptimizedParams::default()
        };
        let target = model.predict(&x).unwrap();
        let mut xp = gaussian_blur(&x, params.sigma).unwrap();
        for _ in 0..3 {
            let g = model.grad_xent_input(&xp, target).unwrap();
            let v = xp
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(a, b)| model.input_range().clip_value(a - 0.01 * sign(*b)))
                .collect();
            xp = xp.with_values(v).unwrap();
        }
        match compute_baseline(&model, &x, &params) {
            Ok(r) => assert_eq!(r.baseline, xp),
            Err(Error::BaselineFailed { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn start_within_eps_skips_loop() {
        let model = blob_model();
        let x = TensorF::from_vec(vec![0.3, 0.3]).unwrap();
        let params = OptimizedParams {
            eps: Some(1e6),
            ..OptimizedParams::default()
        };
        let r = compute_baseline(&model, &x, &params).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert!(r.achieved_delta >= r.params.delta);
    }

    #[test]
    fn resolved_defaults() {
        let p = OptimizedParams::default()
            .resolve(&[3.0, 4.0], ValueRange::default())
            .unwrap();
        assert_eq!(p.eta, 1.0 / 255.0);
        assert!((p.eps - 0.25).abs() < 1e-15);
        assert!((p.delta - 0.05).abs() < 1e-15);
        assert_eq!(p.max_iter, 500);
    }
}
