//! Map evaluation: insertion/deletion curves with trapezoidal AUC, and
//! Sensitivity-N correlation between subset attributions and output drops.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::gaussian_blur;
use crate::error::{Error, Result};
use crate::model::{softmax, Model};
use crate::rng;
use crate::scalar::ScalarModel;
use crate::tensor::TensorF;

pub const TIE_RULE: &str = "descending score, ties by ascending index";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedOrder {
    pub order: Vec<usize>,
    pub tie_rule: String,
}

/// Feature indices, most important first.
pub fn rank_features(scores: &TensorF) -> RankedOrder {
    let s = scores.as_slice();
    let mut order: Vec<usize> = (0..s.len()).collect();
    // scores are finite by construction, so total_cmp is a plain order here
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    RankedOrder {
        order,
        tie_rule: TIE_RULE.into(),
    }
}

/// `(fraction, score)` points with strictly increasing fractions from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 || points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::InvalidArgument(
                "curve needs at least two points spanning fractions 0 and 1".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("curve fractions must increase strictly".into()));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::NonFinite("curve score".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Two whitespace-separated columns, one point per line.
    pub fn to_columns(&self) -> String {
        self.points
            .iter()
            .map(|(f, s)| format!("{f:?} {s:?}\n"))
            .collect()
    }
}

pub fn auc_trapezoid(c: &Curve) -> f64 {
    c.points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// What a curve records at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveScore {
    /// Softmax probability of the class predicted on the original input.
    #[default]
    Probability,
    Logit,
}

/// The canvas features are replaced with (deletion) or restored onto
/// (insertion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Black,
    Blur { sigma: f64 },
    InputMean,
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Black
    }
}

impl Reference {
    pub fn canvas(&self, x: &TensorF) -> Result<TensorF> {
        match *self {
            Reference::Black => Ok(TensorF::zeros(x.shape())),
            Reference::InputMean => Ok(TensorF::filled(x.shape(), x.mean())),
            Reference::Blur { sigma } => gaussian_blur(x, sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsDelScore {
    pub target_class: usize,
    pub insertion: Curve,
    pub deletion: Curve,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    /// `insertion_auc - deletion_auc`.
    pub difference: f64,
}

fn curve_score(model: &Model, x: &TensorF, class: usize, mode: CurveScore) -> Result<f64> {
    let logits = model.forward_logits(x)?;
    Ok(match mode {
        CurveScore::Probability => softmax(&logits)[class],
        CurveScore::Logit => logits[class],
    })
}

/// Walks the ranked features in groups of `group_size`. Deletion starts
/// from `x` and overwrites features with `reference`; insertion starts
/// from `reference` and restores features of `x`.
pub fn insertion_deletion_score(
    model: &Model,
    x: &TensorF,
    scores: &TensorF,
    reference: &TensorF,
    group_size: usize,
    mode: CurveScore,
) -> Result<InsDelScore> {
    x.check_same_shape(scores)?;
    x.check_same_shape(reference)?;
    if group_size == 0 {
        return Err(Error::InvalidArgument("group size must be >= 1".into()));
    }
    let class = model.predict(x)?;
    let order = rank_features(scores).order;
    let n = x.len();
    let xs = x.as_slice();
    let rs = reference.as_slice();

    let walk = |start: &[f64], fill: &[f64]| -> Result<Curve> {
        let mut canvas = start.to_vec();
        let mut points = vec![(0.0, curve_score(model, &x.with_values(canvas.clone())?, class, mode)?)];
        for (g, group) in order.chunks(group_size).enumerate() {
            for &i in group {
                canvas[i] = fill[i];
            }
            let done = (g * group_size + group.len()) as f64 / n as f64;
            points.push((done, curve_score(model, &x.with_values(canvas.clone())?, class, mode)?));
        }
        Curve::new(points)
    };
    let (deletion, insertion) = rayon::join(|| walk(xs, rs), || walk(rs, xs));
    let (deletion, insertion) = (deletion?, insertion?);
    let insertion_auc = auc_trapezoid(&insertion);
    let deletion_auc = auc_trapezoid(&deletion);
    Ok(InsDelScore {
        target_class: class,
        insertion,
        deletion,
        insertion_auc,
        deletion_auc,
        difference: insertion_auc - deletion_auc,
    })
}

/// Sample correlation, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two sequences of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub fraction: f64,
    pub subset_size: usize,
    /// `None` when either side has zero variance.
    pub correlation: Option<f64>,
}

/// Sensitivity-N: for each fraction, `samples` random subsets of
/// `max(1, round(fraction·n))` features are set to zero, and the summed
/// attribution of each subset is correlated with `F(x) - F(x_masked)`.
/// Subsets for fraction `j` come from the stream seeded `mix(seed, j)`.
pub fn sensitivity_n<S: ScalarModel + ?Sized>(
    model: &S,
    x: &TensorF,
    scores: &TensorF,
    fractions: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<SensitivityPoint>> {
    x.check_same_shape(scores)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples per fraction".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.01..=0.9).contains(*f)) {
        return Err(Error::InvalidArgument(format!("fraction {f} outside [0.01, 0.9]")));
    }
    let n = x.len();
    let fx = model.value(x)?;
    fractions
        .iter()
        .enumerate()
        .map(|(j, &frac)| {
            let k = ((frac * n as f64).round() as usize).clamp(1, n);
            let mut r = rng::stream(rng::mix(seed, j as u64));
            let subsets: Vec<Vec<usize>> = (0..samples)
                .map(|_| index::sample(&mut r, n, k).into_vec())
                .collect();
            let pairs = subsets
                .par_iter()
                .map(|s| {
                    let mut v = x.as_slice().to_vec();
                    for &i in s {
                        v[i] = 0.0;
                    }
                    let drop = fx - model.value(&x.with_values(v)?)?;
                    let attr: f64 = s.iter().map(|&i| scores.as_slice()[i]).sum();
                    Ok((attr, drop))
                })
                .collect::<Result<Vec<_>>>()?;
            let (a, d): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let correlation = match pearson(&a, &d) {
                Ok(c) => Some(c),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SensitivityPoint {
                fraction: frac,
                subset_size: k,
                correlation,
            })
        })
        .collect()
}

/// Per-image insertion/deletion result inside an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub name: String,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub mean_insertion_auc: f64,
    pub mean_deletion_auc: f64,
    pub mean_difference: f64,
    /// Mean correlation per fraction over images where it is defined.
    #[serde(default)]
    pub sensitivity: Vec<SensitivityPoint>,
    pub config_digest: String,
}

impl EvalReport {
    pub fn from_images(images: Vec<ImageEval>, config_digest: String) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageEval) -> f64| images.iter().map(f).sum::<f64>() / n;
        Self {
            mean_insertion_auc: mean(|e| e.insertion_auc),
            mean_deletion_auc: mean(|e| e.deletion_auc),
            mean_difference: mean(|e| e.difference),
            images,
            sensitivity: Vec::new(),
            config_digest,
        }
    }
}
