//! Explicit piecewise-linear functions over half-space regions, with exact
//! closed-form integration of gradients along straight paths.
//!
//! Each piece is `w·x + b` on the intersection of its half-spaces. Points
//! outside every region evaluate to `default_value` with zero gradient.
//! Region disjointness is checked on construction by sampling, which is a
//! heuristic: overlaps of tiny volume can go unnoticed.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::ScalarModel;
use crate::tensor::TensorF;

pub const PWL_DOCUMENT_KIND: &str = "pwl";

/// Crossing parameters closer than this are merged.
pub const CROSSING_DEDUP_TOL: f64 = 1e-12;

const DISJOINT_SAMPLES: usize = 10_000;
const DISJOINT_SEED: u64 = 0x5EED_D15C;

/// `normal·x <= offset`, or `normal·x < offset` when strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
    #[serde(default)]
    pub strict: bool,
}

impl HalfSpace {
    pub fn contains(&self, x: &[f64]) -> bool {
        let s = dot(&self.normal, x);
        if self.strict {
            s < self.offset
        } else {
            s <= self.offset
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(default)]
    pub region: Vec<HalfSpace>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Piece {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.region.iter().all(|h| h.contains(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PwlModel {
    dim: usize,
    pieces: Vec<Piece>,
    default_value: f64,
}

/// How the segment `x' -> x` is cut by region boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegmenting {
    /// Sorted, strictly increasing crossing parameters in `(0, 1)`.
    pub crossings: Vec<f64>,
    /// Active piece on each of the `crossings.len() + 1` open intervals.
    pub pieces: Vec<Option<usize>>,
}

impl PathSegmenting {
    /// `(start, end, piece)` for every interval tiling `(0, 1)`.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, Option<usize>)> + '_ {
        let bounds: Vec<f64> = std::iter::once(0.0)
            .chain(self.crossings.iter().copied())
            .chain(std::iter::once(1.0))
            .collect();
        self.pieces
            .iter()
            .enumerate()
            .map(move |(j, &p)| (bounds[j], bounds[j + 1], p))
    }
}

impl PwlModel {
    pub fn new(dim: usize, pieces: Vec<Piece>, default_value: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !default_value.is_finite() {
            return Err(Error::NonFinite("default_value".into()));
        }
        for (i, p) in pieces.iter().enumerate() {
            if p.weights.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![dim],
                    got: vec![p.weights.len()],
                });
            }
            if !p.bias.is_finite() || p.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("piece {i} parameters")));
            }
            for h in &p.region {
                if h.normal.len() != dim {
                    return Err(Error::ShapeMismatch {
                        expected: vec![dim],
                        got: vec![h.normal.len()],
                    });
                }
                if !h.offset.is_finite() || h.normal.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("piece {i} region")));
                }
            }
        }
        let model = Self {
            dim,
            pieces,
            default_value,
        };
        model.check_disjoint()?;
        Ok(model)
    }

    /// Affine function on the whole space (one piece, empty region).
    pub fn affine(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let dim = weights.len();
        Self::new(
            dim,
            vec![Piece {
                region: Vec::new(),
                weights,
                bias,
            }],
            0.0,
        )
    }

    /// The two-piece function
    /// `x1 + 4 x2 + 1` on `{x1, x2 <= 1}`, `4 x1 + x2 + 2` on `{x1, x2 > 1}`,
    /// `0` elsewhere.
    pub fn example1() -> Self {
        let le = |normal: [f64; 2]| HalfSpace {
            normal: normal.to_vec(),
            offset: 1.0,
            strict: false,
        };
        let gt = |normal: [f64; 2]| HalfSpace {
            normal: normal.to_vec(),
            offset: -1.0,
            strict: true,
        };
        Self::new(
            2,
            vec![
                Piece {
                    region: vec![le([1.0, 0.0]), le([0.0, 1.0])],
                    weights: vec![1.0, 4.0],
                    bias: 1.0,
                },
                Piece {
                    region: vec![gt([-1.0, 0.0]), gt([0.0, -1.0])],
                    weights: vec![4.0, 1.0],
                    bias: 2.0,
                },
            ],
            0.0,
        )
        .expect("built-in model is valid")
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            other => Err(Error::InvalidArgument(format!(
                "unknown built-in model \"{other}\" (available: example1)"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    /// Copy with piece `index` given new affine parameters; regions unchanged.
    pub fn with_piece_params(&self, index: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if index >= self.pieces.len() {
            return Err(Error::InvalidArgument(format!("no piece {index}")));
        }
        if weights.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                got: vec![weights.len()],
            });
        }
        if !bias.is_finite() || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("piece parameters".into()));
        }
        let mut out = self.clone();
        out.pieces[index].weights = weights;
        out.pieces[index].bias = bias;
        Ok(out)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                got: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Half-width of a centered box that contains every boundary hyperplane's
    /// closest point to the origin, with margin.
    pub fn sampling_box(&self) -> f64 {
        let reach = self
            .pieces
            .iter()
            .flat_map(|p| &p.region)
            .map(|h| {
                let n = dot(&h.normal, &h.normal).sqrt();
                if n > 0.0 {
                    h.offset.abs() / n
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        1.0 + 2.0 * reach
    }

    fn check_disjoint(&self) -> Result<()> {
        if self.pieces.len() < 2 {
            return Ok(());
        }
        let mut rng = rng::stream(DISJOINT_SEED);
        let s = self.sampling_box();
        let mut p = vec![0.0; self.dim];
        for _ in 0..DISJOINT_SAMPLES {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-s..=s));
            self.containing(&p)?;
        }
        Ok(())
    }

    fn containing(&self, x: &[f64]) -> Result<Option<usize>> {
        let mut found = None;
        for (i, piece) in self.pieces.iter().enumerate() {
            if piece.contains(x) {
                if let Some(first) = found {
                    return Err(Error::OverlappingRegions { first, second: i });
                }
                found = Some(i);
            }
        }
        Ok(found)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(match self.containing(x)? {
            Some(i) => dot(&self.pieces[i].weights, x) + self.pieces[i].bias,
            None => self.default_value,
        })
    }

    /// Index of the region containing `x`, or `None` outside all regions.
    pub fn active_piece(&self, x: &[f64]) -> Result<Option<usize>> {
        self.check_point(x)?;
        Ok(self.pieces.iter().position(|p| p.contains(x)))
    }

    /// Cuts the segment from `baseline` (α = 0) to `x` (α = 1) at every
    /// region boundary it crosses.
    pub fn segment_path(&self, x: &[f64], baseline: &[f64]) -> Result<PathSegmenting> {
        self.check_point(x)?;
        self.check_point(baseline)?;
        let d: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
        let mut alphas: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| &p.region)
            .filter_map(|h| {
                let denom = dot(&h.normal, &d);
                if denom == 0.0 {
                    return None;
                }
                let a = (h.offset - dot(&h.normal, baseline)) / denom;
                (a > 0.0 && a < 1.0).then_some(a)
            })
            .collect();
        alphas.sort_by(f64::total_cmp);
        let mut crossings: Vec<f64> = Vec::with_capacity(alphas.len());
        for a in alphas {
            if crossings
                .last()
                .map_or(true, |&last| a - last > CROSSING_DEDUP_TOL)
            {
                crossings.push(a);
            }
        }
        let bounds: Vec<f64> = std::iter::once(0.0)
            .chain(crossings.iter().copied())
            .chain(std::iter::once(1.0))
            .collect();
        let pieces = bounds
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let p: Vec<f64> = baseline.iter().zip(&d).map(|(b, di)| b + mid * di).collect();
                self.active_piece(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSegmenting { crossings, pieces })
    }

    /// Straight-line path attribution in closed form:
    /// `A_i = (x_i - x'_i) · Σ_intervals length · w_i(active piece)`.
    pub fn exact_path_attribution(&self, x: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(baseline)?;
        if x == baseline {
            return Ok(vec![0.0; self.dim]);
        }
        let seg = self.segment_path(x, baseline)?;
        let mut avg_grad = vec![0.0; self.dim];
        for (start, end, piece) in seg.intervals() {
            if let Some(p) = piece {
                let len = end - start;
                for (g, w) in avg_grad.iter_mut().zip(&self.pieces[p].weights) {
                    *g += len * w;
                }
            }
        }
        Ok(x.iter()
            .zip(baseline)
            .zip(&avg_grad)
            .map(|((a, b), g)| (a - b) * g)
            .collect())
    }

    /// Rejection-samples a point in the region of `piece` inside the
    /// sampling box.
    pub fn sample_in_piece(&self, piece: usize, rng: &mut rng::Rng, max_tries: usize) -> Result<Vec<f64>> {
        let s = self.sampling_box();
        let target = self
            .pieces
            .get(piece)
            .ok_or_else(|| Error::InvalidArgument(format!("no piece {piece}")))?;
        for _ in 0..max_tries {
            let p: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-s..=s)).collect();
            if target.contains(&p) {
                return Ok(p);
            }
        }
        Err(Error::Precondition(format!(
            "could not sample a point in piece {piece} after {max_tries} tries"
        )))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&PwlDoc {
            kind: PWL_DOCUMENT_KIND.into(),
            dim: self.dim,
            default_value: self.default_value,
            pieces: self.pieces.clone(),
        })
        .map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PwlDoc {
    kind: String,
    dim: usize,
    #[serde(default)]
    default_value: f64,
    pieces: Vec<Piece>,
}

pub fn parse_pwl(text: &str) -> Result<PwlModel> {
    let doc: PwlDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.kind != PWL_DOCUMENT_KIND {
        return Err(Error::Parse(format!(
            "expected document kind \"{PWL_DOCUMENT_KIND}\", found \"{}\"",
            doc.kind
        )));
    }
    PwlModel::new(doc.dim, doc.pieces, doc.default_value)
}

pub fn load_pwl(path: impl AsRef<Path>) -> Result<PwlModel> {
    parse_pwl(&std::fs::read_to_string(path)?)
}

impl ScalarModel for PwlModel {
    fn value(&self, x: &TensorF) -> Result<f64> {
        self.evaluate(x.as_slice())
    }

    fn gradient(&self, x: &TensorF) -> Result<TensorF> {
        let g = match self.active_piece(x.as_slice())? {
            Some(i) => self.pieces[i].weights.clone(),
            None => vec![0.0; self.dim],
        };
        x.with_values(g)
    }

    fn feature_unused(&self, index: usize) -> bool {
        index < self.dim
            && self.pieces.iter().all(|p| {
                p.weights[index] == 0.0 && p.region.iter().all(|h| h.normal[index] == 0.0)
            })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_values() {
        let m = PwlModel::example1();
        assert_eq!(m.evaluate(&[1.5, 1.5]).unwrap(), 9.5);
        assert_eq!(m.evaluate(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m.evaluate(&[0.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn example1_regions() {
        let m = PwlModel::example1();
        assert_eq!(m.active_piece(&[4.0, 4.0]).unwrap(), Some(1));
        assert_eq!(m.active_piece(&[1.0, 1.0]).unwrap(), Some(0));
        assert_eq!(m.active_piece(&[-1.0, 5.0]).unwrap(), None);
        assert!(m.active_piece(&[1.0]).is_err());
    }

    #[test]
    fn same_region_attributions() {
        let m = PwlModel::example1();
        let a = m.exact_path_attribution(&[1.5, 1.5], &[3.0, 3.0]).unwrap();
        assert_eq!(a, vec![-6.0, -1.5]);
        let b = m.exact_path_attribution(&[4.0, 4.0], &[3.0, 3.0]).unwrap();
        assert_eq!(b, vec![4.0, 1.0]);
        let z = m.exact_path_attribution(&[3.0, 3.0], &[3.0, 3.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_baseline_crosses_regions() {
        // Frozen from hand integration: the path leaves U_1 at α = 2/3 (x^a)
        // and α = 1/4 (x^b).
        let m = PwlModel::example1();
        let seg = m.segment_path(&[1.5, 1.5], &[0.0, 0.0]).unwrap();
        assert_eq!(seg.crossings.len(), 1);
        assert!((seg.crossings[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(seg.pieces, vec![Some(0), Some(1)]);
        let a = m.exact_path_attribution(&[1.5, 1.5], &[0.0, 0.0]).unwrap();
        assert!((a[0] - 3.0).abs() < 1e-12 && (a[1] - 4.5).abs() < 1e-12, "{a:?}");
        let b = m.exact_path_attribution(&[4.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((b[0] - 13.0).abs() < 1e-12 && (b[1] - 7.0).abs() < 1e-12, "{b:?}");
    }

    #[test]
    fn outside_intervals_contribute_nothing() {
        // From (0.5, 0) to (0.5, 3): U_1 until x2 = 1, then outside.
        let m = PwlModel::example1();
        let a = m.exact_path_attribution(&[0.5, 3.0], &[0.5, 0.0]).unwrap();
        assert_eq!(a[0], 0.0);
        assert!((a[1] - 3.0 * (1.0 / 3.0) * 4.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_regions_rejected() {
        let half = |n: f64| HalfSpace {
            normal: vec![n],
            offset: 1.0,
            strict: false,
        };
        let pieces = vec![
            Piece {
                region: vec![half(1.0)],
                weights: vec![1.0],
                bias: 0.0,
            },
            Piece {
                region: vec![half(-1.0)],
                weights: vec![2.0],
                bias: 0.0,
            },
        ];
        assert!(matches!(
            PwlModel::new(1, pieces, 0.0),
            Err(Error::OverlappingRegions { .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let m = PwlModel::example1();
        let back = parse_pwl(&m.to_toml().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(parse_pwl("kind = \"model\"\ndim = 1\npieces = []").is_err());
    }
}
