//! Reproducible attribution runs: a `RunConfig` fully determines one map.

use std::fs;
use std::path::{Path, PathBuf};

use pathattr_core::baseline::{
    compute_baseline, fixed_baseline, gaussian_blur, BaselineSpec, OptimizedParams, SearchGradient,
};
use pathattr_core::path::{expected_gradients, riemann_ig, AttributionMap, RiemannConfig};
use pathattr_core::valid_path::{attribute_proposed, BaselineSource, ProposedConfig, DEFAULT_SIGMA_STEP};
use pathattr_core::{digest, io, rng, ClassOutput, Error, Model, OutputMode, Result, TensorF};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::args::{BaselineKind, Method, MethodArgs, SearchGrad, Target};

/// Blur width used by single-baseline methods when `--sigma` is absent.
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub model: PathBuf,
    pub model_digest: String,
    pub input: PathBuf,
    pub steps: usize,
    pub num_baselines: usize,
    pub baseline_kind: BaselineKind,
    pub sigma: Option<f64>,
    pub eta: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub max_iter: usize,
    pub noise_std: f64,
    pub target_output: Target,
    pub baseline_grad: SearchGrad,
    /// Effective seed for this input (already derived for directory runs).
    pub seed: u64,
}

pub fn default_kind(method: Method) -> BaselineKind {
    match method {
        Method::Ig | Method::ProposedIgbase => BaselineKind::Black,
        Method::IgGauss | Method::Eg => BaselineKind::GaussianNoise,
        Method::IgAvg => BaselineKind::InputMean,
        Method::Proposed | Method::ProposedSingle => BaselineKind::Optimized,
    }
}

impl RunConfig {
    pub fn new(args: &MethodArgs, model: &Path, input: &Path, seed: u64) -> Result<Self> {
        let kind = args.baseline_kind.unwrap_or_else(|| default_kind(args.method));
        let expected = default_kind(args.method);
        let fixed_kind = matches!(
            args.method,
            Method::IgGauss | Method::IgAvg | Method::Proposed | Method::ProposedIgbase | Method::ProposedSingle
        );
        if fixed_kind && kind != expected {
            return Err(Error::InvalidArgument(format!(
                "method {} always uses {} baselines",
                args.method.name(),
                expected.to_possible_value().expect("no skipped variants").get_name()
            )));
        }
        Ok(Self {
            method: args.method,
            model: fs::canonicalize(model)?,
            model_digest: digest::bytes_hex(&fs::read(model)?),
            input: fs::canonicalize(input)?,
            steps: args.steps,
            num_baselines: if args.method == Method::ProposedSingle {
                1
            } else {
                args.num_baselines
            },
            baseline_kind: kind,
            sigma: args.sigma,
            eta: args.eta,
            eps: args.eps,
            delta: args.delta,
            max_iter: args.max_iter,
            noise_std: args.noise_std,
            target_output: args.target_output,
            baseline_grad: args.baseline_grad,
            seed,
        })
    }

    pub fn output_mode(&self) -> OutputMode {
        match self.target_output {
            Target::Logit => OutputMode::Logit,
            Target::Probability => OutputMode::Probability,
        }
    }

    fn search(&self, sigma: f64) -> OptimizedParams {
        OptimizedParams {
            sigma,
            eta: self.eta,
            eps: self.eps,
            delta: self.delta,
            max_iter: self.max_iter,
            gradient: match self.baseline_grad {
                SearchGrad::Loss => SearchGradient::Loss,
                SearchGrad::Raw => SearchGradient::Raw,
            },
        }
    }

    /// Loads the model, checking it still matches the recorded digest.
    pub fn load_model(&self) -> Result<Model> {
        let bytes = fs::read(&self.model)?;
        if digest::bytes_hex(&bytes) != self.model_digest {
            return Err(Error::Precondition(format!(
                "model file {} changed since the run was recorded",
                self.model.display()
            )));
        }
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
        Model::compile(pathattr_core::model::parse_model_spec(
            &text,
            pathattr_core::model::WeightPolicy::Require,
        )?)
    }

    /// Baseline number `index` for single- and multi-baseline methods.
    fn baseline(&self, model: &Model, x: &TensorF, index: usize, multi: bool) -> Result<TensorF> {
        let range = model.input_range();
        let sigma = match (self.sigma, multi) {
            (Some(s), true) => s * (index + 1) as f64,
            (None, true) => DEFAULT_SIGMA_STEP * (index + 1) as f64,
            (Some(s), false) => s,
            (None, false) => DEFAULT_BLUR_SIGMA,
        };
        match self.baseline_kind {
            BaselineKind::Black => fixed_baseline(x, &BaselineSpec::Black, range),
            BaselineKind::InputMean => fixed_baseline(x, &BaselineSpec::InputMean, range),
            BaselineKind::GaussianNoise => fixed_baseline(
                x,
                &BaselineSpec::GaussianNoise {
                    std: self.noise_std,
                    seed: rng::mix(self.seed, index as u64),
                },
                range,
            ),
            BaselineKind::Blur => gaussian_blur(x, sigma),
            BaselineKind::Optimized => Ok(compute_baseline(model, x, &self.search(sigma))?.baseline),
        }
    }

    pub fn attribute(&self, model: &Model, x: &TensorF) -> Result<AttributionMap> {
        let target = ClassOutput::predicted(model, x, self.output_mode())?;
        let mut map = match self.method {
            Method::Ig | Method::IgGauss | Method::IgAvg => {
                let base = self.baseline(model, x, 0, false)?;
                let mut cfg = RiemannConfig::midpoint(self.steps);
                cfg.seed = self.seed;
                riemann_ig(&target, x, &base, &cfg)?
            }
            Method::Eg => {
                let bases = (0..self.num_baselines)
                    .map(|b| self.baseline(model, x, b, true))
                    .collect::<Result<Vec<_>>>()?;
                expected_gradients(&target, x, &bases, self.steps, self.seed)?
            }
            Method::Proposed | Method::ProposedIgbase | Method::ProposedSingle => {
                let step = self.sigma.unwrap_or(DEFAULT_SIGMA_STEP);
                let cfg = ProposedConfig {
                    num_baselines: self.num_baselines,
                    total_steps: self.steps,
                    sigmas: (1..=self.num_baselines).map(|b| step * b as f64).collect(),
                    search: self.search(step),
                    source: if self.method == Method::ProposedIgbase {
                        BaselineSource::Black
                    } else {
                        BaselineSource::Optimized
                    },
                    output: self.output_mode(),
                    seed: self.seed,
                };
                attribute_proposed(model, x, &cfg)?.map
            }
        };
        map.meta.method = self.method.name().into();
        map.meta
            .extra
            .insert("target_class".into(), target.class.into());
        map.meta.extra.insert(
            "baseline_kind".into(),
            serde_json::to_value(self.baseline_kind).unwrap(),
        );
        Ok(map)
    }
}

/// Reads an image or tensor text file and fits it to the model's input
/// shape when the element counts agree.
pub fn read_input(path: &Path, model: &Model) -> Result<TensorF> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let t = match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => io::read_image(path)?,
        _ => io::read_scores(path)?,
    };
    if t.shape() == model.input_shape() {
        Ok(t)
    } else if t.len() == model.input_shape().iter().product::<usize>() {
        t.reshaped(model.input_shape())
    } else {
        Err(Error::ShapeMismatch {
            expected: model.input_shape().to_vec(),
            got: t.shape().to_vec(),
        })
    }
}

pub fn is_input_file(path: &Path) -> bool {
    path.is_file()
        && matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("pgm" | "ppm" | "pnm" | "txt")
        )
}

/// `(path, effective seed, output subdirectory)` for every input. A single
/// file keeps the given seed and writes to the output root; directory
/// entries get seeds derived from their file names.
pub fn list_inputs(input: &Path, seed: u64) -> Result<Vec<(PathBuf, u64, Option<String>)>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| is_input_file(p));
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .pgm/.ppm/.txt inputs in {}",
                input.display()
            )));
        }
        Ok(files
            .into_iter()
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
                (p, rng::labeled_seed(seed, &name), Some(stem))
            })
            .collect())
    } else if input.is_file() {
        Ok(vec![(input.to_path_buf(), seed, None)])
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input {} not found", input.display()),
        )))
    }
}

/// The `run` record stored in a map's meta.json.
pub fn read_run_config(meta_path: &Path) -> Result<RunConfig> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(meta_path)?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let run = v
        .get("run")
        .ok_or_else(|| Error::Parse(format!("{} has no run record", meta_path.display())))?;
    serde_json::from_value(run.clone()).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kinds() {
        assert_eq!(default_kind(Method::Ig), BaselineKind::Black);
        assert_eq!(default_kind(Method::Eg), BaselineKind::GaussianNoise);
        assert_eq!(default_kind(Method::IgAvg), BaselineKind::InputMean);
        assert_eq!(default_kind(Method::ProposedIgbase), BaselineKind::Black);
        assert_eq!(default_kind(Method::ProposedSingle), BaselineKind::Optimized);
    }

    #[test]
    fn directory_inputs_are_sorted_with_name_seeds() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.txt", "a.pgm", "notes.md"] {
            fs::write(dir.path().join(name), "").unwrap();
        }
        let got = list_inputs(dir.path(), 9).unwrap();
        let names: Vec<_> = got.iter().map(|g| g.2.clone().unwrap()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(got[0].1, rng::labeled_seed(9, "a.pgm"));
        assert_ne!(got[0].1, got[1].1);
        let single = list_inputs(&dir.path().join("b.txt"), 9).unwrap();
        assert_eq!((single[0].1, single[0].2.clone()), (9, None));
        assert!(list_inputs(&dir.path().join("missing"), 0).is_err());
    }
}
