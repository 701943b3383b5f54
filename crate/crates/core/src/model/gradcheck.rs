use super::Model;
use crate::error::{Error, Result};
use crate::tensor::TensorF;

/// Central-difference estimate of `d logit[class] / dx`, one feature at a
/// time. Uses only forward evaluations, so it is independent of the
/// reverse-mode path.
pub fn finite_diff_oracle(model: &Model, x: &TensorF, class_index: usize, h: f64) -> Result<TensorF> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if class_index >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: class_index,
            num_classes: model.num_classes(),
        });
    }
    let base = x.as_slice().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut up = base.clone();
        let mut down = base.clone();
        up[i] += h;
        down[i] -= h;
        let fu = model.forward_logits(&x.with_values(up)?)?[class_index];
        let fd = model.forward_logits(&x.with_values(down)?)?[class_index];
        grad.push((fu - fd) / (2.0 * h));
    }
    x.with_values(grad)
}

/// Features whose `±h` perturbation flips the sign of some ReLU
/// pre-activation. Finite differences straddling such a kink report the
/// two-sided average rather than either one-sided slope.
pub fn kinks_near(model: &Model, x: &TensorF, h: f64) -> Result<Vec<usize>> {
    let base = x.as_slice().to_vec();
    let mut flagged = Vec::new();
    for i in 0..base.len() {
        let mut up = base.clone();
        let mut down = base.clone();
        up[i] += h;
        down[i] -= h;
        if crosses_kink(model, &x.with_values(down)?, &x.with_values(up)?)? {
            flagged.push(i);
        }
    }
    Ok(flagged)
}

/// Whether any ReLU pre-activation differs in activity (`> 0`) between the
/// endpoints or the midpoint of the segment `a -> b`.
pub fn crosses_kink(model: &Model, a: &TensorF, b: &TensorF) -> Result<bool> {
    a.check_same_shape(b)?;
    let mid: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| 0.5 * (p + q))
        .collect();
    let pa = model.relu_preactivations(a.as_slice());
    let pm = model.relu_preactivations(&mid);
    let pb = model.relu_preactivations(b.as_slice());
    Ok(pa
        .iter()
        .zip(&pm)
        .zip(&pb)
        .any(|((u, m), v)| (*u > 0.0) != (*v > 0.0) || (*u > 0.0) != (*m > 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, ModelSpec};

    fn t(v: &[f64]) -> TensorF {
        TensorF::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn exact_for_affine() {
        let m = Model::compile(ModelSpec::new(
            vec![2],
            1,
            vec![Layer::Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![2.0, -1.0],
                bias: vec![0.0],
            }],
        ))
        .unwrap();
        for h in [1e-5, 0.25, 3.0] {
            let g = finite_diff_oracle(&m, &t(&[0.25, 0.5]), 0, h).unwrap();
            assert!((g.as_slice()[0] - 2.0).abs() < 1e-9);
            assert!((g.as_slice()[1] + 1.0).abs() < 1e-9);
        }
        assert!(finite_diff_oracle(&m, &t(&[0.0, 0.0]), 0, 0.0).is_err());
    }

    #[test]
    fn constant_model_is_zero() {
        let m = Model::compile(ModelSpec::new(vec![3], 1, vec![Layer::dense(3, 1)])).unwrap();
        let g = finite_diff_oracle(&m, &t(&[0.1, 0.2, 0.3]), 0, 1e-5).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn kink_straddle_reports_average_and_is_flagged() {
        // f(x) = relu(x - 0.5): kink at 0.5
        let m = Model::compile(ModelSpec::new(
            vec![1],
            1,
            vec![
                Layer::Dense {
                    inputs: 1,
                    outputs: 1,
                    weights: vec![1.0],
                    bias: vec![-0.5],
                },
                Layer::Relu,
            ],
        ))
        .unwrap();
        let h = 1e-3;
        // exactly at the kink: (h - 0) / 2h = 0.5
        let g = finite_diff_oracle(&m, &t(&[0.5]), 0, h).unwrap();
        assert!((g.as_slice()[0] - 0.5).abs() < 1e-9);
        assert_eq!(kinks_near(&m, &t(&[0.5]), h).unwrap(), vec![0]);
        // one-sided offset: x = 0.5 + h/2 -> (1.5h - 0) / 2h = 0.75
        let g = finite_diff_oracle(&m, &t(&[0.5 + h / 2.0]), 0, h).unwrap();
        assert!((g.as_slice()[0] - 0.75).abs() < 1e-9);
        assert_eq!(kinks_near(&m, &t(&[0.5 + h / 2.0]), h).unwrap(), vec![0]);
        // away from the kink
        assert!(kinks_near(&m, &t(&[0.8]), h).unwrap().is_empty());
        assert!(kinks_near(&m, &t(&[0.2]), h).unwrap().is_empty());
    }
}
