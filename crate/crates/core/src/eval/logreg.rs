use std::f64::consts::PI;

use mn_autodiff::Matrix;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticConfig {
    /// Coefficient of `0.5 * ||W||^2`; the bias is not penalized.
    pub l2: f64,
    pub iters: usize,
    /// Initial step size, annealed to zero along a half cosine.
    pub lr: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            iters: 500,
            lr: 0.5,
        }
    }
}

/// Multinomial logistic regression, `K x d` weights plus `K` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Full-batch gradient descent on the mean cross-entropy from a zero start.
pub fn logistic_fit(
    x: &Matrix,
    y: &[usize],
    num_classes: usize,
    cfg: &LogisticConfig,
) -> Result<LogisticModel, EvalError> {
    if x.rows() != y.len() {
        return Err(EvalError::Length(x.rows(), y.len()));
    }
    if num_classes < 2 {
        return Err(EvalError::Degenerate(format!("{num_classes} classes")));
    }
    if let Some(&label) = y.iter().find(|&&c| c >= num_classes) {
        return Err(EvalError::LabelRange {
            label,
            classes: num_classes,
        });
    }
    let mut present = vec![false; num_classes];
    for &c in y {
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(EvalError::Degenerate("training labels contain a single class".into()));
    }

    let (n, d) = x.shape();
    let mut model = LogisticModel {
        weight: Matrix::zeros(num_classes, d),
        bias: vec![0.0; num_classes],
    };
    let mut probs = vec![0.0; num_classes];
    for t in 0..cfg.iters {
        let step = cfg.lr * 0.5 * (1.0 + (PI * t as f64 / cfg.iters as f64).cos());
        let mut gw = Matrix::zeros(num_classes, d);
        let mut gb = vec![0.0; num_classes];
        for i in 0..n {
            model.logits_into(x.row(i), &mut probs);
            softmax_in_place(&mut probs);
            probs[y[i]] -= 1.0;
            for (k, &p) in probs.iter().enumerate() {
                gb[k] += p;
                for (g, &xv) in gw.row_mut(k).iter_mut().zip(x.row(i)) {
                    *g += p * xv;
                }
            }
        }
        let inv = 1.0 / n as f64;
        for k in 0..num_classes {
            model.bias[k] -= step * gb[k] * inv;
            let grad = gw.row(k).to_vec();
            for (w, g) in model.weight.row_mut(k).iter_mut().zip(grad) {
                *w -= step * (g * inv + cfg.l2 * *w);
            }
        }
    }
    Ok(model)
}

impl LogisticModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn logits_into(&self, row: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias[k]
                + self
                    .weight
                    .row(k)
                    .iter()
                    .zip(row)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
        }
    }

    /// Row-stochastic class probabilities, one row per input row.
    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let k = self.num_classes();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            self.logits_into(x.row(i), row);
            softmax_in_place(row);
        }
        out
    }

    /// Arg-max class per row; ties go to the lower class id.
    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let p = self.predict_proba(x);
        (0..p.rows())
            .map(|i| {
                let row = p.row(i);
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dimensional() {
        let xs: Vec<[f64; 1]> = (0..20).map(|i| [if i < 10 { -2.0 - i as f64 * 0.1 } else { 2.0 + i as f64 * 0.1 }]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let x = Matrix::from_rows(&xs);
        let m = logistic_fit(&x, &y, 2, &LogisticConfig::default()).unwrap();
        let test = Matrix::from_rows(&[[-1.5], [-0.5], [0.5], [3.0]]);
        assert_eq!(m.predict(&test), vec![0, 0, 1, 1]);
    }

    #[test]
    fn identical_features_give_uniform() {
        let x = Matrix::filled(9, 4, 0.7);
        let y: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let m = logistic_fit(&x, &y, 3, &LogisticConfig::default()).unwrap();
        for v in m.predict_proba(&x).as_slice() {
            assert!((v - 1.0 / 3.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn zero_iterations_is_uniform() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        let cfg = LogisticConfig { iters: 0, ..Default::default() };
        let m = logistic_fit(&x, &[0, 1], 2, &cfg).unwrap();
        for v in m.predict_proba(&x).as_slice() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            logistic_fit(&x, &[1, 1, 1], 2, &LogisticConfig::default()),
            Err(EvalError::Degenerate(_))
        ));
        assert!(logistic_fit(&x, &[0, 0, 0], 1, &LogisticConfig::default()).is_err());
    }
}
