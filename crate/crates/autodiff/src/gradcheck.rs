//! Central finite-difference verification of reverse-mode gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::AdError;
use crate::matrix::Matrix;
use crate::param::{ParamId, ParamStore};
use crate::segments::Segments;
use crate::tape::{OpKind, Reduce, Tape, Tensor};

/// Default step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, values: &[Matrix], fault: Option<OpKind>) -> Result<(Tape, Tensor), AdError>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, AdError>,
{
    let mut tape = Tape::with_fault(fault);
    let bound: Vec<Tensor> = values
        .iter()
        .enumerate()
        .map(|(i, v)| tape.param(ParamId::new(i), v.clone()))
        .collect();
    let loss = f(&mut tape, &bound)?;
    Ok((tape, loss))
}

/// Compares the tape gradient of the scalar `f` against
/// `(f(p+h) - f(p-h)) / 2h` for every element of every parameter in `store`.
///
/// `f` receives the parameters bound in `ParamId` order and must be a
/// deterministic function of them. `fault` breaks the backward rule of one
/// primitive (negative control).
pub fn grad_check<F>(
    f: F,
    store: &ParamStore,
    h: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, AdError>,
{
    let mut values: Vec<Matrix> = store.iter().map(|p| p.value.clone()).collect();
    let (tape, loss) = evaluate(&f, &values, fault)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, param) in store.iter().enumerate() {
        let analytic_all = grads.get(ParamId::new(pi));
        for e in 0..param.value.as_slice().len() {
            let orig = values[pi].as_slice()[e];
            values[pi].as_mut_slice()[e] = orig + h;
            let (t, l) = evaluate(&f, &values, None)?;
            let plus = t.scalar(l);
            values[pi].as_mut_slice()[e] = orig - h;
            let (t, l) = evaluate(&f, &values, None)?;
            let minus = t.scalar(l);
            values[pi].as_mut_slice()[e] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = analytic_all.map_or(0.0, |g| g.as_slice()[e]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((param.name.clone(), e));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}


fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).expect("sized")
}

/// Scalarizes `out` with fixed random weights of magnitude in [0.5, 1.5) so
/// every output element contributes a distinct, non-negligible gradient.
fn weighted_mean(t: &mut Tape, out: Tensor, seed: u64) -> Result<Tensor, AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = out.rows() * out.cols();
    let w: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let w = t.constant(Matrix::from_vec(out.rows(), out.cols(), w)?);
    let p = t.mul(out, w)?;
    t.mean_all(p)
}

/// Gradient check of one primitive on small random inputs drawn from `seed`.
/// Segment-max inputs are continuous, so ties occur with probability zero.
pub fn check_primitive(op: OpKind, seed: u64, fault: Option<OpKind>) -> Result<GradCheckReport, AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.add("a", random(&mut rng, 5, 3), true);
    store.add("b", random(&mut rng, 5, 3), true);
    store.add("c", random(&mut rng, 3, 4), true);
    store.add("row", random(&mut rng, 1, 3), true);
    let groups = Arc::new(Segments::from_groups(&[vec![0, 2], vec![1, 3, 4], vec![4]]));
    let gather = Arc::new(vec![4, 0, 0, 2]);
    let weights = Arc::new(vec![0.5, -1.0, 2.0, 0.0, 3.0]);
    let labels = Arc::new(vec![0, 2, 1, 1, 0]);
    let f = move |t: &mut Tape, p: &[Tensor]| -> Result<Tensor, AdError> {
        let (a, b, c, row) = (p[0], p[1], p[2], p[3]);
        let out = match op {
            OpKind::MatMul => t.matmul(a, c)?,
            OpKind::Add => t.add(a, b)?,
            OpKind::Mul => t.mul(a, b)?,
            OpKind::AddRowBroadcast => t.add_row_broadcast(a, row)?,
            OpKind::Scale => t.scale(a, -2.5),
            OpKind::ScaleRows => t.scale_rows(a, weights.clone())?,
            OpKind::ConcatCols => t.concat_cols(&[a, b, a])?,
            OpKind::ConcatRows => t.concat_rows(&[b, a])?,
            OpKind::Tanh => t.tanh(a),
            OpKind::Logistic => t.logistic(a),
            OpKind::LogSigmoid => t.log_sigmoid(a),
            OpKind::MeanAll => {
                let sq = t.mul(a, a)?;
                return t.mean_all(sq);
            }
            OpKind::RowGather => t.row_gather(a, gather.clone())?,
            OpKind::SegmentSum => t.segment_reduce(a, groups.clone(), Reduce::Sum)?,
            OpKind::SegmentMean => t.segment_reduce(a, groups.clone(), Reduce::Mean)?,
            OpKind::SegmentMax => t.segment_reduce(a, groups.clone(), Reduce::Max)?,
            OpKind::BatchNorm => {
                let gamma = t.scale(row, 1.0);
                let beta = t.tanh(row);
                t.batch_norm(a, gamma, beta)?
            }
            OpKind::CrossEntropy => {
                let logits = t.matmul(a, c)?;
                return t.cross_entropy(logits, labels.clone());
            }
        };
        weighted_mean(t, out, 99)
    };
    grad_check(f, &store, DEFAULT_STEP, fault)
}
