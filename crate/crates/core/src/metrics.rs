//! Evaluation quantities computed from training traces and models.

use thiserror::Error;

use crate::envs::Labeled;
use crate::learners::{LearnError, Model};
use crate::numkernel::{count_eigenvalues_below, LinalgError, Mat};

/// Largest parameter count for which a dense Hessian is formed.
pub const MAX_HESSIAN_PARAMS: usize = 600;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_NEG_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("flip step {flip} outside the trace [{first}, {last}]")]
    FlipOutOfRange { flip: usize, first: usize, last: usize },
    #[error("loss never fell below epsilon after the flip")]
    NotRecovered,
    #[error("window {window} does not fit a trace of {len} rows")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("model has {0} parameters, dense Hessian limit is {MAX_HESSIAN_PARAMS}")]
    TooManyParams(usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("trace steps must be strictly increasing")]
    UnorderedTrace,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub active_key: Option<String>,
    pub phase: i64,
}

/// Training trace with strictly increasing steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(rows: Vec<TraceRow>) -> Result<Trace, MetricsError> {
        if rows.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(MetricsError::UnorderedTrace);
        }
        Ok(Trace { rows })
    }

    /// Trace of bare losses at steps `0, 1, ..`.
    pub fn from_losses(losses: &[f64]) -> Trace {
        let rows = losses
            .iter()
            .enumerate()
            .map(|(step, &loss)| TraceRow { step, loss, grad_norm: 0.0, active_key: None, phase: 0 })
            .collect();
        Trace { rows }
    }

    pub fn push(&mut self, row: TraceRow) -> Result<(), MetricsError> {
        if self.rows.last().is_some_and(|r| r.step >= row.step) {
            return Err(MetricsError::UnorderedTrace);
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Steps from `flip_step` until the loss first drops below `epsilon`.
pub fn adaptation_latency(trace: &Trace, flip_step: usize, epsilon: f64) -> Result<usize, MetricsError> {
    let rows = trace.rows();
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.step, b.step),
        _ => return Err(MetricsError::FlipOutOfRange { flip: flip_step, first: 0, last: 0 }),
    };
    if flip_step < first || flip_step > last {
        return Err(MetricsError::FlipOutOfRange { flip: flip_step, first, last });
    }
    rows.iter()
        .filter(|r| r.step >= flip_step)
        .find(|r| r.loss < epsilon)
        .map(|r| r.step - flip_step)
        .ok_or(MetricsError::NotRecovered)
}

/// First step (counted from the trace's first row) whose loss is below `epsilon`.
pub fn convergence_time(trace: &Trace, epsilon: f64) -> Option<usize> {
    let start = trace.rows().first()?.step;
    trace.rows().iter().find(|r| r.loss < epsilon).map(|r| r.step - start)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleThresholds {
    pub g_hi: f64,
    pub d_lo: f64,
}

impl SaddleThresholds {
    /// `g_hi` from the 75th percentile of warm-up gradient norms, `d_lo = 1e-5`.
    pub fn from_warmup(grad_norms: &[f64]) -> SaddleThresholds {
        let mut g: Vec<f64> = grad_norms.to_vec();
        g.sort_by(f64::total_cmp);
        let g_hi = if g.is_empty() { 0.0 } else { g[((g.len() - 1) as f64 * 0.75).round() as usize] };
        SaddleThresholds { g_hi, d_lo: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleWindow {
    pub start: usize,
    pub mean_grad_norm: f64,
    pub decay_rate: f64,
    pub stagnant: bool,
}

/// Non-overlapping windows of `window` steps: high gradient with a flat loss flags a saddle.
pub fn saddle_proxy(trace: &Trace, window: usize, th: SaddleThresholds) -> Result<Vec<SaddleWindow>, MetricsError> {
    if window < 2 {
        return Err(MetricsError::WindowTooSmall(window));
    }
    let rows = trace.rows();
    if window >= rows.len() {
        return Err(MetricsError::WindowTooLarge { window, len: rows.len() });
    }
    let mut out = Vec::new();
    let mut t = 0;
    while t + window < rows.len() {
        let mean_grad_norm = rows[t..t + window].iter().map(|r| r.grad_norm).sum::<f64>() / window as f64;
        let decay_rate = (rows[t].loss - rows[t + window].loss) / window as f64;
        out.push(SaddleWindow {
            start: rows[t].step,
            mean_grad_norm,
            decay_rate,
            stagnant: mean_grad_norm > th.g_hi && decay_rate.abs() < th.d_lo,
        });
        t += window;
    }
    Ok(out)
}

/// Central-difference Hessian of a function given by its gradient, symmetrised.
pub fn fd_hessian<G>(theta: &[f64], fd_step: f64, mut grad: G) -> Result<Mat, MetricsError>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>, MetricsError>,
{
    let n = theta.len();
    if n > MAX_HESSIAN_PARAMS {
        return Err(MetricsError::TooManyParams(n));
    }
    let mut h = Mat::zeros(n, n);
    let mut probe = theta.to_vec();
    for j in 0..n {
        probe[j] = theta[j] + fd_step;
        let gp = grad(&probe)?;
        probe[j] = theta[j] - fd_step;
        let gm = grad(&probe)?;
        probe[j] = theta[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * fd_step);
        }
    }
    Ok(h.symmetrized())
}

/// Fraction of eigenvalues of a symmetric matrix below `-neg_tol`.
pub fn negative_density(h: &Mat, neg_tol: f64) -> Result<f64, MetricsError> {
    if h.rows() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(count_eigenvalues_below(h, -neg_tol)? as f64 / h.rows() as f64)
}

/// Negative-eigenvalue density of the mean-loss Hessian of `model` on `batch`.
pub fn hessian_negative_density(
    model: &Model,
    batch: &[Labeled<'_>],
    fd_step: f64,
    neg_tol: f64,
) -> Result<f64, MetricsError> {
    let n = model.n_params();
    if n > MAX_HESSIAN_PARAMS {
        return Err(MetricsError::TooManyParams(n));
    }
    let mut work = model.clone();
    let h = fd_hessian(&model.params(), fd_step, |p| {
        work.set_params(p)?;
        Ok(work.batch_loss_and_grad(batch)?.1)
    })?;
    negative_density(&h, neg_tol)
}

pub fn average_accuracy(per_task: &[f64]) -> Result<f64, MetricsError> {
    if per_task.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Ranks starting at 1, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either side is constant or lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_examples() {
        let t = Trace::from_losses(&[5.0, 1.0, 0.5, 9e-4, 2.0]);
        assert_eq!(adaptation_latency(&t, 1, 1e-3).unwrap(), 2);
        assert_eq!(adaptation_latency(&t, 3, 1e-3).unwrap(), 0);
        assert!(matches!(adaptation_latency(&t, 4, 1e-3), Err(MetricsError::NotRecovered)));
        assert!(matches!(adaptation_latency(&t, 9, 1e-3), Err(MetricsError::FlipOutOfRange { .. })));
    }

    #[test]
    fn geometric_convergence() {
        let losses: Vec<f64> = (0..200).map(|t| 0.9f64.powi(t)).collect();
        assert_eq!(convergence_time(&Trace::from_losses(&losses), 1e-3), Some(66));
        assert_eq!(convergence_time(&Trace::from_losses(&[1e-4]), 1e-3), Some(0));
        assert_eq!(convergence_time(&Trace::from_losses(&[1.0; 5]), 1e-3), None);
    }

    #[test]
    fn saddle_flags() {
        let th = SaddleThresholds { g_hi: 1.0, d_lo: 1e-5 };
        let mut flat = Trace::from_losses(&[1.0; 10]);
        assert!(saddle_proxy(&flat, 3, th).unwrap().iter().all(|w| !w.stagnant));
        flat.rows.iter_mut().for_each(|r| r.grad_norm = 5.0);
        assert!(saddle_proxy(&flat, 3, th).unwrap().iter().all(|w| w.stagnant));
        let mut geo = Trace::from_losses(&(0..10).map(|t| 0.5f64.powi(t)).collect::<Vec<_>>());
        geo.rows.iter_mut().for_each(|r| r.grad_norm = 5.0);
        assert!(saddle_proxy(&geo, 3, th).unwrap().iter().all(|w| !w.stagnant));
        assert!(matches!(saddle_proxy(&geo, 10, th), Err(MetricsError::WindowTooLarge { .. })));
        assert_eq!(SaddleThresholds::from_warmup(&[1.0, 2.0, 3.0, 4.0, 5.0]).g_hi, 4.0);
    }

    #[test]
    fn quadratic_hessians() {
        let bowl = fd_hessian(&[0.3, -0.2], 1e-4, |p| Ok(p.to_vec())).unwrap();
        assert_eq!(negative_density(&bowl, 1e-6).unwrap(), 0.0);
        let saddle = fd_hessian(&[0.3, -0.2], 1e-4, |p| Ok(vec![p[0], -p[1]])).unwrap();
        assert_eq!(negative_density(&saddle, 1e-6).unwrap(), 0.5);
        let too_big = vec![0.0; MAX_HESSIAN_PARAMS + 1];
        assert!(matches!(fd_hessian(&too_big, 1e-4, |p| Ok(p.to_vec())), Err(MetricsError::TooManyParams(_))));
    }

    #[test]
    fn averages_and_ranks() {
        assert_eq!(average_accuracy(&[1.0]).unwrap(), 1.0);
        assert_eq!(average_accuracy(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((average_accuracy(&[0.9, 0.8, 0.7, 0.6, 0.5]).unwrap() - 0.7).abs() < 1e-12);
        assert!(matches!(average_accuracy(&[]), Err(MetricsError::EmptyInput)));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
