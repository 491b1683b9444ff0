//! Expected sufficient statistics of a homogeneous (possibly reduced)
//! intensity factor over an interval, their aggregation onto sub-scopes and
//! the moment-matching projection back to an intensity factor.
//!
//! The forward vector `α(t) = p0 exp(Q (t - t1))` is integrated with an
//! adaptive step-doubling RK4 solver on the absorbing-state augmented matrix.
//! Each accepted step contributes a Simpson panel with nodes at its start,
//! midpoint and end; the backward vector `β(t) = exp(Q (t2 - t)) 1` is
//! integrated on the same nodes so the products `α_j β_k` are available at
//! every node.

use nalgebra::{DMatrix, DVector};

use crate::algebra::{augment_absorbing, propagate, IntensityFactor, PointDistribution};
use crate::error::{CtbnError, Result};
use crate::scope::Scope;
use crate::tolerance::TOLERANCES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Relative tolerance of the step-doubling error estimate.
    pub rel_tol: f64,
    pub safety: f64,
    /// Initial step is `initial_step_scale / q_max`.
    pub initial_step_scale: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { rel_tol: 1e-6, safety: 0.9, initial_step_scale: 0.1 }
    }
}

/// Expected occupancy times and transition counts over retained states.
///
/// The `expected_*` fields are normalized so the times sum to the interval
/// length; the `unnormalized_*` fields are the raw integrals before scaling
/// by `normalizer`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub scope: Scope,
    pub retained: Vec<usize>,
    pub expected_time: Vec<f64>,
    /// `E[M[j, k]]`, zero diagonal.
    pub expected_transitions: DMatrix<f64>,
    /// `E[M[j, ι]]`, expected number of exits out of the evidence.
    pub expected_exit: Vec<f64>,
    pub interval_length: f64,
    pub unnormalized_time: Vec<f64>,
    pub unnormalized_transitions: DMatrix<f64>,
    pub unnormalized_exit: Vec<f64>,
    /// Unnormalized time spent in the absorbing state.
    pub absorbed_time: f64,
    /// `c`, the factor turning unnormalized into normalized statistics.
    pub normalizer: f64,
    /// Probability mass surviving the evidence at the end of the interval.
    pub survival: f64,
    /// Conservative bound on the integration error of the normalized statistics.
    pub error_estimate: f64,
    /// Number of accepted integration steps.
    pub steps: usize,
}

fn rk4_step(qt: &DMatrix<f64>, y: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = qt * y;
    let k2 = qt * (y + &k1 * (h / 2.0));
    let k3 = qt * (y + &k2 * (h / 2.0));
    let k4 = qt * (y + &k3 * h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Accepted nodes of the forward solve: `times[2i], times[2i+1], times[2i+2]`
/// are the start, midpoint and end of panel `i`.
struct ForwardGrid {
    times: Vec<f64>,
    alpha: Vec<DVector<f64>>,
    error: f64,
}

fn integrate_forward(q: &DMatrix<f64>, a0: DVector<f64>, length: f64, opts: IntegratorOptions) -> ForwardGrid {
    let qt = q.transpose();
    let q_max = q.diagonal().iter().fold(0.0f64, |m, d| m.max(-d));
    let mut h = if q_max > 0.0 { (opts.initial_step_scale / q_max).min(length) } else { length };
    let h_min = length * 1e-12;
    let mut t = 0.0;
    let mut y = a0;
    let mut times = vec![0.0];
    let mut alpha = vec![y.clone()];
    let mut error = 0.0;
    while t < length {
        let last = h >= length - t;
        if last {
            h = length - t;
        }
        let full = rk4_step(&qt, &y, h);
        let mid = rk4_step(&qt, &y, h / 2.0);
        let two = rk4_step(&qt, &mid, h / 2.0);
        let diff = max_abs(&(&two - &full));
        let scale = max_abs(&two).max(TOLERANCES.underflow);
        let ratio = diff / (opts.rel_tol * scale);
        if ratio <= 1.0 || h <= h_min {
            t = if last { length } else { t + h };
            times.push(t - h / 2.0);
            times.push(t);
            alpha.push(mid);
            alpha.push(two.clone());
            error += diff;
            y = two;
            let grow = if ratio > 0.0 { opts.safety * ratio.powf(-0.2) } else { 5.0 };
            h *= grow.clamp(0.2, 5.0);
        } else {
            h *= (opts.safety * ratio.powf(-0.25)).clamp(0.1, 0.9);
            h = h.max(h_min);
        }
    }
    ForwardGrid { times, alpha, error }
}

/// Backward vector on the forward nodes, starting from `β(t2) = 1`.
fn integrate_backward(q: &DMatrix<f64>, times: &[f64]) -> Vec<DVector<f64>> {
    let n = q.nrows();
    let mut beta = vec![DVector::zeros(n); times.len()];
    let mut b = DVector::from_element(n, 1.0);
    let last = times.len() - 1;
    beta[last] = b.clone();
    for i in (0..last).rev() {
        // dβ/ds = Q β in reversed time s = t2 - t.
        b = rk4_step(q, &b, times[i + 1] - times[i]);
        beta[i] = b.clone();
    }
    beta
}

/// Expected sufficient statistics of `f` over `[t1, t2)` starting from `p0`
/// (over `f`'s retained states).
pub fn expected_suff_stats(f: &IntensityFactor, p0: &PointDistribution, t1: f64, t2: f64) -> Result<SuffStats> {
    expected_suff_stats_with(f, p0, t1, t2, IntegratorOptions::default())
}

pub fn expected_suff_stats_with(
    f: &IntensityFactor,
    p0: &PointDistribution,
    t1: f64,
    t2: f64,
    opts: IntegratorOptions,
) -> Result<SuffStats> {
    if !(t2 > t1) || !t1.is_finite() || !t2.is_finite() {
        return Err(CtbnError::InvalidArgument(format!("empty interval [{t1}, {t2})")));
    }
    if p0.scope() != f.scope() || p0.retained() != f.retained() {
        return Err(CtbnError::Dimension(
            "initial distribution must be over the factor's retained states".into(),
        ));
    }
    let length = t2 - t1;
    let aug = augment_absorbing(f);
    let n = f.dim();
    let q = &aug.matrix;
    let mut a0 = DVector::zeros(n + 1);
    a0.rows_mut(0, n).copy_from_slice(p0.probs());

    let grid = integrate_forward(q, a0, length, opts);
    let beta = integrate_backward(q, &grid.times);

    // I[j, k] = ∫ α_j β_k dt by Simpson panels.
    let mut integral = DMatrix::<f64>::zeros(n + 1, n + 1);
    let panels = (grid.times.len() - 1) / 2;
    for p in 0..panels {
        let (i0, im, i1) = (2 * p, 2 * p + 1, 2 * p + 2);
        let h = grid.times[i1] - grid.times[i0];
        let w = h / 6.0;
        integral += (&grid.alpha[i0] * beta[i0].transpose()) * w;
        integral += (&grid.alpha[im] * beta[im].transpose()) * (4.0 * w);
        integral += (&grid.alpha[i1] * beta[i1].transpose()) * w;
    }

    let unnormalized_time: Vec<f64> = (0..n).map(|j| integral[(j, j)].max(0.0)).collect();
    let absorbed_time = integral[(n, n)].max(0.0);
    let mut unnormalized_transitions = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in (0..n).filter(|&k| k != j) {
            unnormalized_transitions[(j, k)] = (q[(j, k)] * integral[(j, k)]).max(0.0);
        }
    }
    let unnormalized_exit: Vec<f64> = (0..n).map(|j| (q[(j, n)] * integral[(j, n)]).max(0.0)).collect();

    let occupied: f64 = unnormalized_time.iter().sum();
    if !(occupied > TOLERANCES.underflow) {
        return Err(CtbnError::ImpossibleEvidence(format!(
            "all probability mass leaves the evidence on [{t1}, {t2})"
        )));
    }
    let c = length / occupied;
    let survival = propagate(p0, f, length)?.total();
    let q_scale = 1.0 + aug.matrix.diagonal().iter().fold(0.0f64, |m, d| m.max(-d));
    // Global solution error is bounded by the sum of local step-doubling
    // differences; integrating it over the interval and scaling by the
    // largest rate bounds the error of every statistic.
    let error_estimate = 10.0 * c * grid.error * length.max(1.0) * q_scale;

    Ok(SuffStats {
        scope: f.scope().clone(),
        retained: f.retained().to_vec(),
        expected_time: unnormalized_time.iter().map(|x| c * x).collect(),
        expected_transitions: &unnormalized_transitions * c,
        expected_exit: unnormalized_exit.iter().map(|x| c * x).collect(),
        interval_length: length,
        unnormalized_time,
        unnormalized_transitions,
        unnormalized_exit,
        absorbed_time,
        normalizer: c,
        survival,
        error_estimate,
        steps: panels,
    })
}

fn aggregate_vec(src: &[f64], map: &[usize], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (j, &x) in src.iter().enumerate() {
        out[map[j]] += x;
    }
    out
}

fn aggregate_mat(src: &DMatrix<f64>, map: &[usize], m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    for j in 0..src.nrows() {
        for k in 0..src.ncols() {
            if map[j] != map[k] {
                out[(map[j], map[k])] += src[(j, k)];
            }
        }
    }
    out
}

/// Sums statistics over joint states sharing a projection onto `target`.
/// Transitions internal to a group are dropped; exits aggregate. The result
/// retains every target state that some retained source state projects to.
pub fn aggregate_stats(s: &SuffStats, target: &Scope) -> Result<SuffStats> {
    if target.is_empty() {
        return Err(CtbnError::InvalidArgument("aggregation target is empty".into()));
    }
    if !target.is_subset_of(&s.scope) {
        return Err(CtbnError::Scope(format!(
            "target {:?} is not contained in {:?}",
            target.vars(),
            s.scope.vars()
        )));
    }
    let proj = s.scope.projection_map(target)?;
    let mut retained: Vec<usize> = s.retained.iter().map(|&j| proj[j]).collect();
    retained.sort_unstable();
    retained.dedup();
    let map: Vec<usize> = s
        .retained
        .iter()
        .map(|&j| retained.binary_search(&proj[j]).unwrap())
        .collect();
    let m = retained.len();
    Ok(SuffStats {
        scope: target.clone(),
        retained,
        expected_time: aggregate_vec(&s.expected_time, &map, m),
        expected_transitions: aggregate_mat(&s.expected_transitions, &map, m),
        expected_exit: aggregate_vec(&s.expected_exit, &map, m),
        interval_length: s.interval_length,
        unnormalized_time: aggregate_vec(&s.unnormalized_time, &map, m),
        unnormalized_transitions: aggregate_mat(&s.unnormalized_transitions, &map, m),
        unnormalized_exit: aggregate_vec(&s.unnormalized_exit, &map, m),
        absorbed_time: s.absorbed_time,
        normalizer: s.normalizer,
        survival: s.survival,
        error_estimate: s.error_estimate,
        steps: s.steps,
    })
}

/// Maximum-likelihood homogeneous intensity factor for the statistics.
pub fn moment_match(s: &SuffStats) -> Result<IntensityFactor> {
    let n = s.retained.len();
    let mut m = DMatrix::zeros(n, n);
    for v in 0..n {
        let leaving: f64 = s.expected_transitions.row(v).sum() + s.expected_exit[v];
        let t = s.expected_time[v];
        if t <= 0.0 {
            if leaving > 0.0 {
                return Err(CtbnError::InvalidArgument(format!(
                    "state {} has transitions but no occupancy time",
                    s.retained[v]
                )));
            }
            continue;
        }
        for w in (0..n).filter(|&w| w != v) {
            m[(v, w)] = s.expected_transitions[(v, w)] / t;
        }
        m[(v, v)] = -leaving / t;
    }
    IntensityFactor::with_retained(s.scope.clone(), s.retained.clone(), m)
}

/// The `marg` projection: expected statistics, aggregation onto `target`,
/// then moment matching.
pub fn approx_marginalize(
    f: &IntensityFactor,
    p0: &PointDistribution,
    t1: f64,
    t2: f64,
    target: &Scope,
) -> Result<IntensityFactor> {
    let s = expected_suff_stats(f, p0, t1, t2)?;
    moment_match(&aggregate_stats(&s, target)?)
}
