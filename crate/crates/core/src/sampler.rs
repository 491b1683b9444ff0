//! Forward sampling of complete trajectories and empirical sufficient
//! statistics, used as a Monte-Carlo oracle for the inference engines.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::error::{CtbnError, Result};
use crate::model::{CtbnModel, Jump, Trajectory};
use crate::scope::{Scope, VarId};
use crate::suffstats::SuffStats;

/// Identifier of the generator behind every seeded entry point, recorded
/// alongside sampled output.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64";

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn initial_order(model: &CtbnModel) -> Vec<usize> {
    // CPT indices in an order where every parent precedes its children.
    let mut done = vec![false; model.num_vars()];
    let mut order = Vec::with_capacity(model.num_vars());
    while order.len() < model.initial.cpts.len() {
        for (k, cpt) in model.initial.cpts.iter().enumerate() {
            if !done[cpt.subject] && cpt.parents.vars().iter().all(|&p| done[p]) {
                done[cpt.subject] = true;
                order.push(k);
            }
        }
    }
    order
}

/// Ancestral sample of the initial network.
pub fn sample_initial_state<R: Rng + ?Sized>(model: &CtbnModel, rng: &mut R) -> Vec<usize> {
    let mut state = vec![0; model.num_vars()];
    for k in initial_order(model) {
        let cpt = &model.initial.cpts[k];
        let asg: Vec<usize> = cpt.parents.vars().iter().map(|&p| state[p]).collect();
        let row = &cpt.rows[cpt.parents.index_of(&asg)];
        state[cpt.subject] = WeightedIndex::new(row).expect("validated CPT row").sample(rng);
    }
    state
}

fn parent_index(model: &CtbnModel, v: VarId, state: &[usize]) -> usize {
    let ps = &model.cims[v].parents;
    let asg: Vec<usize> = ps.vars().iter().map(|&p| state[p]).collect();
    ps.index_of(&asg)
}

fn draw_clock<R: Rng + ?Sized>(model: &CtbnModel, v: VarId, state: &[usize], now: f64, rng: &mut R) -> f64 {
    let q = &model.cims[v].matrices[parent_index(model, v, state)];
    let rate = -q[(state[v], state[v])];
    if rate > 0.0 {
        now + Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

/// Samples a trajectory on `[t0, t_end]` with per-variable competing
/// exponential clocks. When a variable jumps, its own clock and the clocks
/// of its children are redrawn; memorylessness makes this exact.
pub fn sample_trajectory_with<R: Rng + ?Sized>(model: &CtbnModel, t0: f64, t_end: f64, rng: &mut R) -> Trajectory {
    let initial_state = sample_initial_state(model, rng);
    let mut state = initial_state.clone();
    let children: Vec<Vec<VarId>> = (0..model.num_vars()).map(|v| model.children(v)).collect();
    let mut clocks: Vec<f64> = (0..model.num_vars()).map(|v| draw_clock(model, v, &state, t0, rng)).collect();
    let mut transitions = Vec::new();
    loop {
        let (v, &t) = clocks
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one variable");
        if t >= t_end {
            break;
        }
        let q = &model.cims[v].matrices[parent_index(model, v, &state)];
        let x = state[v];
        let weights: Vec<f64> = (0..model.card(v)).map(|k| if k == x { 0.0 } else { q[(x, k)].max(0.0) }).collect();
        let to = WeightedIndex::new(&weights).expect("positive exit rate").sample(rng);
        state[v] = to;
        transitions.push(Jump { time: t, var: v, to });
        clocks[v] = draw_clock(model, v, &state, t, rng);
        for &c in &children[v] {
            if c != v {
                clocks[c] = draw_clock(model, c, &state, t, rng);
            }
        }
    }
    Trajectory { start_time: t0, end_time: t_end, initial_state, transitions }
}

pub fn sample_trajectory(model: &CtbnModel, t_end: f64, seed: u64) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(CtbnError::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    Ok(sample_trajectory_with(model, 0.0, t_end, &mut rng_from_seed(seed)))
}

/// `n` trajectories drawn from one seeded stream.
pub fn sample_trajectories(model: &CtbnModel, n: usize, t_end: f64, seed: u64) -> Result<Vec<Trajectory>> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(CtbnError::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| sample_trajectory_with(model, 0.0, t_end, &mut rng)).collect())
}

/// Empirical statistics with standard errors of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSuffStats {
    pub stats: SuffStats,
    pub time_se: Vec<f64>,
    pub transitions_se: DMatrix<f64>,
    pub exit_se: Vec<f64>,
    /// Trajectories contributing (after rejection of inconsistent starts).
    pub samples: usize,
}

/// Per-trajectory occupancy, transition and exit counts over `retained`
/// states of `scope` on `[t1, t2)`, stopping at the first violation of
/// `evidence`. Returns `None` when the state at `t1` violates it.
fn trajectory_counts(
    traj: &Trajectory,
    scope: &Scope,
    retained: &[usize],
    evidence: &BTreeMap<VarId, usize>,
    t1: f64,
    t2: f64,
) -> Option<(Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    let n = retained.len();
    let consistent = |s: &[usize]| evidence.iter().all(|(&v, &x)| s[v] == x);
    let locate = |s: &[usize]| {
        let asg: Vec<usize> = scope.vars().iter().map(|&v| s[v]).collect();
        retained.binary_search(&scope.index_of(&asg)).ok()
    };
    let mut state = traj.state_at(t1);
    if !consistent(&state) {
        return None;
    }
    let mut time = vec![0.0; n];
    let mut counts = DMatrix::zeros(n, n);
    let mut exits = vec![0.0; n];
    let mut t = t1;
    for j in traj.transitions.iter().filter(|j| j.time > t1 && j.time < t2) {
        let from = locate(&state).expect("consistent states are retained");
        time[from] += j.time - t;
        t = j.time;
        state[j.var] = j.to;
        if !consistent(&state) {
            exits[from] += 1.0;
            return Some((time, counts, exits));
        }
        let to = locate(&state).unwrap();
        if to != from {
            counts[(from, to)] += 1.0;
        }
    }
    time[locate(&state).unwrap()] += t2 - t;
    Some((time, counts, exits))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_inputs(trajs: &[Trajectory], t1: f64, t2: f64) -> Result<()> {
    if trajs.is_empty() {
        return Err(CtbnError::InvalidArgument("no trajectories".into()));
    }
    if !(t2 > t1) {
        return Err(CtbnError::InvalidArgument(format!("empty interval [{t1}, {t2})")));
    }
    if trajs.iter().any(|t| t.start_time > t1 || t.end_time < t2) {
        return Err(CtbnError::InvalidArgument("every trajectory must cover the interval".into()));
    }
    Ok(())
}

fn build_stats(scope: &Scope, retained: Vec<usize>, length: f64, time: Vec<f64>, m: DMatrix<f64>, exit: Vec<f64>) -> SuffStats {
    let occupied: f64 = time.iter().sum();
    SuffStats {
        scope: scope.clone(),
        retained,
        expected_time: time.clone(),
        expected_transitions: m.clone(),
        expected_exit: exit.clone(),
        interval_length: length,
        unnormalized_time: time,
        unnormalized_transitions: m,
        unnormalized_exit: exit,
        absorbed_time: 0.0,
        normalizer: if occupied > 0.0 { length / occupied } else { 0.0 },
        survival: 1.0,
        error_estimate: 0.0,
        steps: 0,
    }
}

/// Averaged occupancy times and transition counts over every joint state of
/// `scope` on `[t1, t2)`. Jumps of variables outside `scope` are not
/// transitions of the projected process.
pub fn empirical_suff_stats(trajs: &[Trajectory], scope: &Scope, t1: f64, t2: f64) -> Result<EmpiricalSuffStats> {
    check_inputs(trajs, t1, t2)?;
    let retained: Vec<usize> = (0..scope.size()).collect();
    let n = retained.len();
    let per: Vec<_> = trajs
        .iter()
        .map(|t| trajectory_counts(t, scope, &retained, &BTreeMap::new(), t1, t2).unwrap())
        .collect();
    let mut time = vec![0.0; n];
    let mut time_se = vec![0.0; n];
    let mut m = DMatrix::zeros(n, n);
    let mut m_se = DMatrix::zeros(n, n);
    for j in 0..n {
        (time[j], time_se[j]) = mean_se(&per.iter().map(|p| p.0[j]).collect::<Vec<_>>());
        for k in 0..n {
            (m[(j, k)], m_se[(j, k)]) = mean_se(&per.iter().map(|p| p.1[(j, k)]).collect::<Vec<_>>());
        }
    }
    Ok(EmpiricalSuffStats {
        stats: build_stats(scope, retained, t2 - t1, time, m, vec![0.0; n]),
        time_se,
        transitions_se: m_se,
        exit_se: vec![0.0; n],
        samples: trajs.len(),
    })
}

/// Ratio estimate `L Σx / Σy` and its delta-method standard error.
fn ratio_se(x: &[f64], y: &[f64], length: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let r = mx / my;
    if x.len() < 2 {
        return (length * r, 0.0);
    }
    let var = x.iter().zip(y).map(|(a, b)| (a - r * b).powi(2)).sum::<f64>() / (n - 1.0);
    (length * r, length * (var / n).sqrt() / my)
}

/// Statistics of the killed ensemble: trajectories whose start violates
/// `evidence` are rejected, the rest are stopped at their first violation
/// (counted as an exit). Occupancy is normalized to the interval length, so
/// the result estimates the absorbing-state statistics of the evidence-reduced
/// process.
pub fn empirical_suff_stats_killed(
    trajs: &[Trajectory],
    scope: &Scope,
    evidence: &BTreeMap<VarId, usize>,
    t1: f64,
    t2: f64,
) -> Result<EmpiricalSuffStats> {
    check_inputs(trajs, t1, t2)?;
    if let Some(v) = evidence.keys().find(|v| !scope.contains(**v)) {
        return Err(CtbnError::Scope(format!("evidence variable #{v} is outside the scope")));
    }
    let retained = scope.consistent_states(evidence);
    let n = retained.len();
    let per: Vec<_> = trajs
        .iter()
        .filter_map(|t| trajectory_counts(t, scope, &retained, evidence, t1, t2))
        .collect();
    if per.is_empty() {
        return Err(CtbnError::ImpossibleEvidence("no trajectory starts consistent with the evidence".into()));
    }
    let occupied: Vec<f64> = per.iter().map(|p| p.0.iter().sum()).collect();
    if occupied.iter().sum::<f64>() <= 0.0 {
        return Err(CtbnError::ImpossibleEvidence("no occupancy inside the evidence".into()));
    }
    let length = t2 - t1;
    let column = |f: &dyn Fn(&(Vec<f64>, DMatrix<f64>, Vec<f64>)) -> f64| per.iter().map(f).collect::<Vec<f64>>();
    let mut time = vec![0.0; n];
    let mut time_se = vec![0.0; n];
    let mut exit = vec![0.0; n];
    let mut exit_se = vec![0.0; n];
    let mut m = DMatrix::zeros(n, n);
    let mut m_se = DMatrix::zeros(n, n);
    for j in 0..n {
        (time[j], time_se[j]) = ratio_se(&column(&|p| p.0[j]), &occupied, length);
        (exit[j], exit_se[j]) = ratio_se(&column(&|p| p.2[j]), &occupied, length);
        for k in 0..n {
            (m[(j, k)], m_se[(j, k)]) = ratio_se(&column(&|p| p.1[(j, k)]), &occupied, length);
        }
    }
    let mut stats = build_stats(scope, retained, length, time, m, exit);
    stats.survival = per.len() as f64 / trajs.len() as f64;
    Ok(EmpiricalSuffStats { stats, time_se, transitions_se: m_se, exit_se, samples: per.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{expm, PointDistribution};
    use crate::exact::trajectory_log_likelihood;
    use crate::fixtures::two_variable_network;
    use crate::model::ModelBuilder;

    fn single(q0: f64, q1: f64) -> CtbnModel {
        ModelBuilder::new()
            .variable("A", &["a1", "a2"])
            .cim_rows("A", &[], &[&[&[-q0, q0], &[q1, -q1]]])
            .cpt("A", &[], vec![vec![1.0, 0.0]])
            .build()
            .unwrap()
    }

    #[test]
    fn seeded_determinism() {
        let m = two_variable_network();
        assert_eq!(sample_trajectory(&m, 3.0, 11).unwrap(), sample_trajectory(&m, 3.0, 11).unwrap());
        assert_ne!(sample_trajectory(&m, 3.0, 11).unwrap(), sample_trajectory(&m, 3.0, 12).unwrap());
        assert!(sample_trajectory(&m, 0.0, 1).is_err());
    }

    #[test]
    fn mean_sojourn_matches_rate() {
        let m = single(2.0, 0.0);
        let mut rng = rng_from_seed(3);
        let first: Vec<f64> = (0..100_000)
            .map(|_| {
                let t = sample_trajectory_with(&m, 0.0, 1e3, &mut rng);
                t.transitions[0].time
            })
            .collect();
        let (mean, se) = mean_se(&first);
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn zero_rate_never_moves() {
        let m = single(0.0, 1.0);
        for seed in 0..20 {
            assert!(sample_trajectory(&m, 50.0, seed).unwrap().transitions.is_empty());
        }
    }

    #[test]
    fn marginal_matches_propagation() {
        let m = single(1.5, 0.5);
        let trajs = sample_trajectories(&m, 100_000, 1.0, 5).unwrap();
        let hits: Vec<f64> = trajs.iter().map(|t| if t.state_at(1.0)[0] == 0 { 1.0 } else { 0.0 }).collect();
        let (p, se) = mean_se(&hits);
        let exact = expm(&m.cims[0].matrices[0])[(0, 0)];
        assert!((p - exact).abs() < 3.0 * se, "{p} vs {exact} ± {se}");
    }

    #[test]
    fn hand_built_counts() {
        let sc = Scope::new(vec![(0, 2), (1, 3)]).unwrap();
        let traj = Trajectory {
            start_time: 0.0,
            end_time: 1.0,
            initial_state: vec![0, 1],
            transitions: vec![Jump { time: 0.4, var: 0, to: 1 }],
        };
        let s = empirical_suff_stats(&[traj], &sc, 0.0, 1.0).unwrap();
        let a1: f64 = [0, 2, 4].iter().map(|&j| s.stats.expected_time[j]).sum();
        assert!((a1 - 0.4).abs() < 1e-12);
        assert_eq!(s.stats.expected_transitions.sum(), 1.0);
        assert_eq!(s.stats.expected_transitions[(2, 3)], 1.0);
        // Restricting the scope to B hides A's jump.
        let b = empirical_suff_stats(&[s_traj()], &Scope::new(vec![(1, 3)]).unwrap(), 0.0, 1.0).unwrap();
        assert_eq!(b.stats.expected_transitions.sum(), 0.0);
        assert!(empirical_suff_stats(&[], &sc, 0.0, 1.0).is_err());
    }

    fn s_traj() -> Trajectory {
        Trajectory {
            start_time: 0.0,
            end_time: 1.0,
            initial_state: vec![0, 1],
            transitions: vec![Jump { time: 0.4, var: 0, to: 1 }],
        }
    }

    #[test]
    fn killed_counts_stop_at_violation() {
        let sc = Scope::new(vec![(0, 2), (1, 3)]).unwrap();
        let traj = Trajectory {
            start_time: 0.0,
            end_time: 1.0,
            initial_state: vec![0, 0],
            transitions: vec![Jump { time: 0.3, var: 0, to: 1 }, Jump { time: 0.5, var: 1, to: 2 }, Jump { time: 0.7, var: 1, to: 0 }],
        };
        let ev = BTreeMap::from([(1, 0)]);
        let s = empirical_suff_stats_killed(&[traj, s_traj()], &sc, &ev, 0.0, 1.0).unwrap();
        assert_eq!(s.samples, 1);
        assert_eq!(s.stats.retained, vec![0, 1]);
        // 0.3 in (a1,b1), 0.2 in (a2,b1), then exit; normalized to length 1.
        assert!((s.stats.expected_time[0] - 0.6).abs() < 1e-12);
        assert!((s.stats.expected_exit[1] - 2.0).abs() < 1e-12);
        assert!((s.stats.expected_transitions[(0, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_trajectories_have_finite_density() {
        let m = two_variable_network();
        for t in sample_trajectories(&m, 200, 2.0, 9).unwrap() {
            assert!(trajectory_log_likelihood(&m, &t).unwrap().is_finite());
        }
    }

    #[test]
    fn initial_states_follow_the_network() {
        let m = two_variable_network();
        let mut rng = rng_from_seed(1);
        let n = 60_000;
        let mut counts = [0.0; 6];
        for _ in 0..n {
            let s = sample_initial_state(&m, &mut rng);
            counts[s[0] + 2 * s[1]] += 1.0;
        }
        let p = PointDistribution::uniform(m.full_scope());
        for (c, q) in counts.iter().zip(p.probs()) {
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((c / n as f64 - q).abs() < 4.0 * se);
        }
    }
}
