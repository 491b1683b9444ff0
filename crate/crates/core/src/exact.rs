//! Exact inference over the amalgamated joint intensity matrix.
//!
//! This engine is the ground truth for the approximate one: it builds the
//! full joint CIM, reduces it by the continuous evidence of each segment and
//! propagates the evidence likelihood vector across the horizon.

use nalgebra::DMatrix;

use crate::algebra::{amalgamate, propagate, reduce, IntensityFactor, PointDistribution};
use crate::error::{CtbnError, Result};
use crate::model::{initial_joint, partition_evidence, BoundaryEvidence, CtbnModel, EvidenceTimeline, SegmentedEvidence, Trajectory};
use crate::scope::{Scope, VarId};
use crate::suffstats::{aggregate_stats, expected_suff_stats, SuffStats};
use crate::tolerance::TOLERANCES;

pub const DEFAULT_MAX_JOINT_STATES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    pub max_joint_states: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { max_joint_states: DEFAULT_MAX_JOINT_STATES }
    }
}

/// Amalgamation of every CIM of the model over the full joint space.
pub fn joint_intensity(model: &CtbnModel, opts: ExactOptions) -> Result<IntensityFactor> {
    let full = model.full_scope();
    if full.size() > opts.max_joint_states {
        return Err(CtbnError::SizeCap { states: full.size(), cap: opts.max_joint_states });
    }
    let mut joint = IntensityFactor::zeros(full.clone(), (0..full.size()).collect())?;
    for v in 0..model.num_vars() {
        joint = amalgamate(&joint, &model.cim_factor(v))?;
    }
    Ok(joint)
}

/// Conditions a full-space vector on boundary observations: transitions
/// first (left limit on the old value, then relabel), then point values.
pub fn apply_boundary(p: &mut PointDistribution, boundary: &BoundaryEvidence) {
    for &(var, from, to) in &boundary.transitions {
        p.observe_transition(var, from, to);
    }
    for (&var, &value) in &boundary.points {
        p.observe(var, value);
    }
}

#[derive(Debug, Clone)]
struct SegmentStart {
    /// Normalized distribution over the segment's evidence-consistent states.
    p0: PointDistribution,
    reduced: IntensityFactor,
}

/// Forward pass of exact filtering over a segmented evidence timeline.
#[derive(Debug, Clone)]
pub struct ExactInference {
    evidence: SegmentedEvidence,
    starts: Vec<SegmentStart>,
    end: PointDistribution,
    log_evidence: f64,
}

fn normalize_logged(p: &PointDistribution, log_mass: &mut f64, what: &str) -> Result<PointDistribution> {
    let z = p.total();
    if !(z > TOLERANCES.underflow) {
        return Err(CtbnError::ImpossibleEvidence(format!("{what}: surviving mass {z:e}")));
    }
    *log_mass += z.ln();
    p.normalized()
}

impl ExactInference {
    pub fn new(model: &CtbnModel, ev: &EvidenceTimeline, opts: ExactOptions) -> Result<Self> {
        ev.validate(Some(model))?;
        let evidence = partition_evidence(ev)?;
        let joint = joint_intensity(model, opts)?;
        let all: Vec<VarId> = (0..model.num_vars()).collect();
        let mut current = initial_joint(model, &all)?;
        let mut log_evidence = 0.0;
        apply_boundary(&mut current, &evidence.start);
        current = normalize_logged(&current, &mut log_evidence, "observations at the horizon start")?;

        let mut starts = Vec::with_capacity(evidence.segments.len());
        for seg in &evidence.segments {
            let reduced = reduce(&joint, &seg.active)?;
            let p0 = current.restrict(reduced.retained());
            let p0 = normalize_logged(&p0, &mut log_evidence, &format!("interval evidence at t = {}", seg.start))?;
            let end = propagate(&p0, &reduced, seg.duration())?;
            let mut next = end.expanded();
            apply_boundary(&mut next, &seg.boundary);
            current = normalize_logged(&next, &mut log_evidence, &format!("evidence on [{}, {}]", seg.start, seg.end))?;
            starts.push(SegmentStart { p0, reduced });
        }
        Ok(ExactInference { evidence, starts, end: current, log_evidence })
    }

    pub fn segments(&self) -> &SegmentedEvidence {
        &self.evidence
    }

    /// Log-probability of the interval and point evidence. Observed
    /// transitions enter as a relabeling, without their rate factor.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// Normalized joint distribution at `t` (right limit).
    pub fn joint_at(&self, t: f64) -> Result<PointDistribution> {
        let (t0, t1) = self.evidence.horizon();
        if !(t >= t0 && t <= t1) {
            return Err(CtbnError::InvalidArgument(format!("time {t} outside the horizon [{t0}, {t1}]")));
        }
        if t == t1 {
            return Ok(self.end.clone());
        }
        let k = self.evidence.segment_at(t).unwrap();
        let s = &self.starts[k];
        let dt = t - self.evidence.segments[k].start;
        Ok(propagate(&s.p0, &s.reduced, dt)?.normalized()?.expanded())
    }

    pub fn query(&self, t: f64, vars: &Scope) -> Result<PointDistribution> {
        self.joint_at(t)?.marginalize(vars)
    }

    /// Distribution at the start of segment `k` and its reduced joint CIM.
    pub fn segment_start(&self, k: usize) -> Option<(&PointDistribution, &IntensityFactor)> {
        self.starts.get(k).map(|s| (&s.p0, &s.reduced))
    }

    /// Expected sufficient statistics over `vars` for segment `k`.
    pub fn expected_statistics(&self, k: usize, vars: &Scope) -> Result<SuffStats> {
        let (p0, reduced) = self
            .segment_start(k)
            .ok_or_else(|| CtbnError::InvalidArgument(format!("no segment {k}")))?;
        let seg = &self.evidence.segments[k];
        let stats = expected_suff_stats(reduced, p0, seg.start, seg.end)?;
        aggregate_stats(&stats, vars)
    }
}

/// Normalized marginal over `vars` at `t` given the evidence.
pub fn exact_query(model: &CtbnModel, ev: &EvidenceTimeline, t: f64, vars: &[VarId]) -> Result<PointDistribution> {
    let inf = ExactInference::new(model, ev, ExactOptions::default())?;
    inf.query(t, &model.scope(vars)?)
}

/// Per-family sufficient statistics of a complete trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyStats {
    /// `time[x][u][x]` amount of time with `X = x` while parents are `u`.
    pub time: Vec<Vec<Vec<f64>>>,
    /// `counts[x][u]` matrix of transition counts `M[x, x' | u]`.
    pub counts: Vec<Vec<DMatrix<f64>>>,
}

pub fn family_statistics(model: &CtbnModel, traj: &Trajectory) -> Result<FamilyStats> {
    traj.validate(model)?;
    let n = model.num_vars();
    let mut time: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|v| vec![vec![0.0; model.card(v)]; model.cims[v].parents.size()])
        .collect();
    let mut counts: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|v| vec![DMatrix::zeros(model.card(v), model.card(v)); model.cims[v].parents.size()])
        .collect();
    let parent_index = |v: VarId, state: &[usize]| -> usize {
        let ps = &model.cims[v].parents;
        let asg: Vec<usize> = ps.vars().iter().map(|&p| state[p]).collect();
        ps.index_of(&asg)
    };
    for (a, b, state) in traj.sojourns() {
        for v in 0..n {
            time[v][parent_index(v, &state)][state[v]] += b - a;
        }
    }
    let mut state = traj.initial_state.clone();
    for j in &traj.transitions {
        let u = parent_index(j.var, &state);
        counts[j.var][u][(state[j.var], j.to)] += 1.0;
        state[j.var] = j.to;
    }
    Ok(FamilyStats { time, counts })
}

/// Log-density of a complete trajectory: the initial-network probability of
/// its start state plus every variable's likelihood contribution. Returns
/// `-inf` when the trajectory uses a zero-rate transition.
pub fn trajectory_log_likelihood(model: &CtbnModel, traj: &Trajectory) -> Result<f64> {
    let stats = family_statistics(model, traj)?;
    let mut ll = initial_log_probability(model, &traj.initial_state);
    for v in 0..model.num_vars() {
        for (u, q) in model.cims[v].matrices.iter().enumerate() {
            for x in 0..model.card(v) {
                let q_x = -q[(x, x)];
                let m_x: f64 = stats.counts[v][u].row(x).sum();
                let t_x = stats.time[v][u][x];
                ll -= q_x * t_x;
                if m_x > 0.0 {
                    ll += m_x * q_x.ln();
                    for x2 in (0..model.card(v)).filter(|&x2| x2 != x) {
                        let m = stats.counts[v][u][(x, x2)];
                        if m > 0.0 {
                            ll += m * (q[(x, x2)] / q_x).ln();
                        }
                    }
                }
            }
        }
    }
    if ll.is_nan() {
        ll = f64::NEG_INFINITY;
    }
    Ok(ll)
}

/// `ln P0(state)` under the initial network.
pub fn initial_log_probability(model: &CtbnModel, state: &[usize]) -> f64 {
    model
        .initial
        .cpts
        .iter()
        .map(|cpt| {
            let asg: Vec<usize> = cpt.parents.vars().iter().map(|&p| state[p]).collect();
            cpt.rows[cpt.parents.index_of(&asg)][state[cpt.subject]].ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::expm;
    use crate::fixtures::{chain_evidence, chain_network, two_variable_network};
    use crate::model::{Jump, ModelBuilder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn joint_of_two_variable_network() {
        let q = joint_intensity(&two_variable_network(), ExactOptions::default()).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(6, 6, &[
            -6., 1., 2., 0., 3., 0.,
            2., -9., 0., 3., 0., 4.,
            2., 0., -7., 1., 4., 0.,
            0., 3., 2., -10., 0., 5.,
            2., 0., 5., 0., -8., 1.,
            0., 3., 0., 6., 2., -11.,
        ]);
        assert_eq!(q.matrix(), &expected);
        let err = joint_intensity(&two_variable_network(), ExactOptions { max_joint_states: 4 }).unwrap_err();
        assert!(matches!(err, CtbnError::SizeCap { states: 6, cap: 4 }));
    }

    #[test]
    fn chain_joint_has_no_simultaneous_changes() {
        let m = chain_network();
        let q = joint_intensity(&m, ExactOptions::default()).unwrap();
        assert_eq!(q.dim(), 16);
        let full = m.full_scope();
        // (a1,b1,c1,d1) -> (a2,b1,c1,d1) is A's own rate.
        assert_eq!(q.matrix()[(0, full.index_of(&[1, 0, 0, 0]))], 1.0);
        for j in 0..16 {
            for k in 0..16 {
                let (x, y) = (full.assignment(j), full.assignment(k));
                let changed = x.iter().zip(&y).filter(|(a, b)| a != b).count();
                if changed >= 2 {
                    assert_eq!(q.matrix()[(j, k)], 0.0);
                }
            }
            assert!(q.matrix().row(j).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn single_variable_joint_is_its_cim() {
        let m = ModelBuilder::new()
            .variable("A", &["a1", "a2"])
            .cim_rows("A", &[], &[&[&[-3., 3.], &[1., -1.]]])
            .uniform_initial()
            .build()
            .unwrap();
        let q = joint_intensity(&m, ExactOptions::default()).unwrap();
        assert_eq!(q.matrix(), &DMatrix::from_row_slice(2, 2, &[-3., 3., 1., -1.]));
    }

    #[test]
    fn chain_marginal_given_held_leaf() {
        let m = chain_network();
        let p = exact_query(&m, &chain_evidence(), 1.0, &[0]).unwrap();
        assert!((p.probs()[0] - 0.738).abs() < 1e-3, "{:?}", p.probs());
        assert!((p.probs()[1] - 0.262).abs() < 1e-3);
    }

    #[test]
    fn query_at_start_is_initial_marginal() {
        let m = two_variable_network();
        let p = exact_query(&m, &EvidenceTimeline::empty(0.0, 1.0), 0.0, &[1]).unwrap();
        for x in p.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(exact_query(&m, &EvidenceTimeline::empty(0.0, 1.0), 1.5, &[1]).is_err());
    }

    #[test]
    fn independent_variables_factorize() {
        let m = ModelBuilder::new()
            .variable("A", &["a1", "a2"])
            .variable("B", &["b1", "b2", "b3"])
            .cim_rows("A", &[], &[&[&[-1.5, 1.5], &[0.5, -0.5]]])
            .cim_rows("B", &[], &[&[&[-3., 1., 2.], &[1., -1., 0.], &[2., 2., -4.]]])
            .cpt("A", &[], vec![vec![0.3, 0.7]])
            .cpt("B", &[], vec![vec![0.2, 0.5, 0.3]])
            .build()
            .unwrap();
        let t = 0.8;
        let joint = exact_query(&m, &EvidenceTimeline::empty(0.0, 1.0), t, &[0, 1]).unwrap();
        let pa = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]) * expm(&(m.cims[0].matrices[0].clone() * t));
        let pb = DMatrix::from_row_slice(1, 3, &[0.2, 0.5, 0.3]) * expm(&(m.cims[1].matrices[0].clone() * t));
        for a in 0..2 {
            for b in 0..3 {
                assert!((joint.probs()[a + 2 * b] - pa[a] * pb[b]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_split() {
        let m = two_variable_network();
        let inf = ExactInference::new(&m, &EvidenceTimeline::empty(0.0, 0.7), ExactOptions::default()).unwrap();
        let q = joint_intensity(&m, ExactOptions::default()).unwrap();
        let mid = inf.joint_at(0.3).unwrap();
        let end = propagate(&mid, &q, 0.4).unwrap();
        for (x, y) in end.probs().iter().zip(inf.joint_at(0.7).unwrap().probs()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_evidence_is_applied() {
        let m = two_variable_network();
        let ev = EvidenceTimeline::empty(0.0, 1.0).point(1, 2, 0.5).transition(0, 0, 1, 0.75);
        let inf = ExactInference::new(&m, &ev, ExactOptions::default()).unwrap();
        let at_point = inf.query(0.5, &m.scope(&[1]).unwrap()).unwrap();
        assert_eq!(at_point.probs(), &[0.0, 0.0, 1.0]);
        let after = inf.query(0.75, &m.scope(&[0]).unwrap()).unwrap();
        assert_eq!(after.probs(), &[0.0, 1.0]);
        assert!(inf.log_evidence() < 0.0 && inf.log_evidence().is_finite());
    }

    #[test]
    fn impossible_evidence_is_reported() {
        let m = two_variable_network();
        let ev = EvidenceTimeline::empty(0.0, 1.0).interval(0, 0, 0.0, 1.0).point(0, 1, 0.5);
        let err = ExactInference::new(&m, &ev, ExactOptions::default()).unwrap_err();
        assert!(matches!(err, CtbnError::ImpossibleEvidence(_)), "{err}");
    }

    fn single(q: [[f64; 2]; 2], p0: [f64; 2]) -> CtbnModel {
        ModelBuilder::new()
            .variable("A", &["a1", "a2"])
            .cim_rows("A", &[], &[&[&q[0], &q[1]]])
            .cpt("A", &[], vec![p0.to_vec()])
            .build()
            .unwrap()
    }

    #[test]
    fn survival_and_single_transition_density() {
        let m = single([[-3., 3.], [1., -1.]], [0.25, 0.75]);
        let traj = Trajectory { start_time: 0.0, end_time: 2.0, initial_state: vec![0], transitions: vec![] };
        let ll = trajectory_log_likelihood(&m, &traj).unwrap();
        assert!((ll - (0.25f64.ln() - 3.0 * 2.0)).abs() < 1e-12);

        let traj = Trajectory {
            start_time: 0.0,
            end_time: 2.0,
            initial_state: vec![0],
            transitions: vec![Jump { time: 0.5, var: 0, to: 1 }],
        };
        let ll = trajectory_log_likelihood(&m, &traj).unwrap();
        let expected = 0.25f64.ln() + 3f64.ln() - 3.0 * 0.5 - 1.0 * 1.5;
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_transition_has_zero_density() {
        let m = ModelBuilder::new()
            .variable("A", &["a1", "a2", "a3"])
            .cim_rows("A", &[], &[&[&[-1., 1., 0.], &[1., -1., 0.], &[1., 1., -2.]]])
            .uniform_initial()
            .build()
            .unwrap();
        let traj = Trajectory {
            start_time: 0.0,
            end_time: 1.0,
            initial_state: vec![0],
            transitions: vec![Jump { time: 0.5, var: 0, to: 2 }],
        };
        assert_eq!(trajectory_log_likelihood(&m, &traj).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn density_integrates_to_one() {
        let (q0, q1) = (1.3, 0.6);
        let m = single([[-q0, q0], [q1, -q1]], [0.4, 0.6]);
        let t_end = 1.5;
        let density = |x0: usize, jumps: &[f64]| {
            let mut state = x0;
            let transitions = jumps
                .iter()
                .map(|&time| {
                    state = 1 - state;
                    Jump { time, var: 0, to: state }
                })
                .collect();
            let traj = Trajectory { start_time: 0.0, end_time: t_end, initial_state: vec![x0], transitions };
            trajectory_log_likelihood(&m, &traj).unwrap().exp()
        };
        let mut total = 0.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for x0 in 0..2 {
            total += density(x0, &[]);
            // Composite Simpson over the single jump time.
            let n = 2000;
            let h = t_end / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let t = (i as f64 * h).clamp(1e-12, t_end - 1e-12);
                s += w * density(x0, &[t]);
            }
            total += s * h / 3.0;
            // Mass of two or more jumps by direct simulation of the holding times.
            let samples = 400_000;
            let rates = [q0, q1];
            let mut hits = 0usize;
            for _ in 0..samples {
                let mut state = x0;
                let mut t = 0.0;
                let mut jumps = 0;
                loop {
                    let u: f64 = rng.random();
                    t += -u.ln() / rates[state];
                    if t >= t_end || jumps == 2 {
                        break;
                    }
                    jumps += 1;
                    state = 1 - state;
                }
                if jumps >= 2 {
                    hits += 1;
                }
            }
            total += m.initial.cpts[0].rows[0][x0] * hits as f64 / samples as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    fn joint_chain_log_density(m: &CtbnModel, traj: &Trajectory) -> f64 {
        let q = joint_intensity(m, ExactOptions::default()).unwrap();
        let full = m.full_scope();
        let mut ll = initial_log_probability(m, &traj.initial_state);
        let sojourns = traj.sojourns();
        for (k, (a, b, state)) in sojourns.iter().enumerate() {
            let j = full.index_of(state);
            ll += q.matrix()[(j, j)] * (b - a);
            if let Some(next) = sojourns.get(k + 1) {
                ll += q.matrix()[(j, full.index_of(&next.2))].ln();
            }
        }
        ll
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn family_density_equals_joint_chain_density(
            a0 in 0usize..2,
            b0 in 0usize..3,
            steps in prop::collection::vec((0.01f64..0.2, any::<bool>(), 1usize..3), 0..12),
        ) {
            let m = two_variable_network();
            let mut state = vec![a0, b0];
            let mut t = 0.0;
            let mut transitions = Vec::new();
            for (dt, move_a, shift) in steps {
                t += dt;
                let (var, to) = if move_a { (0, 1 - state[0]) } else { (1, (state[1] + shift) % 3) };
                state[var] = to;
                transitions.push(Jump { time: t, var, to });
            }
            let traj = Trajectory { start_time: 0.0, end_time: t + 0.1, initial_state: vec![a0, b0], transitions };
            let ll = trajectory_log_likelihood(&m, &traj).unwrap();
            prop_assert!((ll - joint_chain_log_density(&m, &traj)).abs() < 1e-10);
        }
    }
}
