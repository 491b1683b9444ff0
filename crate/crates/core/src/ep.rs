//! Expectation propagation over a cluster graph, one segment of constant
//! evidence at a time, plus forward filtering across segments.
//!
//! Messages are Lauritzen-Spiegelhalter style: each undirected edge stores a
//! single message `μ`, and sending `i -> j` adds `δ - μ` to `π_j` before
//! replacing `μ` by `δ`. Marginalization is the moment-matching projection of
//! [`approx_marginalize`].

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;

use crate::algebra::{amalgamate, propagate, reduce, reduce_within, IntensityFactor, PointDistribution};
use crate::clustergraph::{build_cluster_tree, cluster_initial_distributions, ClusterTopology};
use crate::error::{CtbnError, Result};
use crate::exact::{joint_intensity, ExactOptions};
use crate::model::{partition_evidence, BoundaryEvidence, CtbnModel, EvidenceTimeline, Segment, SegmentedEvidence};
use crate::scope::{Scope, VarId};
use crate::suffstats::{approx_marginalize, expected_suff_stats, SuffStats};
use crate::tolerance::TOLERANCES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Reserved; smoothing is not implemented.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpOptions {
    /// Convergence threshold on the largest entrywise change of any message
    /// between consecutive sweeps.
    pub tol: f64,
    /// Maximum number of sweeps per segment.
    pub max_iters: usize,
    pub direction: Direction,
}

impl Default for EpOptions {
    fn default() -> Self {
        EpOptions { tol: 1e-6, max_iters: 100, direction: Direction::Forward }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpReport {
    pub sweeps: usize,
    pub converged: bool,
    /// Largest message change in the last sweep (0 without edges).
    pub max_change: f64,
    pub residual: f64,
}

/// Potentials, stored messages and initial distributions of one segment.
#[derive(Debug, Clone)]
pub struct ClusterGraphState {
    pub topo: ClusterTopology,
    pub scopes: Vec<Scope>,
    pub potentials: Vec<IntensityFactor>,
    /// One message per topology edge, over its sepset.
    pub messages: Vec<IntensityFactor>,
    /// Initial distributions over each potential's retained states, normalized.
    pub initials: Vec<PointDistribution>,
    pub segment: Segment,
    last_delta: BTreeMap<(usize, usize), DMatrix<f64>>,
}

fn sepset_scope(topo: &ClusterTopology, scopes: &[Scope], e: usize) -> Scope {
    let (i, j) = topo.edges[e];
    scopes[i].intersection(&scopes[j])
}

fn local_evidence(scope: &Scope, active: &BTreeMap<VarId, usize>) -> BTreeMap<VarId, usize> {
    active.iter().filter(|(v, _)| scope.contains(**v)).map(|(&v, &x)| (v, x)).collect()
}

/// Initial potentials (assigned CIMs reduced by the segment's evidence) and
/// uninformative messages. `initials` are distributions over the full
/// cluster scopes; they are restricted to the retained states and
/// renormalized.
pub fn init_segment(
    model: &CtbnModel,
    topo: &ClusterTopology,
    initials: &[PointDistribution],
    segment: &Segment,
) -> Result<ClusterGraphState> {
    if initials.len() != topo.clusters.len() {
        return Err(CtbnError::Dimension("one initial distribution per cluster is required".into()));
    }
    let scopes: Vec<Scope> = topo.clusters.iter().map(|c| model.scope(c)).collect::<Result<_>>()?;
    let mut potentials = Vec::with_capacity(scopes.len());
    let mut p0s = Vec::with_capacity(scopes.len());
    for (i, scope) in scopes.iter().enumerate() {
        let retained = scope.consistent_states(&local_evidence(scope, &segment.active));
        if retained.is_empty() {
            return Err(CtbnError::ImpossibleEvidence(format!("evidence empties cluster {i}")));
        }
        let mut pi = IntensityFactor::zeros(scope.clone(), retained)?;
        for x in topo.assigned(i) {
            pi = amalgamate(&pi, &reduce_within(&model.cim_factor(x), &segment.active)?)?;
        }
        if initials[i].scope() != scope {
            return Err(CtbnError::Scope(format!("initial distribution {i} has the wrong scope")));
        }
        let p0 = initials[i].restrict(pi.retained()).normalized().map_err(|_| {
            CtbnError::ImpossibleEvidence(format!(
                "cluster {i} has no initial mass consistent with the evidence at t = {}",
                segment.start
            ))
        })?;
        potentials.push(pi);
        p0s.push(p0);
    }
    let messages = (0..topo.edges.len())
        .map(|e| {
            let s = sepset_scope(topo, &scopes, e);
            let retained = s.consistent_states(&local_evidence(&s, &segment.active));
            IntensityFactor::zeros(s, retained)
        })
        .collect::<Result<_>>()?;
    Ok(ClusterGraphState {
        topo: topo.clone(),
        scopes,
        potentials,
        messages,
        initials: p0s,
        segment: segment.clone(),
        last_delta: BTreeMap::new(),
    })
}

fn replace_matrix(f: &IntensityFactor, m: DMatrix<f64>) -> IntensityFactor {
    IntensityFactor::with_retained(f.scope().clone(), f.retained().to_vec(), m).expect("same shape")
}

impl ClusterGraphState {
    /// `marg(π_i)` onto the sepset shared with `j`.
    pub fn projected_message(&self, i: usize, j: usize) -> Result<IntensityFactor> {
        let e = self
            .topo
            .edge_index(i, j)
            .ok_or_else(|| CtbnError::Topology(format!("clusters {i} and {j} are not adjacent")))?;
        let s = sepset_scope(&self.topo, &self.scopes, e);
        approx_marginalize(&self.potentials[i], &self.initials[i], self.segment.start, self.segment.end, &s)
    }

    /// Sends `i -> j` and returns the change of this directed message since it
    /// was last sent (infinite on first send).
    pub fn send_message(&mut self, i: usize, j: usize) -> Result<f64> {
        let delta = self.projected_message(i, j)?;
        let e = self.topo.edge_index(i, j).unwrap();
        let target = &self.potentials[j];
        let d = delta.embed_restricted(target.scope(), target.retained().to_vec())?;
        let mu = self.messages[e].embed_restricted(target.scope(), target.retained().to_vec())?;
        let updated = target.matrix() + d.matrix() - mu.matrix();
        self.potentials[j] = replace_matrix(target, updated);
        let change = match self.last_delta.get(&(i, j)) {
            Some(prev) => (prev - delta.matrix()).amax(),
            None => f64::INFINITY,
        };
        self.last_delta.insert((i, j), delta.matrix().clone());
        self.messages[e] = delta;
        Ok(change)
    }

    /// Most recent `δ_{i -> j}`.
    pub fn last_message(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.last_delta.get(&(i, j))
    }
}

fn bfs_tree(topo: &ClusterTopology, root: usize) -> Vec<(usize, usize, usize)> {
    // (node, parent, depth) for every node reachable from root except root.
    let mut out = Vec::new();
    let mut depth = BTreeMap::from([(root, 0usize)]);
    let mut queue = VecDeque::from([root]);
    while let Some(c) = queue.pop_front() {
        for n in topo.neighbors(c) {
            if !depth.contains_key(&n) {
                depth.insert(n, depth[&c] + 1);
                out.push((n, c, depth[&n]));
                queue.push_back(n);
            }
        }
    }
    out
}

/// One sweep of directed messages. Trees are rooted at a centre (minimum
/// eccentricity, lowest index): all messages towards the root, deepest
/// first, then all messages away from it. Loopy graphs send every edge
/// forward and then backward.
pub fn sweep_schedule(topo: &ClusterTopology) -> Vec<(usize, usize)> {
    if !topo.is_forest() {
        let mut s: Vec<(usize, usize)> = topo.edges.clone();
        s.extend(topo.edges.iter().rev().map(|&(i, j)| (j, i)));
        return s;
    }
    let mut up = Vec::new();
    for comp in topo.components() {
        let root = *comp
            .iter()
            .min_by_key(|&&c| (bfs_tree(topo, c).iter().map(|x| x.2).max().unwrap_or(0), c))
            .unwrap();
        up.extend(bfs_tree(topo, root));
    }
    let mut upward = up.clone();
    upward.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut downward = up;
    downward.sort_by(|a, b| a.2.cmp(&b.2).then(a.0.cmp(&b.0)));
    upward
        .iter()
        .map(|&(c, p, _)| (c, p))
        .chain(downward.iter().map(|&(c, p, _)| (p, c)))
        .collect()
}

/// Runs sweeps until every directed message changes by less than `tol`.
/// `observer` is called after each sweep. Non-convergence is reported in
/// the result, not as an error.
pub fn run_segment_ep(
    state: &mut ClusterGraphState,
    opts: &EpOptions,
    mut observer: Option<&mut dyn FnMut(usize, &ClusterGraphState)>,
) -> Result<EpReport> {
    if opts.direction == Direction::Backward {
        return Err(CtbnError::Unsupported("backward smoothing passes are not implemented".into()));
    }
    let schedule = sweep_schedule(&state.topo);
    if schedule.is_empty() {
        return Ok(EpReport { sweeps: 0, converged: true, max_change: 0.0, residual: 0.0 });
    }
    let mut sweeps = 0;
    let mut max_change = f64::INFINITY;
    while sweeps < opts.max_iters {
        max_change = 0.0f64;
        for &(i, j) in &schedule {
            max_change = max_change.max(state.send_message(i, j)?);
        }
        sweeps += 1;
        if let Some(obs) = observer.as_deref_mut() {
            obs(sweeps, state);
        }
        if max_change < opts.tol {
            break;
        }
    }
    let residual = calibration_residual(state)?;
    Ok(EpReport { sweeps, converged: max_change < opts.tol, max_change, residual })
}

/// Largest entrywise disagreement between the two projections onto any
/// sepset.
pub fn calibration_residual(state: &ClusterGraphState) -> Result<f64> {
    let mut r = 0.0f64;
    for &(i, j) in &state.topo.edges {
        let a = state.projected_message(i, j)?;
        let b = state.projected_message(j, i)?;
        r = r.max((a.matrix() - b.matrix()).amax());
    }
    Ok(r)
}

/// Entrywise distance between `Σ π_i - Σ μ_e` embedded in the full joint
/// space and the joint intensity reduced by the segment evidence.
pub fn conservation_error(state: &ClusterGraphState, model: &CtbnModel) -> Result<f64> {
    let joint = reduce(&joint_intensity(model, ExactOptions::default())?, &state.segment.active)?;
    let full = joint.scope().clone();
    let retained = joint.retained().to_vec();
    let mut total = DMatrix::zeros(retained.len(), retained.len());
    for p in &state.potentials {
        total += p.embed_restricted(&full, retained.clone())?.matrix();
    }
    for m in &state.messages {
        total -= m.embed_restricted(&full, retained.clone())?.matrix();
    }
    Ok((total - joint.matrix()).amax())
}

/// Mutually consistent point beliefs over clusters and sepsets, all over
/// their full joint state spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPointBeliefs {
    pub clusters: Vec<PointDistribution>,
    pub sepsets: Vec<PointDistribution>,
}

fn divide_into(target: &mut PointDistribution, old: &PointDistribution, new: &PointDistribution) -> Result<()> {
    let proj = target.scope().projection_map(old.scope())?;
    let full = target.to_full();
    let (o, n) = (old.to_full(), new.to_full());
    let probs = full
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let s = proj[j];
            // Zero over zero is zero.
            if o[s] == 0.0 {
                0.0
            } else {
                p * n[s] / o[s]
            }
        })
        .collect();
    *target = PointDistribution::new(target.scope().clone(), probs)?;
    Ok(())
}

impl CalibratedPointBeliefs {
    /// Sepsets initialized to the mean of the two neighbours' marginals.
    pub fn from_clusters(topo: &ClusterTopology, clusters: Vec<PointDistribution>) -> Result<Self> {
        let clusters: Vec<PointDistribution> = clusters.iter().map(|c| c.normalized().map(|p| p.expanded())).collect::<Result<_>>()?;
        let mut sepsets = Vec::with_capacity(topo.edges.len());
        for &(i, j) in &topo.edges {
            let s = clusters[i].scope().intersection(clusters[j].scope());
            let a = clusters[i].marginalize(&s)?;
            let b = clusters[j].marginalize(&s)?;
            let mean = a.probs().iter().zip(b.probs()).map(|(x, y)| 0.5 * (x + y)).collect();
            sepsets.push(PointDistribution::new(s, mean)?);
        }
        Ok(CalibratedPointBeliefs { clusters, sepsets })
    }

    /// Discrete sum-product calibration preserving `Π β_i / Π σ_e`. One
    /// inward and one outward pass suffice on a forest; loopy graphs iterate.
    pub fn calibrate(&mut self, topo: &ClusterTopology) -> Result<()> {
        let schedule = sweep_schedule(topo);
        let passes = if topo.is_forest() { 1 } else { 200 };
        for _ in 0..passes {
            let mut change = 0.0f64;
            for &(i, j) in &schedule {
                let e = topo.edge_index(i, j).unwrap();
                let new = self.clusters[i].marginalize(self.sepsets[e].scope())?;
                let old = self.sepsets[e].clone();
                let scale = new.total().max(TOLERANCES.underflow);
                change = change.max(
                    new.probs().iter().zip(old.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale,
                );
                divide_into(&mut self.clusters[j], &old, &new)?;
                self.sepsets[e] = new;
            }
            if change < 1e-12 {
                break;
            }
        }
        self.normalize()
    }

    fn normalize(&mut self) -> Result<()> {
        for c in self.clusters.iter_mut().chain(self.sepsets.iter_mut()) {
            *c = c.normalized()?;
        }
        Ok(())
    }

    /// Zeros inconsistent entries in every factor mentioning an observed
    /// variable, then recalibrates.
    pub fn condition(&mut self, topo: &ClusterTopology, boundary: &BoundaryEvidence) -> Result<()> {
        if boundary.is_empty() {
            return Ok(());
        }
        for f in self.clusters.iter_mut().chain(self.sepsets.iter_mut()) {
            for &(var, from, to) in &boundary.transitions {
                f.observe_transition(var, from, to);
            }
            for (&var, &value) in &boundary.points {
                f.observe(var, value);
            }
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if !(c.total() > TOLERANCES.underflow) {
                return Err(CtbnError::ImpossibleEvidence(format!("observations leave cluster {i} without mass")));
            }
        }
        self.calibrate(topo)
    }

    /// `Π β_i / Π σ_e` over the union of the cluster scopes, normalized.
    pub fn assemble_joint(&self) -> Result<PointDistribution> {
        let mut scope = Scope::empty();
        for c in &self.clusters {
            scope = scope.union(c.scope())?;
        }
        let maps: Vec<Vec<usize>> = self.clusters.iter().map(|c| scope.projection_map(c.scope())).collect::<Result<_>>()?;
        let smaps: Vec<Vec<usize>> = self.sepsets.iter().map(|s| scope.projection_map(s.scope())).collect::<Result<_>>()?;
        let cf: Vec<Vec<f64>> = self.clusters.iter().map(|c| c.to_full()).collect();
        let sf: Vec<Vec<f64>> = self.sepsets.iter().map(|s| s.to_full()).collect();
        let probs = (0..scope.size())
            .map(|j| {
                let mut p = 1.0;
                for (m, f) in maps.iter().zip(&cf) {
                    p *= f[m[j]];
                }
                if p == 0.0 {
                    return 0.0;
                }
                for (m, f) in smaps.iter().zip(&sf) {
                    p /= f[m[j]];
                }
                p
            })
            .collect();
        PointDistribution::new(scope, probs)?.normalized()
    }

    /// Marginal over `vars` from the smallest cluster containing them, or
    /// from the assembled joint.
    pub fn marginal(&self, vars: &Scope) -> Result<PointDistribution> {
        let holder = self
            .clusters
            .iter()
            .filter(|c| vars.is_subset_of(c.scope()))
            .min_by_key(|c| c.scope().size());
        match holder {
            Some(c) => c.marginalize(vars),
            None => self.assemble_joint()?.marginalize(vars),
        }
    }
}

/// Per-cluster beliefs at the segment end, recalibrated.
pub fn endpoint_beliefs(state: &ClusterGraphState) -> Result<CalibratedPointBeliefs> {
    beliefs_after(state, state.segment.duration())
}

/// Cluster beliefs propagate each cluster's initial distribution under its
/// potential; sepset beliefs propagate the sepset marginal of that
/// distribution under the stored message. The set is then recalibrated.
fn beliefs_after(state: &ClusterGraphState, dt: f64) -> Result<CalibratedPointBeliefs> {
    let clusters = state
        .potentials
        .iter()
        .zip(&state.initials)
        .enumerate()
        .map(|(i, (pi, p0))| {
            propagate(p0, pi, dt)?.normalized().map(|p| p.expanded()).map_err(|_| {
                CtbnError::ImpossibleEvidence(format!("no mass of cluster {i} survives the evidence"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sepsets = Vec::with_capacity(state.messages.len());
    for (e, mu) in state.messages.iter().enumerate() {
        let (i, _) = state.topo.edges[e];
        let p0 = state.initials[i].expanded().marginalize(mu.scope())?.restrict(mu.retained());
        let p0 = p0.normalized()?;
        sepsets.push(propagate(&p0, mu, dt)?.normalized()?.expanded());
    }
    let mut b = CalibratedPointBeliefs { clusters, sepsets };
    b.calibrate(&state.topo)?;
    Ok(b)
}

/// Conditions beliefs on point observations and observed transitions.
pub fn condition_point_evidence(
    beliefs: &CalibratedPointBeliefs,
    topo: &ClusterTopology,
    boundary: &BoundaryEvidence,
) -> Result<CalibratedPointBeliefs> {
    let mut b = beliefs.clone();
    b.condition(topo, boundary)?;
    Ok(b)
}

/// One processed segment of the filter.
#[derive(Debug, Clone)]
pub struct SegmentResult {
    pub state: ClusterGraphState,
    pub report: EpReport,
    /// Beliefs at the segment end after conditioning on its boundary
    /// observations.
    pub end: CalibratedPointBeliefs,
}

/// Forward filtering result.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub topo: ClusterTopology,
    pub evidence: SegmentedEvidence,
    pub segments: Vec<SegmentResult>,
}

fn as_points(active: &BTreeMap<VarId, usize>) -> BoundaryEvidence {
    BoundaryEvidence { points: active.clone(), transitions: vec![] }
}

/// EP filtering over every segment of the evidence. Uses the automatic
/// clique tree unless a topology is supplied; the same topology serves every
/// segment.
pub fn run_filter(
    model: &CtbnModel,
    ev: &EvidenceTimeline,
    topo: Option<ClusterTopology>,
    opts: &EpOptions,
) -> Result<FilterResult> {
    if opts.direction == Direction::Backward {
        return Err(CtbnError::Unsupported("backward smoothing passes are not implemented".into()));
    }
    ev.validate(Some(model))?;
    run_filter_segments(model, partition_evidence(ev)?, topo, opts)
}

/// [`run_filter`] over an already segmented timeline.
pub fn run_filter_segments(
    model: &CtbnModel,
    evidence: SegmentedEvidence,
    topo: Option<ClusterTopology>,
    opts: &EpOptions,
) -> Result<FilterResult> {
    filter(model, evidence, topo, opts, None)
}

/// [`run_filter`] calling `observer(segment, sweep, state)` after every sweep.
pub fn run_filter_observed(
    model: &CtbnModel,
    ev: &EvidenceTimeline,
    topo: Option<ClusterTopology>,
    opts: &EpOptions,
    observer: &mut dyn FnMut(usize, usize, &ClusterGraphState),
) -> Result<FilterResult> {
    ev.validate(Some(model))?;
    filter(model, partition_evidence(ev)?, topo, opts, Some(observer))
}

fn filter(
    model: &CtbnModel,
    evidence: SegmentedEvidence,
    topo: Option<ClusterTopology>,
    opts: &EpOptions,
    mut observer: Option<&mut dyn FnMut(usize, usize, &ClusterGraphState)>,
) -> Result<FilterResult> {
    if opts.direction == Direction::Backward {
        return Err(CtbnError::Unsupported("backward smoothing passes are not implemented".into()));
    }
    let topo = match topo {
        Some(t) => t,
        None => build_cluster_tree(model)?,
    };
    let init = cluster_initial_distributions(model, &topo)?;
    let mut beliefs = CalibratedPointBeliefs::from_clusters(&topo, init)?;
    beliefs.calibrate(&topo)?;
    beliefs.condition(&topo, &evidence.start)?;
    let mut segments = Vec::with_capacity(evidence.segments.len());
    for (k, seg) in evidence.segments.iter().enumerate() {
        beliefs.condition(&topo, &as_points(&seg.active))?;
        let mut state = init_segment(model, &topo, &beliefs.clusters, seg)?;
        let report = match observer.as_deref_mut() {
            Some(obs) => run_segment_ep(&mut state, opts, Some(&mut |sweep, st: &ClusterGraphState| obs(k, sweep, st)))?,
            None => run_segment_ep(&mut state, opts, None)?,
        };
        let mut end = endpoint_beliefs(&state)?;
        end.condition(&topo, &seg.boundary)?;
        beliefs = end.clone();
        segments.push(SegmentResult { state, report, end });
    }
    Ok(FilterResult { topo, evidence, segments })
}

impl FilterResult {
    pub fn converged(&self) -> bool {
        self.segments.iter().all(|s| s.report.converged)
    }

    fn locate(&self, t: f64) -> Result<Option<usize>> {
        let (t0, t1) = self.evidence.horizon();
        if !(t >= t0 && t <= t1) {
            return Err(CtbnError::InvalidArgument(format!("time {t} outside the horizon [{t0}, {t1}]")));
        }
        Ok(if t == t1 { None } else { self.evidence.segment_at(t) })
    }

    /// Calibrated beliefs at `t` (right limit).
    pub fn beliefs_at(&self, t: f64) -> Result<CalibratedPointBeliefs> {
        match self.locate(t)? {
            None => Ok(self.segments.last().unwrap().end.clone()),
            Some(k) => {
                let s = &self.segments[k].state;
                beliefs_after(s, t - s.segment.start)
            }
        }
    }

    /// Marginal over `vars` at `t`. Inside a segment the smallest cluster
    /// containing every query variable is propagated directly.
    pub fn query(&self, t: f64, vars: &Scope) -> Result<PointDistribution> {
        let k = match self.locate(t)? {
            None => return self.segments.last().unwrap().end.marginal(vars),
            Some(k) => k,
        };
        let s = &self.segments[k].state;
        let holder = (0..s.scopes.len())
            .filter(|&i| vars.is_subset_of(&s.scopes[i]))
            .min_by_key(|&i| (s.scopes[i].size(), i));
        match holder {
            Some(i) => propagate(&s.initials[i], &s.potentials[i], t - s.segment.start)?
                .normalized()?
                .expanded()
                .marginalize(vars),
            None => self.beliefs_at(t)?.assemble_joint()?.marginalize(vars),
        }
    }

    /// Approximate joint over every variable at `t`.
    pub fn joint_at(&self, t: f64) -> Result<PointDistribution> {
        self.beliefs_at(t)?.assemble_joint()
    }

    /// Expected sufficient statistics of every cluster potential in segment `k`.
    pub fn cluster_statistics(&self, k: usize) -> Result<Vec<SuffStats>> {
        let s = &self
            .segments
            .get(k)
            .ok_or_else(|| CtbnError::InvalidArgument(format!("no segment {k}")))?
            .state;
        s.potentials
            .iter()
            .zip(&s.initials)
            .map(|(pi, p0)| expected_suff_stats(pi, p0, s.segment.start, s.segment.end))
            .collect()
    }
}
