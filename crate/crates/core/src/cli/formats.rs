//! JSON file formats: models, evidence, queries, topologies and trajectory dumps.
//! Variables and states are referenced by name throughout.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustergraph::ClusterTopology;
use crate::error::{CtbnError, Result};
use crate::model::{CtbnModel, EvidenceTimeline, Jump, ModelBuilder, Trajectory, Variable};
use crate::sampler::RNG_ALGORITHM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub states: Vec<String>,
}

/// Rows of a matrix or a probability vector, keyed by parent instantiation
/// labels such as `A=a1,B=b2` (the empty label for parentless variables).
pub type Labeled<T> = BTreeMap<String, T>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub cpts: BTreeMap<String, Labeled<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub cims: BTreeMap<String, Labeled<Vec<Vec<f64>>>>,
    /// Variables without a CPT start uniform and independent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CtbnError::Format(format!("intensity matrix rows must have {n} entries")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ModelFile {
    pub fn into_model(self) -> Result<CtbnModel> {
        let mut b = ModelBuilder::new();
        for v in &self.variables {
            b.push_variable(Variable { name: v.name.clone(), states: v.states.clone() });
        }
        for (p, c) in &self.edges {
            b.push_edge(p, c);
        }
        for (var, entries) in self.cims {
            let ms = entries
                .into_iter()
                .map(|(label, rows)| Ok((label, matrix_from_rows(&rows)?)))
                .collect::<Result<Vec<_>>>()?;
            b.push_cim_labeled(&var, ms);
        }
        if let Some(init) = self.initial {
            for (p, c) in &init.edges {
                b.push_initial_edge(p, c);
            }
            for (var, entries) in init.cpts {
                b.push_cpt_labeled(&var, entries.into_iter().collect());
            }
        }
        b.uniform_initial().build()
    }

    pub fn from_model(model: &CtbnModel) -> Self {
        let name = |v: usize| model.variables[v].name.clone();
        let cims = model
            .cims
            .iter()
            .map(|c| {
                let entries = c
                    .matrices
                    .iter()
                    .enumerate()
                    .map(|(u, m)| (model.instantiation_label(&c.parents, u), rows_of(m)))
                    .collect();
                (name(c.subject), entries)
            })
            .collect();
        let cpts = model
            .initial
            .cpts
            .iter()
            .map(|c| {
                let entries =
                    c.rows.iter().enumerate().map(|(u, r)| (model.instantiation_label(&c.parents, u), r.clone())).collect();
                (name(c.subject), entries)
            })
            .collect();
        ModelFile {
            variables: model
                .variables
                .iter()
                .map(|v| VariableSpec { name: v.name.clone(), states: v.states.clone() })
                .collect(),
            edges: model.edges.iter().map(|&(p, c)| (name(p), name(c))).collect(),
            cims,
            initial: Some(InitialSpec {
                edges: model.initial.edges.iter().map(|&(p, c)| (name(p), name(c))).collect(),
                cpts,
            }),
        }
    }
}

pub fn parse_model(json: &str) -> Result<CtbnModel> {
    serde_json::from_str::<ModelFile>(json)?.into_model()
}

pub fn model_to_json(model: &CtbnModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub var: String,
    pub value: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub var: String,
    pub value: String,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub var: String,
    pub from_value: String,
    pub to_value: String,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceFile {
    pub horizon: (f64, f64),
    #[serde(default)]
    pub intervals: Vec<IntervalSpec>,
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

impl EvidenceFile {
    pub fn into_timeline(self, model: &CtbnModel) -> Result<EvidenceTimeline> {
        let mut ev = EvidenceTimeline::empty(self.horizon.0, self.horizon.1);
        for i in self.intervals {
            let (v, x) = model.state(&i.var, &i.value)?;
            ev = ev.interval(v, x, i.from, i.to);
        }
        for p in self.points {
            let (v, x) = model.state(&p.var, &p.value)?;
            ev = ev.point(v, x, p.t);
        }
        for tr in self.transitions {
            let (v, from) = model.state(&tr.var, &tr.from_value)?;
            let (_, to) = model.state(&tr.var, &tr.to_value)?;
            ev = ev.transition(v, from, to, tr.t);
        }
        ev.validate(Some(model))?;
        Ok(ev)
    }

    pub fn from_timeline(model: &CtbnModel, ev: &EvidenceTimeline) -> Self {
        let name = |v: usize| model.variables[v].name.clone();
        let label = |v: usize, x: usize| model.variables[v].states[x].clone();
        EvidenceFile {
            horizon: ev.horizon,
            intervals: ev
                .intervals
                .iter()
                .map(|i| IntervalSpec { var: name(i.var), value: label(i.var, i.value), from: i.from, to: i.to })
                .collect(),
            points: ev.points.iter().map(|p| PointSpec { var: name(p.var), value: label(p.var, p.value), t: p.t }).collect(),
            transitions: ev
                .transitions
                .iter()
                .map(|t| TransitionSpec {
                    var: name(t.var),
                    from_value: label(t.var, t.from_value),
                    to_value: label(t.var, t.to_value),
                    t: t.t,
                })
                .collect(),
        }
    }
}

pub fn parse_evidence(model: &CtbnModel, json: &str) -> Result<EvidenceTimeline> {
    serde_json::from_str::<EvidenceFile>(json)?.into_timeline(model)
}

pub fn evidence_to_json(model: &CtbnModel, ev: &EvidenceTimeline) -> String {
    serde_json::to_string_pretty(&EvidenceFile::from_timeline(model, ev)).expect("evidence serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    Marginal,
    ExpectedStatistics,
    EvidenceLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub count: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFile {
    pub kind: QueryKind,
    /// Empty means every variable.
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSpec>,
}

/// A resolved query: variable ids and probe times inside the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub kind: QueryKind,
    pub variables: Vec<usize>,
    pub times: Vec<f64>,
}

/// `count` evenly spaced times from `start` to `end`, both included.
pub fn evenly_spaced(count: usize, start: f64, end: f64) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        n => (0..n).map(|i| if i == n - 1 { end } else { start + (end - start) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

impl QueryFile {
    pub fn resolve(&self, model: &CtbnModel, horizon: (f64, f64)) -> Result<QuerySpec> {
        let mut variables = if self.variables.is_empty() {
            (0..model.num_vars()).collect()
        } else {
            self.variables.iter().map(|n| model.var(n)).collect::<Result<Vec<_>>>()?
        };
        variables.sort_unstable();
        variables.dedup();
        let times = match (&self.times, &self.probes) {
            (Some(_), Some(_)) => {
                return Err(CtbnError::Format("give either `times` or `probes`, not both".into()));
            }
            (Some(ts), None) => ts.clone(),
            (None, Some(p)) => {
                if p.count == 0 {
                    return Err(CtbnError::Format("probe count must be positive".into()));
                }
                evenly_spaced(p.count, p.start, p.end)
            }
            (None, None) => vec![horizon.1],
        };
        if let Some(t) = times.iter().find(|t| !(**t >= horizon.0 && **t <= horizon.1)) {
            return Err(CtbnError::InvalidArgument(format!(
                "probe time {t} outside the horizon [{}, {}]",
                horizon.0, horizon.1
            )));
        }
        Ok(QuerySpec { kind: self.kind, variables, times })
    }
}

pub fn parse_query(model: &CtbnModel, horizon: (f64, f64), json: &str) -> Result<QuerySpec> {
    serde_json::from_str::<QueryFile>(json)?.resolve(model, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub clusters: Vec<Vec<String>>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    /// Cluster index per variable name; defaults to the smallest covering cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<BTreeMap<String, usize>>,
}

impl TopologyFile {
    pub fn into_topology(self, model: &CtbnModel) -> Result<ClusterTopology> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| c.iter().map(|n| model.var(n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let assignment = match self.assignment {
            None => None,
            Some(map) => {
                let mut a = vec![usize::MAX; model.num_vars()];
                for (name, c) in map {
                    a[model.var(&name)?] = c;
                }
                if let Some(v) = a.iter().position(|&c| c == usize::MAX) {
                    return Err(CtbnError::Topology(format!(
                        "assignment misses variable {}",
                        model.variables[v].name
                    )));
                }
                Some(a)
            }
        };
        ClusterTopology::from_parts(model, clusters, self.edges, assignment)
    }

    pub fn from_topology(model: &CtbnModel, topo: &ClusterTopology) -> Self {
        let name = |v: usize| model.variables[v].name.clone();
        TopologyFile {
            clusters: topo.clusters.iter().map(|c| c.iter().map(|&v| name(v)).collect()).collect(),
            edges: topo.edges.clone(),
            assignment: Some(topo.assignment.iter().enumerate().map(|(v, &c)| (name(v), c)).collect()),
        }
    }
}

pub fn parse_topology(model: &CtbnModel, json: &str) -> Result<ClusterTopology> {
    serde_json::from_str::<TopologyFile>(json)?.into_topology(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpRecord {
    pub t: f64,
    pub var: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub start: f64,
    pub end: f64,
    /// State label per variable name.
    pub initial: BTreeMap<String, String>,
    pub transitions: Vec<JumpRecord>,
}

/// Sampled trajectories with the generator needed to reproduce them. Times
/// are written at full precision so dumps round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryDump {
    pub rng: String,
    pub seed: u64,
    pub t_end: f64,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl TrajectoryDump {
    pub fn new(model: &CtbnModel, seed: u64, t_end: f64, trajs: &[Trajectory]) -> Self {
        let name = |v: usize| model.variables[v].name.clone();
        let label = |v: usize, x: usize| model.variables[v].states[x].clone();
        let trajectories = trajs
            .iter()
            .map(|tr| TrajectoryRecord {
                start: tr.start_time,
                end: tr.end_time,
                initial: tr.initial_state.iter().enumerate().map(|(v, &x)| (name(v), label(v, x))).collect(),
                transitions: tr
                    .transitions
                    .iter()
                    .map(|j| JumpRecord { t: j.time, var: name(j.var), to: label(j.var, j.to) })
                    .collect(),
            })
            .collect();
        TrajectoryDump { rng: RNG_ALGORITHM.into(), seed, t_end, trajectories }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn trajectories(&self, model: &CtbnModel) -> Result<Vec<Trajectory>> {
        self.trajectories
            .iter()
            .map(|r| {
                let mut initial = vec![usize::MAX; model.num_vars()];
                for (var, value) in &r.initial {
                    let (v, x) = model.state(var, value)?;
                    initial[v] = x;
                }
                if initial.contains(&usize::MAX) {
                    return Err(CtbnError::Format("trajectory initial state misses a variable".into()));
                }
                let transitions = r
                    .transitions
                    .iter()
                    .map(|j| model.state(&j.var, &j.to).map(|(var, to)| Jump { time: j.t, var, to }))
                    .collect::<Result<Vec<_>>>()?;
                let tr = Trajectory { start_time: r.start, end_time: r.end, initial_state: initial, transitions };
                tr.validate(model)?;
                Ok(tr)
            })
            .collect()
    }
}
