//! CTBN models, trajectories and evidence.

mod evidence;
mod trajectory;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;

pub use evidence::{
    partition_evidence, BoundaryEvidence, EvidenceTimeline, IntervalObs, PointObs, Segment, SegmentedEvidence,
    TransitionObs,
};
pub use trajectory::{Jump, Trajectory};

use crate::algebra::{IntensityFactor, PointDistribution};
use crate::error::{CtbnError, Result};
use crate::scope::{Scope, VarId};
use crate::tolerance::TOLERANCES;

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub states: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, states: &[&str]) -> Self {
        Variable { name: name.into(), states: states.iter().map(|s| s.to_string()).collect() }
    }

    pub fn card(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

/// Conditional intensity matrix: one rate matrix per parent instantiation.
/// `matrices[u]` is indexed by the joint-state index of `u` over `parents`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cim {
    pub subject: VarId,
    pub parents: Scope,
    pub matrices: Vec<DMatrix<f64>>,
}

/// Conditional probability table of the initial-state network.
/// `rows[u]` is the distribution of the subject given parent instantiation `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub subject: VarId,
    pub parents: Scope,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialNetwork {
    pub edges: Vec<(VarId, VarId)>,
    pub cpts: Vec<Cpt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtbnModel {
    pub variables: Vec<Variable>,
    /// Directed `(parent, child)` edges; cycles are allowed.
    pub edges: Vec<(VarId, VarId)>,
    /// One CIM per variable, in declaration order.
    pub cims: Vec<Cim>,
    pub initial: InitialNetwork,
}

/// A violated model invariant, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    DuplicateVariable(String),
    DuplicateState { variable: String, state: String },
    EmptyStateSpace(String),
    DanglingReference { context: String, name: String },
    MissingCim(String),
    DuplicateCim(String),
    ParentMismatch { variable: String, cim: Vec<String>, graph: Vec<String> },
    MissingInstantiation { variable: String, instantiation: String },
    MatrixShape { variable: String, instantiation: String, rows: usize, cols: usize, expected: usize },
    NonFinite { variable: String, instantiation: String },
    NegativeOffDiagonal { variable: String, instantiation: String, row: usize, col: usize, value: f64 },
    RowSum { variable: String, instantiation: String, row: usize, sum: f64 },
    MissingCpt(String),
    CptParentMismatch { variable: String, cpt: Vec<String>, dag: Vec<String> },
    CptShape { variable: String, instantiation: String, len: usize, expected: usize },
    CptNegative { variable: String, instantiation: String },
    CptNotNormalized { variable: String, instantiation: String, sum: f64 },
    CyclicInitialNetwork(Vec<String>),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        let at = |i: &str| if i.is_empty() { String::new() } else { format!(" | {i}") };
        match self {
            DuplicateVariable(v) => write!(f, "variable `{v}` declared more than once"),
            DuplicateState { variable, state } => write!(f, "variable `{variable}` repeats state `{state}`"),
            EmptyStateSpace(v) => write!(f, "variable `{v}` has no states"),
            DanglingReference { context, name } => write!(f, "{context}: unknown name `{name}`"),
            MissingCim(v) => write!(f, "no CIM for variable `{v}`"),
            DuplicateCim(v) => write!(f, "more than one CIM for variable `{v}`"),
            ParentMismatch { variable, cim, graph } => {
                write!(f, "CIM of `{variable}` has parents {cim:?} but the graph gives {graph:?}")
            }
            MissingInstantiation { variable, instantiation } => {
                write!(f, "CIM of `{variable}` has no matrix for parent instantiation `{instantiation}`")
            }
            MatrixShape { variable, instantiation, rows, cols, expected } => write!(
                f,
                "CIM of `{variable}`{}: matrix is {rows}x{cols}, expected {expected}x{expected}",
                at(instantiation)
            ),
            NonFinite { variable, instantiation } => {
                write!(f, "CIM of `{variable}`{}: non-finite entry", at(instantiation))
            }
            NegativeOffDiagonal { variable, instantiation, row, col, value } => write!(
                f,
                "CIM of `{variable}`{}: negative off-diagonal {value} at row {row}, column {col}",
                at(instantiation)
            ),
            RowSum { variable, instantiation, row, sum } => {
                write!(f, "CIM of `{variable}`{}: row {row} sums to {sum}, expected 0", at(instantiation))
            }
            MissingCpt(v) => write!(f, "no initial CPT for variable `{v}`"),
            CptParentMismatch { variable, cpt, dag } => {
                write!(f, "CPT of `{variable}` has parents {cpt:?} but the initial network gives {dag:?}")
            }
            CptShape { variable, instantiation, len, expected } => write!(
                f,
                "CPT of `{variable}`{}: {len} probabilities, expected {expected}",
                at(instantiation)
            ),
            CptNegative { variable, instantiation } => {
                write!(f, "CPT of `{variable}`{}: negative or non-finite probability", at(instantiation))
            }
            CptNotNormalized { variable, instantiation, sum } => {
                write!(f, "CPT of `{variable}`{}: row sums to {sum}, expected 1", at(instantiation))
            }
            CyclicInitialNetwork(vs) => write!(f, "initial network has a directed cycle through {vs:?}"),
        }
    }
}

impl CtbnModel {
    pub fn var_index(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn var(&self, name: &str) -> Result<VarId> {
        self.var_index(name).ok_or_else(|| CtbnError::UnknownVariable(name.to_string()))
    }

    /// Resolves `(variable, state)` labels.
    pub fn state(&self, var: &str, state: &str) -> Result<(VarId, usize)> {
        let v = self.var(var)?;
        let s = self.variables[v]
            .state_index(state)
            .ok_or_else(|| CtbnError::UnknownVariable(format!("{var}={state}")))?;
        Ok((v, s))
    }

    pub fn card(&self, var: VarId) -> usize {
        self.variables[var].card()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// Scope over the given variables, ordered by declaration.
    pub fn scope(&self, vars: &[VarId]) -> Result<Scope> {
        if let Some(&v) = vars.iter().find(|&&v| v >= self.num_vars()) {
            return Err(CtbnError::UnknownVariable(format!("#{v}")));
        }
        Scope::new(vars.iter().map(|&v| (v, self.card(v))).collect())
    }

    pub fn scope_by_names(&self, names: &[&str]) -> Result<Scope> {
        let ids = names.iter().map(|n| self.var(n)).collect::<Result<Vec<_>>>()?;
        self.scope(&ids)
    }

    pub fn full_scope(&self) -> Scope {
        self.scope(&(0..self.num_vars()).collect::<Vec<_>>()).expect("valid model")
    }

    /// Graph parents of `var`, in declaration order.
    pub fn parents(&self, var: VarId) -> Vec<VarId> {
        let set: BTreeSet<VarId> = self.edges.iter().filter(|e| e.1 == var).map(|e| e.0).collect();
        set.into_iter().collect()
    }

    pub fn children(&self, var: VarId) -> Vec<VarId> {
        let set: BTreeSet<VarId> = self.edges.iter().filter(|e| e.0 == var).map(|e| e.1).collect();
        set.into_iter().collect()
    }

    /// `{X} ∪ U_X` as a scope.
    pub fn family(&self, var: VarId) -> Scope {
        let mut vs = self.parents(var);
        vs.push(var);
        vs.sort_unstable();
        vs.dedup();
        self.scope(&vs).expect("valid model")
    }

    /// The CIM of `var` as an unreduced factor over its family.
    pub fn cim_factor(&self, var: VarId) -> IntensityFactor {
        let cim = &self.cims[var];
        let family = self.family(var);
        let proj = family.projection_map(&cim.parents).expect("parents within family");
        let n = family.size();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let u = proj[j];
            let x = family.value_of(j, var).unwrap();
            let q = &cim.matrices[u];
            for x2 in 0..self.card(var) {
                let k = family.with_value(j, var, x2);
                m[(j, k)] += q[(x, x2)];
            }
        }
        IntensityFactor::new(family, m).expect("square by construction")
    }

    /// Human-readable label `A=a1,B=b2` of parent instantiation `u`.
    pub fn instantiation_label(&self, parents: &Scope, u: usize) -> String {
        parents
            .vars()
            .iter()
            .zip(parents.assignment(u))
            .map(|(&v, x)| format!("{}={}", self.variables[v].name, self.variables[v].states[x]))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn state_label(&self, scope: &Scope, index: usize) -> String {
        scope
            .vars()
            .iter()
            .zip(scope.assignment(index))
            .map(|(&v, x)| format!("{}={}", self.variables[v].name, self.variables[v].states[x]))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Checks every model invariant and reports all violations found.
pub fn validate_model(model: CtbnModel) -> Result<CtbnModel, Vec<ValidationIssue>> {
    let issues = collect_issues(&model);
    if issues.is_empty() {
        Ok(model)
    } else {
        Err(issues)
    }
}

fn names(model: &CtbnModel, vars: &[VarId]) -> Vec<String> {
    vars.iter()
        .map(|&v| model.variables.get(v).map_or_else(|| format!("#{v}"), |x| x.name.clone()))
        .collect()
}

fn collect_issues(model: &CtbnModel) -> Vec<ValidationIssue> {
    use ValidationIssue::*;
    let mut issues = Vec::new();
    let n = model.variables.len();
    let mut seen = BTreeSet::new();
    for v in &model.variables {
        if !seen.insert(v.name.as_str()) {
            issues.push(DuplicateVariable(v.name.clone()));
        }
        if v.states.is_empty() {
            issues.push(EmptyStateSpace(v.name.clone()));
        }
        let mut st = BTreeSet::new();
        for s in &v.states {
            if !st.insert(s.as_str()) {
                issues.push(DuplicateState { variable: v.name.clone(), state: s.clone() });
            }
        }
    }
    for &(p, c) in model.edges.iter().chain(&model.initial.edges) {
        for x in [p, c] {
            if x >= n {
                issues.push(DanglingReference { context: "edge".into(), name: format!("#{x}") });
            }
        }
    }
    if !issues.is_empty() {
        return issues;
    }

    let mut cim_seen = vec![0usize; n];
    for cim in &model.cims {
        if cim.subject >= n || cim.parents.vars().iter().any(|&p| p >= n) {
            issues.push(DanglingReference { context: "CIM".into(), name: format!("#{}", cim.subject) });
            continue;
        }
        cim_seen[cim.subject] += 1;
    }
    for (v, &count) in cim_seen.iter().enumerate() {
        let name = model.variables[v].name.clone();
        match count {
            0 => issues.push(MissingCim(name)),
            1 => {}
            _ => issues.push(DuplicateCim(name)),
        }
    }
    for cim in model.cims.iter().filter(|c| c.subject < n) {
        let var = &model.variables[cim.subject];
        let graph = model.parents(cim.subject);
        if cim.parents.vars() != graph.as_slice() {
            issues.push(ParentMismatch {
                variable: var.name.clone(),
                cim: names(model, cim.parents.vars()),
                graph: names(model, &graph),
            });
            continue;
        }
        if cim.parents.cards().iter().zip(cim.parents.vars()).any(|(&c, &p)| c != model.card(p)) {
            issues.push(ParentMismatch {
                variable: var.name.clone(),
                cim: names(model, cim.parents.vars()),
                graph: names(model, &graph),
            });
            continue;
        }
        let k = var.card();
        for u in 0..cim.parents.size() {
            let label = model.instantiation_label(&cim.parents, u);
            let Some(q) = cim.matrices.get(u) else {
                issues.push(MissingInstantiation { variable: var.name.clone(), instantiation: label });
                continue;
            };
            if q.nrows() != k || q.ncols() != k {
                issues.push(MatrixShape {
                    variable: var.name.clone(),
                    instantiation: label,
                    rows: q.nrows(),
                    cols: q.ncols(),
                    expected: k,
                });
                continue;
            }
            if q.iter().any(|x| !x.is_finite()) {
                issues.push(NonFinite { variable: var.name.clone(), instantiation: label });
                continue;
            }
            for r in 0..k {
                for c in 0..k {
                    if r != c && q[(r, c)] < 0.0 {
                        issues.push(NegativeOffDiagonal {
                            variable: var.name.clone(),
                            instantiation: label.clone(),
                            row: r,
                            col: c,
                            value: q[(r, c)],
                        });
                    }
                }
                let sum: f64 = q.row(r).sum();
                if sum.abs() > TOLERANCES.validation {
                    issues.push(RowSum { variable: var.name.clone(), instantiation: label.clone(), row: r, sum });
                }
            }
        }
    }

    let mut cpt_seen = vec![false; n];
    for cpt in &model.initial.cpts {
        if cpt.subject >= n || cpt.parents.vars().iter().any(|&p| p >= n) {
            issues.push(DanglingReference { context: "CPT".into(), name: format!("#{}", cpt.subject) });
            continue;
        }
        cpt_seen[cpt.subject] = true;
        let var = &model.variables[cpt.subject];
        let dag: BTreeSet<VarId> =
            model.initial.edges.iter().filter(|e| e.1 == cpt.subject).map(|e| e.0).collect();
        let dag: Vec<VarId> = dag.into_iter().collect();
        if cpt.parents.vars() != dag.as_slice() {
            issues.push(CptParentMismatch {
                variable: var.name.clone(),
                cpt: names(model, cpt.parents.vars()),
                dag: names(model, &dag),
            });
            continue;
        }
        for u in 0..cpt.parents.size() {
            let label = model.instantiation_label(&cpt.parents, u);
            let Some(row) = cpt.rows.get(u) else {
                issues.push(MissingInstantiation { variable: var.name.clone(), instantiation: label });
                continue;
            };
            if row.len() != var.card() {
                issues.push(CptShape {
                    variable: var.name.clone(),
                    instantiation: label,
                    len: row.len(),
                    expected: var.card(),
                });
                continue;
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                issues.push(CptNegative { variable: var.name.clone(), instantiation: label });
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > TOLERANCES.validation {
                issues.push(CptNotNormalized { variable: var.name.clone(), instantiation: label, sum });
            }
        }
    }
    for (v, seen) in cpt_seen.iter().enumerate() {
        if !seen {
            issues.push(MissingCpt(model.variables[v].name.clone()));
        }
    }
    if let Some(cycle) = find_cycle(n, &model.initial.edges) {
        issues.push(CyclicInitialNetwork(names(model, &cycle)));
    }
    issues
}

/// Variables left after repeatedly deleting sources, if any remain.
fn find_cycle(n: usize, edges: &[(VarId, VarId)]) -> Option<Vec<VarId>> {
    let mut indeg = vec![0usize; n];
    for &(_, c) in edges {
        indeg[c] += 1;
    }
    let mut stack: Vec<VarId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut removed = vec![false; n];
    while let Some(v) = stack.pop() {
        removed[v] = true;
        for &(p, c) in edges {
            if p == v {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    stack.push(c);
                }
            }
        }
    }
    let rest: Vec<VarId> = (0..n).filter(|&v| !removed[v]).collect();
    (!rest.is_empty()).then_some(rest)
}

/// Marginal of the initial network onto `vars`, by enumeration over the
/// variables and their initial-network ancestors.
pub fn initial_joint(model: &CtbnModel, vars: &[VarId]) -> Result<PointDistribution> {
    let target = model.scope(vars)?;
    let mut closure: BTreeSet<VarId> = vars.iter().copied().collect();
    let mut frontier: Vec<VarId> = vars.to_vec();
    while let Some(v) = frontier.pop() {
        for &(p, c) in &model.initial.edges {
            if c == v && closure.insert(p) {
                frontier.push(p);
            }
        }
    }
    let closure: Vec<VarId> = closure.into_iter().collect();
    let enum_scope = model.scope(&closure)?;
    const ENUMERATION_CAP: usize = 1 << 22;
    if enum_scope.size() > ENUMERATION_CAP {
        return Err(CtbnError::SizeCap { states: enum_scope.size(), cap: ENUMERATION_CAP });
    }
    let cpt_of: BTreeMap<VarId, &Cpt> = model.initial.cpts.iter().map(|c| (c.subject, c)).collect();
    let maps: Vec<(VarId, Vec<usize>)> = closure
        .iter()
        .map(|&v| Ok((v, enum_scope.projection_map(&cpt_of[&v].parents)?)))
        .collect::<Result<_>>()?;
    let mut probs = vec![0.0; enum_scope.size()];
    for (j, p) in probs.iter_mut().enumerate() {
        *p = maps
            .iter()
            .map(|(v, proj)| cpt_of[v].rows[proj[j]][enum_scope.value_of(j, *v).unwrap()])
            .product();
    }
    PointDistribution::new(enum_scope, probs)?.marginalize(&target)
}

/// Declarative, name-based model construction. `build` resolves names and
/// validates, reporting every problem at once.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    variables: Vec<Variable>,
    edges: Vec<(String, String)>,
    cims: Vec<(String, Entries<DMatrix<f64>>)>,
    initial_edges: Vec<(String, String)>,
    cpts: Vec<(String, Entries<Vec<f64>>)>,
}

#[derive(Debug, Clone)]
enum Entries<T> {
    /// Values in joint-state order of `parents` as listed (first varies fastest).
    Ordered { parents: Vec<String>, values: Vec<T> },
    /// Values keyed by instantiation labels such as `A=a1,B=b2`.
    Labeled(Vec<(String, T)>),
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variable(mut self, name: &str, states: &[&str]) -> Self {
        self.variables.push(Variable::new(name, states));
        self
    }

    pub fn push_variable(&mut self, v: Variable) {
        self.variables.push(v);
    }

    pub fn edge(mut self, parent: &str, child: &str) -> Self {
        self.edges.push((parent.into(), child.into()));
        self
    }

    pub fn push_edge(&mut self, parent: &str, child: &str) {
        self.edges.push((parent.into(), child.into()));
    }

    /// CIM with matrices listed in joint-state order of `parents` as given.
    pub fn cim(mut self, var: &str, parents: &[&str], matrices: Vec<DMatrix<f64>>) -> Self {
        self.cims.push((
            var.into(),
            Entries::Ordered { parents: parents.iter().map(|s| s.to_string()).collect(), values: matrices },
        ));
        self
    }

    /// CIM rows given as nested vectors, one matrix per parent instantiation.
    pub fn cim_rows(self, var: &str, parents: &[&str], matrices: &[&[&[f64]]]) -> Self {
        let ms = matrices
            .iter()
            .map(|rows| {
                let k = rows.len();
                let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
                let cols = if k == 0 { 0 } else { flat.len() / k };
                DMatrix::from_row_slice(k, cols, &flat)
            })
            .collect();
        self.cim(var, parents, ms)
    }

    pub fn push_cim_labeled(&mut self, var: &str, entries: Vec<(String, DMatrix<f64>)>) {
        self.cims.push((var.into(), Entries::Labeled(entries)));
    }

    pub fn initial_edge(mut self, parent: &str, child: &str) -> Self {
        self.initial_edges.push((parent.into(), child.into()));
        self
    }

    pub fn push_initial_edge(&mut self, parent: &str, child: &str) {
        self.initial_edges.push((parent.into(), child.into()));
    }

    pub fn cpt(mut self, var: &str, parents: &[&str], rows: Vec<Vec<f64>>) -> Self {
        self.cpts.push((
            var.into(),
            Entries::Ordered { parents: parents.iter().map(|s| s.to_string()).collect(), values: rows },
        ));
        self
    }

    pub fn push_cpt_labeled(&mut self, var: &str, entries: Vec<(String, Vec<f64>)>) {
        self.cpts.push((var.into(), Entries::Labeled(entries)));
    }

    /// Independent uniform initial distribution for every variable without a CPT.
    pub fn uniform_initial(mut self) -> Self {
        let have: BTreeSet<String> = self.cpts.iter().map(|(v, _)| v.clone()).collect();
        for v in self.variables.clone() {
            if !have.contains(&v.name) {
                let k = v.card();
                self.cpts.push((
                    v.name.clone(),
                    Entries::Ordered { parents: vec![], values: vec![vec![1.0 / k as f64; k]] },
                ));
            }
        }
        self
    }

    pub fn build(self) -> Result<CtbnModel> {
        use ValidationIssue::*;
        let mut issues = Vec::new();
        let index: BTreeMap<&str, VarId> =
            self.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let resolve_edges = |edges: &[(String, String)], ctx: &str, issues: &mut Vec<ValidationIssue>| {
            let mut out = Vec::new();
            for (p, c) in edges {
                match (index.get(p.as_str()), index.get(c.as_str())) {
                    (Some(&a), Some(&b)) => out.push((a, b)),
                    (a, _) => {
                        let name = if a.is_none() { p } else { c };
                        issues.push(DanglingReference { context: ctx.into(), name: name.clone() });
                    }
                }
            }
            out
        };
        let edges = resolve_edges(&self.edges, "graph edge", &mut issues);
        let initial_edges = resolve_edges(&self.initial_edges, "initial-network edge", &mut issues);
        let card = |v: VarId| self.variables[v].card();
        let parents_of = |v: VarId, es: &[(VarId, VarId)]| -> Vec<VarId> {
            let s: BTreeSet<VarId> = es.iter().filter(|e| e.1 == v).map(|e| e.0).collect();
            s.into_iter().collect()
        };

        let mut cims = Vec::new();
        for (name, entries) in self.cims {
            let Some(&subject) = index.get(name.as_str()) else {
                issues.push(DanglingReference { context: "CIM".into(), name });
                continue;
            };
            let default_parents = parents_of(subject, &edges);
            match resolve_entries(
                &self.variables,
                &index,
                &name,
                entries,
                &default_parents,
                card(subject),
                "CIM",
                |k| DMatrix::zeros(k, k),
                &mut issues,
            ) {
                Some((parents, matrices)) => cims.push(Cim { subject, parents, matrices }),
                None => continue,
            }
        }
        cims.sort_by_key(|c| c.subject);

        let mut cpts = Vec::new();
        for (name, entries) in self.cpts {
            let Some(&subject) = index.get(name.as_str()) else {
                issues.push(DanglingReference { context: "CPT".into(), name });
                continue;
            };
            let default_parents = parents_of(subject, &initial_edges);
            if let Some((parents, rows)) = resolve_entries(
                &self.variables,
                &index,
                &name,
                entries,
                &default_parents,
                card(subject),
                "CPT",
                |k| vec![0.0; k],
                &mut issues,
            ) {
                cpts.push(Cpt { subject, parents, rows });
            }
        }
        cpts.sort_by_key(|c| c.subject);

        let model = CtbnModel {
            variables: self.variables,
            edges,
            cims,
            initial: InitialNetwork { edges: initial_edges, cpts },
        };
        if !issues.is_empty() {
            // Structural problems make numeric checks unreliable; still report what we can.
            if model.variables.iter().all(|v| !v.states.is_empty()) {
                issues.extend(
                    collect_issues(&model)
                        .into_iter()
                        .filter(|i| !matches!(i, MissingCim(_) | MissingCpt(_))),
                );
            }
            return Err(CtbnError::Validation(issues));
        }
        validate_model(model).map_err(CtbnError::Validation)
    }
}

/// Turns per-instantiation entries into a vector indexed by the sorted parent scope.
#[allow(clippy::too_many_arguments)]
fn resolve_entries<T: Clone, F: Fn(usize) -> T>(
    variables: &[Variable],
    index: &BTreeMap<&str, VarId>,
    subject: &str,
    entries: Entries<T>,
    default_parents: &[VarId],
    subject_card: usize,
    ctx: &str,
    placeholder: F,
    issues: &mut Vec<ValidationIssue>,
) -> Option<(Scope, Vec<T>)> {
    use ValidationIssue::*;
    let scope_of = |ps: &[VarId]| Scope::new(ps.iter().map(|&p| (p, variables[p].card())).collect());
    match entries {
        Entries::Ordered { parents, values } => {
            let mut ids = Vec::new();
            for p in &parents {
                match index.get(p.as_str()) {
                    Some(&i) => ids.push(i),
                    None => {
                        issues.push(DanglingReference { context: format!("{ctx} of `{subject}`"), name: p.clone() });
                        return None;
                    }
                }
            }
            let given = Scope::new(ids.iter().map(|&p| (p, variables[p].card())).collect()).ok()?;
            let sorted = given.clone();
            // `given` is sorted internally; build the index map from the caller's order.
            let mut strides = Vec::new();
            let mut s = 1;
            for &p in &ids {
                strides.push(s);
                s *= variables[p].card();
            }
            let mut out = Vec::with_capacity(sorted.size());
            for u in 0..sorted.size() {
                let asg = sorted.assignment(u);
                let caller_index: usize = ids
                    .iter()
                    .zip(&strides)
                    .map(|(&p, &st)| asg[sorted.position(p).unwrap()] * st)
                    .sum();
                match values.get(caller_index) {
                    Some(v) => out.push(v.clone()),
                    None => {
                        let label = sorted
                            .vars()
                            .iter()
                            .zip(&asg)
                            .map(|(&v, &x)| format!("{}={}", variables[v].name, variables[v].states[x]))
                            .collect::<Vec<_>>()
                            .join(",");
                        issues.push(MissingInstantiation { variable: subject.into(), instantiation: label });
                        out.push(placeholder(subject_card));
                    }
                }
            }
            Some((sorted, out))
        }
        Entries::Labeled(pairs) => {
            let parents = scope_of(default_parents).ok()?;
            let mut slots: Vec<Option<T>> = vec![None; parents.size()];
            for (label, value) in pairs {
                let mut asg = vec![usize::MAX; parents.vars().len()];
                let mut ok = true;
                for part in label.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let Some((var, state)) = part.split_once('=') else {
                        issues.push(DanglingReference {
                            context: format!("{ctx} of `{subject}` instantiation"),
                            name: part.into(),
                        });
                        ok = false;
                        break;
                    };
                    let (var, state) = (var.trim(), state.trim());
                    let pos = index.get(var).and_then(|&v| parents.position(v));
                    let st = index.get(var).and_then(|&v| variables[v].state_index(state));
                    match (pos, st) {
                        (Some(p), Some(s)) => asg[p] = s,
                        _ => {
                            issues.push(DanglingReference {
                                context: format!("{ctx} of `{subject}` instantiation `{label}`"),
                                name: part.into(),
                            });
                            ok = false;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                if asg.contains(&usize::MAX) {
                    issues.push(DanglingReference {
                        context: format!("{ctx} of `{subject}`"),
                        name: format!("incomplete instantiation `{label}`"),
                    });
                    continue;
                }
                slots[parents.index_of(&asg)] = Some(value);
            }
            let mut out = Vec::with_capacity(slots.len());
            for (u, slot) in slots.into_iter().enumerate() {
                match slot {
                    Some(v) => out.push(v),
                    None => {
                        let label = parents
                            .vars()
                            .iter()
                            .zip(parents.assignment(u))
                            .map(|(&v, x)| format!("{}={}", variables[v].name, variables[v].states[x]))
                            .collect::<Vec<_>>()
                            .join(",");
                        issues.push(MissingInstantiation { variable: subject.into(), instantiation: label });
                        out.push(placeholder(subject_card));
                    }
                }
            }
            Some((parents, out))
        }
    }
}
