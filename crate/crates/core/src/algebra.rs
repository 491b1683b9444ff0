//! Factor algebra over (possibly reduced) intensity matrices.
//!
//! An [`IntensityFactor`] is the CIM parameterization of a trajectory factor:
//! product of factors is addition of embedded matrices, division is
//! subtraction, and conditioning on continuous evidence deletes the rows and
//! columns of inconsistent joint states.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{CtbnError, Result};
use crate::scope::{Scope, VarId};
use crate::tolerance::TOLERANCES;

/// Dense rate matrix over the retained joint states of an ordered scope.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFactor {
    scope: Scope,
    retained: Vec<usize>,
    matrix: DMatrix<f64>,
}

impl IntensityFactor {
    /// Unreduced factor over every joint state of `scope`.
    pub fn new(scope: Scope, matrix: DMatrix<f64>) -> Result<Self> {
        let retained = (0..scope.size()).collect();
        Self::with_retained(scope, retained, matrix)
    }

    pub fn with_retained(scope: Scope, retained: Vec<usize>, matrix: DMatrix<f64>) -> Result<Self> {
        if !retained.windows(2).all(|w| w[0] < w[1]) {
            return Err(CtbnError::Dimension("retained indices must be strictly increasing".into()));
        }
        if retained.last().is_some_and(|&r| r >= scope.size()) {
            return Err(CtbnError::Dimension("retained index outside the joint state space".into()));
        }
        if matrix.nrows() != retained.len() || matrix.ncols() != retained.len() {
            return Err(CtbnError::Dimension(format!(
                "matrix is {}x{} but {} states are retained",
                matrix.nrows(),
                matrix.ncols(),
                retained.len()
            )));
        }
        Ok(IntensityFactor { scope, retained, matrix })
    }

    /// The all-zero factor, i.e. the uninformative message.
    pub fn zeros(scope: Scope, retained: Vec<usize>) -> Result<Self> {
        let n = retained.len();
        Self::with_retained(scope, retained, DMatrix::zeros(n, n))
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.retained.len()
    }

    pub fn is_reduced(&self) -> bool {
        self.retained.len() < self.scope.size()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    /// Largest transition intensity, `max_j q_j`.
    pub fn max_rate(&self) -> f64 {
        self.matrix.diagonal().iter().fold(0.0f64, |m, d| m.max(-d))
    }

    /// Position of a joint-state index within `retained`.
    pub fn position_of(&self, state: usize) -> Option<usize> {
        self.retained.binary_search(&state).ok()
    }

    /// Checks off-diagonal non-negativity and row sums `<= tol`. Unreduced
    /// factors must additionally have zero row sums.
    pub fn check_valid(&self, tol: f64) -> Result<()> {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.matrix[(i, j)] < -tol {
                    return Err(CtbnError::InvalidArgument(format!(
                        "negative off-diagonal {} at ({i}, {j})",
                        self.matrix[(i, j)]
                    )));
                }
            }
            let s: f64 = self.matrix.row(i).sum();
            if s > tol || (!self.is_reduced() && s.abs() > tol) {
                return Err(CtbnError::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Joint states of `target` whose projection onto this factor's scope is retained.
    pub fn cylinder(&self, target: &Scope) -> Result<Vec<usize>> {
        let proj = target.projection_map(&self.scope)?;
        Ok((0..target.size()).filter(|&j| self.position_of(proj[j]).is_some()).collect())
    }

    /// Embeds the factor into `target`, keeping every target state whose
    /// projection is retained here.
    pub fn embed(&self, target: &Scope) -> Result<IntensityFactor> {
        let retained = self.cylinder(target)?;
        self.embed_restricted(target, retained)
    }

    /// Embeds the factor into `target` restricted to the given target states.
    /// Entry `(j, k)` copies the entry for the projections of `j` and `k` when
    /// they agree on every variable outside this factor's scope, and is zero
    /// otherwise.
    pub fn embed_restricted(&self, target: &Scope, retained: Vec<usize>) -> Result<IntensityFactor> {
        let proj = target.projection_map(&self.scope)?;
        let comp = target.projection_map(&target.difference(&self.scope))?;
        let mut pos = Vec::with_capacity(retained.len());
        for &j in &retained {
            match self.position_of(proj[j]) {
                Some(p) => pos.push(p),
                None => {
                    return Err(CtbnError::Scope(format!(
                        "target state {j} projects onto a state eliminated from the factor"
                    )))
                }
            }
        }
        let n = retained.len();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if comp[retained[a]] == comp[retained[b]] {
                    m[(a, b)] = self.matrix[(pos[a], pos[b])];
                }
            }
        }
        IntensityFactor::with_retained(target.clone(), retained, m)
    }

    /// Retained-state index list of `target` consistent with `evidence`.
    pub fn evidence_states(target: &Scope, evidence: &BTreeMap<VarId, usize>) -> Vec<usize> {
        target.consistent_states(evidence)
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Factor product: embed both factors into the union scope, restricted to the
/// common retained states, and add.
pub fn amalgamate(f1: &IntensityFactor, f2: &IntensityFactor) -> Result<IntensityFactor> {
    let scope = f1.scope.union(&f2.scope)?;
    let retained = intersect_sorted(&f1.cylinder(&scope)?, &f2.cylinder(&scope)?);
    if retained.is_empty() {
        return Err(CtbnError::ImpossibleEvidence(
            "the factors' retained state sets are incompatible".into(),
        ));
    }
    let e1 = f1.embed_restricted(&scope, retained.clone())?;
    let e2 = f2.embed_restricted(&scope, retained.clone())?;
    IntensityFactor::with_retained(scope, retained, e1.matrix + e2.matrix)
}

/// Factor division: `f1` minus `f2` embedded into `f1`'s retained space.
pub fn divide(f1: &IntensityFactor, f2: &IntensityFactor) -> Result<IntensityFactor> {
    if !f2.scope.is_subset_of(&f1.scope) {
        return Err(CtbnError::Scope(format!(
            "divisor scope {:?} is not contained in {:?}",
            f2.scope.vars(),
            f1.scope.vars()
        )));
    }
    let e2 = f2.embed_restricted(&f1.scope, f1.retained.clone())?;
    IntensityFactor::with_retained(f1.scope.clone(), f1.retained.clone(), &f1.matrix - e2.matrix)
}

/// Conditions on continuous evidence by deleting the rows and columns of
/// inconsistent states. Row sums of the result may become negative.
pub fn reduce(f: &IntensityFactor, evidence: &BTreeMap<VarId, usize>) -> Result<IntensityFactor> {
    if let Some(v) = evidence.keys().find(|v| !f.scope.contains(**v)) {
        return Err(CtbnError::Scope(format!("evidence variable {v} is not in the factor scope")));
    }
    let keep: Vec<usize> = (0..f.dim())
        .filter(|&p| {
            evidence
                .iter()
                .all(|(&v, &x)| f.scope.value_of(f.retained[p], v) == Some(x))
        })
        .collect();
    if keep.is_empty() {
        return Err(CtbnError::ImpossibleEvidence("evidence eliminates every state".into()));
    }
    let retained = keep.iter().map(|&p| f.retained[p]).collect();
    let m = f.matrix.select_rows(&keep).select_columns(&keep);
    IntensityFactor::with_retained(f.scope.clone(), retained, m)
}

/// Like [`reduce`] but ignores evidence on variables outside the factor scope.
pub fn reduce_within(f: &IntensityFactor, evidence: &BTreeMap<VarId, usize>) -> Result<IntensityFactor> {
    let local: BTreeMap<VarId, usize> = evidence
        .iter()
        .filter(|(v, _)| f.scope.contains(**v))
        .map(|(&v, &x)| (v, x))
        .collect();
    if local.is_empty() {
        return Ok(f.clone());
    }
    reduce(f, &local)
}

/// A factor augmented with the absorbing state collecting its row deficits.
/// The last row/column is the absorbing state.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingFactor {
    pub scope: Scope,
    pub retained: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl AbsorbingFactor {
    /// Index of the absorbing state.
    pub fn absorbing(&self) -> usize {
        self.retained.len()
    }
}

pub fn augment_absorbing(f: &IntensityFactor) -> AbsorbingFactor {
    let n = f.dim();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&f.matrix);
    for i in 0..n {
        let deficit = -f.matrix.row(i).sum();
        // Rows of unreduced factors sum to zero up to rounding.
        m[(i, n)] = if deficit.abs() <= TOLERANCES.round_trip * (1.0 + f.matrix[(i, i)].abs()) {
            0.0
        } else {
            deficit
        };
    }
    AbsorbingFactor { scope: f.scope.clone(), retained: f.retained.clone(), matrix: m }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = inf_norm(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=60 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if inf_norm(&term) <= 1e-13 * inf_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `exp(Q t)` for the factor's rate matrix.
pub fn matrix_exponential(f: &IntensityFactor, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CtbnError::InvalidArgument(format!("duration must be finite and >= 0, got {t}")));
    }
    Ok(expm(&(f.matrix() * t)))
}

/// Non-negative vector over the retained joint states of a scope.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDistribution {
    scope: Scope,
    retained: Vec<usize>,
    probs: Vec<f64>,
}

impl PointDistribution {
    pub fn new(scope: Scope, probs: Vec<f64>) -> Result<Self> {
        let retained = (0..scope.size()).collect();
        Self::with_retained(scope, retained, probs)
    }

    pub fn with_retained(scope: Scope, retained: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != retained.len() {
            return Err(CtbnError::Dimension(format!(
                "{} probabilities for {} retained states",
                probs.len(),
                retained.len()
            )));
        }
        if !retained.windows(2).all(|w| w[0] < w[1]) || retained.last().is_some_and(|&r| r >= scope.size()) {
            return Err(CtbnError::Dimension("invalid retained state list".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(CtbnError::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        Ok(PointDistribution { scope, retained, probs })
    }

    pub fn uniform(scope: Scope) -> Self {
        let n = scope.size();
        PointDistribution { retained: (0..n).collect(), probs: vec![1.0 / n as f64; n], scope }
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn normalized(&self) -> Result<PointDistribution> {
        let z = self.total();
        if !(z > TOLERANCES.underflow) {
            return Err(CtbnError::ImpossibleEvidence(format!("total mass {z:e} underflows")));
        }
        Ok(PointDistribution {
            scope: self.scope.clone(),
            retained: self.retained.clone(),
            probs: self.probs.iter().map(|p| p / z).collect(),
        })
    }

    /// Probability of joint state `state` (zero when not retained).
    pub fn get(&self, state: usize) -> f64 {
        self.retained.binary_search(&state).map_or(0.0, |p| self.probs[p])
    }

    /// Dense vector over every joint state of the scope.
    pub fn to_full(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.scope.size()];
        for (&r, &p) in self.retained.iter().zip(&self.probs) {
            v[r] = p;
        }
        v
    }

    /// Same distribution expressed over every joint state.
    pub fn expanded(&self) -> PointDistribution {
        PointDistribution::new(self.scope.clone(), self.to_full()).expect("valid")
    }

    /// Restricts to `retained`; mass on dropped states is lost.
    pub fn restrict(&self, retained: &[usize]) -> PointDistribution {
        let probs = retained.iter().map(|&r| self.get(r)).collect();
        PointDistribution { scope: self.scope.clone(), retained: retained.to_vec(), probs }
    }

    /// Sums out every variable not in `target`.
    pub fn marginalize(&self, target: &Scope) -> Result<PointDistribution> {
        let proj = self.scope.projection_map(target)?;
        let mut out = vec![0.0; target.size()];
        for (&r, &p) in self.retained.iter().zip(&self.probs) {
            out[proj[r]] += p;
        }
        PointDistribution::new(target.clone(), out)
    }

    /// Zeros every state where `var != value`.
    pub fn observe(&mut self, var: VarId, value: usize) {
        if self.scope.contains(var) {
            for (r, p) in self.retained.iter().zip(self.probs.iter_mut()) {
                if self.scope.value_of(*r, var) != Some(value) {
                    *p = 0.0;
                }
            }
        }
    }

    /// Observed transition `from -> to` on `var`: keep only `var = from`, then
    /// move that mass onto the matching `var = to` states.
    pub fn observe_transition(&mut self, var: VarId, from: usize, to: usize) {
        if !self.scope.contains(var) {
            return;
        }
        let full = {
            let mut f = self.clone();
            f.observe(var, from);
            f.to_full()
        };
        let mut moved = vec![0.0; self.scope.size()];
        for (j, &p) in full.iter().enumerate() {
            if p != 0.0 {
                moved[self.scope.with_value(j, var, to)] += p;
            }
        }
        self.retained = (0..self.scope.size()).collect();
        self.probs = moved;
    }
}

/// `p0 * exp(Q t)`. The result is unnormalized when `Q` is reduced and its
/// total mass is the probability that the evidence survives `t`.
pub fn propagate(p0: &PointDistribution, f: &IntensityFactor, t: f64) -> Result<PointDistribution> {
    if p0.scope != f.scope || p0.retained != f.retained {
        return Err(CtbnError::Dimension(
            "distribution and factor must share scope and retained states".into(),
        ));
    }
    let e = matrix_exponential(f, t)?;
    let v = e.tr_mul(&DVector::from_column_slice(&p0.probs));
    let probs = v.iter().map(|x| x.max(0.0)).collect();
    PointDistribution::with_retained(p0.scope.clone(), p0.retained.clone(), probs)
}
