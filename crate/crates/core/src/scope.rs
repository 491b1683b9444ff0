//! Ordered variable scopes and the joint-state indexing convention.
//!
//! A scope is a set of variable ids kept in model declaration order. A joint
//! assignment `(x_1, ..., x_k)` maps to `sum_m x_m * stride_m` with
//! `stride_1 = 1` and `stride_{m+1} = stride_m * |Val(X_m)|`, so the first
//! scope variable varies fastest.

use crate::error::{CtbnError, Result};

/// Index of a variable in its model's declaration order.
pub type VarId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scope {
    vars: Vec<VarId>,
    cards: Vec<usize>,
    strides: Vec<usize>,
}

impl Scope {
    /// Builds a scope from `(variable, cardinality)` pairs in any order.
    pub fn new(mut pairs: Vec<(VarId, usize)>) -> Result<Self> {
        pairs.sort_by_key(|&(v, _)| v);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(CtbnError::Scope(format!("variable {} listed twice", w[0].0)));
            }
        }
        if let Some(&(v, _)) = pairs.iter().find(|&&(_, c)| c == 0) {
            return Err(CtbnError::Scope(format!("variable {v} has an empty state space")));
        }
        let vars: Vec<_> = pairs.iter().map(|&(v, _)| v).collect();
        let cards: Vec<_> = pairs.iter().map(|&(_, c)| c).collect();
        let mut strides = Vec::with_capacity(cards.len());
        let mut s = 1usize;
        for &c in &cards {
            strides.push(s);
            s = s
                .checked_mul(c)
                .ok_or_else(|| CtbnError::Scope("joint state space overflows usize".into()))?;
        }
        Ok(Scope { vars, cards, strides })
    }

    pub fn empty() -> Self {
        Scope { vars: vec![], cards: vec![], strides: vec![] }
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Number of joint states.
    pub fn size(&self) -> usize {
        self.cards.iter().product()
    }

    pub fn position(&self, var: VarId) -> Option<usize> {
        self.vars.binary_search(&var).ok()
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.position(var).is_some()
    }

    pub fn card_of(&self, var: VarId) -> Option<usize> {
        self.position(var).map(|p| self.cards[p])
    }

    pub fn is_subset_of(&self, other: &Scope) -> bool {
        self.vars.iter().all(|&v| other.contains(v))
    }

    pub fn union(&self, other: &Scope) -> Result<Scope> {
        let mut pairs: Vec<(VarId, usize)> = self.vars.iter().copied().zip(self.cards.iter().copied()).collect();
        for (&v, &c) in other.vars.iter().zip(&other.cards) {
            match self.card_of(v) {
                Some(existing) if existing != c => {
                    return Err(CtbnError::Scope(format!(
                        "variable {v} has cardinality {existing} and {c} in the two scopes"
                    )))
                }
                Some(_) => {}
                None => pairs.push((v, c)),
            }
        }
        Scope::new(pairs)
    }

    pub fn intersection(&self, other: &Scope) -> Scope {
        let pairs = self
            .vars
            .iter()
            .zip(&self.cards)
            .filter(|(v, _)| other.contains(**v))
            .map(|(&v, &c)| (v, c))
            .collect();
        Scope::new(pairs).expect("sub-scope of a valid scope")
    }

    /// Scope of the variables of `self` not in `other`.
    pub fn difference(&self, other: &Scope) -> Scope {
        let pairs = self
            .vars
            .iter()
            .zip(&self.cards)
            .filter(|(v, _)| !other.contains(**v))
            .map(|(&v, &c)| (v, c))
            .collect();
        Scope::new(pairs).expect("sub-scope of a valid scope")
    }

    pub fn index_of(&self, assignment: &[usize]) -> usize {
        debug_assert_eq!(assignment.len(), self.vars.len());
        assignment.iter().zip(&self.strides).map(|(x, s)| x * s).sum()
    }

    pub fn assignment(&self, mut index: usize) -> Vec<usize> {
        self.cards
            .iter()
            .map(|&c| {
                let x = index % c;
                index /= c;
                x
            })
            .collect()
    }

    /// Value of `var` in the joint state `index`.
    pub fn value_of(&self, index: usize, var: VarId) -> Option<usize> {
        self.position(var).map(|p| (index / self.strides[p]) % self.cards[p])
    }

    /// Replaces the value of `var` in joint state `index`.
    pub fn with_value(&self, index: usize, var: VarId, value: usize) -> usize {
        let p = self.position(var).expect("variable in scope");
        let old = (index / self.strides[p]) % self.cards[p];
        index - old * self.strides[p] + value * self.strides[p]
    }

    /// For every joint state of `self`, the index of its projection onto `sub`.
    pub fn projection_map(&self, sub: &Scope) -> Result<Vec<usize>> {
        if !sub.is_subset_of(self) {
            return Err(CtbnError::Scope(format!(
                "{:?} is not a subset of {:?}",
                sub.vars, self.vars
            )));
        }
        let positions: Vec<usize> = sub.vars.iter().map(|&v| self.position(v).unwrap()).collect();
        Ok((0..self.size())
            .map(|j| {
                positions
                    .iter()
                    .zip(&sub.strides)
                    .map(|(&p, &s)| ((j / self.strides[p]) % self.cards[p]) * s)
                    .sum()
            })
            .collect())
    }

    /// Joint states whose variables agree with every `(var, value)` of `evidence`
    /// that lies in this scope. Entries outside the scope are ignored.
    pub fn consistent_states<'a, I>(&self, evidence: I) -> Vec<usize>
    where
        I: IntoIterator<Item = (&'a VarId, &'a usize)> + Clone,
    {
        (0..self.size())
            .filter(|&j| {
                evidence
                    .clone()
                    .into_iter()
                    .all(|(&v, &x)| self.value_of(j, v).is_none_or(|y| y == x))
            })
            .collect()
    }
}
