use std::collections::BTreeMap;

use super::CtbnModel;
use crate::error::{CtbnError, Result};
use crate::scope::VarId;

/// `var = value` throughout `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalObs {
    pub var: VarId,
    pub value: usize,
    pub from: f64,
    pub to: f64,
}

/// `var = value` at instant `t` (the right limit at `t`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObs {
    pub var: VarId,
    pub value: usize,
    pub t: f64,
}

/// `var` jumps from `from_value` to `to_value` at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionObs {
    pub var: VarId,
    pub from_value: usize,
    pub to_value: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceTimeline {
    pub horizon: (f64, f64),
    pub intervals: Vec<IntervalObs>,
    pub points: Vec<PointObs>,
    pub transitions: Vec<TransitionObs>,
}

impl EvidenceTimeline {
    pub fn empty(t0: f64, t1: f64) -> Self {
        EvidenceTimeline { horizon: (t0, t1), intervals: vec![], points: vec![], transitions: vec![] }
    }

    pub fn interval(mut self, var: VarId, value: usize, from: f64, to: f64) -> Self {
        self.intervals.push(IntervalObs { var, value, from, to });
        self
    }

    pub fn point(mut self, var: VarId, value: usize, t: f64) -> Self {
        self.points.push(PointObs { var, value, t });
        self
    }

    pub fn transition(mut self, var: VarId, from_value: usize, to_value: usize, t: f64) -> Self {
        self.transitions.push(TransitionObs { var, from_value, to_value, t });
        self
    }

    /// Checks the timeline invariants, plus variable and value ranges when a model is given.
    pub fn validate(&self, model: Option<&CtbnModel>) -> Result<()> {
        let (t0, t1) = self.horizon;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(CtbnError::Evidence(format!("horizon [{t0}, {t1}] is empty or not finite")));
        }
        let within = |t: f64| t.is_finite() && t >= t0 && t <= t1;
        let check_value = |var: VarId, value: usize| -> Result<()> {
            if let Some(m) = model {
                if var >= m.num_vars() {
                    return Err(CtbnError::UnknownVariable(format!("#{var}")));
                }
                if value >= m.card(var) {
                    return Err(CtbnError::Evidence(format!(
                        "value {value} out of range for `{}`",
                        m.variables[var].name
                    )));
                }
            }
            Ok(())
        };
        for iv in &self.intervals {
            check_value(iv.var, iv.value)?;
            if !(within(iv.from) && within(iv.to) && iv.from < iv.to) {
                return Err(CtbnError::Evidence(format!(
                    "interval [{}, {}) is empty or outside the horizon",
                    iv.from, iv.to
                )));
            }
        }
        for (i, a) in self.intervals.iter().enumerate() {
            for b in &self.intervals[i + 1..] {
                if a.var == b.var && a.value != b.value && a.from < b.to && b.from < a.to {
                    return Err(CtbnError::Evidence(format!(
                        "overlapping intervals disagree on variable #{} over [{}, {})",
                        a.var,
                        a.from.max(b.from),
                        a.to.min(b.to)
                    )));
                }
            }
        }
        for p in &self.points {
            check_value(p.var, p.value)?;
            if !within(p.t) {
                return Err(CtbnError::Evidence(format!("point observation at {} outside the horizon", p.t)));
            }
        }
        for tr in &self.transitions {
            check_value(tr.var, tr.from_value)?;
            check_value(tr.var, tr.to_value)?;
            if !within(tr.t) {
                return Err(CtbnError::Evidence(format!("transition at {} outside the horizon", tr.t)));
            }
            if tr.from_value == tr.to_value {
                return Err(CtbnError::Evidence(format!(
                    "observed transition at {} does not change the value",
                    tr.t
                )));
            }
        }
        Ok(())
    }
}

/// Point values and observed transitions holding at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryEvidence {
    pub points: BTreeMap<VarId, usize>,
    /// `(var, from_value, to_value)`.
    pub transitions: Vec<(VarId, usize, usize)>,
}

impl BoundaryEvidence {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.transitions.is_empty()
    }

    fn add_point(&mut self, var: VarId, value: usize, t: f64) -> Result<()> {
        if let Some(&(_, _, to)) = self.transitions.iter().find(|tr| tr.0 == var) {
            if to != value {
                return Err(contradiction(var, t));
            }
        }
        match self.points.insert(var, value) {
            Some(old) if old != value => Err(contradiction(var, t)),
            _ => Ok(()),
        }
    }

    fn add_transition(&mut self, var: VarId, from: usize, to: usize, t: f64) -> Result<()> {
        if let Some(existing) = self.transitions.iter().find(|tr| tr.0 == var) {
            if *existing != (var, from, to) {
                return Err(contradiction(var, t));
            }
            return Ok(());
        }
        if self.points.get(&var).is_some_and(|&v| v != to) {
            return Err(contradiction(var, t));
        }
        self.transitions.push((var, from, to));
        Ok(())
    }
}

fn contradiction(var: VarId, t: f64) -> CtbnError {
    CtbnError::Evidence(format!("contradictory simultaneous observations of variable #{var} at t = {t}"))
}

/// Maximal interval `[start, end)` of constant continuous evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub active: BTreeMap<VarId, usize>,
    /// Observations attached to `end`.
    pub boundary: BoundaryEvidence,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedEvidence {
    /// Observations at the start of the horizon.
    pub start: BoundaryEvidence,
    pub segments: Vec<Segment>,
}

impl SegmentedEvidence {
    pub fn horizon(&self) -> (f64, f64) {
        (self.segments[0].start, self.segments.last().unwrap().end)
    }

    /// Index of the segment whose half-open interval contains `t`; the final
    /// instant of the horizon belongs to the last segment.
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        let (t0, t1) = self.horizon();
        if !(t >= t0 && t <= t1) {
            return None;
        }
        Some(
            self.segments
                .iter()
                .position(|s| t >= s.start && t < s.end)
                .unwrap_or(self.segments.len() - 1),
        )
    }
}

/// Splits the horizon at every distinguished time point.
pub fn partition_evidence(ev: &EvidenceTimeline) -> Result<SegmentedEvidence> {
    ev.validate(None)?;
    let (t0, t1) = ev.horizon;
    let mut times = vec![t0, t1];
    times.extend(ev.intervals.iter().flat_map(|iv| [iv.from, iv.to]));
    times.extend(ev.points.iter().map(|p| p.t));
    times.extend(ev.transitions.iter().map(|tr| tr.t));
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut boundaries: Vec<BoundaryEvidence> = vec![BoundaryEvidence::default(); times.len()];
    let slot = |t: f64| times.binary_search_by(|x| x.total_cmp(&t)).expect("time point registered");
    for tr in &ev.transitions {
        boundaries[slot(tr.t)].add_transition(tr.var, tr.from_value, tr.to_value, tr.t)?;
    }
    for p in &ev.points {
        boundaries[slot(p.t)].add_point(p.var, p.value, p.t)?;
    }

    let mut boundaries = boundaries.into_iter();
    let start = boundaries.next().unwrap();
    let segments = times
        .windows(2)
        .zip(boundaries)
        .map(|(w, boundary)| {
            let (a, b) = (w[0], w[1]);
            let active = ev
                .intervals
                .iter()
                .filter(|iv| iv.from <= a && iv.to >= b)
                .map(|iv| (iv.var, iv.value))
                .collect();
            Segment { start: a, end: b, active, boundary }
        })
        .collect();
    Ok(SegmentedEvidence { start, segments })
}
