use super::CtbnModel;
use crate::error::{CtbnError, Result};
use crate::scope::VarId;

/// One observed jump: `var` moves to state `to` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub var: VarId,
    pub to: usize,
}

/// A fully observed trajectory over `[start_time, end_time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_time: f64,
    pub end_time: f64,
    pub initial_state: Vec<usize>,
    pub transitions: Vec<Jump>,
}

impl Trajectory {
    pub fn validate(&self, model: &CtbnModel) -> Result<()> {
        if self.initial_state.len() != model.num_vars() {
            return Err(CtbnError::Dimension(format!(
                "initial state assigns {} of {} variables",
                self.initial_state.len(),
                model.num_vars()
            )));
        }
        if !(self.start_time < self.end_time) {
            return Err(CtbnError::InvalidArgument("trajectory has an empty time range".into()));
        }
        let mut state = self.initial_state.clone();
        for (v, &x) in state.iter().enumerate() {
            if x >= model.card(v) {
                return Err(CtbnError::InvalidArgument(format!("initial value {x} out of range for #{v}")));
            }
        }
        let mut last = self.start_time;
        for j in &self.transitions {
            if !(j.time > last && j.time < self.end_time) {
                return Err(CtbnError::InvalidArgument(format!(
                    "transition times must be strictly increasing inside the range (got {})",
                    j.time
                )));
            }
            if j.var >= model.num_vars() || j.to >= model.card(j.var) || state[j.var] == j.to {
                return Err(CtbnError::InvalidArgument(format!("invalid jump at {}", j.time)));
            }
            state[j.var] = j.to;
            last = j.time;
        }
        Ok(())
    }

    /// Joint state holding at time `t` (right limit at jump times).
    pub fn state_at(&self, t: f64) -> Vec<usize> {
        let mut s = self.initial_state.clone();
        for j in self.transitions.iter().take_while(|j| j.time <= t) {
            s[j.var] = j.to;
        }
        s
    }

    /// Sojourns `(from, to, state)` covering the whole time range.
    pub fn sojourns(&self) -> Vec<(f64, f64, Vec<usize>)> {
        let mut out = Vec::with_capacity(self.transitions.len() + 1);
        let mut state = self.initial_state.clone();
        let mut t = self.start_time;
        for j in &self.transitions {
            out.push((t, j.time, state.clone()));
            state[j.var] = j.to;
            t = j.time;
        }
        out.push((t, self.end_time, state));
        out
    }
}
