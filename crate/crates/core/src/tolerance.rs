/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Row sums, CPT normalization and other model invariants.
    pub validation: f64,
    /// Algebraic round trips such as `divide(amalgamate(f, g), g) == f`.
    pub round_trip: f64,
    /// Row-stochasticity of matrix exponentials.
    pub stochastic: f64,
    /// Total probability mass below which evidence is treated as impossible.
    pub underflow: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    validation: 1e-9,
    round_trip: 1e-12,
    stochastic: 1e-9,
    underflow: 1e-300,
};

impl Default for Tolerances {
    fn default() -> Self {
        TOLERANCES
    }
}
