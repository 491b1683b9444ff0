//! Small reference networks with hand-checkable behaviour.

use crate::model::{CtbnModel, EvidenceTimeline, ModelBuilder};

/// `A -> B` with binary `A` and ternary `B`, uniform initial distribution.
pub fn two_variable_network() -> CtbnModel {
    ModelBuilder::new()
        .variable("A", &["a1", "a2"])
        .variable("B", &["b1", "b2", "b3"])
        .edge("A", "B")
        .cim_rows("A", &[], &[&[&[-1., 1.], &[2., -2.]]])
        .cim_rows(
            "B",
            &["A"],
            &[
                &[&[-5., 2., 3.], &[2., -6., 4.], &[2., 5., -7.]],
                &[&[-7., 3., 4.], &[3., -8., 5.], &[3., 6., -9.]],
            ],
        )
        .uniform_initial()
        .build()
        .expect("valid reference network")
}

/// Binary chain `A -> B -> C -> D` where every child tries to copy its
/// parent. All variables start uniform except `D`, which starts in `d1`.
pub fn chain_network() -> CtbnModel {
    let follow: &[&[&[f64]]] = &[&[&[-1., 1.], &[10., -10.]], &[&[-10., 10.], &[1., -1.]]];
    ModelBuilder::new()
        .variable("A", &["a1", "a2"])
        .variable("B", &["b1", "b2"])
        .variable("C", &["c1", "c2"])
        .variable("D", &["d1", "d2"])
        .edge("A", "B")
        .edge("B", "C")
        .edge("C", "D")
        .cim_rows("A", &[], &[&[&[-1., 1.], &[1., -1.]]])
        .cim_rows("B", &["A"], follow)
        .cim_rows("C", &["B"], follow)
        .cim_rows("D", &["C"], follow)
        .cpt("A", &[], vec![vec![0.5, 0.5]])
        .cpt("B", &[], vec![vec![0.5, 0.5]])
        .cpt("C", &[], vec![vec![0.5, 0.5]])
        .cpt("D", &[], vec![vec![1.0, 0.0]])
        .build()
        .expect("valid reference network")
}

/// `D = d1` observed throughout `[0, 1]` on [`chain_network`].
pub fn chain_evidence() -> EvidenceTimeline {
    EvidenceTimeline::empty(0.0, 1.0).interval(3, 0, 0.0, 1.0)
}
