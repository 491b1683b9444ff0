//! Acceptance run: one PASS/FAIL line per criterion. Sub-checks marked
//! `known` are expected failures and do not fail the run.

use std::collections::BTreeMap;
use std::time::Instant;

use ctbn::algebra::{matrix_exponential, reduce, IntensityFactor, PointDistribution};
use ctbn::cli::{compare, kl_divergence};
use ctbn::clustergraph::{build_cluster_tree, cluster_initial_distributions, single_cluster};
use ctbn::ep::{conservation_error, init_segment, run_filter_observed, sweep_schedule, EpOptions};
use ctbn::exact::{joint_intensity, ExactInference, ExactOptions};
use ctbn::fixtures::{chain_evidence, chain_network, two_variable_network};
use ctbn::model::{partition_evidence, CtbnModel, EvidenceTimeline, ModelBuilder};
use ctbn::sampler::{empirical_suff_stats, empirical_suff_stats_killed, rng_from_seed, sample_trajectories};
use ctbn::scope::Scope;
use ctbn::suffstats::{aggregate_stats, expected_suff_stats, moment_match, SuffStats};
use nalgebra::DMatrix;
use rand::Rng;

/// Average KL of the EP joint from the exact joint on the four-variable
/// chain at 60 evenly spaced points, recorded from the first computation.
const FROZEN_CHAIN_AVERAGE_KL: f64 = 4.097407217190725e-3;

struct Ledger {
    lines: Vec<(String, bool, bool)>,
}

impl Ledger {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        self.record(id, pass, false, detail);
    }

    fn known(&mut self, id: &str, pass: bool, detail: String) {
        self.record(id, pass, true, detail);
    }

    fn record(&mut self, id: &str, pass: bool, known: bool, detail: String) {
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {id}: {detail}");
        self.lines.push((id.to_string(), pass, known));
    }
}

fn max_dev(actual: &[f64], expected: &[f64]) -> f64 {
    actual.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

fn rows(r: &[&[f64]]) -> Vec<f64> {
    r.iter().flat_map(|x| x.iter().copied()).collect()
}

#[rustfmt::skip]
const Q_AB: [f64; 36] = [
    -6., 1., 2., 0., 3., 0.,
    2., -9., 0., 3., 0., 4.,
    2., 0., -7., 1., 4., 0.,
    0., 3., 2., -10., 0., 5.,
    2., 0., 5., 0., -8., 1.,
    0., 3., 0., 6., 2., -11.,
];

fn uniform_stats(m: &CtbnModel) -> SuffStats {
    let joint = joint_intensity(m, ExactOptions::default()).unwrap();
    expected_suff_stats(&joint, &PointDistribution::uniform(joint.scope().clone()), 0.0, 1.0).unwrap()
}

fn absorbing_stats(m: &CtbnModel) -> (IntensityFactor, SuffStats) {
    let joint = joint_intensity(m, ExactOptions::default()).unwrap();
    let reduced = reduce(&joint, &BTreeMap::from([(1, 0)])).unwrap();
    let p0 = PointDistribution::with_retained(joint.scope().clone(), reduced.retained().to_vec(), vec![0.5, 0.5]).unwrap();
    let s = expected_suff_stats(&reduced, &p0, 0.0, 1.0).unwrap();
    (reduced, s)
}

fn criterion_1_2(l: &mut Ledger) {
    let m = two_variable_network();
    let joint = joint_intensity(&m, ExactOptions::default()).unwrap();
    let got = flat(joint.matrix());
    l.check("1 amalgamation", got == Q_AB, format!("6x6 joint intensity, max deviation {:e}", max_dev(&got, &Q_AB)));
    let red = reduce(&joint, &BTreeMap::from([(1, 0)])).unwrap();
    let got = flat(red.matrix());
    let want = [-6., 1., 2., -9.];
    l.check("2 reduction", got == want, format!("Q_(A,b1) = {got:?}"));
}

fn criterion_3(l: &mut Ledger) {
    let m = two_variable_network();
    let start = Instant::now();
    let s = uniform_stats(&m);
    let b = aggregate_stats(&s, &Scope::new(vec![(1, 3)]).unwrap()).unwrap();
    let q_full = moment_match(&b).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let t = [0.18, 0.12, 0.23, 0.14, 0.21, 0.13];
    #[rustfmt::skip]
    let mbar = [
        0.0, 0.18, 0.36, 0.0, 0.54, 0.0,
        0.24, 0.0, 0.0, 0.35, 0.0, 0.47,
        0.45, 0.0, 0.0, 0.23, 0.91, 0.0,
        0.0, 0.42, 0.28, 0.0, 0.0, 0.70,
        0.41, 0.0, 1.03, 0.0, 0.0, 0.21,
        0.0, 0.39, 0.0, 0.78, 0.26, 0.0,
    ];
    let tb = [0.30, 0.37, 0.33];
    let mb = rows(&[&[0.0, 0.71, 1.01], &[0.87, 0.0, 1.61], &[0.80, 1.81, 0.0]]);
    let qb = rows(&[&[-5.73, 2.37, 3.36], &[2.35, -6.70, 4.35], &[2.42, 5.49, -7.91]]);

    let dt = max_dev(&s.expected_time, &t);
    let dm = max_dev(&flat(&s.expected_transitions), &mbar);
    l.check("3a joint statistics", dt <= 0.02 && dm <= 0.02, format!("T max dev {dt:.4}, M max dev {dm:.4} (tol 0.02)"));
    let dtb = max_dev(&b.expected_time, &tb);
    let dmb = max_dev(&flat(&b.expected_transitions), &mb);
    l.check("3b aggregated B statistics", dtb <= 0.02 && dmb <= 0.02, format!("T_B max dev {dtb:.4}, M_B max dev {dmb:.4} (tol 0.02)"));
    let dq = max_dev(&flat(q_full.matrix()), &qb);
    l.known(
        "3c Q_B from full-precision statistics",
        dq <= 0.02,
        format!("max dev {dq:.4} (tol 0.02); printed rates are ratios of rounded statistics"),
    );
    let mut rounded = b.clone();
    rounded.expected_time = tb.to_vec();
    rounded.expected_transitions = DMatrix::from_row_slice(3, 3, &mb);
    let dqr = max_dev(&flat(moment_match(&rounded).unwrap().matrix()), &qb);
    l.check("3d Q_B from printed rounded statistics", dqr <= 0.02, format!("max dev {dqr:.4} (tol 0.02)"));
    let bound_ok = (0..3).all(|j| {
        let bound = (0.01 + 0.01 * qb[4 * j].abs()) / (tb[j] - 0.01);
        (0..3).all(|k| (q_full.matrix()[(j, k)] - qb[3 * j + k]).abs() < bound)
    });
    l.check("3e Q_B within propagated rounding bound", bound_ok, "full-precision rates vs printed".into());
    l.check("3f runtime", elapsed < 1.0, format!("{elapsed:.3} s (limit 1 s)"));
}

fn criterion_4(l: &mut Ledger) {
    let m = two_variable_network();
    let (reduced, s) = absorbing_stats(&m);
    let un = [s.unnormalized_time[0], s.unnormalized_exit[0], s.unnormalized_transitions[(1, 0)], s.unnormalized_exit[1]];
    let d_un = max_dev(&un, &[0.105, 0.526, 0.134, 0.470]);
    l.check("4a unnormalized integrals", d_un <= 0.005, format!("{un:.3?} max dev {d_un:.4} (tol 0.005)"));
    let times = [s.unnormalized_time[0], s.unnormalized_time[1], s.absorbed_time];
    let d_t = max_dev(&times, &[0.105, 0.067, 0.828]);
    l.check("4b unnormalized times", d_t <= 0.005, format!("{times:.3?} max dev {d_t:.4} (tol 0.005)"));
    l.check("4c normalizer", (s.normalizer - 5.81).abs() <= 0.05, format!("c = {:.4} (5.81 ± 0.05)", s.normalizer));
    let iota = s.interval_length - s.expected_time.iter().sum::<f64>();
    let tbar = [s.expected_time[0], s.expected_time[1], iota];
    let d = max_dev(&tbar, &[0.61, 0.39, 0.0]);
    l.check("4d normalized times", d <= 0.02, format!("{tbar:.3?} max dev {d:.4} (tol 0.02)"));
    let err = (moment_match(&s).unwrap().matrix() - reduced.matrix()).amax();
    l.check("4e round trip of Q_(A,b1)", err < 1e-6, format!("max error {err:e}"));
}

fn criterion_5(l: &mut Ledger, worst_conservation: &mut f64) {
    let m = chain_network();
    let seg = partition_evidence(&chain_evidence()).unwrap().segments[0].clone();
    let topo = build_cluster_tree(&m).unwrap();
    let init = cluster_initial_distributions(&m, &topo).unwrap();
    let mut s = init_segment(&m, &topo, &init, &seg).unwrap();
    let schedule = sweep_schedule(&topo);
    l.check("5a sweep schedule", schedule == vec![(0, 1), (2, 1), (1, 0), (1, 2)], format!("{schedule:?}"));
    s.send_message(0, 1).unwrap();
    let d12 = flat(s.last_message(0, 1).unwrap());
    let d = max_dev(&d12, &[-2.62, 2.62, 2.62, -2.62]);
    l.check("5b initial delta 1->2", d <= 0.02, format!("{d12:.3?} max dev {d:.4}"));
    s.send_message(2, 1).unwrap();
    let corner = s.potentials[1].matrix()[(0, 0)];
    l.check("5c intermediate pi_2 corner", (corner + 4.62).abs() <= 0.02, format!("{corner:.4} (-4.62)"));

    let opts = EpOptions::default();
    let mut obs = |_: usize, _: usize, st: &ctbn::ep::ClusterGraphState| {
        *worst_conservation = worst_conservation.max(conservation_error(st, &m).unwrap());
    };
    let f = run_filter_observed(&m, &chain_evidence(), None, &opts, &mut obs).unwrap();
    let pi3 = flat(f.segments[0].state.potentials[2].matrix());
    let d = max_dev(&pi3, &[-4.43, 3.43, 3.76, -13.76]);
    l.check("5d converged pi_3", f.converged() && d <= 0.02, format!("{pi3:.3?} max dev {d:.4}"));
    let a = f.query(1.0, &m.scope(&[0]).unwrap()).unwrap();
    let da = (a.probs()[0] - 0.703).abs();
    l.check("5e EP marginal of A at t=1", da <= 0.005, format!("{:.4?} (0.703 ± 0.005)", a.probs()));
    let exact = ExactInference::new(&m, &chain_evidence(), ExactOptions::default()).unwrap();
    let e = exact.query(1.0, &m.scope(&[0]).unwrap()).unwrap();
    let de = (e.probs()[0] - 0.738).abs();
    l.check("5f exact marginal of A at t=1", de <= 0.001, format!("{:.4?} (0.738 ± 0.001)", e.probs()));
}

fn random_generator<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            q[(i, j)] = rng.random_range(0.05..5.0);
        }
        q[(i, i)] = -q.row(i).sum();
    }
    q
}

fn criterion_6a(l: &mut Ledger) {
    let mut rng = rng_from_seed(61);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let sc = Scope::new(vec![(0, n)]).unwrap();
        let f = IntensityFactor::new(sc.clone(), random_generator(&mut rng, n)).unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let p0 = PointDistribution::new(sc, w).unwrap().normalized().unwrap();
        let len = rng.random_range(0.2..3.0);
        let s = expected_suff_stats(&f, &p0, 0.0, len).unwrap();
        worst = worst.max((moment_match(&s).unwrap().matrix() - f.matrix()).amax());
    }
    l.check("6a homogeneous round trip", worst < 1e-6, format!("50 matrices, max error {worst:e}"));
}

/// Count of entries farther than three standard errors from the target.
fn outliers(est: &[f64], se: &[f64], target: &[f64]) -> usize {
    est.iter().zip(se).zip(target).filter(|((e, s), t)| (*e - *t).abs() > 3.0 * *s + 1e-12).count()
}

fn criterion_6b(l: &mut Ledger) {
    let m = two_variable_network();
    let start = Instant::now();
    let trajs = sample_trajectories(&m, 50_000, 1.0, 2024).unwrap();
    let full = m.full_scope();

    let target = uniform_stats(&m);
    let emp = empirical_suff_stats(&trajs, &full, 0.0, 1.0).unwrap();
    let bad = outliers(&emp.stats.expected_time, &emp.time_se, &target.expected_time)
        + outliers(&flat(&emp.stats.expected_transitions), &flat(&emp.transitions_se), &flat(&target.expected_transitions));
    l.check("6b unconditioned Monte Carlo", bad == 0, format!("{bad} of 42 entries outside 3 SE"));

    let (_, target) = absorbing_stats(&m);
    let emp = empirical_suff_stats_killed(&trajs, &full, &BTreeMap::from([(1, 0)]), 0.0, 1.0).unwrap();
    let bad = outliers(&emp.stats.expected_time, &emp.time_se, &target.expected_time)
        + outliers(&flat(&emp.stats.expected_transitions), &flat(&emp.transitions_se), &flat(&target.expected_transitions))
        + outliers(&emp.stats.expected_exit, &emp.exit_se, &target.expected_exit);
    l.check(
        "6b conditioned (B=b1) Monte Carlo",
        bad == 0,
        format!("{bad} of 8 entries outside 3 SE, {} accepted trajectories", emp.samples),
    );
    let elapsed = start.elapsed().as_secs_f64();
    l.check("6b runtime", elapsed < 60.0, format!("{elapsed:.2} s (limit 60 s)"));
}

fn random_model<R: Rng>(rng: &mut R) -> CtbnModel {
    let n = rng.random_range(2..=3);
    let names = ["X", "Y", "Z"];
    let states = ["s0", "s1", "s2"];
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
    let mut b = ModelBuilder::new();
    for i in 0..n {
        b = b.variable(names[i], &states[..cards[i]]);
    }
    for child in 0..n {
        let parents: Vec<&str> = (0..n).filter(|&p| p != child && rng.random_bool(0.5)).map(|p| names[p]).collect();
        for p in &parents {
            b = b.edge(p, names[child]);
        }
        let u: usize = parents.iter().map(|p| cards[names.iter().position(|x| x == p).unwrap()]).product();
        let ms = (0..u).map(|_| random_generator(rng, cards[child])).collect();
        b = b.cim(names[child], &parents, ms);
        let w: Vec<f64> = (0..cards[child]).map(|_| rng.random_range(0.1..1.0)).collect();
        let z: f64 = w.iter().sum();
        b = b.cpt(names[child], &[], vec![w.iter().map(|x| x / z).collect()]);
    }
    b.build().unwrap()
}

fn criterion_6c(l: &mut Ledger, worst_conservation: &mut f64) {
    let mut rng = rng_from_seed(63);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = random_model(&mut rng);
        let last = m.num_vars() - 1;
        let from = rng.random_range(0..m.card(last));
        let to = (from + 1) % m.card(last);
        let ev = EvidenceTimeline::empty(0.0, 1.5)
            .interval(0, rng.random_range(0..m.card(0)), 0.2, 0.7)
            .point(1, rng.random_range(0..m.card(1)), 1.0)
            .transition(last, from, to, 1.2);
        let mut obs = |_: usize, _: usize, st: &ctbn::ep::ClusterGraphState| {
            *worst_conservation = worst_conservation.max(conservation_error(st, &m).unwrap());
        };
        let f = run_filter_observed(&m, &ev, Some(single_cluster(&m)), &EpOptions::default(), &mut obs).unwrap();
        for seg in &f.segments {
            *worst_conservation = worst_conservation.max(conservation_error(&seg.state, &m).unwrap());
        }
        let exact = ExactInference::new(&m, &ev, ExactOptions::default()).unwrap();
        let full = m.full_scope();
        for t in [0.0, 0.1, 0.2, 0.45, 0.7, 0.9, 1.0, 1.1, 1.2, 1.35, 1.5] {
            let a = f.query(t, &full).unwrap();
            let b = exact.query(t, &full).unwrap();
            worst = worst.max(max_dev(&a.to_full(), &b.to_full()));
            for v in 0..m.num_vars() {
                let sc = m.scope(&[v]).unwrap();
                worst = worst.max(max_dev(&f.query(t, &sc).unwrap().to_full(), &exact.query(t, &sc).unwrap().to_full()));
            }
        }
    }
    l.check("6c single-cluster EP equals exact", worst < 1e-6, format!("20 models, max deviation {worst:e}"));
}

fn criterion_6e(l: &mut Ledger) {
    let mut rng = rng_from_seed(65);
    let (mut ck, mut stoch) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let f = IntensityFactor::new(Scope::new(vec![(0, n)]).unwrap(), random_generator(&mut rng, n)).unwrap();
        let (s, t) = (rng.random_range(0.01..1.5), rng.random_range(0.01..1.5));
        let ps = matrix_exponential(&f, s).unwrap();
        let pt = matrix_exponential(&f, t).unwrap();
        let pst = matrix_exponential(&f, s + t).unwrap();
        ck = ck.max((&ps * &pt - &pst).amax());
        for p in [&ps, &pt, &pst] {
            for i in 0..n {
                stoch = stoch.max((p.row(i).sum() - 1.0).abs());
                stoch = stoch.max(-p.row(i).min());
            }
        }
    }
    l.check("6e Chapman-Kolmogorov", ck < 1e-9, format!("100 matrices, max error {ck:e}"));
    l.check("6e stochasticity", stoch < 1e-9, format!("100 matrices, max row-sum or sign error {stoch:e}"));
}

fn criterion_6f(l: &mut Ledger) {
    let m = chain_network();
    let (c, _) = compare(&m, &chain_evidence(), 60, None, &EpOptions::default()).unwrap();
    l.check(
        "6f compare average KL",
        c.average.is_finite() && c.average >= 0.0 && c.average < 0.01,
        format!("{:.6e} over {} points (limit 0.01)", c.average, c.times.len()),
    );
    let rel = (c.average - FROZEN_CHAIN_AVERAGE_KL).abs() / FROZEN_CHAIN_AVERAGE_KL;
    l.check("6f frozen regression value", rel < 1e-6, format!("{:.15e} vs frozen {FROZEN_CHAIN_AVERAGE_KL:.15e}", c.average));
    let (c1, _) = compare(&m, &chain_evidence(), 60, Some(single_cluster(&m)), &EpOptions::default()).unwrap();
    l.check("6f single cluster gives zero KL", c1.average < 1e-9, format!("{:e}", c1.average));
    let direct = kl_divergence(&[0.738, 0.262], &[0.703, 0.297]).unwrap();
    l.check("6f KL evaluator", (direct - 0.0030056).abs() < 1e-6, format!("KL([.738,.262] || [.703,.297]) = {direct:.7}"));
}

fn main() {
    let mut l = Ledger { lines: Vec::new() };
    let mut conservation = 0.0f64;
    let start = Instant::now();
    criterion_1_2(&mut l);
    criterion_3(&mut l);
    criterion_4(&mut l);
    criterion_5(&mut l, &mut conservation);
    criterion_6a(&mut l);
    criterion_6b(&mut l);
    criterion_6c(&mut l, &mut conservation);
    l.check("6d conservation", conservation < 1e-9, format!("max error {conservation:e} over every sweep"));
    criterion_6e(&mut l);
    criterion_6f(&mut l);

    let failed: Vec<&str> = l.lines.iter().filter(|(_, p, k)| !p && !k).map(|(id, _, _)| id.as_str()).collect();
    let known = l.lines.iter().filter(|(_, p, k)| !p && *k).count();
    let passed = l.lines.iter().filter(|(_, p, _)| *p).count();
    println!(
        "acceptance: {passed} passed, {} failed, {known} known failure(s) in {:.1} s",
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        eprintln!("unexpected failures: {failed:?}");
        std::process::exit(1);
    }
}
