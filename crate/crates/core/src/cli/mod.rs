//! Command-line front end: argument parsing, report rendering and the
//! KL-divergence evaluator used by `compare`.

pub mod formats;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::clustergraph::ClusterTopology;
use crate::ep::{run_filter, EpOptions, EpReport, FilterResult};
use crate::error::{CtbnError, Result};
use crate::exact::{ExactInference, ExactOptions};
use crate::model::{CtbnModel, EvidenceTimeline};
use crate::sampler::sample_trajectories;
use crate::scope::Scope;
use crate::suffstats::{aggregate_stats, expected_suff_stats, SuffStats};
use crate::tolerance::TOLERANCES;

pub use formats::*;

/// Exit status for each failure class; non-convergence still emits results.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INVALID: i32 = 1;
    pub const IMPOSSIBLE_EVIDENCE: i32 = 2;
    pub const SIZE_CAP: i32 = 3;
    pub const NOT_CONVERGED: i32 = 4;
}

pub fn exit_code(e: &CtbnError) -> i32 {
    match e {
        CtbnError::ImpossibleEvidence(_) => exit::IMPOSSIBLE_EVIDENCE,
        CtbnError::SizeCap { .. } => exit::SIZE_CAP,
        _ => exit::INVALID,
    }
}

/// `Σ p_i ln(p_i / q_i)`, skipping zero entries of `p`. A positive `p_i`
/// facing a zero `q_i` gives `+∞` (see [`support_violation`]).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CtbnError::Dimension(format!("KL of vectors of length {} and {}", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|x| x.is_nan() || *x < -TOLERANCES.validation) {
        return Err(CtbnError::InvalidArgument("KL arguments must be non-negative".into()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// First index where `p` has mass and `q` has none.
pub fn support_violation(p: &[f64], q: &[f64]) -> Option<usize> {
    p.iter().zip(q).position(|(&pi, &qi)| pi > 0.0 && qi <= 0.0)
}

/// Rounds to six significant digits, the precision of every report.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.5e}").parse::<f64>().expect("formatted float parses") + 0.0
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round_sig(x))
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn matrix_value(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| nums(&m.row(i).iter().copied().collect::<Vec<_>>())).collect())
}

fn fmt_num(x: f64) -> String {
    let r = round_sig(x);
    if !r.is_finite() {
        return format!("{r}");
    }
    if r != 0.0 && (r.abs() < 1e-4 || r.abs() >= 1e6) {
        format!("{r:.5e}")
    } else {
        format!("{r}")
    }
}

/// Left-aligned columns separated by two spaces.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate().take(cols) {
            s.push_str(c);
            if i + 1 < cols {
                s.push_str(&" ".repeat(widths[i] - c.len() + 2));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "ctbn", version, about = "Inference for continuous time Bayesian networks")]
pub struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json, global = true)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct EpArgs {
    /// Convergence threshold on message changes.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Maximum sweeps per segment.
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Cluster graph to use instead of the automatic clique tree.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

impl Default for EpArgs {
    fn default() -> Self {
        EpArgs { tol: 1e-6, max_iters: 100, topology: None }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file and list every violation.
    Validate { model: PathBuf },
    /// Exact inference over the joint process.
    Exact {
        #[command(subcommand)]
        command: ExactCommand,
    },
    /// Expectation propagation over a cluster graph.
    Ep {
        #[command(subcommand)]
        command: EpCommand,
    },
    /// Forward-sample trajectories.
    Sample {
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact against EP joint distributions at evenly spaced times.
    Compare {
        model: PathBuf,
        evidence: PathBuf,
        #[arg(long, default_value_t = 60)]
        points: usize,
        #[command(flatten)]
        ep: EpArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExactCommand {
    Query { model: PathBuf, evidence: PathBuf, query: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum EpCommand {
    Query {
        model: PathBuf,
        evidence: PathBuf,
        query: PathBuf,
        #[command(flatten)]
        ep: EpArgs,
    },
    /// Expected sufficient statistics of every cluster in one segment.
    Stats {
        model: PathBuf,
        evidence: PathBuf,
        #[arg(long)]
        segment: usize,
        #[command(flatten)]
        ep: EpArgs,
    },
}

/// A rendered report and the status to exit with.
#[derive(Debug, Clone)]
pub struct Report {
    pub json: Value,
    pub text: String,
    pub code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cli: &Cli) -> Outcome {
    match dispatch(&cli.command) {
        Ok(r) => {
            let stdout = match cli.format {
                OutputFormat::Json => serde_json::to_string_pretty(&r.json).expect("report serializes") + "\n",
                OutputFormat::Text => r.text,
            };
            let stderr = if r.code == exit::NOT_CONVERGED {
                "warning: EP did not converge in every segment\n".into()
            } else {
                String::new()
            };
            Outcome { code: r.code, stdout, stderr }
        }
        Err(e) => Outcome { code: exit_code(&e), stdout: String::new(), stderr: format!("error: {e}\n") },
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CtbnError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_model(path: &Path) -> Result<CtbnModel> {
    parse_model(&read(path)?)
}

fn load_inputs(model: &Path, evidence: &Path) -> Result<(CtbnModel, EvidenceTimeline)> {
    let m = load_model(model)?;
    let ev = parse_evidence(&m, &read(evidence)?)?;
    Ok((m, ev))
}

fn ep_options(args: &EpArgs) -> Result<EpOptions> {
    if !(args.tol > 0.0) || args.max_iters == 0 {
        return Err(CtbnError::InvalidArgument("--tol and --max-iters must be positive".into()));
    }
    Ok(EpOptions { tol: args.tol, max_iters: args.max_iters, ..EpOptions::default() })
}

fn load_topology(m: &CtbnModel, args: &EpArgs) -> Result<Option<ClusterTopology>> {
    args.topology.as_deref().map(|p| parse_topology(m, &read(p)?)).transpose()
}

fn run_ep(m: &CtbnModel, ev: &EvidenceTimeline, args: &EpArgs) -> Result<FilterResult> {
    run_filter(m, ev, load_topology(m, args)?, &ep_options(args)?)
}

fn dispatch(cmd: &Command) -> Result<Report> {
    match cmd {
        Command::Validate { model } => validate(model),
        Command::Exact { command: ExactCommand::Query { model, evidence, query } } => {
            let (m, ev) = load_inputs(model, evidence)?;
            let q = parse_query(&m, ev.horizon, &read(query)?)?;
            exact_query_report(&m, &ev, &q)
        }
        Command::Ep { command: EpCommand::Query { model, evidence, query, ep } } => {
            let (m, ev) = load_inputs(model, evidence)?;
            let q = parse_query(&m, ev.horizon, &read(query)?)?;
            ep_query_report(&m, &ev, &q, ep)
        }
        Command::Ep { command: EpCommand::Stats { model, evidence, segment, ep } } => {
            let (m, ev) = load_inputs(model, evidence)?;
            ep_stats_report(&m, &ev, *segment, ep)
        }
        Command::Sample { model, n, t_end, seed } => {
            let m = load_model(model)?;
            sample_report(&m, *n, *t_end, *seed)
        }
        Command::Compare { model, evidence, points, ep } => {
            let (m, ev) = load_inputs(model, evidence)?;
            compare_report(&m, &ev, *points, ep)
        }
    }
}

fn validate(path: &Path) -> Result<Report> {
    match load_model(path) {
        Ok(m) => {
            let states: usize = m.variables.iter().map(|v| v.card()).product();
            Ok(Report {
                json: json!({"valid": true, "variables": m.num_vars(), "edges": m.edges.len(), "joint_states": states}),
                text: format!("valid: {} variables, {} edges, {states} joint states\n", m.num_vars(), m.edges.len()),
                code: exit::SUCCESS,
            })
        }
        Err(CtbnError::Validation(issues)) => {
            let list: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
            let text = std::iter::once(format!("invalid: {} issue(s)\n", list.len()))
                .chain(list.iter().map(|i| format!("  - {i}\n")))
                .collect();
            Ok(Report { json: json!({"valid": false, "issues": list}), text, code: exit::INVALID })
        }
        Err(e) => Err(e),
    }
}

fn state_labels(m: &CtbnModel, scope: &Scope) -> Vec<String> {
    (0..scope.size()).map(|i| m.state_label(scope, i)).collect()
}

fn names(m: &CtbnModel, vars: &[usize]) -> Vec<String> {
    vars.iter().map(|&v| m.variables[v].name.clone()).collect()
}

/// Statistics over every state of a scope, summed over segment pieces.
struct StatsTable {
    time: Vec<f64>,
    transitions: DMatrix<f64>,
    exits: Vec<f64>,
}

impl StatsTable {
    fn new(n: usize) -> Self {
        StatsTable { time: vec![0.0; n], transitions: DMatrix::zeros(n, n), exits: vec![0.0; n] }
    }

    fn add(&mut self, s: &SuffStats) {
        for (i, &a) in s.retained.iter().enumerate() {
            self.time[a] += s.expected_time[i];
            self.exits[a] += s.expected_exit[i];
            for (j, &b) in s.retained.iter().enumerate() {
                self.transitions[(a, b)] += s.expected_transitions[(i, j)];
            }
        }
    }

    fn json(&self, t: f64) -> Value {
        json!({
            "t": num(t),
            "expected_time": nums(&self.time),
            "expected_transitions": matrix_value(&self.transitions),
            "expected_exits": nums(&self.exits),
        })
    }

    fn text(&self, labels: &[String]) -> String {
        let mut header = vec!["state".to_string(), "time".into(), "exits".into()];
        header.extend(labels.iter().map(|l| format!("-> {l}")));
        let rows: Vec<Vec<String>> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut r = vec![l.clone(), fmt_num(self.time[i]), fmt_num(self.exits[i])];
                r.extend((0..labels.len()).map(|j| fmt_num(self.transitions[(i, j)])));
                r
            })
            .collect();
        table(&header, &rows)
    }
}

fn marginal_text(labels: &[String], probes: &[(f64, Vec<f64>)]) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = probes
        .iter()
        .map(|(t, p)| std::iter::once(fmt_num(*t)).chain(p.iter().map(|&x| fmt_num(x))).collect())
        .collect();
    table(&header, &rows)
}

fn stats_text(labels: &[String], probes: &[(f64, StatsTable)]) -> String {
    probes.iter().map(|(t, s)| format!("t = {}\n{}", fmt_num(*t), s.text(labels))).collect::<Vec<_>>().join("\n")
}

fn marginal_json(engine: &str, m: &CtbnModel, scope: &Scope, probes: &[(f64, Vec<f64>)]) -> Value {
    json!({
        "engine": engine,
        "kind": "marginal",
        "variables": names(m, scope.vars()),
        "states": state_labels(m, scope),
        "probes": probes.iter().map(|(t, p)| json!({"t": num(*t), "probs": nums(p)})).collect::<Vec<_>>(),
    })
}

fn stats_json(engine: &str, m: &CtbnModel, scope: &Scope, probes: &[(f64, StatsTable)]) -> Value {
    json!({
        "engine": engine,
        "kind": "expected-statistics",
        "variables": names(m, scope.vars()),
        "states": state_labels(m, scope),
        "probes": probes.iter().map(|(t, s)| s.json(*t)).collect::<Vec<_>>(),
    })
}

/// Filtered statistics on `[t0, t]` from the exact engine, summed over segments.
fn exact_stats_until(inf: &ExactInference, scope: &Scope, t: f64) -> Result<StatsTable> {
    let mut acc = StatsTable::new(scope.size());
    for (k, seg) in inf.segments().segments.iter().enumerate() {
        if seg.start >= t {
            break;
        }
        let (p0, reduced) = inf.segment_start(k).expect("segment exists");
        let s = expected_suff_stats(reduced, p0, seg.start, seg.end.min(t))?;
        acc.add(&aggregate_stats(&s, scope)?);
    }
    Ok(acc)
}

pub fn exact_query_report(m: &CtbnModel, ev: &EvidenceTimeline, q: &QuerySpec) -> Result<Report> {
    let inf = ExactInference::new(m, ev, ExactOptions::default())?;
    let scope = m.scope(&q.variables)?;
    let labels = state_labels(m, &scope);
    match q.kind {
        QueryKind::Marginal => {
            let probes =
                q.times.iter().map(|&t| Ok((t, inf.query(t, &scope)?.to_full()))).collect::<Result<Vec<_>>>()?;
            Ok(Report {
                json: marginal_json("exact", m, &scope, &probes),
                text: marginal_text(&labels, &probes),
                code: exit::SUCCESS,
            })
        }
        QueryKind::ExpectedStatistics => {
            let probes =
                q.times.iter().map(|&t| Ok((t, exact_stats_until(&inf, &scope, t)?))).collect::<Result<Vec<_>>>()?;
            Ok(Report {
                json: stats_json("exact", m, &scope, &probes),
                text: stats_text(&labels, &probes),
                code: exit::SUCCESS,
            })
        }
        QueryKind::EvidenceLikelihood => {
            let ll = inf.log_evidence();
            Ok(Report {
                json: json!({"engine": "exact", "kind": "evidence-likelihood", "log_likelihood": num(ll), "likelihood": num(ll.exp())}),
                text: format!("log_likelihood  {}\nlikelihood      {}\n", fmt_num(ll), fmt_num(ll.exp())),
                code: exit::SUCCESS,
            })
        }
    }
}

fn report_json(k: usize, start: f64, end: f64, r: &EpReport) -> Value {
    json!({
        "segment": k,
        "start": num(start),
        "end": num(end),
        "sweeps": r.sweeps,
        "converged": r.converged,
        "max_change": num(r.max_change),
        "residual": num(r.residual),
    })
}

fn convergence(f: &FilterResult) -> (Value, String) {
    let rows: Vec<(usize, f64, f64, &EpReport)> =
        f.segments.iter().enumerate().map(|(k, s)| (k, s.state.segment.start, s.state.segment.end, &s.report)).collect();
    let json = Value::Array(rows.iter().map(|&(k, a, b, r)| report_json(k, a, b, r)).collect());
    let header: Vec<String> =
        ["segment", "start", "end", "sweeps", "converged", "max_change", "residual"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|&(k, a, b, r)| {
            vec![
                k.to_string(),
                fmt_num(a),
                fmt_num(b),
                r.sweeps.to_string(),
                r.converged.to_string(),
                fmt_num(r.max_change),
                fmt_num(r.residual),
            ]
        })
        .collect();
    (json, table(&header, &body))
}

fn status(f: &FilterResult) -> i32 {
    if f.converged() {
        exit::SUCCESS
    } else {
        exit::NOT_CONVERGED
    }
}

/// EP statistics on `[t0, t]` from the smallest cluster covering `scope`.
fn ep_stats_until(f: &FilterResult, scope: &Scope, t: f64) -> Result<StatsTable> {
    let mut acc = StatsTable::new(scope.size());
    for seg in &f.segments {
        let s = &seg.state;
        if s.segment.start >= t {
            break;
        }
        let i = (0..s.scopes.len())
            .filter(|&i| scope.is_subset_of(&s.scopes[i]))
            .min_by_key(|&i| (s.scopes[i].size(), i))
            .ok_or_else(|| CtbnError::Unsupported("no single cluster contains every query variable".into()))?;
        let st = expected_suff_stats(&s.potentials[i], &s.initials[i], s.segment.start, s.segment.end.min(t))?;
        acc.add(&aggregate_stats(&st, scope)?);
    }
    Ok(acc)
}

pub fn ep_query_report(m: &CtbnModel, ev: &EvidenceTimeline, q: &QuerySpec, args: &EpArgs) -> Result<Report> {
    if q.kind == QueryKind::EvidenceLikelihood {
        return Err(CtbnError::Unsupported("evidence likelihood is available from the exact engine only".into()));
    }
    let f = run_ep(m, ev, args)?;
    let scope = m.scope(&q.variables)?;
    let labels = state_labels(m, &scope);
    let (mut json, mut text) = match q.kind {
        QueryKind::Marginal => {
            let probes = q.times.iter().map(|&t| Ok((t, f.query(t, &scope)?.to_full()))).collect::<Result<Vec<_>>>()?;
            (marginal_json("ep", m, &scope, &probes), marginal_text(&labels, &probes))
        }
        _ => {
            let probes = q.times.iter().map(|&t| Ok((t, ep_stats_until(&f, &scope, t)?))).collect::<Result<Vec<_>>>()?;
            (stats_json("ep", m, &scope, &probes), stats_text(&labels, &probes))
        }
    };
    let (conv_json, conv_text) = convergence(&f);
    json["converged"] = json!(f.converged());
    json["segments"] = conv_json;
    text.push('\n');
    text.push_str(&conv_text);
    Ok(Report { json, text, code: status(&f) })
}

pub fn ep_stats_report(m: &CtbnModel, ev: &EvidenceTimeline, k: usize, args: &EpArgs) -> Result<Report> {
    let f = run_ep(m, ev, args)?;
    let stats = f.cluster_statistics(k)?;
    let seg = &f.segments[k].state.segment;
    let mut clusters = Vec::new();
    let mut text = format!("segment {k} on [{}, {}]\n", fmt_num(seg.start), fmt_num(seg.end));
    for (i, s) in stats.iter().enumerate() {
        let labels: Vec<String> = s.retained.iter().map(|&x| m.state_label(&s.scope, x)).collect();
        clusters.push(json!({
            "cluster": i,
            "variables": names(m, s.scope.vars()),
            "states": labels,
            "expected_time": nums(&s.expected_time),
            "expected_transitions": matrix_value(&s.expected_transitions),
            "expected_exits": nums(&s.expected_exit),
        }));
        let t = StatsTable {
            time: s.expected_time.clone(),
            transitions: s.expected_transitions.clone(),
            exits: s.expected_exit.clone(),
        };
        text.push_str(&format!("\ncluster {i} {{{}}}\n", names(m, s.scope.vars()).join(", ")));
        text.push_str(&t.text(&labels));
    }
    let r = &f.segments[k].report;
    let json = json!({
        "segment": report_json(k, seg.start, seg.end, r),
        "clusters": clusters,
    });
    Ok(Report { json, text, code: if r.converged { exit::SUCCESS } else { exit::NOT_CONVERGED } })
}

pub fn sample_report(m: &CtbnModel, n: usize, t_end: f64, seed: u64) -> Result<Report> {
    let trajs = sample_trajectories(m, n, t_end, seed)?;
    let dump = TrajectoryDump::new(m, seed, t_end, &trajs);
    let mut text = format!("# rng {} seed {seed} t_end {t_end}\n", dump.rng);
    let rows: Vec<Vec<String>> = dump
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            let init = r.initial.iter().map(|(v, x)| format!("{v}={x}")).collect::<Vec<_>>().join(",");
            std::iter::once(vec![k.to_string(), format!("{}", r.start), "start".into(), init])
                .chain(r.transitions.iter().map(move |j| vec![k.to_string(), format!("{}", j.t), j.var.clone(), j.to.clone()]))
        })
        .collect();
    text.push_str(&table(&["trajectory".into(), "t".into(), "var".into(), "to".into()], &rows));
    Ok(Report { json: serde_json::to_value(&dump)?, text, code: exit::SUCCESS })
}

/// Per-point KL divergence of the EP joint from the exact joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub kl: Vec<f64>,
    pub average: f64,
    pub converged: bool,
}

pub fn compare(
    m: &CtbnModel,
    ev: &EvidenceTimeline,
    points: usize,
    topo: Option<ClusterTopology>,
    opts: &EpOptions,
) -> Result<(Comparison, FilterResult)> {
    if points == 0 {
        return Err(CtbnError::InvalidArgument("--points must be positive".into()));
    }
    let exact = ExactInference::new(m, ev, ExactOptions::default())?;
    let f = run_filter(m, ev, topo, opts)?;
    let times = evenly_spaced(points, ev.horizon.0, ev.horizon.1);
    let mut kl = Vec::with_capacity(points);
    for &t in &times {
        let p = exact.joint_at(t)?;
        let q = f.joint_at(t)?;
        if p.scope() != q.scope() {
            return Err(CtbnError::Scope("EP joint does not cover every variable".into()));
        }
        kl.push(kl_divergence(&p.to_full(), &q.to_full())?);
    }
    let average = kl.iter().sum::<f64>() / points as f64;
    Ok((Comparison { times, kl, average, converged: f.converged() }, f))
}

pub fn compare_report(m: &CtbnModel, ev: &EvidenceTimeline, points: usize, args: &EpArgs) -> Result<Report> {
    let (c, f) = compare(m, ev, points, load_topology(m, args)?, &ep_options(args)?)?;
    let (conv_json, conv_text) = convergence(&f);
    let json = json!({
        "points": c.times.iter().zip(&c.kl).map(|(&t, &k)| json!({"t": num(t), "kl": num(k)})).collect::<Vec<_>>(),
        "average_kl": num(c.average),
        "max_kl": num(c.kl.iter().copied().fold(0.0, f64::max)),
        "converged": c.converged,
        "segments": conv_json,
    });
    let rows: Vec<Vec<String>> = c.times.iter().zip(&c.kl).map(|(&t, &k)| vec![fmt_num(t), fmt_num(k)]).collect();
    let mut text = table(&["t".into(), "kl".into()], &rows);
    text.push_str(&format!("\naverage_kl  {}\n\n", fmt_num(c.average)));
    text.push_str(&conv_text);
    Ok(Report { json, text, code: status(&f) })
}
