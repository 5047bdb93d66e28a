//! State construction from decision histories: current context, previous
//! action, truncated windows of recent stages and whole-history aggregates.
//!
//! Stage indices are 1-based throughout, matching the interchange formats.

mod matrix;

pub use matrix::StateMatrix;

use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedColumn, NumericEpisode, NumericEpisodeSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggOp {
    #[default]
    None,
    Sum,
    Max,
    Mean,
}

impl AggOp {
    pub fn as_str(self) -> &'static str {
        match self {
            AggOp::None => "none",
            AggOp::Sum => "sum",
            AggOp::Max => "max",
            AggOp::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AggOp::None),
            "sum" => Some(AggOp::Sum),
            "max" => Some(AggOp::Max),
            "mean" => Some(AggOp::Mean),
            _ => None,
        }
    }
}

/// Declarative recipe for the state at each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSpec {
    #[serde(default)]
    pub current: bool,
    #[serde(default)]
    pub prev_action: bool,
    /// Truncation depth; `Some(0)` is `{X_t, A_{t-1}}`.
    #[serde(default)]
    pub window_k: Option<usize>,
    #[serde(default)]
    pub agg: AggOp,
}

impl StateSpec {
    pub const fn current_only() -> Self {
        Self { current: true, prev_action: false, window_k: None, agg: AggOp::None }
    }

    pub const fn prev_action_only() -> Self {
        Self { current: false, prev_action: true, window_k: None, agg: AggOp::None }
    }

    pub const fn window(k: usize, agg: AggOp) -> Self {
        Self { current: true, prev_action: true, window_k: Some(k), agg }
    }

    pub const fn aggregates(agg: AggOp) -> Self {
        Self { current: false, prev_action: false, window_k: None, agg }
    }

    /// Applies the implication window ⇒ current context and previous action.
    pub fn normalized(self) -> Self {
        if self.window_k.is_some() {
            Self { current: true, prev_action: true, ..self }
        } else {
            self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.normalized();
        if !s.current && !s.prev_action && s.window_k.is_none() && s.agg == AggOp::None {
            return Err(Error::Config("state spec includes no features".into()));
        }
        Ok(())
    }

    /// Compact human-readable label, e.g. `{H(1),Hbar(sum)}`.
    pub fn label(&self) -> String {
        let s = self.normalized();
        let mut parts: Vec<String> = Vec::new();
        match s.window_k {
            Some(k) => parts.push(format!("H({k})")),
            None => {
                if s.current {
                    parts.push("X_t".into());
                }
                if s.prev_action {
                    parts.push("A_t-1".into());
                }
            }
        }
        if s.agg != AggOp::None {
            parts.push(format!("Hbar({})", s.agg.as_str()));
        }
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            format!("{{{}}}", parts.join(","))
        }
    }
}

/// The seven standard representations, in order:
/// `X_t`, `A_{t-1}`, `H(0)`, `H̄_t`, `{H(0), H̄_t}`, `{H(1), H̄_t}`, `{H(2), H̄_t}`.
pub fn enumerate_standard_states(op: AggOp) -> Vec<StateSpec> {
    vec![
        StateSpec::current_only(),
        StateSpec::prev_action_only(),
        StateSpec::window(0, AggOp::None),
        StateSpec::aggregates(op),
        StateSpec::window(0, op),
        StateSpec::window(1, op),
        StateSpec::window(2, op),
    ]
}

fn action_at(ep: &NumericEpisode, stage: isize, default_action: usize) -> usize {
    if stage >= 1 {
        ep.actions[stage as usize - 1]
    } else {
        default_action
    }
}

fn context_at(ep: &NumericEpisode, stage: isize) -> &[f64] {
    &ep.contexts[(stage.max(1) as usize) - 1]
}

fn push_one_hot(out: &mut Vec<f64>, k: usize, n: usize) {
    out.extend((0..n).map(|j| if j == k { 1.0 } else { 0.0 }));
}

/// Aggregates over the history at stage `t`: each aggregate-eligible column
/// over stages `1..=t`, then one-hot actions over stages `1..t`. The empty
/// action prefix at `t = 1` aggregates to zero for every operator.
pub fn aggregate_history(
    ep: &NumericEpisode,
    t: usize,
    op: AggOp,
    columns: &[EncodedColumn],
    n_actions: usize,
) -> Vec<f64> {
    assert!(t >= 1 && t <= ep.len(), "stage {t} outside 1..={}", ep.len());
    let reduce = |vals: &mut dyn Iterator<Item = f64>, n: usize| -> f64 {
        match op {
            AggOp::None => unreachable!("aggregate_history with op=none"),
            AggOp::Sum => vals.sum(),
            AggOp::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            AggOp::Mean => vals.sum::<f64>() / n as f64,
        }
    };
    let mut out = Vec::new();
    for (c, col) in columns.iter().enumerate() {
        if col.aggregate_eligible {
            out.push(reduce(&mut ep.contexts[..t].iter().map(|x| x[c]), t));
        }
    }
    for j in 0..n_actions {
        if t == 1 {
            out.push(0.0);
        } else {
            let mut ind = ep.actions[..t - 1].iter().map(|&a| if a == j { 1.0 } else { 0.0 });
            out.push(reduce(&mut ind, t - 1));
        }
    }
    out
}

pub fn aggregate_names(op: AggOp, columns: &[EncodedColumn], action_labels: &[String]) -> Vec<String> {
    let suffix = format!("@agg_{}", op.as_str());
    columns
        .iter()
        .filter(|c| c.aggregate_eligible)
        .map(|c| format!("{}{suffix}", c.name))
        .chain(action_labels.iter().map(|a| format!("action:{a}{suffix}")))
        .collect()
}

/// Truncated history at stage `t` with window `k`: the full current context,
/// lag-eligible columns at lags `1..=k`, and one-hot actions at lags
/// `1..=k+1`. Stages before the first are padded with the first observation
/// (contexts) and `default_action` (actions).
pub fn truncate_history(
    ep: &NumericEpisode,
    t: usize,
    k: usize,
    columns: &[EncodedColumn],
    n_actions: usize,
    default_action: usize,
) -> Vec<f64> {
    assert!(t >= 1 && t <= ep.len(), "stage {t} outside 1..={}", ep.len());
    let t = t as isize;
    let mut out = context_at(ep, t).to_vec();
    for lag in 1..=k as isize {
        let x = context_at(ep, t - lag);
        out.extend(columns.iter().zip(x).filter(|(c, _)| c.lag_eligible).map(|(_, v)| *v));
    }
    for lag in 1..=k as isize + 1 {
        push_one_hot(&mut out, action_at(ep, t - lag, default_action), n_actions);
    }
    out
}

pub fn truncate_names(k: usize, columns: &[EncodedColumn], action_labels: &[String]) -> Vec<String> {
    let mut names: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    for lag in 1..=k {
        names.extend(columns.iter().filter(|c| c.lag_eligible).map(|c| format!("{}@lag{lag}", c.name)));
    }
    for lag in 1..=k + 1 {
        names.extend(action_labels.iter().map(|a| format!("action:{a}@lag{lag}")));
    }
    names
}

/// Feature names for a spec, in block order
/// `current | lagged contexts | lagged actions (lag ≥ 2) | previous action | aggregates`.
pub fn feature_names(spec: &StateSpec, columns: &[EncodedColumn], action_labels: &[String]) -> Vec<String> {
    let s = spec.normalized();
    let mut names = Vec::new();
    if s.current {
        names.extend(columns.iter().map(|c| c.name.clone()));
    }
    if let Some(k) = s.window_k {
        for lag in 1..=k {
            names.extend(columns.iter().filter(|c| c.lag_eligible).map(|c| format!("{}@lag{lag}", c.name)));
        }
        for lag in 2..=k + 1 {
            names.extend(action_labels.iter().map(|a| format!("action:{a}@lag{lag}")));
        }
    }
    if s.prev_action {
        names.extend(action_labels.iter().map(|a| format!("action:{a}@lag1")));
    }
    if s.agg != AggOp::None {
        if !s.current {
            // Columns without a meaningful aggregate enter as their current value.
            names.extend(columns.iter().filter(|c| !c.aggregate_eligible).map(|c| c.name.clone()));
        }
        names.extend(aggregate_names(s.agg, columns, action_labels));
    }
    names
}

/// Running aggregate state for one episode, advanced one stage at a time.
struct RunningAggregate {
    op: AggOp,
    context: Vec<f64>,
    actions: Vec<f64>,
    n_context: usize,
    n_actions: usize,
}

impl RunningAggregate {
    fn new(op: AggOp, n_cols: usize, n_actions: usize) -> Self {
        let init = if op == AggOp::Max { f64::NEG_INFINITY } else { 0.0 };
        Self { op, context: vec![init; n_cols], actions: vec![init; n_actions], n_context: 0, n_actions: 0 }
    }

    fn fold(op: AggOp, acc: &mut f64, x: f64) {
        match op {
            AggOp::Max => *acc = acc.max(x),
            _ => *acc += x,
        }
    }

    fn push_context(&mut self, x: &[f64]) {
        for (a, &v) in self.context.iter_mut().zip(x) {
            Self::fold(self.op, a, v);
        }
        self.n_context += 1;
    }

    fn push_action(&mut self, action: usize) {
        for (j, a) in self.actions.iter_mut().enumerate() {
            Self::fold(self.op, a, if j == action { 1.0 } else { 0.0 });
        }
        self.n_actions += 1;
    }

    fn emit(&self, columns: &[EncodedColumn], out: &mut Vec<f64>) {
        let finish = |acc: f64, n: usize| match self.op {
            _ if n == 0 => 0.0,
            AggOp::Mean => acc / n as f64,
            _ => acc,
        };
        for (c, col) in columns.iter().enumerate() {
            if col.aggregate_eligible {
                out.push(finish(self.context[c], self.n_context));
            }
        }
        out.extend(self.actions.iter().map(|&a| finish(a, self.n_actions)));
    }
}

/// Materializes the state for every stage of every episode.
pub fn assemble_state(set: &NumericEpisodeSet, spec: &StateSpec) -> Result<StateMatrix> {
    spec.validate()?;
    let s = spec.normalized();
    let columns = &set.columns;
    let n_actions = set.n_actions();
    let names = feature_names(&s, columns, &set.action_labels);
    let n_rows = set.n_rows();

    let mut m = StateMatrix::with_capacity(names, set.action_labels.clone(), set.default_action, n_rows);
    let mut row = Vec::with_capacity(m.n_features());
    for ep in &set.episodes {
        let pid = m.push_patient(&ep.patient_id);
        let mut running = (s.agg != AggOp::None).then(|| RunningAggregate::new(s.agg, columns.len(), n_actions));
        for t in 1..=ep.len() {
            let ti = t as isize;
            row.clear();
            if s.current {
                row.extend_from_slice(context_at(ep, ti));
            }
            if let Some(k) = s.window_k {
                for lag in 1..=k as isize {
                    let x = context_at(ep, ti - lag);
                    row.extend(columns.iter().zip(x).filter(|(c, _)| c.lag_eligible).map(|(_, v)| *v));
                }
                for lag in 2..=k as isize + 1 {
                    push_one_hot(&mut row, action_at(ep, ti - lag, set.default_action), n_actions);
                }
            }
            let prev = action_at(ep, ti - 1, set.default_action);
            if s.prev_action {
                push_one_hot(&mut row, prev, n_actions);
            }
            if let Some(agg) = running.as_mut() {
                if !s.current {
                    let x = context_at(ep, ti);
                    row.extend(columns.iter().zip(x).filter(|(c, _)| !c.aggregate_eligible).map(|(_, v)| *v));
                }
                agg.push_context(context_at(ep, ti));
                if t > 1 {
                    agg.push_action(ep.actions[t - 2]);
                }
                agg.emit(columns, &mut row);
            }
            m.push_row(&row, ep.actions[t - 1], pid, t, prev, ep.severity[t - 1]);
        }
    }
    Ok(m)
}
