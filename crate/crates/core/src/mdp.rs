//! The deterministic chain MDP induced by a tagged sequence. States are
//! positions and actions are tags; the gold tag advances with reward 1, any
//! other tag ends the episode with reward 0.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMdp {
    gold: Vec<usize>,
    num_actions: usize,
    gamma: f64,
}

/// Outcome of taking an action in some state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// `None` is the absorbing terminal state.
    pub next: Option<usize>,
}

impl SequenceMdp {
    pub fn new(gold: Vec<usize>, num_actions: usize, gamma: f64) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Input("sequence MDP over an empty sequence".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Validation(format!(
                "Q-learning discount must lie in [0, 1), got {gamma}"
            )));
        }
        if let Some(&bad) = gold.iter().find(|&&a| a >= num_actions) {
            return Err(Error::Index {
                what: "action",
                index: bad,
                bound: num_actions,
            });
        }
        Ok(SequenceMdp {
            gold,
            num_actions,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gold(&self) -> &[usize] {
        &self.gold
    }

    pub fn step(&self, state: usize, action: usize) -> Transition {
        if action != self.gold[state] {
            return Transition {
                reward: 0.0,
                next: None,
            };
        }
        let next = (state + 1 < self.gold.len()).then_some(state + 1);
        Transition { reward: 1.0, next }
    }
}

/// Row-major `[positions × actions]` table of action values.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub rows: usize,
    pub actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(rows: usize, actions: usize) -> Self {
        QTable {
            rows,
            actions,
            values: vec![0.0; rows * actions],
        }
    }

    pub fn get(&self, t: usize, a: usize) -> f64 {
        self.values[t * self.actions + a]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.actions..(t + 1) * self.actions]
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Optimal action values by synchronous value iteration over the MDP's
/// transition function, run to an exact fixed point.
pub fn q_star(mdp: &SequenceMdp) -> QTable {
    let (l, k) = (mdp.len(), mdp.num_actions());
    let mut q = QTable::zeros(l, k);
    // Rewards propagate back one position per sweep, so L+1 sweeps suffice.
    for _ in 0..=l {
        let mut next = QTable::zeros(l, k);
        for t in 0..l {
            for a in 0..k {
                let tr = mdp.step(t, a);
                let future = tr.next.map_or(0.0, |s| row_max(q.row(s)));
                next.values[t * k + a] = tr.reward + mdp.gamma() * future;
            }
        }
        let done = next == q;
        q = next;
        if done {
            break;
        }
    }
    q
}

/// How the episode continues after the gold action at a position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Continuation {
    /// Bootstrap from the prediction at the following row.
    Next,
    /// The transition ends the episode.
    Terminal,
    /// The successor exists but is not in view; the row is left unsupervised.
    Unobserved,
}

/// Regression targets for Q predictions plus a 0/1 mask of supervised entries.
#[derive(Clone, Debug, PartialEq)]
pub struct QTargets {
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

/// One-step Q-learning targets for every (position, action) pair. Wrong
/// actions target 0; the gold action targets `1 + γ·max_a q(t+1, a)`, with
/// the bootstrap treated as a constant.
pub fn q_learning_targets(q_pred: &[f64], mdp: &SequenceMdp) -> Result<QTargets> {
    let l = mdp.len();
    let mut cont = vec![Continuation::Next; l];
    cont[l - 1] = Continuation::Terminal;
    td_targets(q_pred, mdp.gold(), &cont, mdp.num_actions(), mdp.gamma())
}

/// General form of [`q_learning_targets`] with an explicit continuation per row.
pub fn td_targets(
    q_pred: &[f64],
    gold: &[usize],
    cont: &[Continuation],
    k: usize,
    gamma: f64,
) -> Result<QTargets> {
    let l = gold.len();
    if q_pred.len() != l * k || cont.len() != l {
        return Err(Error::dim(
            "q_learning_targets",
            &[l, k],
            &[q_pred.len(), cont.len()],
        ));
    }
    if q_pred.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in Q predictions".into()));
    }
    if cont.last() == Some(&Continuation::Next) {
        return Err(Error::Contract(
            "last row cannot bootstrap from a following row".into(),
        ));
    }
    let mut values = vec![0.0; l * k];
    let mut mask = vec![1.0; l * k];
    for t in 0..l {
        let g = gold[t];
        if g >= k {
            return Err(Error::Index {
                what: "action",
                index: g,
                bound: k,
            });
        }
        match cont[t] {
            Continuation::Next => {
                values[t * k + g] = 1.0 + gamma * row_max(&q_pred[(t + 1) * k..(t + 2) * k]);
            }
            Continuation::Terminal => values[t * k + g] = 1.0,
            Continuation::Unobserved => mask[t * k..(t + 1) * k].fill(0.0),
        }
    }
    Ok(QTargets { values, mask })
}

/// Mean squared TD error over supervised entries.
pub fn td_loss(g: &mut Graph, q_pred: Var, targets: &QTargets) -> Result<Var> {
    g.mse(q_pred, &targets.values, &targets.mask)
}
