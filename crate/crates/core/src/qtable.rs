//! Tabular action values shared by the trajectory and caching controllers.

use std::collections::BTreeMap;

use rand::Rng;

/// Sparse Q-table over states `S` and a fixed, ordered action set of size
/// `n_actions`. Unseen pairs read as 0; rows are created only on update.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<S: Ord> {
    n_actions: usize,
    rows: BTreeMap<S, Vec<f64>>,
}

impl<S: Ord + Clone> QTable<S> {
    pub fn new(n_actions: usize) -> Self {
        assert!(n_actions > 0, "Q-table needs at least one action");
        Self {
            n_actions,
            rows: BTreeMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of states with a stored row.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, state: &S, action: usize) -> f64 {
        self.rows.get(state).map_or(0.0, |r| r[action])
    }

    pub fn set(&mut self, state: &S, action: usize, value: f64) {
        let n = self.n_actions;
        self.rows.entry(state.clone()).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn row(&self, state: &S) -> Option<&[f64]> {
        self.rows.get(state).map(Vec::as_slice)
    }

    pub fn max_value(&self, state: &S) -> f64 {
        self.row(state)
            .map_or(0.0, |r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn argmax(&self, state: &S) -> usize {
        let Some(row) = self.row(state) else { return 0 };
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, &[f64])> {
        self.rows.iter().map(|(s, r)| (s, r.as_slice()))
    }
}

/// ε-greedy choice: with probability ε a uniform action, otherwise the
/// greedy action. Always consumes one uniform draw for the coin.
pub fn select_action<S: Ord + Clone, R: Rng + ?Sized>(q: &QTable<S>, state: &S, epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.n_actions())
    } else {
        q.argmax(state)
    }
}

/// One temporal-difference step
/// `Q(s,a) ← Q(s,a) + α·(r + γ·max_a' Q(s',a') − Q(s,a))`.
pub fn update_q<S: Ord + Clone>(q: &mut QTable<S>, state: &S, action: usize, reward: f64, next: &S, alpha: f64, gamma: f64) {
    debug_assert!(reward.is_finite());
    if alpha == 0.0 {
        return;
    }
    let old = q.get(state, action);
    let target = reward + gamma * q.max_value(next);
    q.set(state, action, old + alpha * (target - old));
}

/// Global action value as the unit-weight sum of local agent values.
pub fn global_q<S: Ord + Clone>(locals: &[(&QTable<S>, &S, usize)]) -> f64 {
    locals.iter().map(|(q, s, a)| q.get(s, *a)).sum()
}
