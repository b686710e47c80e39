//! Monte Carlo tree search over conceptual expansions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{apply_expansion, ActionDistribution, ConceptualExpansion, ExpandedLayer, ExpansionAction, FitnessEvaluator};
use crate::codec::MelodySequence;
use crate::scalar::Scalar;
use crate::vae::{reconstruction_accuracy, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub iterations: usize,
    pub rollouts_per_iteration: usize,
    /// Random actions applied after each expansion.
    pub rollout_depth: usize,
    /// Probability of expanding a random untried action instead of the greedy one.
    pub epsilon: f64,
    pub ucb_exploration: f64,
    /// Proposals per node.
    pub branching_limit: usize,
    pub actions: ActionDistribution,
    pub top_k: usize,
    pub layers: Vec<ExpandedLayer>,
    /// Check tree invariants after every simulation (panics on violation).
    pub check_invariants: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 10,
            rollouts_per_iteration: 10,
            rollout_depth: 5,
            epsilon: 0.5,
            ucb_exploration: 1.414,
            branching_limit: 8,
            actions: ActionDistribution::default(),
            top_k: 3,
            layers: ExpandedLayer::DEFAULT.to_vec(),
            check_invariants: cfg!(debug_assertions),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.iterations == 0 || self.rollouts_per_iteration == 0 || self.branching_limit == 0 || self.top_k == 0 {
            return Err(ModelError::InvalidConfig("search counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ModelError::InvalidConfig(format!("epsilon {}", self.epsilon)));
        }
        if !(self.ucb_exploration >= 0.0 && self.ucb_exploration.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("ucb_exploration {}", self.ucb_exploration)));
        }
        if self.layers.is_empty() {
            return Err(ModelError::InvalidConfig("no expanded layers".into()));
        }
        self.actions.validate()
    }

    pub fn simulations(&self) -> usize {
        self.iterations * self.rollouts_per_iteration
    }

    /// Scored states: the root plus, per simulation, the new child and its rollout.
    pub fn scored_states(&self) -> usize {
        1 + self.simulations() * (1 + self.rollout_depth)
    }

    /// Upper bound on distinct models built, counting greedy look-ahead.
    pub fn max_model_evaluations(&self) -> usize {
        1 + self.simulations() * (self.branching_limit + self.rollout_depth)
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    parent: Option<usize>,
    action: Option<ExpansionAction>,
    state: ConceptualExpansion<T>,
    children: Vec<usize>,
    /// `None` until first proposed.
    untried: Option<Vec<ExpansionAction>>,
    fitness: f64,
    visits: u64,
    value_sum: f64,
    best: f64,
}

impl<T> Node<T> {
    fn mean(&self) -> f64 {
        self.value_sum / self.visits as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub simulation: usize,
    pub iteration: usize,
    /// Child positions from the root down to the new node.
    pub path: Vec<usize>,
    pub action: ExpansionAction,
    pub greedy: bool,
    pub node_fitness: f64,
    pub rollout_fitness: Vec<f64>,
    pub value: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchStats {
    pub simulations: usize,
    /// Scored states: root, expanded nodes and rollout states.
    pub fitness_calls: usize,
    /// Proposal-pool scorings made by greedy expansion.
    pub lookahead_calls: usize,
    /// Distinct models actually built (memo misses).
    pub model_evaluations: usize,
    pub tree_nodes: usize,
    pub root_fitness: f64,
    pub root_visits: u64,
    /// Best fitness after each iteration.
    pub checkpoints: Vec<f64>,
    pub invariant_checks: usize,
}

#[derive(Debug, Clone)]
pub struct ScoredExpansion<T> {
    pub expansion: ConceptualExpansion<T>,
    pub fitness: f64,
    pub hash: [u8; 32],
}

#[derive(Debug, Clone)]
pub struct SearchResult<T> {
    /// Best distinct states, highest fitness first.
    pub top: Vec<ScoredExpansion<T>>,
    pub trace: Vec<TraceRecord>,
    pub stats: SearchStats,
}

impl<T> SearchResult<T> {
    /// Line-delimited JSON, one record per simulation.
    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
    }
}

/// Keeps the `k` best distinct states; earlier entries win ties.
struct TopK<T> {
    k: usize,
    items: Vec<ScoredExpansion<T>>,
}

impl<T: Scalar> TopK<T> {
    fn offer(&mut self, ce: &ConceptualExpansion<T>, fitness: f64) {
        let hash = ce.state_hash();
        if self.items.iter().any(|s| s.hash == hash) {
            return;
        }
        let pos = self.items.iter().position(|s| fitness > s.fitness).unwrap_or(self.items.len());
        if pos < self.k {
            self.items.insert(pos, ScoredExpansion { expansion: ce.clone(), fitness, hash });
            self.items.truncate(self.k);
        }
    }
}

struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    fn path_to(&self, mut id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        while let Some(p) = self.nodes[id].parent {
            path.push(self.nodes[p].children.iter().position(|&c| c == id).expect("linked"));
            id = p;
        }
        path.reverse();
        path
    }

    fn select_child(&self, id: usize, c: f64) -> usize {
        let node = &self.nodes[id];
        let ln_n = (node.visits as f64).ln();
        let mut best = (f64::NEG_INFINITY, node.children[0]);
        for &ch in &node.children {
            let n = &self.nodes[ch];
            let score = n.mean() + c * (ln_n / n.visits as f64).sqrt();
            if score > best.0 {
                best = (score, ch);
            }
        }
        best.1
    }

    /// Visit counts equal child visits plus own simulations (one for every
    /// non-root node); best fitness dominates every child's.
    fn check_invariants(&self) -> Result<(), String> {
        for (id, n) in self.nodes.iter().enumerate() {
            let own = u64::from(n.parent.is_some());
            let child_visits: u64 = n.children.iter().map(|&c| self.nodes[c].visits).sum();
            if n.visits != child_visits + own {
                return Err(format!("node {id}: visits {} != {} + {own}", n.visits, child_visits));
            }
            for &c in &n.children {
                if self.nodes[c].best > n.best {
                    return Err(format!("node {id}: best {} below child {c} best {}", n.best, self.nodes[c].best));
                }
                if self.nodes[c].parent != Some(id) {
                    return Err(format!("node {c}: parent link broken"));
                }
            }
            if n.best < n.fitness {
                return Err(format!("node {id}: best below own fitness"));
            }
        }
        Ok(())
    }
}

/// Searches expansions of `pretrained` scored by training-split accuracy.
///
/// Each simulation descends by UCB1 through fully expanded nodes, expands
/// one untried proposal (random with probability `epsilon`, otherwise the
/// best one-step fitness in the pool), scores a random rollout of
/// `rollout_depth` further actions, and backs up the maximum fitness seen.
/// Every scored state competes for the returned top-k; the root is scored
/// first, so the identity is returned when nothing beats it.
pub fn mcts_search<T: Scalar>(
    pretrained: &ModelParams<T>,
    train_split: &[MelodySequence],
    cfg: &SearchConfig,
) -> Result<SearchResult<T>, ModelError> {
    if train_split.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    cfg.validate()?;
    let mut eval = FitnessEvaluator::new(pretrained, train_split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let root_state = ConceptualExpansion::identity(&pretrained.dims, &cfg.layers)?;
    let root_fitness = eval.evaluate(&root_state)?;
    let mut top = TopK { k: cfg.top_k, items: Vec::new() };
    top.offer(&root_state, root_fitness);
    let mut tree = Tree {
        nodes: vec![Node {
            parent: None,
            action: None,
            state: root_state,
            children: Vec::new(),
            untried: None,
            fitness: root_fitness,
            visits: 0,
            value_sum: 0.0,
            best: root_fitness,
        }],
    };
    let mut stats = SearchStats {
        simulations: 0,
        fitness_calls: 1,
        lookahead_calls: 0,
        model_evaluations: 0,
        tree_nodes: 1,
        root_fitness,
        root_visits: 0,
        checkpoints: Vec::new(),
        invariant_checks: 0,
    };
    let mut trace = Vec::new();

    for iteration in 0..cfg.iterations {
        for _ in 0..cfg.rollouts_per_iteration {
            // selection
            let mut id = 0;
            loop {
                if tree.nodes[id].untried.is_none() {
                    let pool = super::propose_actions(&tree.nodes[id].state, &cfg.actions, &mut rng, cfg.branching_limit);
                    tree.nodes[id].untried = Some(pool);
                }
                if !tree.nodes[id].untried.as_ref().expect("set above").is_empty() {
                    break;
                }
                id = tree.select_child(id, cfg.ucb_exploration);
            }

            // expansion
            let greedy = rng.random::<f64>() >= cfg.epsilon;
            let pool = tree.nodes[id].untried.clone().expect("set above");
            let pick = if greedy {
                let mut best = (f64::NEG_INFINITY, 0);
                for (i, a) in pool.iter().enumerate() {
                    let mut s = tree.nodes[id].state.clone();
                    s.apply_action(*a)?;
                    let f = eval.evaluate(&s)?;
                    stats.lookahead_calls += 1;
                    if f > best.0 {
                        best = (f, i);
                    }
                }
                best.1
            } else {
                rng.random_range(0..pool.len())
            };
            let action = tree.nodes[id].untried.as_mut().expect("set above").remove(pick);
            let mut state = tree.nodes[id].state.clone();
            state.apply_action(action)?;
            let node_fitness = eval.evaluate(&state)?;
            top.offer(&state, node_fitness);

            // rollout
            let mut roll = state.clone();
            let mut rollout_fitness = Vec::with_capacity(cfg.rollout_depth);
            for _ in 0..cfg.rollout_depth {
                let a = cfg.actions.sample(&roll, &mut rng);
                roll.apply_action(a)?;
                let f = eval.evaluate(&roll)?;
                top.offer(&roll, f);
                rollout_fitness.push(f);
            }
            let value = rollout_fitness.iter().copied().fold(node_fitness, f64::max);
            stats.fitness_calls += 1 + cfg.rollout_depth;

            let child = tree.nodes.len();
            tree.nodes.push(Node {
                parent: Some(id),
                action: Some(action),
                state,
                children: Vec::new(),
                untried: None,
                fitness: node_fitness,
                visits: 0,
                value_sum: 0.0,
                best: node_fitness,
            });
            tree.nodes[id].children.push(child);

            // backpropagation
            let mut cur = Some(child);
            while let Some(n) = cur {
                let node = &mut tree.nodes[n];
                node.visits += 1;
                node.value_sum += value;
                node.best = node.best.max(value);
                cur = node.parent;
            }

            stats.simulations += 1;
            if cfg.check_invariants {
                if let Err(msg) = tree.check_invariants() {
                    panic!("search tree invariant violated after simulation {}: {msg}", stats.simulations);
                }
                stats.invariant_checks += 1;
            }
            trace.push(TraceRecord {
                simulation: stats.simulations - 1,
                iteration,
                path: tree.path_to(child),
                action,
                greedy,
                node_fitness,
                rollout_fitness,
                value,
                best_so_far: top.items[0].fitness,
            });
        }
        stats.checkpoints.push(top.items[0].fitness);
    }
    stats.model_evaluations = eval.model_evaluations();
    stats.tree_nodes = tree.nodes.len();
    stats.root_visits = tree.nodes[0].visits;
    debug_assert!(tree.nodes.iter().skip(1).all(|n| n.action.is_some()));
    Ok(SearchResult { top: top.items, trace, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub mean: f64,
    pub accuracies: Vec<f64>,
}

/// Accuracy of every selected expansion on `test_split` and their mean.
pub fn evaluate_selected<T: Scalar>(
    expansions: &[ConceptualExpansion<T>],
    pretrained: &ModelParams<T>,
    test_split: &[MelodySequence],
) -> Result<SelectionReport, ModelError> {
    if expansions.is_empty() {
        return Err(ModelError::InvalidConfig("no expansions to evaluate".into()));
    }
    let accuracies = expansions
        .iter()
        .map(|ce| reconstruction_accuracy(&apply_expansion(pretrained, ce)?, test_split))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(SelectionReport { mean, accuracies })
}
