//! Growth of a single honest tree.
//!
//! The structure half of the subsample chooses splits; the estimation half is
//! routed down the same splits and populates the leaves. A split is admissible
//! only when both children keep at least `min_node_size` structure and
//! estimation units (per arm for causal trees).

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub(crate) enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { leaf: u32 },
}

/// Estimation units of a leaf with their summary statistics.
#[derive(Debug, Clone, Serialize)]
pub(crate) struct Leaf {
    pub members: Vec<u32>,
    /// Mean target of the members (regression trees).
    pub mean: f64,
    pub n_treated: u32,
    pub n_control: u32,
    pub sum_treated: f64,
    pub sum_control: f64,
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
    pub leaves: Vec<Leaf>,
    /// Local indices defining the splits.
    pub structure: Vec<u32>,
    /// Local indices populating the leaves.
    pub estimation: Vec<u32>,
    #[serde(skip)]
    pub in_sample: Vec<u64>,
}

impl Tree {
    pub fn leaf_of(&self, x: &[f64]) -> &Leaf {
        let mut id = 0usize;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right } => {
                    id = if x[*feature as usize] <= *threshold { *left as usize } else { *right as usize };
                }
                Node::Leaf { leaf } => return &self.leaves[*leaf as usize],
            }
        }
    }

    pub fn contains(&self, local: usize) -> bool {
        self.in_sample[local / 64] >> (local % 64) & 1 == 1
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature as usize),
            Node::Leaf { .. } => None,
        })
    }
}

/// Column-major training table shared by all trees of a forest.
pub(crate) struct TrainingTable<'a> {
    pub columns: &'a [Vec<f64>],
    /// Regression target, or raw outcome for causal trees.
    pub target: &'a [f64],
    /// Causal trees only: arm of each unit.
    pub treated: Option<&'a [bool]>,
    /// Causal trees only: centered outcome residual used for splitting.
    pub residual: &'a [f64],
    /// Causal trees only: inverse-propensity weight of each unit in its arm.
    pub arm_weight: &'a [f64],
}

pub(crate) struct GrowParams {
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub mtry: usize,
}

#[derive(Default, Clone, Copy)]
struct ArmAcc {
    n: [usize; 2],
    w: [f64; 2],
    wr: [f64; 2],
}

impl ArmAcc {
    fn add(&mut self, arm: usize, w: f64, r: f64) {
        self.n[arm] += 1;
        self.w[arm] += w;
        self.wr[arm] += w * r;
    }
    fn sub_from(&self, total: &ArmAcc) -> ArmAcc {
        ArmAcc {
            n: [total.n[0] - self.n[0], total.n[1] - self.n[1]],
            w: [total.w[0] - self.w[0], total.w[1] - self.w[1]],
            wr: [total.wr[0] - self.wr[0], total.wr[1] - self.wr[1]],
        }
    }
    fn effect(&self) -> f64 {
        self.wr[1] / self.w[1] - self.wr[0] / self.w[0]
    }
    fn count(&self) -> usize {
        self.n[0] + self.n[1]
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Scratch {
    s: Vec<(f64, u32)>,
    e: Vec<(f64, u32)>,
}

impl TrainingTable<'_> {
    fn is_causal(&self) -> bool {
        self.treated.is_some()
    }

    fn arm(&self, i: u32) -> usize {
        self.treated.map_or(0, |t| usize::from(t[i as usize]))
    }

    fn make_leaf(&self, members: Vec<u32>) -> Leaf {
        let values: Vec<f64> = members.iter().map(|&i| self.target[i as usize]).collect();
        let mean = crate::stats::shifted_mean(&values);
        let (mut n1, mut n0, mut s1, mut s0) = (0u32, 0u32, 0.0, 0.0);
        if let Some(t) = self.treated {
            for &i in &members {
                if t[i as usize] {
                    n1 += 1;
                    s1 += self.target[i as usize];
                } else {
                    n0 += 1;
                    s0 += self.target[i as usize];
                }
            }
        }
        Leaf { members, mean, n_treated: n1, n_control: n0, sum_treated: s1, sum_control: s0 }
    }

    fn best_split(
        &self,
        features: &[usize],
        s_idx: &[u32],
        e_idx: &[u32],
        min: usize,
        scratch: &mut Scratch,
    ) -> Option<Candidate> {
        let causal = self.is_causal();
        let mut best: Option<Candidate> = None;
        // regression: centre the node so a constant target gives zero gain
        let node_mean = if causal {
            0.0
        } else {
            s_idx.iter().map(|&i| self.target[i as usize]).sum::<f64>() / s_idx.len() as f64
        };
        let mut s_total = ArmAcc::default();
        let mut e_total = [0usize; 2];
        for &i in s_idx {
            let v = if causal { self.residual[i as usize] } else { self.target[i as usize] - node_mean };
            let w = if causal { self.arm_weight[i as usize] } else { 1.0 };
            s_total.add(self.arm(i), w, v);
        }
        for &i in e_idx {
            e_total[self.arm(i)] += 1;
        }
        let total_sum = s_total.wr[0] + s_total.wr[1];
        let n_s = s_idx.len() as f64;

        for &f in features {
            let col = &self.columns[f];
            scratch.s.clear();
            scratch.s.extend(s_idx.iter().map(|&i| (col[i as usize], i)));
            scratch.s.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scratch.e.clear();
            scratch.e.extend(e_idx.iter().map(|&i| (col[i as usize], i)));
            scratch.e.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if scratch.s[0].0 == scratch.s[scratch.s.len() - 1].0 {
                continue;
            }

            let mut left = ArmAcc::default();
            let mut e_left = [0usize; 2];
            let mut ep = 0usize;
            for pos in 0..scratch.s.len() - 1 {
                let (x, i) = scratch.s[pos];
                let v = if causal { self.residual[i as usize] } else { self.target[i as usize] - node_mean };
                let w = if causal { self.arm_weight[i as usize] } else { 1.0 };
                left.add(self.arm(i), w, v);
                let x_next = scratch.s[pos + 1].0;
                if x == x_next {
                    continue;
                }
                let mut threshold = 0.5 * (x + x_next);
                if threshold >= x_next {
                    threshold = x;
                }
                while ep < scratch.e.len() && scratch.e[ep].0 <= threshold {
                    e_left[self.arm(scratch.e[ep].1)] += 1;
                    ep += 1;
                }
                let right = left.sub_from(&s_total);
                let e_right = [e_total[0] - e_left[0], e_total[1] - e_left[1]];
                let gain = if causal {
                    let ok = (0..2).all(|a| {
                        left.n[a] >= min && right.n[a] >= min && e_left[a] >= min && e_right[a] >= min
                    });
                    if !ok {
                        continue;
                    }
                    let d = left.effect() - right.effect();
                    left.count() as f64 * right.count() as f64 * d * d
                } else {
                    let (nl, nr) = (left.count(), right.count());
                    if nr < min {
                        break;
                    }
                    if nl < min || e_left[0] < min || e_right[0] < min {
                        continue;
                    }
                    let sl = left.wr[0];
                    let sr = total_sum - sl;
                    sl * sl / nl as f64 + sr * sr / nr as f64 - total_sum * total_sum / n_s
                };
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate { feature: f, threshold, gain });
                }
            }
        }
        best
    }
}

/// Grows one tree on the given structure and estimation halves.
pub(crate) fn grow(
    table: &TrainingTable<'_>,
    params: &GrowParams,
    structure: Vec<u32>,
    estimation: Vec<u32>,
    n_local: usize,
    rng: &mut impl Rng,
) -> Tree {
    let d = table.columns.len();
    let mut in_sample = vec![0u64; n_local.div_ceil(64)];
    for &i in structure.iter().chain(&estimation) {
        in_sample[i as usize / 64] |= 1 << (i % 64);
    }
    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    let mut scratch = Scratch { s: Vec::new(), e: Vec::new() };
    // (node slot, structure units, estimation units, depth)
    let mut stack = vec![(0usize, structure.clone(), estimation.clone(), 0usize)];
    nodes.push(Node::Leaf { leaf: 0 });
    while let Some((slot, s_idx, e_idx, depth)) = stack.pop() {
        let can_split = params.max_depth.is_none_or(|m| depth < m) && s_idx.len() >= 2 * params.min_node_size;
        let split = if can_split {
            let mut features = sample(rng, d, params.mtry.min(d)).into_vec();
            features.sort_unstable();
            table.best_split(&features, &s_idx, &e_idx, params.min_node_size, &mut scratch)
        } else {
            None
        };
        match split {
            Some(c) => {
                let col = &table.columns[c.feature];
                let (sl, sr): (Vec<u32>, Vec<u32>) = s_idx.iter().partition(|&&i| col[i as usize] <= c.threshold);
                let (el, er): (Vec<u32>, Vec<u32>) = e_idx.iter().partition(|&&i| col[i as usize] <= c.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { leaf: 0 });
                nodes.push(Node::Leaf { leaf: 0 });
                nodes[slot] = Node::Split {
                    feature: c.feature as u32,
                    threshold: c.threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push((left + 1, sr, er, depth + 1));
                stack.push((left, sl, el, depth + 1));
            }
            None => {
                nodes[slot] = Node::Leaf { leaf: leaves.len() as u32 };
                leaves.push(table.make_leaf(e_idx));
            }
        }
    }
    Tree { nodes, leaves, structure, estimation, in_sample }
}
