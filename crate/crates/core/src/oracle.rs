//! Classical depth-first search and the supervised trajectories derived
//! from it.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DfsResult {
    pub pi: Vec<usize>,
    pub d: Vec<usize>,
    pub f: Vec<usize>,
}

/// Recursive DFS: vertices scanned in index order by the main loop and in
/// adjacency order by each visit. Roots are their own predecessor.
pub fn run_dfs(g: &Graph) -> DfsResult {
    let n = g.n();
    let mut res = DfsResult {
        pi: (0..n).collect(),
        d: vec![0; n],
        f: vec![0; n],
    };
    let mut color = vec![Color::White; n];
    let mut time = 0;
    fn visit(
        g: &Graph,
        u: usize,
        color: &mut [Color],
        time: &mut usize,
        res: &mut DfsResult,
    ) {
        *time += 1;
        res.d[u] = *time;
        color[u] = Color::Gray;
        for v in g.neighbors(u) {
            if color[v] == Color::White {
                res.pi[v] = u;
                visit(g, v, color, time, res);
            }
        }
        color[u] = Color::Black;
        *time += 1;
        res.f[u] = *time;
    }
    for u in 0..n {
        if color[u] == Color::White {
            visit(g, u, &mut color, &mut time, &mut res);
        }
    }
    res
}

/// Deepest nesting of visit calls, counting a root visit as depth 1.
pub fn max_recursion_depth(g: &Graph) -> usize {
    fn visit(g: &Graph, u: usize, seen: &mut [bool], depth: usize) -> usize {
        seen[u] = true;
        let mut best = depth;
        for v in g.neighbors(u) {
            if !seen[v] {
                best = best.max(visit(g, v, seen, depth + 1));
            }
        }
        best
    }
    let mut seen = vec![false; g.n()];
    let mut best = 0;
    for u in 0..g.n() {
        if !seen[u] {
            best = best.max(visit(g, u, &mut seen, 1));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    White = 0,
    Gray = 1,
    Black = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StackOp {
    Push = 0,
    Pop = 1,
    Noop = 2,
}

impl StackOp {
    pub fn from_index(k: usize) -> StackOp {
        match k {
            0 => StackOp::Push,
            1 => StackOp::Pop,
            _ => StackOp::Noop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Discover,
    Examine,
    Finish,
}

/// State after one algorithm event, in the graph-hint scheme.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSnapshot {
    pub kind: EventKind,
    pub u: usize,
    pub u_pi: usize,
    pub u_d: usize,
    pub u_f: Option<usize>,
    pub u_v: Option<usize>,
    pub color: Vec<Color>,
    pub time: usize,
    pub stack_op: StackOp,
}

/// State after one algorithm event, in the per-node scheme.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineSnapshot {
    pub pi_h: Vec<usize>,
    pub color: Vec<Color>,
    /// Discovery times, 0 while unset.
    pub d: Vec<usize>,
    /// Finish times, 0 while unset.
    pub f: Vec<usize>,
    /// Root of the current search tree.
    pub s: Option<usize>,
    pub u: Option<usize>,
    pub v: Option<usize>,
    /// Node of the previous event.
    pub s_prev: Option<usize>,
    /// Most recently finished node.
    pub s_last: Option<usize>,
    pub time: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Recursive,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub scheme: Scheme,
    pub pi: Vec<usize>,
    /// Graph-hint snapshots; always present, they define the event schedule.
    pub steps: Vec<StepSnapshot>,
    /// Per-node snapshots, aligned with `steps`; empty for the recursive scheme.
    pub baseline: Vec<BaselineSnapshot>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Stack depth after each step when the labelled stack ops are executed.
    pub fn depth_profile(&self) -> Vec<usize> {
        let mut q = 0usize;
        self.steps
            .iter()
            .map(|s| {
                match s.stack_op {
                    StackOp::Push => q += 1,
                    StackOp::Pop => q = q.saturating_sub(1),
                    StackOp::Noop => {}
                }
                q
            })
            .collect()
    }
}

/// Iterative event generator with an explicit frame stack, kept separate
/// from the recursive `run_dfs` so the two can cross-check each other.
fn events(g: &Graph) -> Vec<StepSnapshot> {
    let n = g.n();
    let mut out = Vec::with_capacity(2 * n + g.edge_count());
    let mut color = vec![Color::White; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut d = vec![0; n];
    let mut time = 0;
    // (node, next adjacency index to scan)
    let mut frames: Vec<(usize, usize)> = Vec::new();
    let adj: Vec<Vec<usize>> = (0..n).map(|u| g.neighbors(u).collect()).collect();

    let discover = |u: usize,
                    color: &mut Vec<Color>,
                    d: &mut Vec<usize>,
                    time: &mut usize,
                    parent: &[usize],
                    out: &mut Vec<StepSnapshot>| {
        *time += 1;
        d[u] = *time;
        color[u] = Color::Gray;
        out.push(StepSnapshot {
            kind: EventKind::Discover,
            u,
            u_pi: parent[u],
            u_d: *time,
            u_f: None,
            u_v: None,
            color: color.clone(),
            time: *time,
            stack_op: StackOp::Push,
        });
    };

    for root in 0..n {
        if color[root] != Color::White {
            continue;
        }
        discover(root, &mut color, &mut d, &mut time, &parent, &mut out);
        frames.push((root, 0));
        while let Some(&(u, k)) = frames.last() {
            if k < adj[u].len() {
                let v = adj[u][k];
                frames.last_mut().unwrap().1 += 1;
                out.push(StepSnapshot {
                    kind: EventKind::Examine,
                    u,
                    u_pi: parent[u],
                    u_d: d[u],
                    u_f: None,
                    u_v: Some(v),
                    color: color.clone(),
                    time,
                    stack_op: StackOp::Noop,
                });
                if color[v] == Color::White {
                    parent[v] = u;
                    discover(v, &mut color, &mut d, &mut time, &parent, &mut out);
                    frames.push((v, 0));
                }
            } else {
                frames.pop();
                color[u] = Color::Black;
                time += 1;
                out.push(StepSnapshot {
                    kind: EventKind::Finish,
                    u,
                    u_pi: parent[u],
                    u_d: d[u],
                    u_f: Some(time),
                    u_v: None,
                    color: color.clone(),
                    time,
                    stack_op: StackOp::Pop,
                });
            }
        }
    }
    out
}

pub fn sample_trajectory_recursive(g: &Graph) -> Trajectory {
    let steps = events(g);
    let mut pi: Vec<usize> = (0..g.n()).collect();
    for s in &steps {
        pi[s.u] = s.u_pi;
    }
    Trajectory {
        n: g.n(),
        scheme: Scheme::Recursive,
        pi,
        steps,
        baseline: Vec::new(),
    }
}

pub fn sample_trajectory_baseline(g: &Graph) -> Trajectory {
    let mut traj = sample_trajectory_recursive(g);
    let n = g.n();
    let mut state = BaselineSnapshot {
        pi_h: (0..n).collect(),
        color: vec![Color::White; n],
        d: vec![0; n],
        f: vec![0; n],
        s: None,
        u: None,
        v: None,
        s_prev: None,
        s_last: None,
        time: 0,
    };
    let mut prev_u = None;
    for step in &traj.steps {
        state.color = step.color.clone();
        state.time = step.time;
        state.s_prev = prev_u;
        state.u = Some(step.u);
        state.v = step.u_v;
        match step.kind {
            EventKind::Discover => {
                state.pi_h[step.u] = step.u_pi;
                state.d[step.u] = step.u_d;
                if step.u_pi == step.u {
                    state.s = Some(step.u);
                }
            }
            EventKind::Examine => {}
            EventKind::Finish => {
                state.f[step.u] = step.u_f.unwrap_or(0);
                state.s_last = Some(step.u);
            }
        }
        prev_u = Some(step.u);
        traj.baseline.push(state.clone());
    }
    traj.scheme = Scheme::Baseline;
    traj
}

pub fn sample_trajectory(g: &Graph, scheme: Scheme) -> Trajectory {
    match scheme {
        Scheme::Recursive => sample_trajectory_recursive(g),
        Scheme::Baseline => sample_trajectory_baseline(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use StackOp::*;

    fn g(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges).unwrap()
    }

    #[test]
    fn run_dfs_hand_traces() {
        let r = run_dfs(&g(1, &[]));
        assert_eq!((r.pi, r.d, r.f), (vec![0], vec![1], vec![2]));
        let r = run_dfs(&g(2, &[(0, 1)]));
        assert_eq!((r.pi, r.d, r.f), (vec![0, 0], vec![1, 2], vec![4, 3]));
        let r = run_dfs(&g(3, &[(0, 1), (1, 2)]));
        assert_eq!(
            (r.pi, r.d, r.f),
            (vec![0, 0, 1], vec![1, 2, 3], vec![6, 5, 4])
        );
    }

    #[test]
    fn recursive_trajectory_hand_traces() {
        let t = sample_trajectory_recursive(&g(1, &[]));
        let ops: Vec<_> = t.steps.iter().map(|s| s.stack_op).collect();
        assert_eq!(ops, [Push, Pop]);

        let t = sample_trajectory_recursive(&g(2, &[(0, 1)]));
        let ops: Vec<_> = t.steps.iter().map(|s| s.stack_op).collect();
        let us: Vec<_> = t.steps.iter().map(|s| s.u).collect();
        assert_eq!(ops, [Push, Noop, Push, Pop, Pop]);
        assert_eq!(us, [0, 0, 1, 1, 0]);
        assert_eq!(t.steps[1].u_v, Some(1));
        assert_eq!(t.steps[3].u_f, Some(3));
        assert_eq!(t.steps[4].u_f, Some(4));
        assert_eq!(t.steps.last().unwrap().time, 4);
    }

    #[test]
    fn examine_of_visited_neighbor_does_not_recurse() {
        // 0 -> 1, 1 -> 0: the back edge is examined but not followed
        let t = sample_trajectory_recursive(&g(2, &[(0, 1), (1, 0)]));
        let ops: Vec<_> = t.steps.iter().map(|s| s.stack_op).collect();
        assert_eq!(ops, [Push, Noop, Push, Noop, Pop, Pop]);
        assert_eq!(t.pi, vec![0, 0]);
    }

    #[test]
    fn baseline_hand_traces() {
        let t = sample_trajectory_baseline(&g(1, &[]));
        assert_eq!(t.baseline.len(), 2);
        assert!(t.baseline.iter().all(|b| b.pi_h == vec![0]));

        let t = sample_trajectory_baseline(&g(2, &[(0, 1)]));
        assert_eq!(t.baseline[2].pi_h, vec![0, 0]);
        assert_eq!(t.baseline[2].s, Some(0));
        assert_eq!(t.baseline[3].s_last, Some(1));
        assert_eq!(t.baseline[3].s_prev, Some(1));
        assert_eq!(t.baseline[4].f, vec![4, 3]);
    }

    #[test]
    fn depth_profile_of_chain() {
        let gr = g(3, &[(0, 1), (1, 2)]);
        let t = sample_trajectory_recursive(&gr);
        assert_eq!(t.depth_profile().into_iter().max(), Some(3));
        assert_eq!(max_recursion_depth(&gr), 3);
        assert_eq!(t.depth_profile().last(), Some(&0));
    }
}
