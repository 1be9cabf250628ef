"""Landmark selection, memory-graph construction, and subgoal planning.

Coverage landmarks come from farthest-point sampling over the (possibly
high-return-weighted) state pool; novelty landmarks from RND scores over
a recent-state window. Graph edges carry negated low-level Q-values as
distance estimates; planning returns the first hop of the shortest path
toward the goal. Graph construction is a pure function of its inputs and
built graphs are read-only.
"""

from __future__ import annotations

import heapq

import numpy as np

from .nets import Adam, Mlp

DEDUP_DECIMALS = 9  # landmark duplicate tolerance 1e-9


def dedup_points(points, aux=None):
    """Drop duplicate rows (1e-9 tolerance), keeping first occurrences in order."""
    points = np.asarray(points, dtype=np.float64)
    seen = {}
    keep = []
    for i, p in enumerate(points):
        key = tuple(np.round(p, DEDUP_DECIMALS))
        if key not in seen:
            seen[key] = i
            keep.append(i)
    keep = np.array(keep, dtype=int)
    if aux is None:
        return points[keep]
    return points[keep], np.asarray(aux)[keep]


def fps(pool, m, rng, first_index=None):
    """Greedy farthest-point sampling under Euclidean distance.

    The first point is drawn randomly from the pool (or fixed via
    ``first_index``); each subsequent point maximizes the minimum
    distance to the chosen set, ties broken by lowest index. The pool is
    deduplicated first; asking for more points than remain returns the
    whole deduplicated pool.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise ValueError("pool must be a nonempty (n, d) array")
    unique = dedup_points(pool)
    n = unique.shape[0]
    if m >= n:
        return unique.copy()
    start = int(rng.integers(0, n)) if first_index is None else int(first_index)
    chosen = [start]
    dists = np.linalg.norm(unique - unique[start], axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dists))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        dists = np.minimum(dists, np.linalg.norm(unique - unique[nxt], axis=1))
    return unique[chosen]


class NoveltyScorer:
    """Random-network-distillation novelty: prediction error against a frozen net."""

    def __init__(self, state_dim, rng, hidden=(64, 64), out_dim=16, lr=3e-4):
        self.target = Mlp([state_dim, *hidden, out_dim], rng=rng)
        # give the frozen target nontrivial output structure
        self.target.weights[-1] = rng.normal(0.0, 0.5, size=self.target.weights[-1].shape)
        self.predictor = Mlp([state_dim, *hidden, out_dim], rng=rng)
        self.opt = Adam(self.predictor.params, lr=lr)
        self._count = 0
        self._mean = 0.0
        self._m2 = 0.0

    def scores(self, states):
        """Nonnegative novelty per state: mean squared predictor-target error."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        diff = self.predictor.forward(states) - self.target.forward(states)
        return np.mean(diff * diff, axis=1)

    def normalized_scores(self, states):
        std = np.sqrt(self._m2 / self._count) if self._count > 1 else 1.0
        return self.scores(states) / (std + 1e-8)

    def train(self, states):
        """One predictor step toward the frozen target; returns the batch loss."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        cache = self.predictor.forward_cache(states)
        pred = self.predictor.output(cache)
        diff = pred - self.target.forward(states)
        loss = float(np.mean(diff * diff))
        n = states.shape[0]
        grads = self.predictor.grad_params_cached(cache, 2.0 * diff / diff.size)
        self.opt.step(self.predictor.params, grads)
        per_state = np.mean(diff * diff, axis=1)
        for v in per_state:
            self._count += 1
            delta = v - self._mean
            self._mean += delta / self._count
            self._m2 += delta * (v - self._mean)
        return loss

    def state_dict(self):
        return {
            "target": self.target.state_dict(),
            "predictor": self.predictor.state_dict(),
            "opt": self.opt.state_dict(),
            "stats": [self._count, self._mean, self._m2],
        }

    def load_state_dict(self, state):
        self.target = Mlp.from_state_dict(state["target"])
        self.predictor = Mlp.from_state_dict(state["predictor"])
        self.opt = Adam.from_state_dict(state["opt"], self.predictor.params)
        self._count, self._mean, self._m2 = state["stats"]
        self._count = int(self._count)


def select_novel(candidate_states, scorer, m):
    """Top-m candidates by novelty score; ties favor more recent candidates.

    Candidates are ordered oldest first; returns the selected states
    (all of them when fewer than m).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    candidates = np.atleast_2d(np.asarray(candidate_states, dtype=np.float64))
    n = candidates.shape[0]
    if n <= m:
        return candidates.copy()
    scores = scorer.scores(candidates)
    order = sorted(range(n), key=lambda i: (-scores[i], -i))
    return candidates[np.array(order[:m])]


# ---- graph construction and planning ----


class LandmarkSet:
    """Coverage and novelty landmarks with their backing full states."""

    def __init__(self, coverage_states, novelty_states, goal_map):
        cov = np.asarray(coverage_states, dtype=np.float64)
        nov = np.asarray(novelty_states, dtype=np.float64)
        self.goal_map = goal_map
        parts = [np.atleast_2d(a) for a in (cov, nov) if a.size]
        if parts:
            all_states = np.concatenate(parts, axis=0)
            n_cov = np.atleast_2d(cov).shape[0] if cov.size else 0
            tags = ["coverage"] * n_cov + ["novelty"] * (len(all_states) - n_cov)
            pts = goal_map(all_states)
            self.points, kept_aux = dedup_points(pts, np.arange(len(pts)))
            self.states = all_states[kept_aux]
            self.tags = [tags[i] for i in kept_aux]
        else:
            self.points = np.zeros((0, 2))
            self.states = np.zeros((0, 0))
            self.tags = []

    def __len__(self):
        return len(self.points)


def edge_weights(critic, actor, src_states, dst_points, goal_map, eta):
    """UVFA distance estimates for (source state, target point) pairs.

    w = -min(Q1, Q2)(s_i, dst - eta * phi(s_i), pi_low(...)), clamped
    below at zero. Non-finite estimates come back as +inf (edge rejected).
    """
    src_states = np.atleast_2d(src_states)
    dst_points = np.atleast_2d(dst_points)
    rel = dst_points - eta * goal_map(src_states)
    obs = np.concatenate([src_states, rel], axis=1)
    act = actor.forward(obs)
    q = critic.min_q(np.concatenate([obs, act], axis=1))
    w = np.maximum(-q, 0.0)
    w[~np.isfinite(w)] = np.inf
    return w


class LandmarkGraph:
    """Weighted digraph over landmark points plus the current state and goal.

    Node 0 is the current state, nodes 1..L are landmarks, node L+1 is
    the goal. ``w_cut`` holds cutoff-filtered weights (inf = no edge);
    ``w_raw`` keeps unfiltered estimates for the unreachable-goal fallback.
    """

    def __init__(self, points, w_cut, w_raw, cutoff):
        self.points = points
        self.w_cut = w_cut
        self.w_raw = w_raw
        self.cutoff = cutoff

    @property
    def n_nodes(self):
        return len(self.points)

    def export_edges(self, path):
        with open(path, "w") as fh:
            fh.write("src,dst,weight\n")
            n = self.n_nodes
            for i in range(n):
                for j in range(n):
                    if i != j and np.isfinite(self.w_cut[i, j]):
                        fh.write(f"{i},{j},{float(self.w_cut[i, j])!r}\n")


def build_graph(state, goal_point, landmarks: LandmarkSet, critic, actor, goal_map, eta, cutoff):
    """Assemble the planning graph for one high-level decision."""
    state = np.asarray(state, dtype=np.float64)
    points = [goal_map(state[None, :])[0]]
    src_states = [state]
    for p, s in zip(landmarks.points, landmarks.states):
        points.append(p)
        src_states.append(s)
    points.append(np.asarray(goal_point, dtype=np.float64))
    points = np.asarray(points)
    n = len(points)
    w_raw = np.full((n, n), np.inf)
    if n > 1:
        n_src = n - 1  # goal node has no outgoing edges
        src = np.repeat(np.arange(n_src), n)
        dst = np.tile(np.arange(n), n_src)
        keep = src != dst
        src, dst = src[keep], dst[keep]
        w = edge_weights(
            critic, actor, np.stack([src_states[i] for i in src]), points[dst], goal_map, eta
        )
        w_raw[src, dst] = w
    w_cut = np.where(w_raw <= cutoff, w_raw, np.inf)
    return LandmarkGraph(points, w_cut, w_raw, cutoff)


def dijkstra_first_hop(weights, points, src, dst):
    """Shortest path under nonnegative weights; returns (first_hop, dist).

    Tie-breaks are by lexicographic node coordinates so the result is
    invariant to node ordering; returns (None, inf) when dst is
    unreachable.
    """
    n = weights.shape[0]
    keys = [tuple(p) for p in points]
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    dist[src] = 0.0
    heap = [(0.0, keys[src], src)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, _, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dst:
            break
        for v in range(n):
            w = weights[u, v]
            if not np.isfinite(w) or done[v]:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, keys[v], v))
    if not np.isfinite(dist[dst]):
        return None, np.inf
    node = dst
    while pred[node] != src:
        node = pred[node]
        if node == -1:
            return None, np.inf
    return int(node), float(dist[dst])


def plan_subgoal(graph: LandmarkGraph):
    """First waypoint toward the goal.

    Runs the shortest-path search from the current state (node 0) to the
    goal (last node) and returns the first landmark on that path (the
    goal point itself if the direct edge wins). If the goal is
    unreachable under the cutoff, falls back to the landmark minimizing
    the raw two-hop estimate w(s, L) + w(L, g); with no finite option the
    goal point is returned.
    """
    dst = graph.n_nodes - 1
    if graph.n_nodes <= 2:
        return graph.points[dst].copy()
    hop, _ = dijkstra_first_hop(graph.w_cut, graph.points, 0, dst)
    if hop is not None:
        return graph.points[hop].copy()
    two_hop = graph.w_raw[0, 1:dst] + graph.w_raw[1:dst, dst]
    if two_hop.size and np.any(np.isfinite(two_hop)):
        best = np.min(two_hop)
        cand = np.nonzero(two_hop == best)[0] + 1
        # deterministic tie-break on coordinates
        order = sorted(cand, key=lambda i: tuple(graph.points[i]))
        return graph.points[order[0]].copy()
    return graph.points[dst].copy()


def pseudo_landmark(sg_plan, phi_state, delta):
    """Shift the planned waypoint distance ``delta`` away from the agent.

    Returns (point, degenerate) where degenerate flags sg_plan == phi(s),
    in which case the waypoint is returned unchanged.
    """
    sg_plan = np.asarray(sg_plan, dtype=np.float64)
    phi_state = np.asarray(phi_state, dtype=np.float64)
    ray = sg_plan - phi_state
    norm = float(np.linalg.norm(ray))
    if norm == 0.0:
        return sg_plan.copy(), True
    return sg_plan + delta * ray / norm, False


def export_landmarks_csv(path, landmarks: LandmarkSet):
    with open(path, "w") as fh:
        fh.write("x,y,type\n")
        for p, tag in zip(landmarks.points, landmarks.tags):
            fh.write(f"{float(p[0])!r},{float(p[1])!r},{tag}\n")
