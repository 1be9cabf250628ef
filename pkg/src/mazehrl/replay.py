"""Hierarchical experience storage and high-return trajectory weighting.

The low-level buffer keeps whole trajectories (FIFO eviction of complete
episodes) so episodic returns, task normalization, expected-return
regression, and Boltzmann transition weights can be recomputed at every
landmark-sampling event. Uniform and top-k baseline samplers share the
same storage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

SAMPLER_CHOICES = ("hr", "uniform", "topk", "hr+uniform", "hr+topk")


@dataclass
class Transition:
    """One low-level environment step with hierarchical annotations."""

    s: np.ndarray
    sg: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    sg_next: np.ndarray
    done: bool
    traj_id: int = -1
    t: int = -1


@dataclass
class TrajectoryRecord:
    """Per-episode bookkeeping feeding the weighting pipeline."""

    traj_id: int
    length: int
    ret: float
    start: np.ndarray
    goal: np.ndarray
    norm_ret: float = 0.0
    expected_ret: float = 0.0
    weight: float = 0.0


class StoredTrajectory:
    __slots__ = ("traj_id", "s", "sg", "a", "r", "s_next", "sg_next", "done", "goal")

    def __init__(self, traj_id, s, sg, a, r, s_next, sg_next, done, goal):
        self.traj_id = traj_id
        self.s = s
        self.sg = sg
        self.a = a
        self.r = r
        self.s_next = s_next
        self.sg_next = sg_next
        self.done = done
        self.goal = goal

    def __len__(self):
        return self.s.shape[0]


def episodic_return(rewards) -> float:
    """Undiscounted sum of rewards over one trajectory."""
    return float(np.sum(rewards))


class TrajectoryBuffer:
    """FIFO low-level replay with whole-trajectory eviction."""

    def __init__(self, capacity=200_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.trajectories: list[StoredTrajectory] = []
        self.records: list[TrajectoryRecord] = []
        self._next_id = 0
        self._n_transitions = 0
        self._cumlen = None  # rebuilt lazily for global indexing

    def __len__(self):
        return self._n_transitions

    @property
    def n_trajectories(self):
        return len(self.trajectories)

    def store_episode(self, transitions, goal) -> int:
        """Append one completed episode; evicts oldest episodes past capacity."""
        if not transitions:
            raise ValueError("empty episode")
        for i, tr in enumerate(transitions):
            if tr.t != i:
                raise ValueError(f"non-consecutive step index {tr.t} at position {i}")
            if tr.done and i != len(transitions) - 1:
                raise ValueError("done before the final transition")
        traj_id = self._next_id
        self._next_id += 1
        stored = StoredTrajectory(
            traj_id,
            np.stack([tr.s for tr in transitions]).astype(np.float64),
            np.stack([tr.sg for tr in transitions]).astype(np.float64),
            np.stack([tr.a for tr in transitions]).astype(np.float64),
            np.array([tr.r for tr in transitions], dtype=np.float64),
            np.stack([tr.s_next for tr in transitions]).astype(np.float64),
            np.stack([tr.sg_next for tr in transitions]).astype(np.float64),
            np.array([tr.done for tr in transitions], dtype=np.float64),
            np.asarray(goal, dtype=np.float64).copy(),
        )
        self.trajectories.append(stored)
        self.records.append(
            TrajectoryRecord(
                traj_id=traj_id,
                length=len(stored),
                ret=episodic_return(stored.r),
                start=stored.s[0].copy(),
                goal=stored.goal,
            )
        )
        self._n_transitions += len(stored)
        while self._n_transitions > self.capacity and len(self.trajectories) > 1:
            gone = self.trajectories.pop(0)
            self.records.pop(0)
            self._n_transitions -= len(gone)
        self._cumlen = None
        return traj_id

    def _cumulative(self):
        if self._cumlen is None:
            self._cumlen = np.cumsum([len(t) for t in self.trajectories])
        return self._cumlen

    def locate(self, flat_index):
        cum = self._cumulative()
        ti = int(np.searchsorted(cum, flat_index, side="right"))
        prev = 0 if ti == 0 else int(cum[ti - 1])
        return ti, flat_index - prev

    def sample_batch(self, n, rng):
        """Uniform transition minibatch as column arrays (for TD learning)."""
        if self._n_transitions == 0:
            raise ValueError("empty buffer")
        idx = rng.integers(0, self._n_transitions, size=n)
        return self.gather(idx)

    def gather(self, flat_indices):
        cols = {k: [] for k in ("s", "sg", "a", "r", "s_next", "sg_next", "done")}
        for fi in flat_indices:
            ti, si = self.locate(int(fi))
            tr = self.trajectories[ti]
            cols["s"].append(tr.s[si])
            cols["sg"].append(tr.sg[si])
            cols["a"].append(tr.a[si])
            cols["r"].append(tr.r[si])
            cols["s_next"].append(tr.s_next[si])
            cols["sg_next"].append(tr.sg_next[si])
            cols["done"].append(tr.done[si])
        return {k: np.asarray(v, dtype=np.float64) for k, v in cols.items()}

    def recent_states(self, window):
        """Last ``window`` stored states, newest last."""
        chunks = []
        need = window
        for tr in reversed(self.trajectories):
            take = min(need, len(tr))
            chunks.append(tr.s[len(tr) - take :])
            need -= take
            if need == 0:
                break
        if not chunks:
            return np.zeros((0, 0))
        return np.concatenate(chunks[::-1], axis=0)

    # ---- line-delimited export/import ----

    def export_lines(self, path):
        with open(path, "w") as fh:
            for tr in self.trajectories:
                for i in range(len(tr)):
                    fh.write(
                        json.dumps(
                            {
                                "traj": tr.traj_id,
                                "t": i,
                                "s": tr.s[i].tolist(),
                                "sg": tr.sg[i].tolist(),
                                "a": tr.a[i].tolist(),
                                "r": tr.r[i],
                                "s_next": tr.s_next[i].tolist(),
                                "sg_next": tr.sg_next[i].tolist(),
                                "done": bool(tr.done[i]),
                                "goal": tr.goal.tolist(),
                            }
                        )
                        + "\n"
                    )

    @classmethod
    def import_lines(cls, path, capacity=200_000):
        buf = cls(capacity)
        groups = {}
        goals = {}
        order = []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                tid = rec["traj"]
                if tid not in groups:
                    groups[tid] = []
                    order.append(tid)
                    goals[tid] = rec["goal"]
                groups[tid].append(rec)
        for tid in order:
            rows = sorted(groups[tid], key=lambda r: r["t"])
            transitions = [
                Transition(
                    s=np.array(r["s"]),
                    sg=np.array(r["sg"]),
                    a=np.array(r["a"]),
                    r=r["r"],
                    s_next=np.array(r["s_next"]),
                    sg_next=np.array(r["sg_next"]),
                    done=r["done"],
                    t=r["t"],
                )
                for r in rows
            ]
            buf.store_episode(transitions, goals[tid])
        return buf


# ---- task normalization and expected-return regression ----


def task_key(start_goal_pos, goal, cell_size):
    """Quantized (start position, goal) grid cell pair identifying a task."""
    q = lambda v: tuple(int(math.floor(x / cell_size)) for x in np.asarray(v, dtype=float))
    return q(start_goal_pos), q(goal)


def normalize_returns(records, cell_size, goal_dims=2):
    """Per-task max-min normalization of episodic returns.

    Returns the normalized array and writes record.norm_ret. Tasks are
    groups of quantized (start position, goal) cell pairs; a degenerate
    group (max == min) maps to 0.5.
    """
    groups = {}
    for i, rec in enumerate(records):
        key = task_key(rec.start[:goal_dims], rec.goal, cell_size)
        groups.setdefault(key, []).append(i)
    out = np.empty(len(records))
    for idx in groups.values():
        rets = np.array([records[i].ret for i in idx])
        lo, hi = rets.min(), rets.max()
        if hi - lo <= 0:
            vals = np.full(len(idx), 0.5)
        else:
            vals = (rets - lo) / (hi - lo)
        for i, v in zip(idx, vals):
            out[i] = v
            records[i].norm_ret = float(v)
    return out


class ReturnRegressor:
    """Expected-return model over start-goal features.

    Linear least squares on the top-6 features ranked by absolute
    correlation with the target; falls back to the global mean below
    ``min_samples`` or when the design is uninformative. Rank-deficient
    solves are ridge-regularized.
    """

    def __init__(self, max_features=6, min_samples=20, ridge=1e-8):
        self.max_features = max_features
        self.min_samples = min_samples
        self.ridge = ridge
        self.mean_ = 0.0
        self.feature_idx_ = None
        self.coef_ = None
        self.intercept_ = 0.0

    def get_params(self):
        return {
            "max_features": self.max_features,
            "min_samples": self.min_samples,
            "ridge": self.ridge,
        }

    @property
    def is_fallback(self):
        return self.coef_ is None

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if len(y) < 1:
            raise ValueError("need at least one sample")
        self.mean_ = float(y.mean())
        self.feature_idx_ = None
        self.coef_ = None
        distinct = np.unique(X, axis=0).shape[0]
        if len(y) < self.min_samples or distinct < 2 or y.std() == 0:
            return self
        std = X.std(axis=0)
        informative = np.nonzero(std > 0)[0]
        if informative.size == 0:
            return self
        xc = X[:, informative] - X[:, informative].mean(axis=0)
        yc = y - y.mean()
        corr = np.abs(xc.T @ yc) / (std[informative] * y.std() * len(y))
        order = np.argsort(-corr, kind="stable")[: self.max_features]
        idx = informative[order]
        A = np.column_stack([X[:, idx], np.ones(len(y))])
        rank = np.linalg.matrix_rank(A)
        if rank < A.shape[1]:
            gram = A.T @ A + self.ridge * np.eye(A.shape[1])
            sol = np.linalg.solve(gram, A.T @ y)
        else:
            sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        self.feature_idx_ = idx
        self.coef_ = sol[:-1]
        self.intercept_ = float(sol[-1])
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.coef_ is None:
            return np.full(X.shape[0], self.mean_)
        return X[:, self.feature_idx_] @ self.coef_ + self.intercept_


def fit_expected_return(pairs, returns, **kwargs) -> ReturnRegressor:
    """Fit the expected-return regressor on (start, goal) feature rows."""
    return ReturnRegressor(**kwargs).fit(pairs, returns)


# ---- Boltzmann transition weights ----


def hr_weights(corrected_returns, lengths, alpha):
    """Per-trajectory transition weights from debias-corrected returns.

    w_i = exp(A_i / alpha) / sum_j T_j exp(A_j / alpha), computed with a
    max-shift for numerical stability (the weights are invariant under
    constant shifts of A). Every transition of trajectory i carries
    weight w_i, so sum_i T_i w_i = 1.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = np.asarray(corrected_returns, dtype=np.float64)
    T = np.asarray(lengths, dtype=np.float64)
    if A.shape != T.shape or A.ndim != 1 or A.size == 0:
        raise ValueError("corrected_returns and lengths must be equal-length 1-D")
    e = np.exp((A - A.max()) / alpha)
    return e / float(np.dot(T, e))


def compute_weights(buffer, alpha, cell_size, normalize=True, regressor_kwargs=None):
    """Full weighting pipeline over the buffer's trajectory records.

    Normalizes returns per task, fits the expected-return regressor,
    subtracts the prediction, and Boltzmann-weights the residuals.
    Updates each record in place and returns the per-trajectory weights.
    """
    records = buffer.records
    if not records:
        raise ValueError("empty buffer")
    if normalize:
        base = normalize_returns(records, cell_size)
    else:
        base = np.array([rec.ret for rec in records])
        for rec, v in zip(records, base):
            rec.norm_ret = float(v)
    feats = np.stack([np.concatenate([rec.start, rec.goal]) for rec in records])
    reg = ReturnRegressor(**(regressor_kwargs or {})).fit(feats, base)
    expected = reg.predict(feats)
    lengths = np.array([rec.length for rec in records], dtype=np.float64)
    weights = hr_weights(base - expected, lengths, alpha)
    for rec, e, w in zip(records, expected, weights):
        rec.expected_ret = float(e)
        rec.weight = float(w)
    return weights


def weight_entropy(weights, lengths):
    """Entropy of the per-transition distribution (each transition has prob w_i)."""
    w = np.asarray(weights, dtype=np.float64)
    T = np.asarray(lengths, dtype=np.float64)
    mask = w > 0
    return float(-np.sum(T[mask] * w[mask] * np.log(w[mask])))


# ---- samplers ----


def weighted_indices(probs, n, rng):
    """n i.i.d. draws from a normalized probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    total = p.sum()
    if total <= 0:
        raise ValueError("all-zero weights")
    return rng.choice(p.size, size=n, p=p / total)


def weighted_sample(buffer, traj_weights, n, rng):
    """n states drawn i.i.d. from the transition distribution.

    traj_weights are per-trajectory transition weights (from hr_weights);
    a trajectory is chosen with probability T_i * w_i, then a step within
    it uniformly.
    """
    lengths = np.array([len(t) for t in buffer.trajectories], dtype=np.float64)
    ti = weighted_indices(lengths * np.asarray(traj_weights), n, rng)
    out = []
    for t in ti:
        tr = buffer.trajectories[int(t)]
        out.append(tr.s[int(rng.integers(0, len(tr)))])
    return np.asarray(out)


def topk_filter(records, fraction):
    """Records with the ceil(k*N) highest episodic returns; ties favor newer."""
    if not records:
        raise ValueError("empty buffer")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    m = math.ceil(fraction * len(records))
    ranked = sorted(records, key=lambda rec: (-rec.ret, -rec.traj_id))
    return ranked[:m]


def sample_pool(buffer, sampler, pool_size, rng, alpha=0.1, cell_size=0.75,
                topk_fraction=0.1, normalize=True):
    """Draw the landmark candidate pool of states under the chosen sampler."""
    if len(buffer) == 0:
        raise ValueError("empty buffer")
    if sampler not in SAMPLER_CHOICES:
        raise ValueError(f"unknown sampler {sampler!r}; choices: {SAMPLER_CHOICES}")

    def uniform_states(n):
        idx = rng.integers(0, len(buffer), size=n)
        return np.stack([buffer.trajectories[ti].s[si] for ti, si in (buffer.locate(int(i)) for i in idx)])

    def hr_states(n):
        w = compute_weights(buffer, alpha, cell_size, normalize=normalize)
        return weighted_sample(buffer, w, n, rng)

    def topk_states(n):
        kept = topk_filter(buffer.records, topk_fraction)
        ids = {rec.traj_id for rec in kept}
        trajs = [t for t in buffer.trajectories if t.traj_id in ids]
        lengths = np.array([len(t) for t in trajs], dtype=np.float64)
        ti = weighted_indices(lengths, n, rng)
        return np.stack([trajs[int(t)].s[int(rng.integers(0, len(trajs[int(t)])))] for t in ti])

    if sampler == "uniform":
        return uniform_states(pool_size)
    if sampler == "hr":
        return hr_states(pool_size)
    if sampler == "topk":
        return topk_states(pool_size)
    n_hr = int(rng.binomial(pool_size, 0.5))
    other = uniform_states if sampler == "hr+uniform" else topk_states
    parts = []
    if n_hr:
        parts.append(hr_states(n_hr))
    if pool_size - n_hr:
        parts.append(other(pool_size - n_hr))
    return np.concatenate(parts, axis=0)
