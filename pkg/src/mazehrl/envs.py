"""Deterministic 2D point-mass maze environments.

Centered world coordinates; walls are axis-aligned rectangles. The point
mass integrates velocity-damped acceleration commands and slides along
walls (per-axis clipping). Step is a pure function of (spec, state,
action), so independent episodes can run in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ACTION_BOUND = 1.0
DAMPING = 0.9
ACCEL_SCALE = 0.03
DENSE_SUCCESS_BONUS = 200.0


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValueError(f"degenerate rect {self}")

    def contains_interior(self, p) -> bool:
        return self.x0 < p[0] < self.x1 and self.y0 < p[1] < self.y1

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class MazeSpec:
    """Static description of a maze task.

    ``start`` and ``goal`` are either a fixed point (len-2 tuple) or a
    Rect region sampled uniformly over its free space. ``eval_goal`` is
    the fixed goal used by evaluation episodes.
    """

    name: str
    extent: Rect
    walls: tuple = ()
    start: object = (0.0, 0.0)
    goal: object = (0.0, 0.0)
    eval_goal: tuple = (0.0, 0.0)
    success_radius: float = 0.75
    reward_mode: str = "sparse"
    max_episode_steps: int = 500

    def __post_init__(self):
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.reward_mode not in ("sparse", "dense"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")
        for p in self._fixed_points():
            for w in self.walls:
                if w.contains_interior(p):
                    raise ValueError(f"point {p} lies inside wall {w}")

    def _fixed_points(self):
        pts = [self.eval_goal]
        if not isinstance(self.start, Rect):
            pts.append(tuple(self.start))
        if not isinstance(self.goal, Rect):
            pts.append(tuple(self.goal))
        return pts

    @property
    def goal_low(self):
        return np.array([self.extent.x0, self.extent.y0])

    @property
    def goal_high(self):
        return np.array([self.extent.x1, self.extent.y1])


@dataclass
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    t: int
    goal: np.ndarray

    def observation(self):
        """Flat state vector (x, y, vx, vy)."""
        return np.concatenate([self.position, self.velocity])


def phi(state) -> np.ndarray:
    """Project a state onto goal space: the position components.

    Accepts an EnvState or a flat (..., 4) state vector. Elementwise
    selection, so the input-Jacobian is a 0/1 selector with Frobenius
    norm sqrt(2) for 2-D goals.
    """
    if isinstance(state, EnvState):
        return state.position.copy()
    arr = np.asarray(state, dtype=np.float64)
    return arr[..., :2].copy()


def success(position, goal, radius) -> bool:
    """Closed-ball success test: ||position - goal||_2 <= radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return bool(np.linalg.norm(np.asarray(position) - np.asarray(goal)) <= radius)


def _in_any_wall(spec, p) -> bool:
    return any(w.contains_interior(p) for w in spec.walls)


def sample_free_point(spec, region, rng, max_tries=1000):
    if not isinstance(region, Rect):
        return np.array(region, dtype=np.float64)
    for _ in range(max_tries):
        p = np.array(
            [rng.uniform(region.x0, region.x1), rng.uniform(region.y0, region.y1)]
        )
        if not _in_any_wall(spec, p):
            return p
    raise RuntimeError("could not sample a free point; region may be walled off")


def reset_state(spec: MazeSpec, rng, evaluate=False) -> EnvState:
    """Fresh episode state: start-sampled position, zero velocity, sampled goal."""
    pos = sample_free_point(spec, spec.start, rng)
    goal = (
        np.array(spec.eval_goal, dtype=np.float64)
        if evaluate
        else sample_free_point(spec, spec.goal, rng)
    )
    return EnvState(position=pos, velocity=np.zeros(2), t=0, goal=goal)


def _resolve_axis(spec, pos, new, axis):
    """Move pos[axis] toward new, clipping at wall faces and the extent."""
    lo_ext = (spec.extent.x0, spec.extent.y0)[axis]
    hi_ext = (spec.extent.x1, spec.extent.y1)[axis]
    other = 1 - axis
    blocked = False
    if new < lo_ext:
        new, blocked = lo_ext, True
    elif new > hi_ext:
        new, blocked = hi_ext, True
    for w in spec.walls:
        lo = (w.x0, w.y0)[axis]
        hi = (w.x1, w.y1)[axis]
        olo = (w.x0, w.y0)[other]
        ohi = (w.x1, w.y1)[other]
        if not (olo < pos[other] < ohi):
            continue
        cur = pos[axis]
        if cur <= lo < new:
            new, blocked = lo, True
        elif cur >= hi > new:
            new, blocked = hi, True
    return new, blocked


def step_state(spec: MazeSpec, state: EnvState, action):
    """Advance one step. Returns (new_state, reward, done, clamped).

    Out-of-bound actions are clamped componentwise; ``clamped`` reports
    whether that happened so callers can count warnings.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (2,):
        raise ValueError(f"action must be a 2-vector, got shape {a.shape}")
    clipped = np.clip(a, -ACTION_BOUND, ACTION_BOUND)
    clamped = bool(np.any(clipped != a))

    vel = DAMPING * state.velocity + ACCEL_SCALE * clipped
    pos = state.position.copy()
    for axis in (0, 1):
        new, blocked = _resolve_axis(spec, pos, pos[axis] + vel[axis], axis)
        pos[axis] = new
        if blocked:
            vel[axis] = 0.0

    t = state.t + 1
    suc = success(pos, state.goal, spec.success_radius)
    if spec.reward_mode == "sparse":
        reward = 0.0 if suc else -1.0
    else:
        reward = -float(np.linalg.norm(pos - state.goal))
        if suc:
            reward += DENSE_SUCCESS_BONUS
    done = suc or t >= spec.max_episode_steps
    return EnvState(position=pos, velocity=vel, t=t, goal=state.goal), reward, done, clamped


class PointMazeEnv:
    """Stateful convenience wrapper around the pure maze dynamics."""

    def __init__(self, spec: MazeSpec, rng):
        self.spec = spec
        self.rng = rng
        self.state = None
        self.clamp_warnings = 0

    def reset(self, evaluate=False) -> EnvState:
        self.state = reset_state(self.spec, self.rng, evaluate=evaluate)
        return self.state

    def step(self, action):
        if self.state is None:
            raise RuntimeError("step() before reset()")
        self.state, reward, done, clamped = step_state(self.spec, self.state, action)
        if clamped:
            self.clamp_warnings += 1
        return self.state, reward, done


# ---- built-in mazes ----


def umaze12(reward_mode="sparse") -> MazeSpec:
    """12x12 U-shaped corridor: start bottom left, eval goal top left.

    Training goals are uniform over free space; the eval goal is fixed.
    """
    extent = Rect(-6.0, -6.0, 6.0, 6.0)
    return MazeSpec(
        name="UMaze12",
        extent=extent,
        walls=(Rect(-6.0, -0.75, 3.0, 0.75),),
        start=(-4.5, -4.5),
        goal=extent,
        eval_goal=(-4.5, 4.5),
        success_radius=0.75,
        reward_mode=reward_mode,
        max_episode_steps=500,
    )


def umaze24(reward_mode="sparse") -> MazeSpec:
    """24x24 variant of the U-shaped corridor."""
    extent = Rect(-12.0, -12.0, 12.0, 12.0)
    return MazeSpec(
        name="UMaze24",
        extent=extent,
        walls=(Rect(-12.0, -1.5, 6.0, 1.5),),
        start=(-9.0, -9.0),
        goal=extent,
        eval_goal=(-9.0, 9.0),
        success_radius=1.5,
        reward_mode=reward_mode,
        max_episode_steps=1000,
    )


def embossed(reward_mode="sparse") -> MazeSpec:
    """12x12 maze with an open-left pocket between start and goal.

    The ball starts at the midpoint of the left side and must reach the
    midpoint of the right side; the pocket wall blocks the direct path,
    so greedy progress ends pressed against the pocket's inner face.
    """
    return MazeSpec(
        name="EmbossedMaze",
        extent=Rect(-6.0, -6.0, 6.0, 6.0),
        walls=(
            Rect(1.0, -2.4, 1.6, 2.4),   # inner face blocking the straight line
            Rect(-2.0, 1.8, 1.6, 2.4),   # top lip
            Rect(-2.0, -2.4, 1.6, -1.8),  # bottom lip
        ),
        start=(-5.25, 0.0),
        goal=(5.25, 0.0),
        eval_goal=(5.25, 0.0),
        success_radius=0.75,
        reward_mode=reward_mode,
        max_episode_steps=500,
    )


MAZE_BUILDERS = {
    "UMaze12": umaze12,
    "UMaze24": umaze24,
    "EmbossedMaze": embossed,
}


def make_maze(name, reward_mode="sparse") -> MazeSpec:
    try:
        return MAZE_BUILDERS[name](reward_mode)
    except KeyError:
        raise ValueError(f"unknown maze {name!r}; choices: {sorted(MAZE_BUILDERS)}") from None


# ---- declarative spec files ----


def _point_or_rect_to_obj(value):
    if isinstance(value, Rect):
        return {"rect": value.as_list()}
    return {"point": list(map(float, value))}


def _point_or_rect_from_obj(obj):
    if "rect" in obj:
        return Rect(*obj["rect"])
    return tuple(obj["point"])


def spec_to_dict(spec: MazeSpec) -> dict:
    return {
        "format": "mazehrl-maze-v1",
        "name": spec.name,
        "extent": spec.extent.as_list(),
        "walls": [w.as_list() for w in spec.walls],
        "start": _point_or_rect_to_obj(spec.start),
        "goal": _point_or_rect_to_obj(spec.goal),
        "eval_goal": list(map(float, spec.eval_goal)),
        "success_radius": spec.success_radius,
        "reward_mode": spec.reward_mode,
        "max_episode_steps": spec.max_episode_steps,
    }


def spec_from_dict(obj: dict) -> MazeSpec:
    if obj.get("format") != "mazehrl-maze-v1":
        raise ValueError("unsupported maze spec format")
    return MazeSpec(
        name=obj["name"],
        extent=Rect(*obj["extent"]),
        walls=tuple(Rect(*w) for w in obj["walls"]),
        start=_point_or_rect_from_obj(obj["start"]),
        goal=_point_or_rect_from_obj(obj["goal"]),
        eval_goal=tuple(obj["eval_goal"]),
        success_radius=obj["success_radius"],
        reward_mode=obj["reward_mode"],
        max_episode_steps=obj["max_episode_steps"],
    )


def save_maze_spec(spec: MazeSpec, path):
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2)


def load_maze_spec(path) -> MazeSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def dump_trajectory(path, rows):
    """Write line-delimited (step, x, y, reward, done) records."""
    with open(path, "w") as fh:
        fh.write("step,x,y,reward,done\n")
        for step, x, y, reward, done in rows:
            fh.write(f"{int(step)},{float(x)!r},{float(y)!r},{float(reward)!r},{int(done)}\n")
