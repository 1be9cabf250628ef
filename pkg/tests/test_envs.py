"""Tests for the point-maze environments."""

import numpy as np
import pytest

from mazehrl import envs
from mazehrl.envs import (
    EnvState,
    MazeSpec,
    PointMazeEnv,
    Rect,
    embossed,
    load_maze_spec,
    make_maze,
    phi,
    reset_state,
    save_maze_spec,
    step_state,
    success,
    umaze12,
)


def rollout(spec, seed, n_steps, policy=None):
    rng = np.random.default_rng(seed)
    env = PointMazeEnv(spec, rng)
    state = env.reset()
    traj, rewards = [state], []
    for _ in range(n_steps):
        a = policy(state) if policy else rng.uniform(-1, 1, size=2)
        state, reward, done = env.step(a)
        traj.append(state)
        rewards.append(reward)
        if done:
            state = env.reset()
    return traj, rewards


class TestReset:
    def test_embossed_point_start(self):
        state = reset_state(embossed(), np.random.default_rng(0))
        np.testing.assert_allclose(state.position, [-5.25, 0.0])
        np.testing.assert_array_equal(state.velocity, [0.0, 0.0])
        assert state.t == 0

    def test_umaze_eval_goal_top_left(self):
        state = reset_state(umaze12(), np.random.default_rng(0), evaluate=True)
        np.testing.assert_allclose(state.goal, [-4.5, 4.5])

    def test_same_seed_identical(self):
        a = reset_state(umaze12(), np.random.default_rng(5))
        b = reset_state(umaze12(), np.random.default_rng(5))
        assert a.position.tobytes() == b.position.tobytes()
        assert a.goal.tobytes() == b.goal.tobytes()

    def test_training_goal_avoids_walls(self):
        spec = umaze12()
        rng = np.random.default_rng(1)
        for _ in range(200):
            state = reset_state(spec, rng)
            assert not any(w.contains_interior(state.goal) for w in spec.walls)


class TestStep:
    def test_zero_action_from_rest(self):
        spec = embossed()
        state = reset_state(spec, np.random.default_rng(0))
        new, reward, done, clamped = step_state(spec, state, np.zeros(2))
        np.testing.assert_array_equal(new.position, state.position)
        assert reward == -1.0 and not done and not clamped

    def test_sparse_success_reward_zero(self):
        spec = embossed()
        state = EnvState(np.array([5.0, 0.0]), np.zeros(2), 0, np.array([5.25, 0.0]))
        new, reward, done, _ = step_state(spec, state, np.zeros(2))
        assert reward == 0.0 and done

    def test_dense_success_bonus(self):
        spec = embossed(reward_mode="dense")
        state = EnvState(np.array([5.0, 0.0]), np.zeros(2), 0, np.array([5.25, 0.0]))
        new, reward, done, _ = step_state(spec, state, np.zeros(2))
        assert reward == pytest.approx(-0.25 + 200.0) and done

    def test_dense_reward_is_negative_distance(self):
        spec = embossed(reward_mode="dense")
        state = EnvState(np.array([-5.25, 0.0]), np.zeros(2), 0, np.array([5.25, 0.0]))
        _, reward, _, _ = step_state(spec, state, np.zeros(2))
        assert reward == pytest.approx(-10.5)

    def test_action_clamped_and_counted(self):
        spec = embossed()
        env = PointMazeEnv(spec, np.random.default_rng(0))
        env.reset()
        env.step(np.array([5.0, 0.0]))
        assert env.clamp_warnings == 1

    def test_step_limit_terminates(self):
        spec = embossed()
        state = reset_state(spec, np.random.default_rng(0))
        done = False
        for i in range(spec.max_episode_steps):
            state, _, done = (lambda s, r, d, c: (s, r, d))(*step_state(spec, state, np.zeros(2)))
        assert done and state.t == spec.max_episode_steps

    def test_determinism_bit_exact(self):
        spec = umaze12()
        actions = np.random.default_rng(3).uniform(-1, 1, size=(50, 2))

        def run():
            state = reset_state(spec, np.random.default_rng(7))
            out = []
            for a in actions:
                state, reward, done, _ = step_state(spec, state, a)
                out.append((state.position.tobytes(), reward))
            return out

        assert run() == run()


class TestCollision:
    def test_slide_along_wall(self):
        spec = embossed()
        # pressed against the pocket's inner face, pushing right and up: x stays, y moves
        state = EnvState(np.array([1.0, 0.0]), np.zeros(2), 0, np.array([5.25, 0.0]))
        new, _, _, _ = step_state(spec, state, np.array([1.0, 1.0]))
        assert new.position[0] == 1.0
        assert new.position[1] > 0.0
        assert new.velocity[0] == 0.0

    def test_extent_clamp(self):
        spec = embossed()
        state = EnvState(np.array([-5.99, 0.0]), np.array([-1.0, 0.0]), 0, np.array([5.25, 0.0]))
        new, _, _, _ = step_state(spec, state, np.array([-1.0, 0.0]))
        assert new.position[0] == spec.extent.x0
        assert new.velocity[0] == 0.0

    @pytest.mark.parametrize("maze", ["UMaze12", "UMaze24", "EmbossedMaze"])
    def test_no_wall_penetration_random_episodes(self, maze):
        # 10k random-action steps across resets never end inside a wall interior
        spec = make_maze(maze)
        traj, _ = rollout(spec, seed=42, n_steps=10_000)
        for state in traj:
            p = state.position
            assert spec.extent.x0 <= p[0] <= spec.extent.x1
            assert spec.extent.y0 <= p[1] <= spec.extent.y1
            for w in spec.walls:
                assert not w.contains_interior(p)

    def test_fast_crossing_blocked(self):
        spec = embossed()
        # artificial high velocity straight at the pocket's inner bar
        state = EnvState(np.array([0.0, 0.0]), np.array([3.0, 0.0]), 0, np.array([5.25, 0.0]))
        new, _, _, _ = step_state(spec, state, np.array([1.0, 0.0]))
        assert new.position[0] == pytest.approx(1.0)


class TestPhiSuccess:
    def test_phi_projects_position(self):
        state = EnvState(np.array([3.0, 4.0]), np.array([9.0, -9.0]), 0, np.zeros(2))
        np.testing.assert_array_equal(phi(state), [3.0, 4.0])

    def test_phi_ignores_velocity(self):
        a = EnvState(np.array([1.0, 2.0]), np.zeros(2), 0, np.zeros(2))
        b = EnvState(np.array([1.0, 2.0]), np.array([5.0, 5.0]), 0, np.zeros(2))
        np.testing.assert_array_equal(phi(a), phi(b))

    def test_phi_flat_vector_and_jacobian_norm(self):
        # selector Jacobian has one 1 per goal dim -> Frobenius norm sqrt(2)
        sel = np.zeros((2, 4))
        sel[0, 0] = sel[1, 1] = 1.0
        assert np.linalg.norm(sel) == pytest.approx(np.sqrt(2))
        np.testing.assert_array_equal(phi(np.array([1.0, 2.0, 3.0, 4.0])), [1.0, 2.0])

    def test_success_zero_distance(self):
        assert success([1.0, 1.0], [1.0, 1.0], 0.5)

    def test_success_boundary_closed_ball(self):
        assert success([0.0, 0.0], [0.75, 0.0], 0.75)

    def test_success_beyond_radius(self):
        assert not success([0.0, 0.0], [1.0, 0.0], 0.75)


class TestRewardField:
    def test_sparse_rewards_in_set(self):
        _, rewards = rollout(embossed(), seed=9, n_steps=2000)
        assert set(rewards) <= {-1.0, 0.0}

    def test_dense_rewards_track_distance(self):
        spec = embossed(reward_mode="dense")
        traj, rewards = rollout(spec, seed=9, n_steps=500)
        for state, reward in zip(traj[1:], rewards):
            d = np.linalg.norm(state.position - state.goal)
            expected = -d + (200.0 if d <= spec.success_radius else 0.0)
            assert reward == pytest.approx(expected)

    def test_embossed_dense_field_two_local_maxima(self):
        # grid over free space; a cell is a local max if no free 4-neighbor
        # has strictly smaller goal distance
        spec = embossed(reward_mode="dense")
        goal = np.array(spec.eval_goal)
        n = 49
        xs = np.linspace(spec.extent.x0 + 0.12, spec.extent.x1 - 0.12, n)
        ys = np.linspace(spec.extent.y0 + 0.12, spec.extent.y1 - 0.12, n)
        free = np.zeros((n, n), dtype=bool)
        reward = np.full((n, n), -np.inf)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                if not any(w.contains_interior((x, y)) for w in spec.walls):
                    free[i, j] = True
                    reward[i, j] = -np.hypot(x - goal[0], y - goal[1])
        maxima = []
        for i in range(n):
            for j in range(n):
                if not free[i, j]:
                    continue
                best = True
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < n and 0 <= jj < n and free[ii, jj] and reward[ii, jj] > reward[i, j]:
                        best = False
                        break
                if best:
                    maxima.append((xs[i], ys[j]))
        assert len(maxima) == 2
        maxima.sort()
        trap, peak = maxima
        assert trap[0] < 1.0 + 0.3 and abs(trap[1]) < 0.3  # pocket inner face
        assert np.hypot(peak[0] - goal[0], peak[1] - goal[1]) < 0.5


class TestSpecIO:
    def test_roundtrip(self, tmp_path):
        spec = umaze12(reward_mode="dense")
        path = tmp_path / "maze.json"
        save_maze_spec(spec, path)
        loaded = load_maze_spec(path)
        assert loaded == spec

    def test_custom_walls_from_file(self, tmp_path):
        spec = MazeSpec(
            name="custom",
            extent=Rect(-1.0, -1.0, 1.0, 1.0),
            walls=(Rect(-0.5, -0.1, 0.5, 0.1),),
            start=(-0.9, 0.0),
            goal=Rect(-1.0, -1.0, 1.0, 1.0),
            eval_goal=(0.9, 0.0),
            success_radius=0.1,
            max_episode_steps=50,
        )
        path = tmp_path / "m.json"
        save_maze_spec(spec, path)
        assert load_maze_spec(path) == spec

    def test_unknown_maze_name(self):
        with pytest.raises(ValueError):
            make_maze("NoSuchMaze")

    def test_start_inside_wall_rejected(self):
        with pytest.raises(ValueError):
            MazeSpec(
                name="bad",
                extent=Rect(-1, -1, 1, 1),
                walls=(Rect(-0.5, -0.5, 0.5, 0.5),),
                start=(0.0, 0.0),
                goal=(0.9, 0.9),
                eval_goal=(0.9, 0.9),
            )

    def test_trajectory_dump(self, tmp_path):
        path = tmp_path / "traj.csv"
        envs.dump_trajectory(path, [(0, 0.5, -0.25, -1.0, False), (1, 0.75, 0.0, 0.0, True)])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,x,y,reward,done"
        assert lines[1] == "0,0.5,-0.25,-1.0,0"
        assert lines[2] == "1,0.75,0.0,0.0,1"
