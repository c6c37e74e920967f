"""Grid-world meta-RL benchmark: the task is a hidden goal cell.

The agent starts at a fixed corner; a meta-episode is several episodes in a
row against the same goal, with the agent teleported back to the start at
each episode boundary while the goal persists.  The goal is never part of
the observation: it reaches the agent only through rewards.

The reward at step t depends on the cell occupied when the action is taken:
`goal_reward` while sitting on the goal, `step_reward` otherwise.  A goal at
Manhattan distance d from the start is therefore worth
(episode_len - d) * goal_reward + d * step_reward per episode to a
shortest-path agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridWorldConfig",
    "GridTask",
    "enumerate_tasks",
    "sample_task",
    "GridWorldEnv",
    "VectorGridWorld",
    "meta_return",
    "oracle_meta_return",
    "oracle_action",
    "ACTIONS",
]

# action index -> (dx, dy)
ACTIONS = {
    0: (0, -1),  # up
    1: (0, 1),  # down
    2: (-1, 0),  # left
    3: (1, 0),  # right
    4: (0, 0),  # stay
}
N_ACTIONS = len(ACTIONS)


@dataclass(frozen=True)
class GridWorldConfig:
    width: int = 5
    height: int = 5
    episode_len: int = 15
    episodes_per_meta: int = 4
    step_reward: float = -0.1
    goal_reward: float = 1.0
    observation: str = "coordinates"  # or "one-hot-cell"
    start: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.episode_len < 1 or self.episodes_per_meta < 1:
            raise ValueError("episode_len and episodes_per_meta must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        sx, sy = self.start
        if not (0 <= sx < self.width and 0 <= sy < self.height):
            raise ValueError(f"start cell {self.start} outside the grid")
        if self.observation not in ("coordinates", "one-hot-cell"):
            raise ValueError(f"unknown observation encoding {self.observation!r}")

    @property
    def obs_dim(self) -> int:
        if self.observation == "coordinates":
            return 3  # x, y, within-episode time
        return self.width * self.height + 1

    @property
    def meta_len(self) -> int:
        return self.episode_len * self.episodes_per_meta

    @property
    def n_actions(self) -> int:
        return N_ACTIONS


@dataclass(frozen=True)
class GridTask:
    goal: tuple[int, int]
    task_id: int


def enumerate_tasks(cfg: GridWorldConfig) -> list[GridTask]:
    """All goal cells except the start, in row-major order."""
    tasks = []
    for y in range(cfg.height):
        for x in range(cfg.width):
            if (x, y) == tuple(cfg.start):
                continue
            tasks.append(GridTask(goal=(x, y), task_id=len(tasks)))
    if not tasks:
        raise ValueError("task set is empty: the grid has no non-start cell")
    return tasks


def sample_task(tasks: list[GridTask], rng: np.random.Generator) -> GridTask:
    if not tasks:
        raise ValueError("cannot sample from an empty task set")
    return tasks[int(rng.integers(len(tasks)))]


def _observe(cfg: GridWorldConfig, x: np.ndarray, y: np.ndarray, t_ep: np.ndarray) -> np.ndarray:
    time_feat = t_ep / cfg.episode_len
    if cfg.observation == "coordinates":
        xn = x / max(1, cfg.width - 1)
        yn = y / max(1, cfg.height - 1)
        return np.stack([xn, yn, time_feat], axis=-1)
    cells = np.zeros(x.shape + (cfg.width * cfg.height,), dtype=np.float64)
    idx = (y * cfg.width + x).astype(int)
    np.put_along_axis(cells, np.expand_dims(idx, -1), 1.0, axis=-1)
    return np.concatenate([cells, np.expand_dims(time_feat, -1)], axis=-1)


class GridWorldEnv:
    """Single-instance environment; see VectorGridWorld for the batched one."""

    def __init__(self, cfg: GridWorldConfig):
        self.cfg = cfg
        self.task: GridTask | None = None
        self._x = self._y = 0
        self._t_ep = 0
        self._episode = 0
        self._done = True

    def reset(self, task: GridTask) -> np.ndarray:
        gx, gy = task.goal
        if not (0 <= gx < self.cfg.width and 0 <= gy < self.cfg.height):
            raise ValueError(f"goal {task.goal} outside the grid")
        self.task = task
        self._x, self._y = self.cfg.start
        self._t_ep = 0
        self._episode = 0
        self._done = False
        return self._obs()

    def _obs(self) -> np.ndarray:
        return _observe(
            self.cfg, np.asarray(float(self._x)), np.asarray(float(self._y)), np.asarray(float(self._t_ep))
        )

    def step(self, action: int) -> tuple[np.ndarray, float, bool, bool]:
        """Returns (next obs, reward, episode_done, meta_done)."""
        if self._done:
            raise RuntimeError("step() after the meta-episode ended")
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action}")
        on_goal = (self._x, self._y) == self.task.goal
        reward = self.cfg.goal_reward if on_goal else self.cfg.step_reward
        dx, dy = ACTIONS[action]
        self._x = min(max(self._x + dx, 0), self.cfg.width - 1)
        self._y = min(max(self._y + dy, 0), self.cfg.height - 1)
        self._t_ep += 1
        episode_done = self._t_ep >= self.cfg.episode_len
        if episode_done:
            self._episode += 1
            self._t_ep = 0
            if self._episode >= self.cfg.episodes_per_meta:
                self._done = True
            else:
                self._x, self._y = self.cfg.start
        return self._obs(), reward, episode_done, self._done


class VectorGridWorld:
    """B independent instances stepped in lockstep with numpy arithmetic."""

    def __init__(self, cfg: GridWorldConfig, batch: int):
        self.cfg = cfg
        self.batch = batch
        self.goals = np.zeros((batch, 2), dtype=np.int64)
        self.pos = np.zeros((batch, 2), dtype=np.int64)
        self.t_ep = np.zeros(batch, dtype=np.int64)
        self.episode = np.zeros(batch, dtype=np.int64)

    def reset(self, tasks: list[GridTask]) -> np.ndarray:
        if len(tasks) != self.batch:
            raise ValueError(f"need {self.batch} tasks, got {len(tasks)}")
        self.goals = np.asarray([t.goal for t in tasks], dtype=np.int64)
        self.pos[:] = np.asarray(self.cfg.start, dtype=np.int64)
        self.t_ep[:] = 0
        self.episode[:] = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        return _observe(
            self.cfg,
            self.pos[:, 0].astype(np.float64),
            self.pos[:, 1].astype(np.float64),
            self.t_ep.astype(np.float64),
        )

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        on_goal = np.all(self.pos == self.goals, axis=1)
        rewards = np.where(on_goal, self.cfg.goal_reward, self.cfg.step_reward)
        moves = np.asarray([ACTIONS[int(a)] for a in actions], dtype=np.int64)
        self.pos = self.pos + moves
        self.pos[:, 0] = np.clip(self.pos[:, 0], 0, self.cfg.width - 1)
        self.pos[:, 1] = np.clip(self.pos[:, 1], 0, self.cfg.height - 1)
        self.t_ep += 1
        episode_done = self.t_ep >= self.cfg.episode_len
        self.episode += episode_done
        self.t_ep[episode_done] = 0
        meta_done = self.episode >= self.cfg.episodes_per_meta
        restart = episode_done & ~meta_done
        self.pos[restart] = np.asarray(self.cfg.start, dtype=np.int64)
        return self._obs(), rewards.astype(np.float64), episode_done, meta_done


def meta_return(rewards, gamma: float, expected_len: int | None = None) -> float:
    """Discounted return with t indexed across the whole meta-episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if expected_len is not None and rewards.shape[0] != expected_len:
        raise ValueError(f"incomplete meta-episode: {rewards.shape[0]} of {expected_len} steps")
    discounts = gamma ** np.arange(rewards.shape[0])
    return float(np.sum(discounts * rewards))


def _manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def oracle_meta_return(task: GridTask, cfg: GridWorldConfig) -> float:
    """Undiscounted meta-return of a goal-aware shortest-path-then-stay agent."""
    d = _manhattan(tuple(cfg.start), task.goal)
    if d > cfg.episode_len:
        per_episode = cfg.episode_len * cfg.step_reward
    else:
        per_episode = (cfg.episode_len - d) * cfg.goal_reward + d * cfg.step_reward
    return cfg.episodes_per_meta * per_episode


def oracle_action(pos: tuple[int, int], goal: tuple[int, int]) -> int:
    """Shortest-path move (x first, then y), staying once on the goal."""
    x, y = pos
    gx, gy = goal
    if x < gx:
        return 3
    if x > gx:
        return 2
    if y < gy:
        return 1
    if y > gy:
        return 0
    return 4


def mean_oracle_meta_return(tasks: list[GridTask], cfg: GridWorldConfig) -> float:
    return float(np.mean([oracle_meta_return(t, cfg) for t in tasks]))
