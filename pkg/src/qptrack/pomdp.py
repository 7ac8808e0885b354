"""Finite POMDP models, exact Bayesian belief updates and a root-level lookahead planner."""

from __future__ import annotations

import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-10
EVIDENCE_TOL = 1e-12

TIGER_LISTEN_ACCURACY = 0.85
CORRIDOR_HEAR_LEFT = (0.85, 0.70, 0.30, 0.15)


class ImpossibleObservation(ValueError):
    """Observation has (numerically) zero probability under the current belief."""


@dataclass(frozen=True)
class PomdpModel:
    """Tuple (S, A, T, Omega, O, R, gamma).

    ``T[a, s, s']`` is the transition probability, ``O[a, s', o]`` the
    observation probability and ``R[s, a]`` the immediate reward.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    T: np.ndarray
    O: np.ndarray
    R: np.ndarray
    gamma: float = 0.95
    resets: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        S, A, Om = len(self.states), len(self.actions), len(self.observations)
        T = np.asarray(self.T, dtype=float)
        O = np.asarray(self.O, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if T.shape != (A, S, S):
            raise ValueError(f"T must have shape {(A, S, S)}, got {T.shape}")
        if O.shape != (A, S, Om):
            raise ValueError(f"O must have shape {(A, S, Om)}, got {O.shape}")
        if R.shape != (S, A):
            raise ValueError(f"R must have shape {(S, A)}, got {R.shape}")
        for name, M in (("T", T), ("O", O)):
            if (M < 0).any() or not np.allclose(M.sum(axis=-1), 1.0, atol=STOCHASTIC_TOL, rtol=0):
                raise ValueError(f"rows of {name} must be non-negative and sum to 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        for arr in (T, O, R):
            arr.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "O", O)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "resets", frozenset(int(a) for a in self.resets))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    def action_index(self, a: int | str) -> int:
        return self.actions.index(a) if isinstance(a, str) else int(a)

    def obs_index(self, o: int | str) -> int:
        return self.observations.index(o) if isinstance(o, str) else int(o)

    def uniform_belief(self) -> np.ndarray:
        return np.full(self.n_states, 1.0 / self.n_states)

    def with_rewards(self, R) -> PomdpModel:
        return PomdpModel(self.states, self.actions, self.observations, self.T, self.O, R,
                          self.gamma, self.resets)


def check_belief(b, n_states: int | None = None) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if n_states is not None and b.shape != (n_states,):
        raise ValueError(f"belief must have length {n_states}")
    if (b < 0).any() or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("belief must be a probability vector")
    return b


# Built-in models -------------------------------------------------------------------


def tiger2(accuracy: float = TIGER_LISTEN_ACCURACY, gamma: float = 0.95) -> PomdpModel:
    """Classic two-door Tiger. Actions: listen, open-left, open-right."""
    listen_T = np.eye(2)
    reset_T = np.full((2, 2), 0.5)
    listen_O = np.array([[accuracy, 1 - accuracy], [1 - accuracy, accuracy]])
    flat_O = np.full((2, 2), 0.5)
    R = np.array([[-1.0, -100.0, 10.0],
                  [-1.0, 10.0, -100.0]])
    return PomdpModel(
        ("tiger-left", "tiger-right"),
        ("listen", "open-left", "open-right"),
        ("hear-left", "hear-right"),
        np.stack([listen_T, reset_T, reset_T]),
        np.stack([listen_O, flat_O, flat_O]),
        R, gamma, frozenset({1, 2}),
    )


def tiger4(hear_left=CORRIDOR_HEAR_LEFT, gamma: float = 0.95) -> PomdpModel:
    """Four-state corridor Tiger (far-left, near-left, near-right, far-right)."""
    hl = np.asarray(hear_left, dtype=float)
    listen_O = np.column_stack([hl, 1 - hl])
    flat_O = np.full((4, 2), 0.5)
    reset_T = np.full((4, 4), 0.25)
    left_half = np.array([True, True, False, False])
    open_left = np.where(left_half, -100.0, 10.0)
    open_right = np.where(left_half, 10.0, -100.0)
    R = np.column_stack([np.full(4, -1.0), open_left, open_right])
    return PomdpModel(
        ("far-left", "near-left", "near-right", "far-right"),
        ("listen", "open-left", "open-right"),
        ("hear-left", "hear-right"),
        np.stack([np.eye(4), reset_T, reset_T]),
        np.stack([listen_O, flat_O, flat_O]),
        R, gamma, frozenset({1, 2}),
    )


def grid(width: int, height: int, move_success: float = 0.9, sensor_accuracy: float = 0.7,
         gamma: float = 0.95) -> PomdpModel:
    """Grid navigation with a noisy cell sensor.

    Actions stay/up/down/left/right; a move succeeds with ``move_success``
    and otherwise leaves the agent in place (walls also block). The sensor
    reports the true cell with ``sensor_accuracy`` and any other cell
    uniformly otherwise. Reward is -1 per step and +10 in the far corner.
    """
    S = width * height
    moves = {"stay": (0, 0), "up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}
    T = np.zeros((len(moves), S, S))
    for a, (dx, dy) in enumerate(moves.values()):
        for s in range(S):
            x, y = s % width, s // width
            nx, ny = x + dx, y + dy
            if (dx, dy) == (0, 0) or not (0 <= nx < width and 0 <= ny < height):
                T[a, s, s] = 1.0
            else:
                T[a, s, ny * width + nx] += move_success
                T[a, s, s] += 1 - move_success
    off = (1 - sensor_accuracy) / (S - 1) if S > 1 else 0.0
    O1 = np.full((S, S), off)
    np.fill_diagonal(O1, sensor_accuracy if S > 1 else 1.0)
    O = np.repeat(O1[None], len(moves), axis=0)
    R = np.full((S, len(moves)), -1.0)
    R[S - 1, :] = 10.0
    return PomdpModel(
        tuple(f"cell-{x}-{y}" for y in range(height) for x in range(width)),
        tuple(moves), tuple(f"see-{s}" for s in range(S)), T, O, R, gamma,
    )


# Model files -----------------------------------------------------------------------


def model_to_dict(model: PomdpModel) -> dict:
    return {
        "states": list(model.states),
        "actions": list(model.actions),
        "observations": list(model.observations),
        "gamma": model.gamma,
        "resets": sorted(model.actions[a] for a in model.resets),
        "T": {a: model.T[i].tolist() for i, a in enumerate(model.actions)},
        "O": {a: model.O[i].tolist() for i, a in enumerate(model.actions)},
        "R": model.R.tolist(),
    }


def model_from_dict(d: dict) -> PomdpModel:
    actions = tuple(d["actions"])
    return PomdpModel(
        tuple(d["states"]), actions, tuple(d["observations"]),
        np.array([d["T"][a] for a in actions], dtype=float),
        np.array([d["O"][a] for a in actions], dtype=float),
        np.array(d["R"], dtype=float),
        float(d.get("gamma", 0.95)),
        frozenset(actions.index(a) for a in d.get("resets", [])),
    )


def save_model(model: PomdpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2))


def load_model(path) -> PomdpModel:
    """Load a model from JSON: names, row-major ``T``/``O`` tables keyed by action, ``R[s][a]``."""
    return model_from_dict(json.loads(Path(path).read_text()))


BUILTIN_MODELS = {"tiger2": tiger2, "tiger4": tiger4}


# Belief update -----------------------------------------------------------------------


def predicted_state(model: PomdpModel, b, a) -> np.ndarray:
    a = model.action_index(a)
    return np.asarray(b, dtype=float) @ model.T[a]


def evidence_probability(model: PomdpModel, b, a, o) -> float:
    """P(o | b, a) = sum_s' O(o|s',a) sum_s T(s'|s,a) b(s)."""
    a, o = model.action_index(a), model.obs_index(o)
    return float(model.O[a, :, o] @ predicted_state(model, b, a))


def belief_update(model: PomdpModel, b, a, o) -> tuple[np.ndarray, float]:
    """Exact Bayes update. Returns ``(posterior, evidence)``."""
    a, o = model.action_index(a), model.obs_index(o)
    b = check_belief(b, model.n_states)
    joint = model.O[a, :, o] * predicted_state(model, b, a)
    evidence = float(joint.sum())
    if evidence < EVIDENCE_TOL:
        raise ImpossibleObservation(
            f"observation {model.observations[o]!r} has probability {evidence:.3g}"
        )
    return joint / evidence, evidence


def hellinger(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must have equal length")
    d = np.sqrt(np.clip(p, 0, None)) - np.sqrt(np.clip(q, 0, None))
    return float(min(1.0, np.sqrt(0.5 * np.dot(d, d))))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must have equal length")
    support = p > 0
    if (q[support] <= 0).any():
        raise ValueError("q must be positive wherever p is positive")
    return float(max(0.0, np.sum(p[support] * np.log(p[support] / q[support]))))


# Planning -----------------------------------------------------------------------


UpdateProvider = Callable[[PomdpModel, np.ndarray, int, int], tuple[np.ndarray, float]]


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 1
    rollouts_per_leaf: int = 64
    seed: int = 42

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rollouts_per_leaf < 1:
            raise ValueError("rollouts_per_leaf must be >= 1")


def rollout_value(model: PomdpModel, b, depth: int, n_rollouts: int,
                  rng: np.random.Generator) -> float:
    """Mean discounted return of uniform-random-action rollouts from ``b``."""
    if depth <= 0:
        return 0.0
    S, A = model.n_states, model.n_actions
    states = rng.choice(S, size=n_rollouts, p=np.asarray(b) / np.sum(b))
    total = np.zeros(n_rollouts)
    disc = 1.0
    for _ in range(depth):
        acts = rng.integers(0, A, size=n_rollouts)
        total += disc * model.R[states, acts]
        cdf = np.cumsum(model.T[acts, states], axis=1)
        u = rng.random(n_rollouts)[:, None]
        states = np.minimum((cdf < u * cdf[:, -1:]).sum(axis=1), S - 1)
        disc *= model.gamma
    return float(total.mean())


def q_values(model: PomdpModel, b0, cfg: PlannerConfig,
             root_update: UpdateProvider | None = None) -> np.ndarray:
    """Root Q-values R(b,a) + gamma * sum_o P(o|b,a) V(B(b,a,o))."""
    update = root_update or belief_update
    b0 = check_belief(b0, model.n_states)
    q = np.empty(model.n_actions)
    for a in range(model.n_actions):
        q[a] = float(b0 @ model.R[:, a])
        if cfg.horizon == 1:
            continue
        future = 0.0
        for o in range(model.n_obs):
            p_o = evidence_probability(model, b0, a, o)
            if p_o < EVIDENCE_TOL:
                continue
            post, _ = update(model, b0, a, o)
            rng = np.random.default_rng([cfg.seed, a, o])
            future += p_o * rollout_value(model, post, cfg.horizon - 1, cfg.rollouts_per_leaf, rng)
        q[a] += model.gamma * future
    return q


def qbrl_plan(model: PomdpModel, b0, cfg: PlannerConfig | None = None,
              root_update: UpdateProvider | None = None) -> int:
    """Greedy root action; ties go to the lowest action index."""
    return int(np.argmax(q_values(model, b0, cfg or PlannerConfig(), root_update)))


@dataclass
class StepRecord:
    t: int
    prior: np.ndarray
    action: int
    obs: int
    posterior: np.ndarray
    evidence: float
    exact_posterior: np.ndarray
    hellinger: float


def run_closed_loop(model: PomdpModel, obs_sequence: Sequence[int],
                    cfg: PlannerConfig | None = None,
                    provider: UpdateProvider | None = None) -> list[StepRecord]:
    """Plan, act and update for each observation in turn.

    Reset actions (door openings) hand the next step a uniform prior.
    """
    cfg = cfg or PlannerConfig()
    update = provider or belief_update
    b = model.uniform_belief()
    trace = []
    for t, o in enumerate(obs_sequence):
        o = model.obs_index(o)
        if not 0 <= o < model.n_obs:
            raise ValueError(f"invalid observation {o}")
        a = qbrl_plan(model, b, cfg)
        exact, _ = belief_update(model, b, a, o)
        post, ev = update(model, b, a, o)
        trace.append(StepRecord(t, b.copy(), a, o, np.asarray(post), float(ev), exact,
                                hellinger(post, exact)))
        b = model.uniform_belief() if a in model.resets else np.asarray(post, dtype=float)
    return trace
