"""Belief-update circuits and amplitude amplification over the evidence oracle."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import pomdp
from .pomdp import PomdpModel
from .sim import (
    CZ,
    Circuit,
    H,
    NoiseModel,
    Ry,
    StateVector,
    X,
    Z,
    controlled_ry,
    marginal,
    post_select,
    register_values,
    run_noisy,
    uniformly_controlled_ry,
)


def n_bits(count: int) -> int:
    return max(1, math.ceil(math.log2(count))) if count > 1 else 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def load_distribution(table, targets: Sequence[int], controls: Sequence[int] = ()) -> list:
    """Gates writing sqrt(table[c, v]) onto register ``targets`` for control value ``c``.

    ``table`` has shape (2**len(controls), 2**len(targets)); each row is a
    probability vector (rows of all zeros load |0>). Bits are written from the
    most significant target down, each with one uniformly controlled Ry.
    """
    table = np.atleast_2d(np.asarray(table, dtype=float))
    c, m = len(controls), len(targets)
    if table.shape != (2**c, 2**m):
        raise ValueError(f"table shape {table.shape} does not match registers ({2**c}, {2**m})")
    gates = []
    for j in range(m - 1, -1, -1):
        higher = m - 1 - j
        angles = np.zeros(2 ** (c + higher))
        for ctrl in range(2**c):
            row = table[ctrl]
            for hv in range(2**higher):
                prefix = hv << (j + 1)
                block = row[prefix : prefix + 2 ** (j + 1)]
                total = block.sum()
                if total <= 0:
                    continue
                p1 = block[2**j :].sum() / total
                angles[ctrl + (hv << c)] = 2 * math.asin(math.sqrt(min(1.0, max(0.0, p1))))
        ctrl_qubits = list(controls) + list(targets[j + 1 :])
        if not ctrl_qubits:
            gates.append(Ry(angles[0], targets[j]))
        else:
            gates.append(uniformly_controlled_ry(angles, targets[j], ctrl_qubits))
    return gates


# Register accounting -----------------------------------------------------------


_ACCOUNTING_DEFAULTS = {2: (4, 3), 16: (6, 6), 64: (8, 10)}


@dataclass(frozen=True)
class BeliefCircuitLayout:
    """Qubit budget of the full belief-update circuit.

    ``total_qubits`` is the hardware accounting (state, next state,
    observation, amplitude precision, action, computation ancillas and the
    Grover flag). ``simulated_qubits`` counts only the registers this package
    actually builds: state, action, next state, observation and reward tag.
    """

    n_state: int
    n_action: int
    n_obs: int
    precision_bits: int
    compute_ancillas: int
    reward_bits: int = 2
    grover_flag: int = 1

    @classmethod
    def for_model(cls, model: PomdpModel, precision_bits=None, compute_ancillas=None,
                  reward_bits: int = 2) -> BeliefCircuitLayout:
        ns = n_bits(model.n_states)
        default_p, default_anc = _ACCOUNTING_DEFAULTS.get(
            model.n_states, (max(4, ns + 2), max(3, 2 * ns - 2))
        )
        return cls(
            ns, n_bits(model.n_actions), n_bits(model.n_obs),
            default_p if precision_bits is None else precision_bits,
            default_anc if compute_ancillas is None else compute_ancillas,
            reward_bits,
        )

    @property
    def total_qubits(self) -> int:
        return (2 * self.n_state + self.n_obs + self.precision_bits + self.n_action
                + self.compute_ancillas + self.grover_flag)

    @property
    def simulated_qubits(self) -> int:
        return 2 * self.n_state + self.n_action + self.n_obs + self.reward_bits


@dataclass
class BeliefCircuit:
    """A prepared belief circuit with named registers (each LSB first)."""

    circuit: Circuit
    registers: dict[str, tuple[int, ...]]
    model: PomdpModel
    action: int
    reward_levels: np.ndarray | None = None

    @property
    def obs_qubits(self) -> tuple[int, ...]:
        return self.registers["o"]

    @property
    def posterior_qubits(self) -> tuple[int, ...]:
        return self.registers.get("s_next", self.registers["s"])

    def state(self) -> StateVector:
        return self.circuit.run()

    def evidence(self, o: int) -> float:
        return float(marginal(self.state(), self.obs_qubits)[o])

    def posterior(self, o: int, state: StateVector | None = None) -> tuple[np.ndarray, float]:
        """Post-select the observation register on ``o`` and read the state marginal."""
        st = state if state is not None else self.state()
        post, p = post_select(st, self.obs_qubits, o)
        probs = marginal(post, self.posterior_qubits)[: self.model.n_states]
        return probs / probs.sum(), p


def _padded(v, size):
    out = np.zeros(size)
    out[: len(v)] = v
    return out


def build_full_belief_circuit(model: PomdpModel, b, a, pad: bool = False,
                              reward_bits: int = 2) -> BeliefCircuit:
    """Joint state sum sqrt(b(s) T(s'|s,a) O(o|s',a)) |s>|a>|s'>|o>|r(s,a)>.

    Registers are laid out s, a, s', o, r from qubit 0 upwards. Transition
    and observation unitaries are controlled on the action register, and the
    reward register holds R(s, a) quantised to ``reward_bits`` as a basis tag.
    """
    b = pomdp.check_belief(b, model.n_states)
    a = model.action_index(a)
    S, A, Om = model.n_states, model.n_actions, model.n_obs
    if not pad and not (_is_pow2(S) and _is_pow2(Om)):
        raise ValueError("|S| and |Omega| must be powers of two unless pad=True")
    ns, na, no = n_bits(S), n_bits(A), n_bits(Om)
    regs = {}
    q = 0
    for name, width in (("s", ns), ("a", na), ("s_next", ns), ("o", no), ("r", reward_bits)):
        regs[name] = tuple(range(q, q + width))
        q += width
    circ = Circuit(q)
    circ.extend(load_distribution(_padded(b, 2**ns)[None], regs["s"]))
    for i, qa in enumerate(regs["a"]):
        if (a >> i) & 1:
            circ.append(X(qa))
    # U1: rows indexed by s + (a' << ns)
    t_table = np.zeros((2 ** (ns + na), 2**ns))
    o_table = np.zeros((2 ** (ns + na), 2**no))
    for ap in range(A):
        for s in range(S):
            t_table[s + (ap << ns), :S] = model.T[ap, s]
            o_table[s + (ap << ns), :Om] = model.O[ap, s]
    circ.extend(load_distribution(t_table, regs["s_next"], regs["s"] + regs["a"]))
    circ.extend(load_distribution(o_table, regs["o"], regs["s_next"] + regs["a"]))
    # U3: basis-encoded reward tag
    levels = None
    if reward_bits:
        lo, hi = model.R.min(), model.R.max()
        span = hi - lo if hi > lo else 1.0
        levels = np.rint((model.R - lo) / span * (2**reward_bits - 1)).astype(int)
        ctrl = regs["s"] + regs["a"]
        for ap in range(A):
            for s in range(S):
                value = s + (ap << ns)
                pattern = [(value >> i) & 1 for i in range(len(ctrl))]
                for bit, qr in enumerate(regs["r"]):
                    if (levels[s, ap] >> bit) & 1:
                        circ.append(controlled_ry(math.pi, qr, ctrl, pattern))
    return BeliefCircuit(circ, regs, model, a, levels)


def build_direct_circuit(model: PomdpModel, b, a=0) -> BeliefCircuit:
    """Direct encoding: prior on the state register, one controlled Ry per state on the
    observation qubit. Valid for actions with identity transitions; reset actions with
    uniform transitions become a Hadamard-style preparation."""
    b = pomdp.check_belief(b, model.n_states)
    a = model.action_index(a)
    S = model.n_states
    if model.n_obs != 2 or not _is_pow2(S):
        raise ValueError("direct encoding needs two observations and a power-of-two state count")
    ns = n_bits(S)
    s_q, o_q = tuple(range(ns)), ns
    circ = Circuit(ns + 1)
    T, O = model.T[a], model.O[a]
    if np.allclose(T, 1.0 / S):
        for q in s_q:
            circ.append(H(q))
        if np.allclose(O[:, 1], 0.5):
            circ.append(H(o_q))
        elif np.allclose(O[:, 1], O[0, 1]):
            circ.append(Ry(2 * math.asin(math.sqrt(O[0, 1])), o_q))
        else:
            raise ValueError("reset action needs a state-independent observation model")
        return BeliefCircuit(circ, {"s": s_q, "o": (o_q,)}, model, a)
    if not np.allclose(T, np.eye(S)):
        raise ValueError("direct encoding needs identity or uniform-reset transitions")
    if ns == 1:
        circ.append(Ry(2 * math.acos(math.sqrt(b[0])), s_q[0]))
    else:
        circ.extend(load_distribution(b[None], s_q))
    for s in range(S):
        pattern = [(s >> i) & 1 for i in range(ns)]
        theta = 2 * math.asin(math.sqrt(min(1.0, O[s, 1])))
        circ.append(controlled_ry(theta, o_q, s_q, pattern))
    return BeliefCircuit(circ, {"s": s_q, "o": (o_q,)}, model, a)


def build_minimal_tiger_circuit(b, action=0, model: PomdpModel | None = None) -> BeliefCircuit:
    """Two-qubit Tiger circuit: qubit 0 holds the state, qubit 1 the observation."""
    model = model or pomdp.tiger2()
    if model.n_states != 2:
        raise ValueError("minimal Tiger encoding needs |S| = 2")
    return build_direct_circuit(model, b, action)


def build_corridor4_circuit(prior, action=0, model: PomdpModel | None = None) -> BeliefCircuit:
    """Three-qubit corridor circuit: qubits 0-1 hold the state, qubit 2 the observation."""
    model = model or pomdp.tiger4()
    if model.n_states != 4:
        raise ValueError("corridor encoding needs |S| = 4")
    return build_direct_circuit(model, prior, action)


# Amplitude amplification -------------------------------------------------------------


def optimal_iterations(evidence: float, rule: str = "standard") -> int:
    """Grover iteration count for success probability ``evidence``.

    ``rule="standard"`` is floor(pi / (4 arcsin sqrt(P)) - 1/2);
    ``rule="sqrt"`` is the cruder floor(pi/4 * sqrt(1/P)).
    """
    if not 0 < evidence < 1:
        raise ValueError("evidence must lie strictly between 0 and 1")
    # the tolerance keeps exact integers (P = 1/4 gives 1) from rounding down
    if rule == "standard":
        k = math.floor(math.pi / (4 * math.asin(math.sqrt(evidence))) - 0.5 + 1e-9)
    elif rule == "sqrt":
        k = math.floor(math.pi / 4 * math.sqrt(1 / evidence) + 1e-9)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return max(k, 0)


def amplified_probability(a: float, k: int) -> float:
    return math.sin((2 * k + 1) * math.asin(math.sqrt(a))) ** 2


def _reflection_about_zero(qubits: Sequence[int]) -> list:
    gates = [X(q) for q in qubits]
    gates.append(Z(qubits[0]) if len(qubits) == 1 else CZ(*qubits))
    gates += [X(q) for q in qubits]
    return gates


@dataclass
class GroverSetup:
    """Preparation ``prep`` with the good subspace ``marked_qubits == marked_value``."""

    prep: Circuit
    marked_qubits: tuple[int, ...]
    marked_value: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_qubits(self) -> int:
        return self.prep.n_qubits

    def oracle(self) -> Circuit:
        """S_e: phase flip on the good subspace."""
        return Circuit(self.n_qubits, _reflection_about_zero_value(self.marked_qubits,
                                                                   self.marked_value))

    def zero_reflection(self) -> Circuit:
        """S_0 = I - 2|0..0><0..0|."""
        return Circuit(self.n_qubits, _reflection_about_zero(tuple(range(self.n_qubits))))

    def iterate(self) -> Circuit:
        """G = A S_0 A^dagger S_e (S_e runs first)."""
        return (self.oracle().compose(self.prep.inverse())
                .compose(self.zero_reflection()).compose(self.prep))

    def amplified_circuit(self, k: int) -> Circuit:
        c = self.prep.copy()
        g = self.iterate()
        for _ in range(k):
            c = c.compose(g)
        return c

    def good_mask(self) -> np.ndarray:
        return register_values(self.n_qubits, self.marked_qubits) == self.marked_value

    def state(self, k: int) -> StateVector:
        if k < 0:
            raise ValueError("k must be >= 0")
        if self.n_qubits <= 10:
            if "G" not in self._cache:
                self._cache["G"] = self.iterate().unitary()
                self._cache["psi0"] = self.prep.run().amplitudes
            psi = np.linalg.matrix_power(self._cache["G"], k) @ self._cache["psi0"]
            return StateVector(psi)
        return self.amplified_circuit(k).run()

    def success_probability(self, k: int = 0) -> float:
        return float(self.state(k).probabilities()[self.good_mask()].sum())

    @property
    def theta(self) -> float:
        return math.asin(math.sqrt(min(1.0, self.success_probability(0))))


def _reflection_about_zero_value(qubits: Sequence[int], value: int) -> list:
    flips = [X(q) for i, q in enumerate(qubits) if not (value >> i) & 1]
    core = [Z(qubits[0])] if len(qubits) == 1 else [CZ(*qubits)]
    return flips + core + flips


def grover_setup_for(bc: BeliefCircuit, o: int) -> GroverSetup:
    return GroverSetup(bc.circuit, bc.obs_qubits, int(o))


def grover_amplify(setup: GroverSetup, k: int) -> StateVector:
    """State after preparation and ``k`` Grover iterations."""
    return setup.state(k)


def _direct_circuit_for(b, model: PomdpModel | None, a=0) -> BeliefCircuit:
    b = np.asarray(b, dtype=float)
    if model is None:
        model = {2: pomdp.tiger2, 4: pomdp.tiger4}.get(len(b), lambda: None)()
        if model is None:
            raise ValueError("no default direct-encoding model for this belief size")
    return build_direct_circuit(model, b, a)


def amplified_posterior(b, o: int, k: int, model: PomdpModel | None = None,
                        action=0) -> tuple[np.ndarray, float]:
    """Posterior read from the amplified state post-selected on ``o``.

    Returns the posterior and the amplified branch probability.
    """
    bc = _direct_circuit_for(b, model, action)
    state = grover_amplify(grover_setup_for(bc, o), k)
    return bc.posterior(o, state)


# Update provider ------------------------------------------------------------------


@dataclass
class QuantumBeliefProvider:
    """Belief updates obtained from simulated circuits.

    With ``shots=None`` the posterior comes from exact post-selection on the
    statevector. Otherwise the (optionally noisy) circuit is sampled and the
    posterior is estimated from the shots landing on the requested
    observation. ``grover_k`` may be an int or ``"auto"`` (standard rule).
    """

    shots: int | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    grover_k: int | str = 0
    minimal: bool = True
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(42))

    def circuit(self, model: PomdpModel, b, a) -> BeliefCircuit:
        if self.minimal:
            return build_direct_circuit(model, b, a)
        return build_full_belief_circuit(model, b, a, pad=True)

    def __call__(self, model: PomdpModel, b, a, o):
        bc = self.circuit(model, b, a)
        setup = grover_setup_for(bc, o)
        evidence = setup.success_probability(0)
        if evidence < pomdp.EVIDENCE_TOL:
            raise pomdp.ImpossibleObservation(f"observation {o} has zero probability")
        k = self.grover_k
        if k == "auto":
            k = optimal_iterations(evidence) if evidence < 1 else 0
        if self.shots is None:
            post, _ = bc.posterior(o, setup.state(int(k)))
            return post, evidence
        circ = setup.amplified_circuit(int(k))
        counts = run_noisy(circ, self.noise, self.shots, self.rng)
        post = np.zeros(2 ** len(bc.posterior_qubits))
        usable = 0
        for bits, c in counts.items():
            idx = int(bits, 2)
            ov = sum(((idx >> q) & 1) << i for i, q in enumerate(bc.obs_qubits))
            if ov != o:
                continue
            sv = sum(((idx >> q) & 1) << i for i, q in enumerate(bc.posterior_qubits))
            post[sv] += c
            usable += c
        post = post[: model.n_states]
        if usable == 0 or post.sum() == 0:
            raise pomdp.ImpossibleObservation("no usable shots for the requested observation")
        if k == 0:
            evidence = usable / self.shots
        return post / post.sum(), evidence
