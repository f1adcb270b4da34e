"""Exact statevector simulation of the variational circuit.

Conventions, pinned so independent implementations agree on phases:

* little-endian qubit ordering — qubit 0 is the least significant bit of
  the amplitude index;
* rotation gates are exp(-i*angle*P/2) for P in {X, Y, Z};
* Rot(a, b, g) = RZ(g) * RY(b) * RZ(a), i.e. RZ(a) acts first;
* CNOT rounds per layer: linear (0->1, 1->2, ..., n-2->n-1), ring adds
  (n-1 -> 0), all-to-all applies (i -> j) for every i < j in lexicographic
  order.

The circuit is: RX angle encoding on every qubit, then ``n_layers`` blocks
of per-qubit Rot gates followed by a CNOT round, then Pauli-Z expectations.
Expectations are exact (no shot sampling).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

MAX_QUBITS = 12
CONNECTIVITIES = ("linear", "ring", "all-to-all")

# One elementary circuit op: (kind, qubits, angle, param_ref) where kind is
# rx|ry|rz|cnot and param_ref tags the trainable scalar ("phi", i) or
# ("theta", layer, qubit, k) feeding that angle, None for CNOT.
GateOp = tuple


@dataclass
class QuantumLayerParams:
    """Variational parameters: theta of shape (n_layers, n_qubits, 3)."""

    n_qubits: int = 4
    n_layers: int = 2
    theta: np.ndarray = field(default_factory=lambda: np.zeros((2, 4, 3)))
    connectivity: str = "ring"

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        expected = (self.n_layers, self.n_qubits, 3)
        if self.theta.shape != expected:
            raise DimensionError(
                f"theta shape must be {expected}, got {self.theta.shape}"
            )
        if self.connectivity not in CONNECTIVITIES:
            raise ConfigError(
                f"connectivity must be one of {CONNECTIVITIES}, got {self.connectivity!r}"
            )


def cnot_pairs(connectivity: str, n_qubits: int) -> list[tuple[int, int]]:
    """(control, target) pairs of one entangling round, in application order."""
    if connectivity == "linear":
        return [(i, i + 1) for i in range(n_qubits - 1)]
    if connectivity == "ring":
        pairs = [(i, i + 1) for i in range(n_qubits - 1)]
        pairs.append((n_qubits - 1, 0))
        return pairs
    if connectivity == "all-to-all":
        return [(i, j) for i in range(n_qubits) for j in range(i + 1, n_qubits)]
    raise ConfigError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity!r}")


# ---------------------------------------------------------------------------
# state preparation and gate application


def init_state(n_qubits: int) -> np.ndarray:
    """|0...0> as a complex amplitude vector of length 2^n."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    state = np.zeros(2**n_qubits, dtype=np.complex128)
    state[0] = 1.0
    return state


def _n_qubits_of(state: np.ndarray) -> int:
    n = int(round(math.log2(state.shape[0])))
    if 2**n != state.shape[0]:
        raise DimensionError(f"state length {state.shape[0]} is not a power of two")
    return n


def _rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def _rz(angle: float) -> np.ndarray:
    e = np.exp(-0.5j * angle)
    return np.array([[e, 0], [0, e.conjugate()]], dtype=np.complex128)


_GATE_FNS = {"rx": _rx, "ry": _ry, "rz": _rz}


def _apply_1q(state: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    a = state.reshape([2] * n)
    ax = n - 1 - q
    a = np.moveaxis(a, ax, -1)
    a = a @ mat.T
    return np.moveaxis(a, -1, ax).reshape(-1)


def _apply_cnot(state: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    a = state.reshape([2] * n).copy()
    axc, axt = n - 1 - control, n - 1 - target
    sl = [slice(None)] * n
    sl[axc] = 1
    sub_ax = axt - 1 if axt > axc else axt
    a[tuple(sl)] = np.flip(a[tuple(sl)], axis=sub_ax)
    return a.reshape(-1)


def _apply_pauli(state: np.ndarray, pauli: str, q: int, n: int) -> np.ndarray:
    a = state.reshape([2] * n)
    ax = n - 1 - q
    a = np.moveaxis(a, ax, -1)
    out = np.empty_like(a)
    if pauli == "x":
        out[..., 0] = a[..., 1]
        out[..., 1] = a[..., 0]
    elif pauli == "y":
        out[..., 0] = -1j * a[..., 1]
        out[..., 1] = 1j * a[..., 0]
    elif pauli == "z":
        out[..., 0] = a[..., 0]
        out[..., 1] = -a[..., 1]
    else:
        raise ConfigError(f"unknown pauli {pauli!r}")
    return np.moveaxis(out, -1, ax).reshape(-1)


def apply_gate(state: np.ndarray, gate: str, targets, angles=None) -> np.ndarray:
    """Apply RX|RY|RZ|Rot|CNOT to a statevector; returns a new vector."""
    n = _n_qubits_of(state)
    kind = gate.lower()
    if kind == "cnot":
        c, t = targets
        if not (0 <= c < n and 0 <= t < n):
            raise DimensionError(f"cnot qubits {targets} out of range for n={n}")
        if c == t:
            raise DimensionError("cnot control and target must differ")
        return _apply_cnot(state, c, t, n)
    q = int(targets) if np.isscalar(targets) else int(targets[0])
    if not 0 <= q < n:
        raise DimensionError(f"target qubit {q} out of range for n={n}")
    if kind == "rot":
        a, b, g = angles
        s = _apply_1q(state, _rz(a), q, n)
        s = _apply_1q(s, _ry(b), q, n)
        return _apply_1q(s, _rz(g), q, n)
    if kind in _GATE_FNS:
        return _apply_1q(state, _GATE_FNS[kind](float(angles)), q, n)
    raise ConfigError(f"unknown gate {gate!r}")


# ---------------------------------------------------------------------------
# circuit construction


def _build_ops(phi: np.ndarray, params: QuantumLayerParams) -> list[GateOp]:
    """Elementary gate sequence (Rot expanded to RZ, RY, RZ)."""
    n = params.n_qubits
    ops: list[GateOp] = [("rx", (i,), float(phi[i]), ("phi", i)) for i in range(n)]
    for l in range(params.n_layers):
        for i in range(n):
            a, b, g = params.theta[l, i]
            ops.append(("rz", (i,), float(a), ("theta", l, i, 0)))
            ops.append(("ry", (i,), float(b), ("theta", l, i, 1)))
            ops.append(("rz", (i,), float(g), ("theta", l, i, 2)))
        for c, t in cnot_pairs(params.connectivity, n):
            ops.append(("cnot", (c, t), None, None))
    return ops


def _run_ops(ops: list[GateOp], n: int) -> np.ndarray:
    state = init_state(n)
    for kind, qubits, angle, _ in ops:
        if kind == "cnot":
            state = _apply_cnot(state, qubits[0], qubits[1], n)
        else:
            state = _apply_1q(state, _GATE_FNS[kind](angle), qubits[0], n)
    return state


def angle_encode(state: np.ndarray, phi) -> np.ndarray:
    """RX(phi_i) on qubit i; expects a fresh |0...0> register."""
    n = _n_qubits_of(state)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (n,):
        raise DimensionError(f"need {n} encoding angles, got shape {phi.shape}")
    for i in range(n):
        state = _apply_1q(state, _rx(float(phi[i])), i, n)
    return state


def entangling_layers(state: np.ndarray, params: QuantumLayerParams) -> np.ndarray:
    """Per-qubit Rot gates then a CNOT round, repeated n_layers times."""
    n = _n_qubits_of(state)
    if n != params.n_qubits:
        raise DimensionError(f"state has {n} qubits, params expect {params.n_qubits}")
    for l in range(params.n_layers):
        for i in range(n):
            state = apply_gate(state, "rot", i, params.theta[l, i])
        for c, t in cnot_pairs(params.connectivity, n):
            state = _apply_cnot(state, c, t, n)
    return state


_SIGN_CACHE: dict[int, np.ndarray] = {}


def _z_signs(n: int) -> np.ndarray:
    """(2^n, n) matrix of +/-1: sign of Z_i on each basis state."""
    tbl = _SIGN_CACHE.get(n)
    if tbl is None:
        bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
        tbl = 1.0 - 2.0 * bits
        _SIGN_CACHE[n] = tbl
    return tbl


def expect_z(state: np.ndarray) -> np.ndarray:
    """<Z_i> for every qubit; each value lies in [-1, 1]."""
    n = _n_qubits_of(state)
    probs = np.abs(state) ** 2
    return _z_signs(n).T @ probs


def circuit_forward(phi, params: QuantumLayerParams) -> np.ndarray:
    """Full circuit: encode, entangle, measure Z expectations."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (params.n_qubits,):
        raise DimensionError(
            f"need {params.n_qubits} encoding angles, got shape {phi.shape}"
        )
    return expect_z(_run_ops(_build_ops(phi, params), params.n_qubits))


def describe_circuit(phi, params: QuantumLayerParams) -> list[str]:
    """Human-readable gate list; Rot gates shown composed (one line each)."""
    phi = np.asarray(phi, dtype=np.float64)
    lines = [f"RX q{i} {phi[i]:.9g}" for i in range(params.n_qubits)]
    for l in range(params.n_layers):
        for i in range(params.n_qubits):
            a, b, g = params.theta[l, i]
            lines.append(f"ROT q{i} {a:.9g} {b:.9g} {g:.9g}")
        for c, t in cnot_pairs(params.connectivity, params.n_qubits):
            lines.append(f"CNOT q{c} q{t}")
    return lines


# ---------------------------------------------------------------------------
# gradients


_PAULI_OF = {"rx": "x", "ry": "y", "rz": "z"}


def _shift_forward(phi, params, ref, delta) -> np.ndarray:
    phi2 = phi.copy()
    theta2 = params.theta.copy()
    if ref[0] == "phi":
        phi2[ref[1]] += delta
    else:
        _, l, i, k = ref
        theta2[l, i, k] += delta
    shifted = QuantumLayerParams(
        params.n_qubits, params.n_layers, theta2, params.connectivity
    )
    return circuit_forward(phi2, shifted)


def _gradient_parameter_shift(phi, params, upstream):
    """Exact shift rule: df/dp = (f(p + pi/2) - f(p - pi/2)) / 2 per scalar."""
    dphi = np.zeros_like(phi)
    dtheta = np.zeros_like(params.theta)
    refs = [("phi", i) for i in range(params.n_qubits)]
    for l in range(params.n_layers):
        for i in range(params.n_qubits):
            for k in range(3):
                refs.append(("theta", l, i, k))
    for ref in refs:
        fp = _shift_forward(phi, params, ref, math.pi / 2)
        fm = _shift_forward(phi, params, ref, -math.pi / 2)
        d = float(upstream @ ((fp - fm) / 2.0))
        if ref[0] == "phi":
            dphi[ref[1]] = d
        else:
            _, l, i, k = ref
            dtheta[l, i, k] = d
    return dphi, dtheta


def _gradient_adjoint(phi, params, upstream):
    """Reverse sweep through the gate list; exact, O(gates) state updates.

    With diagonal observable O = sum_j upstream_j Z_j and lambda the
    back-propagated costate, each rotation's derivative is
    Im(<lambda| P |psi_k>) where P is the gate's Pauli generator.
    """
    n = params.n_qubits
    ops = _build_ops(phi, params)
    state = _run_ops(ops, n)
    diag = _z_signs(n) @ upstream
    lam = diag * state
    dphi = np.zeros_like(phi)
    dtheta = np.zeros_like(params.theta)
    for kind, qubits, angle, ref in reversed(ops):
        if kind == "cnot":
            state = _apply_cnot(state, qubits[0], qubits[1], n)
            lam = _apply_cnot(lam, qubits[0], qubits[1], n)
            continue
        q = qubits[0]
        grad = np.vdot(lam, _apply_pauli(state, _PAULI_OF[kind], q, n)).imag
        if ref[0] == "phi":
            dphi[ref[1]] += grad
        else:
            _, l, i, k = ref
            dtheta[l, i, k] += grad
        inv = _GATE_FNS[kind](-angle)
        state = _apply_1q(state, inv, q, n)
        lam = _apply_1q(lam, inv, q, n)
    return dphi, dtheta


def circuit_gradient(phi, params: QuantumLayerParams, upstream, method: str = "adjoint"):
    """d(upstream . <Z>)/d(phi, theta) via parameter-shift or adjoint sweep."""
    phi = np.asarray(phi, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if phi.shape != (params.n_qubits,) or upstream.shape != (params.n_qubits,):
        raise DimensionError(
            f"phi and upstream must have shape ({params.n_qubits},), "
            f"got {phi.shape} and {upstream.shape}"
        )
    if method == "parameter-shift":
        return _gradient_parameter_shift(phi, params, upstream)
    if method == "adjoint":
        return _gradient_adjoint(phi, params, upstream)
    raise ConfigError(
        f"gradient method must be parameter-shift|adjoint, got {method!r}"
    )
