import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hqnn.errors import ConfigError, DimensionError
from hqnn.qsim import (
    QuantumLayerParams,
    angle_encode,
    apply_gate,
    circuit_forward,
    circuit_gradient,
    cnot_pairs,
    describe_circuit,
    entangling_layers,
    expect_z,
    init_state,
)

from oracles import dense_circuit_expectations


def zeros_params(n=4, layers=2, connectivity="ring"):
    return QuantumLayerParams(n, layers, np.zeros((layers, n, 3)), connectivity)


class TestInitState:
    def test_one_qubit(self):
        assert np.array_equal(init_state(1), [1.0, 0.0])

    def test_four_qubits(self):
        s = init_state(4)
        assert len(s) == 16
        assert abs(np.linalg.norm(s) - 1.0) <= 1e-15

    def test_bound(self):
        with pytest.raises(ConfigError):
            init_state(13)
        with pytest.raises(ConfigError):
            init_state(0)


class TestApplyGate:
    def test_rx_pi_flips_with_phase(self):
        out = apply_gate(init_state(1), "rx", 0, math.pi)
        assert np.abs(out - np.array([0.0, -1.0j])).max() <= 1e-12

    def test_cnot_truth_table_little_endian(self):
        s = np.zeros(4, dtype=complex)
        s[1] = 1.0  # |01>: qubit0 = 1
        out = apply_gate(s, "cnot", (0, 1))
        assert np.abs(out - np.eye(4)[3]).max() == 0.0  # |11>

    def test_ry_half_rotation(self):
        out = apply_gate(init_state(1), "ry", 0, math.pi / 2)
        assert np.abs(out - np.array([0.70711, 0.70711])).max() <= 1e-5

    def test_rot_is_rz_ry_rz(self, rng):
        a, b, g = rng.uniform(-3, 3, 3)
        s = apply_gate(init_state(2), "ry", 1, 0.7)
        via_rot = apply_gate(s, "rot", 0, (a, b, g))
        step = apply_gate(s, "rz", 0, a)
        step = apply_gate(step, "ry", 0, b)
        step = apply_gate(step, "rz", 0, g)
        assert np.abs(via_rot - step).max() <= 1e-14

    def test_bad_indices(self):
        with pytest.raises(DimensionError):
            apply_gate(init_state(2), "rx", 2, 0.1)
        with pytest.raises(DimensionError):
            apply_gate(init_state(2), "cnot", (1, 1))


class TestAngleEncode:
    def test_zero_angles_identity(self):
        out = angle_encode(init_state(4), [0.0] * 4)
        assert np.abs(out - init_state(4)).max() == 0.0

    def test_pi_flips_qubit_zero(self):
        out = angle_encode(init_state(4), [math.pi, 0.0, 0.0, 0.0])
        z = expect_z(out)
        assert np.abs(z - [-1.0, 1.0, 1.0, 1.0]).max() <= 1e-12

    def test_equator(self):
        out = angle_encode(init_state(4), [math.pi / 2] * 4)
        assert np.abs(expect_z(out)).max() <= 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            angle_encode(init_state(4), [0.0, 0.0])


class TestEntanglingLayers:
    def test_zero_theta_on_vacuum_is_identity(self):
        out = entangling_layers(init_state(4), zeros_params())
        assert np.abs(out - init_state(4)).max() <= 1e-14

    def test_single_layer_cnot_cascade(self):
        # |1000> (qubit 0 set) through one linear CNOT round -> |1111>
        s = np.zeros(16, dtype=complex)
        s[1] = 1.0
        out = entangling_layers(s, zeros_params(layers=1, connectivity="linear"))
        assert abs(abs(out[0b1111]) - 1.0) <= 1e-14

    def test_connectivity_gate_counts(self):
        assert len(cnot_pairs("linear", 4)) == 3
        assert len(cnot_pairs("ring", 4)) == 4
        assert len(cnot_pairs("all-to-all", 4)) == 6

    def test_unknown_connectivity(self):
        with pytest.raises(ConfigError):
            QuantumLayerParams(4, 2, np.zeros((2, 4, 3)), "star")

    def test_theta_shape_enforced(self):
        with pytest.raises(DimensionError):
            QuantumLayerParams(4, 2, np.zeros((2, 4, 2)), "ring")

    @pytest.mark.parametrize("connectivity", ["linear", "ring", "all-to-all"])
    def test_against_dense_unitary_oracle(self, connectivity, rng):
        for _ in range(5):
            phi = rng.uniform(-math.pi, math.pi, 4)
            theta = rng.uniform(-math.pi, math.pi, (2, 4, 3))
            params = QuantumLayerParams(4, 2, theta, connectivity)
            got = circuit_forward(phi, params)
            want, psi = dense_circuit_expectations(phi, theta, connectivity)
            assert np.abs(got - want).max() <= 1e-10
            assert abs(np.linalg.norm(psi) - 1.0) <= 1e-10


class TestExpectZ:
    def test_vacuum(self):
        assert np.array_equal(expect_z(init_state(4)), [1.0, 1.0, 1.0, 1.0])

    def test_all_ones(self):
        s = np.zeros(16, dtype=complex)
        s[15] = 1.0
        assert np.array_equal(expect_z(s), [-1.0, -1.0, -1.0, -1.0])

    @pytest.mark.parametrize("phi,expected", [
        (0.0, 1.0), (math.pi / 3, 0.5), (math.pi / 2, 0.0), (math.pi, -1.0),
    ])
    def test_rx_gives_cosine(self, phi, expected):
        out = apply_gate(init_state(1), "rx", 0, phi)
        assert abs(expect_z(out)[0] - expected) <= 1e-12


class TestCircuitForward:
    def test_identity_circuit(self):
        out = circuit_forward(np.zeros(4), zeros_params())
        assert np.abs(out - 1.0).max() <= 1e-14

    def test_observable_bound(self, rng):
        for _ in range(200):
            phi = rng.uniform(-10, 10, 4)
            theta = rng.uniform(-10, 10, (2, 4, 3))
            out = circuit_forward(phi, QuantumLayerParams(4, 2, theta, "ring"))
            assert (np.abs(out) <= 1.0 + 1e-12).all()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3))
    def test_two_pi_periodicity(self, seed, coord):
        r = np.random.default_rng(seed)
        phi = r.uniform(-math.pi, math.pi, 4)
        theta = r.uniform(-math.pi, math.pi, (2, 4, 3))
        params = QuantumLayerParams(4, 2, theta, "ring")
        base = circuit_forward(phi, params)
        shifted = phi.copy()
        shifted[coord] += 2 * math.pi
        assert np.abs(circuit_forward(shifted, params) - base).max() <= 1e-10

    def test_norm_preserved_long_sequence(self, rng):
        state = init_state(4)
        gates = ["rx", "ry", "rz"]
        for k in range(10_000):
            if k % 7 == 3:
                q = int(rng.integers(0, 4))
                t = (q + 1 + int(rng.integers(0, 3))) % 4
                state = apply_gate(state, "cnot", (q, t))
            else:
                state = apply_gate(state, gates[k % 3], int(rng.integers(0, 4)),
                                   float(rng.uniform(-math.pi, math.pi)))
        assert abs(np.linalg.norm(state) - 1.0) <= 1e-10

    def test_theta_zero_truth_tables(self):
        # basis encodings propagate through the CNOT rounds classically
        for connectivity in ("linear", "ring", "all-to-all"):
            pairs = cnot_pairs(connectivity, 4)
            params = zeros_params(connectivity=connectivity)
            for basis in range(16):
                bits = [(basis >> i) & 1 for i in range(4)]
                phi = np.array([math.pi * b for b in bits])
                expected_bits = list(bits)
                for _ in range(params.n_layers):
                    for c, t in pairs:
                        expected_bits[t] ^= expected_bits[c]
                got = circuit_forward(phi, params)
                want = np.array([1.0 - 2.0 * b for b in expected_bits])
                assert np.abs(got - want).max() <= 1e-10


class TestCircuitGradient:
    def test_single_qubit_ry_analytic(self):
        # <Z> after RY(beta)|0> is cos(beta); at beta = pi/3 slope is -sin(pi/3)
        params = QuantumLayerParams(1, 1, np.array([[[0.0, math.pi / 3, 0.0]]]),
                                    "linear")
        for method in ("parameter-shift", "adjoint"):
            dphi, dtheta = circuit_gradient(np.zeros(1), params, np.ones(1), method)
            assert abs(dtheta[0, 0, 1] - (-math.sin(math.pi / 3))) <= 1e-12

    def test_stationary_point(self):
        # phi = 0, theta = 0 sits at the <Z> = 1 extremum
        dphi, dtheta = circuit_gradient(np.zeros(4), zeros_params(), np.ones(4))
        assert np.abs(dphi).max() <= 1e-10
        assert np.abs(dtheta).max() <= 1e-10

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            circuit_gradient(np.zeros(4), zeros_params(), np.ones(4), "spsa")

    def test_methods_agree_with_finite_differences(self, rng):
        eps = 1e-5
        for _ in range(10):
            phi = rng.uniform(-math.pi, math.pi, 4)
            theta = rng.uniform(-math.pi, math.pi, (2, 4, 3))
            upstream = rng.normal(size=4)
            params = QuantumLayerParams(4, 2, theta, "ring")
            shift = circuit_gradient(phi, params, upstream, "parameter-shift")
            adj = circuit_gradient(phi, params, upstream, "adjoint")
            assert np.abs(shift[0] - adj[0]).max() <= 1e-8
            assert np.abs(shift[1] - adj[1]).max() <= 1e-8
            fd_phi = np.zeros(4)
            for i in range(4):
                d = np.zeros(4)
                d[i] = eps
                fp = upstream @ circuit_forward(phi + d, params)
                fm = upstream @ circuit_forward(phi - d, params)
                fd_phi[i] = (fp - fm) / (2 * eps)
            assert np.abs(adj[0] - fd_phi).max() <= 1e-6


class TestDescribeCircuit:
    def test_gate_list_lengths(self):
        phi = np.zeros(4)
        for connectivity, n_cnot in (("linear", 3), ("ring", 4), ("all-to-all", 6)):
            lines = describe_circuit(phi, zeros_params(connectivity=connectivity))
            assert len(lines) == 4 + 2 * (4 + n_cnot)
            assert sum(1 for l in lines if l.startswith("CNOT")) == 2 * n_cnot
            assert sum(1 for l in lines if l.startswith("ROT")) == 8
