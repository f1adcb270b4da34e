"""The hybrid quantum-classical classifier.

Pipeline: three conv blocks (3->32->64->128, each conv/batchnorm/leaky-relu/
maxpool/channel-dropout) shrink 64x64 images to 8x8x128; 4-head self-attention
over the 64 spatial tokens is mean-pooled to a 128-d vector; cross-attention
against a learnable 4x64 embedding table produces a 64-d quantum-aware vector,
which is linearly remapped, position-encoded, and fused with a projected copy
of the attention output through a sigmoid gate. The first 4 gated coordinates
drive the 4-qubit circuit as RX angles; its Pauli-Z expectations feed a small
classifier head. A classical ablation swaps the circuit for a trainable 64->4
linear map, leaving everything else untouched.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .qsim import CONNECTIVITIES, MAX_QUBITS, QuantumLayerParams, circuit_forward, circuit_gradient
from .rng import STREAM_DROPOUT, STREAM_MODEL_INIT, make_rng, rng_state_from_json, rng_state_to_json
from .tensor import BatchNormState, Tensor

ATTENTION_DIM = 128  # width of the last conv stage and of self-attention


@dataclass
class ModelConfig:
    input_hw: int = 64
    in_channels: int = 3
    conv_channels: tuple = (32, 64, 128)
    conv_dropouts: tuple = (0.3, 0.3, 0.2)
    attention_heads: int = 4
    n_qubits: int = 4
    n_layers: int = 2
    embed_width: int = 64  # row width of the quantum embedding table
    per_qubit_features: int = 16
    head_hidden: int = 64
    head_dropout: float = 0.5
    n_classes: int = 2
    connectivity: str = "ring"
    quantum_enabled: bool = True
    gradient_method: str = "adjoint"

    @property
    def quantum_input_dim(self) -> int:
        return self.n_qubits * self.per_qubit_features

    def validate(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        if self.conv_channels[-1] % self.attention_heads:
            raise ConfigError(
                f"attention heads ({self.attention_heads}) must divide the "
                f"attention dim ({self.conv_channels[-1]})"
            )
        if self.connectivity not in CONNECTIVITIES:
            raise ConfigError(
                f"connectivity must be one of {CONNECTIVITIES}, got {self.connectivity!r}"
            )
        if self.gradient_method not in ("adjoint", "parameter-shift"):
            raise ConfigError(f"unknown gradient method {self.gradient_method!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["conv_dropouts"] = list(self.conv_dropouts)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["conv_dropouts"] = tuple(d["conv_dropouts"])
        return ModelConfig(**d)


def positional_encoding_table(n_positions: int, n_channels: int) -> np.ndarray:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/C)), PE[p, 2i+1] = cos."""
    pe = np.zeros((n_positions, n_channels))
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i2 = np.arange(0, n_channels, 2, dtype=np.float64)
    div = np.power(10000.0, i2 / n_channels)
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div)
    return pe


def _kaiming_uniform(rng, shape, fan_in, slope=0.1):
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class HQNNModel:
    """Holds all trainable parameters and runs the forward pass."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.config.validate()
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self.dropout_rng = make_rng(seed, STREAM_DROPOUT)
        self._pe = positional_encoding_table(
            self.config.n_qubits, self.config.per_qubit_features
        ).reshape(-1)
        self._init_params(make_rng(seed, STREAM_MODEL_INIT))

    # -- construction ------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True)

    def _init_params(self, rng) -> None:
        cfg = self.config
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.conv_channels, start=1):
            self._add(f"conv{i}.w", _kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9))
            self._add(f"conv{i}.b", np.zeros(cout))
            self._add(f"bn{i}.gamma", np.ones(cout))
            self._add(f"bn{i}.beta", np.zeros(cout))
            self.bn_states[f"bn{i}"] = BatchNormState(cout)
            cin = cout
        d = ATTENTION_DIM
        for proj in ("q", "k", "v", "o"):
            self._add(f"attn.w{proj}", _kaiming_uniform(rng, (d, d), d))
            self._add(f"attn.b{proj}", np.zeros(d))
        ew, qd = cfg.embed_width, cfg.quantum_input_dim
        self._add("eq", rng.normal(0.0, 0.02, (cfg.n_qubits, ew)))
        self._add("cross.wq", _kaiming_uniform(rng, (ew, d), d))
        self._add("cross.bq", np.zeros(ew))
        self._add("cross.wk", _kaiming_uniform(rng, (ew, ew), ew))
        self._add("cross.bk", np.zeros(ew))
        self._add("cross.wv", _kaiming_uniform(rng, (ew, ew), ew))
        self._add("cross.bv", np.zeros(ew))
        self._add("qmap.w", _kaiming_uniform(rng, (qd, ew), ew))
        self._add("qmap.b", np.zeros(qd))
        self._add("orig.w", _kaiming_uniform(rng, (qd, d), d))
        self._add("orig.b", np.zeros(qd))
        self._add("gate.w", _kaiming_uniform(rng, (qd, qd), qd))
        self._add("gate.b", np.zeros(qd))
        if cfg.quantum_enabled:
            self._add("theta", rng.uniform(0.0, 2 * math.pi,
                                           (cfg.n_layers, cfg.n_qubits, 3)))
        else:
            self._add("abl.w", _kaiming_uniform(rng, (cfg.n_qubits, qd), qd))
            self._add("abl.b", np.zeros(cfg.n_qubits))
        self._add("head1.w", _kaiming_uniform(rng, (cfg.head_hidden, cfg.n_qubits),
                                              cfg.n_qubits))
        self._add("head1.b", np.zeros(cfg.head_hidden))
        self._add("hbn.gamma", np.ones(cfg.head_hidden))
        self._add("hbn.beta", np.zeros(cfg.head_hidden))
        self.bn_states["hbn"] = BatchNormState(cfg.head_hidden)
        self._add("head2.w", _kaiming_uniform(rng, (cfg.n_classes, cfg.head_hidden),
                                              cfg.head_hidden))
        self._add("head2.b", np.zeros(cfg.n_classes))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    # -- stages ------------------------------------------------------------

    def cnn_extract(self, x: Tensor, mode: str, rng=None) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_hw, cfg.input_hw):
            raise DimensionError(
                f"expected input (B,{cfg.in_channels},{cfg.input_hw},{cfg.input_hw}), "
                f"got {x.shape}"
            )
        p = self.params
        out = x
        for i, pdrop in enumerate(cfg.conv_dropouts, start=1):
            out = T.conv2d(out, p[f"conv{i}.w"], p[f"conv{i}.b"])
            out = T.batchnorm(out, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                              self.bn_states[f"bn{i}"], mode)
            out = T.leaky_relu(out, 0.1)
            out = T.maxpool2d(out)
            out = T.dropout2d(out, pdrop, rng, mode)
        return out

    def self_attend(self, tokens: Tensor, return_weights: bool = False):
        """Multi-head scaled dot-product attention over (B, T, 128) tokens,
        mean-pooled over tokens to (B, 128)."""
        p = self.params
        B, t, d = tokens.shape
        if d != ATTENTION_DIM:
            raise DimensionError(f"token dim must be {ATTENTION_DIM}, got {d}")
        heads = self.config.attention_heads
        dk = d // heads

        def project(name):
            flat = T.reshape(tokens, (B * t, d))
            proj = T.linear(flat, p[f"attn.w{name}"], p[f"attn.b{name}"])
            per_head = T.reshape(proj, (B, t, heads, dk))
            return T.transpose(per_head, (0, 2, 1, 3))  # (B, H, T, dk)

        q, k, v = project("q"), project("k"), project("v")
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B * t, d))
        out = T.linear(merged, p["attn.wo"], p["attn.bo"])
        pooled = T.tmean(T.reshape(out, (B, t, d)), axis=1)
        if return_weights:
            return pooled, attn.data.copy()
        return pooled

    def cross_attend(self, f_cnn: Tensor, return_weights: bool = False):
        """CNN features query the learnable embedding rows (keys = values)."""
        p = self.params
        ew = self.config.embed_width
        if f_cnn.ndim != 2 or f_cnn.shape[1] != ATTENTION_DIM:
            raise DimensionError(
                f"cross_attend expects (B,{ATTENTION_DIM}), got {f_cnn.shape}"
            )
        q = T.linear(f_cnn, p["cross.wq"], p["cross.bq"])  # (B, ew)
        k = T.linear(p["eq"], p["cross.wk"], p["cross.bk"])  # (nq, ew)
        v = T.linear(p["eq"], p["cross.wv"], p["cross.bv"])
        scores = T.mul(T.matmul(q, T.transpose(k, (1, 0))), 1.0 / math.sqrt(ew))
        attn = T.softmax(scores, axis=-1)  # (B, nq)
        out = T.matmul(attn, v)  # (B, ew)
        if return_weights:
            return out, attn.data.copy()
        return out

    def positional_encode(self, q: Tensor) -> Tensor:
        """Add the sinusoidal table over (position, channel) = (n_qubits, 16)."""
        if q.ndim != 2 or q.shape[1] != self.config.quantum_input_dim:
            raise DimensionError(
                f"positional_encode expects (B,{self.config.quantum_input_dim}), "
                f"got {q.shape}"
            )
        return T.add(q, self._pe)

    def gate_fuse(self, f_quantum: Tensor, f_original: Tensor) -> Tensor:
        """Sigmoid-gated convex blend of the two 64-d feature vectors."""
        if f_quantum.shape != f_original.shape:
            raise DimensionError(
                f"gate_fuse shapes disagree: {f_quantum.shape} vs {f_original.shape}"
            )
        p = self.params
        g = T.sigmoid(T.linear(f_quantum, p["gate.w"], p["gate.b"]))
        return T.add(f_original, T.mul(g, T.add(f_quantum, T.mul(f_original, -1.0))))

    def _quantum_expect(self, angles: Tensor) -> Tensor:
        """Per-sample circuit evaluation as a differentiable graph node."""
        cfg = self.config
        theta = self.params["theta"]
        qparams = QuantumLayerParams(cfg.n_qubits, cfg.n_layers, theta.data,
                                     cfg.connectivity)
        B = angles.shape[0]
        data = np.empty((B, cfg.n_qubits))
        for b in range(B):
            data[b] = circuit_forward(angles.data[b], qparams)

        def bw():
            g = out.grad
            dphi = np.empty_like(angles.data)
            dtheta = np.zeros_like(theta.data)
            for b in range(B):
                dp, dt = circuit_gradient(angles.data[b], qparams, g[b],
                                          cfg.gradient_method)
                dphi[b] = dp
                dtheta += dt
            if angles.requires_grad:
                angles.accumulate_grad(dphi)
            if theta.requires_grad:
                theta.accumulate_grad(dtheta)

        out = T._from_op(data, (angles, theta), bw)
        return out

    # -- full pipeline -----------------------------------------------------

    def forward(self, x: Tensor, mode: str = "train", rng=None,
                capture: dict | None = None) -> Tensor:
        """Run the network; returns logits (B, n_classes).

        ``capture``, when given, receives copies of the gated features
        ("gated") and the 4-d pre-head vector ("qexp").
        """
        cfg = self.config
        if mode == "train" and rng is None:
            rng = self.dropout_rng
        f = self.cnn_extract(x, mode, rng)  # (B,128,8,8)
        B = f.shape[0]
        t = f.shape[2] * f.shape[3]
        tokens = T.transpose(T.reshape(f, (B, ATTENTION_DIM, t)), (0, 2, 1))
        attended = self.self_attend(tokens)  # (B,128)
        fq = self.cross_attend(attended)  # (B,64)
        fq = T.linear(fq, self.params["qmap.w"], self.params["qmap.b"])
        fq = self.positional_encode(fq)
        f_orig = T.linear(attended, self.params["orig.w"], self.params["orig.b"])
        gated = self.gate_fuse(fq, f_orig)
        if cfg.quantum_enabled:
            angles = gated[:, : cfg.n_qubits]
            qexp = self._quantum_expect(angles)
        else:
            qexp = T.linear(gated, self.params["abl.w"], self.params["abl.b"])
        if capture is not None:
            capture["gated"] = gated.data.copy()
            capture["qexp"] = qexp.data.copy()
        h = T.linear(qexp, self.params["head1.w"], self.params["head1.b"])
        h = T.batchnorm(h, self.params["hbn.gamma"], self.params["hbn.beta"],
                        self.bn_states["hbn"], mode)
        h = T.leaky_relu(h, 0.1)
        h = T.dropout(h, cfg.head_dropout, rng, mode)
        return T.linear(h, self.params["head2.w"], self.params["head2.b"])

    # -- reporting and persistence ------------------------------------------

    def count_params(self) -> dict[str, int]:
        """Exact itemized count of trainable scalars, plus 'total'."""
        counts = {name: t.size for name, t in self.params.items()}
        counts["total"] = sum(counts.values())
        return counts

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays in a fixed order: params then running stats."""
        items = [(name, t.data) for name, t in self.params.items()]
        for name, st in self.bn_states.items():
            items.append((f"{name}.running_mean", st.running_mean))
            items.append((f"{name}.running_var", st.running_var))
        return items

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = {name for name, _ in self.state_arrays()}
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise DataError(
                f"checkpoint/config mismatch: missing {missing}, unexpected {extra}"
            )
        for name, arr in arrays.items():
            if name in self.params:
                tgt = self.params[name].data
            else:
                base, field = name.rsplit(".", 1)
                tgt = getattr(self.bn_states[base], field)
            if tgt.shape != arr.shape:
                raise DataError(
                    f"checkpoint/config mismatch: {name} has shape {arr.shape}, "
                    f"expected {tgt.shape}"
                )
            tgt[...] = arr

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.load_state_arrays(snap)


# ---------------------------------------------------------------------------
# checkpoint file format (versioned binary)
#
#   magic "HQNNCKP1" | u32 version | u64 header length | JSON header |
#   raw little-endian float64 buffers in header order.

_MAGIC = b"HQNNCKP1"
_VERSION = 1


def save_checkpoint(path, model: HQNNModel, optimizer_state: dict | None = None) -> None:
    """Write config, parameters, batchnorm stats, optimizer and RNG state."""
    arrays = model.state_arrays()
    opt_arrays: list[tuple[str, np.ndarray]] = []
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {"t": optimizer_state["t"]}
        for i, (m, v) in enumerate(zip(optimizer_state["m"], optimizer_state["v"])):
            opt_arrays.append((f"opt.m{i}", m))
            opt_arrays.append((f"opt.v{i}", v))
    header = {
        "format": "hqnn-checkpoint",
        "version": _VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays + opt_arrays],
        "optimizer": opt_meta,
        "rng": rng_state_to_json(model.dropout_rng),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays + opt_arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (model, optimizer_state or None)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen])
    offset = 20 + hlen
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[meta["name"]] = arr.reshape(shape).astype(np.float64)
    model = HQNNModel(ModelConfig.from_dict(header["config"]), seed=header["seed"])
    model.load_state_arrays({n: a for n, a in arrays.items() if not n.startswith("opt.")})
    model.dropout_rng = rng_state_from_json(header["rng"])
    opt_state = None
    if header["optimizer"] is not None:
        n = len(model.parameters())
        opt_state = {
            "t": header["optimizer"]["t"],
            "m": [arrays[f"opt.m{i}"] for i in range(n)],
            "v": [arrays[f"opt.v{i}"] for i in range(n)],
        }
    return model, opt_state
