"""Deterministic random-number streams.

Every stochastic component draws from a Philox4x64 counter-based generator
keyed by ``(seed, stream, a, b)``. Philox is fully specified, so the same
key reproduces the same stream on any platform. Stream ids:

    0  stratified split (b = class index)
    1  model parameter init
    2  dropout masks
    3  epoch shuffling
    4  augmentation (a = epoch, b = sample index)
    5  synthetic image generation (b = image index)
"""
from __future__ import annotations

import numpy as np

STREAM_SPLIT = 0
STREAM_MODEL_INIT = 1
STREAM_DROPOUT = 2
STREAM_SHUFFLE = 3
STREAM_AUGMENT = 4
STREAM_SYNTH = 5

_M24 = (1 << 24) - 1


def make_rng(seed: int, stream: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Build the Philox generator for a (seed, stream, a, b) substream."""
    word = (
        (np.uint64(stream & 0xFFFF) << np.uint64(48))
        | (np.uint64(a & _M24) << np.uint64(24))
        | np.uint64(b & _M24)
    )
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), word], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def rng_state_to_json(gen: np.random.Generator) -> dict:
    """Serialize a Philox generator state into JSON-safe types."""
    st = gen.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def rng_state_from_json(blob: dict) -> np.random.Generator:
    """Rebuild a Philox generator from :func:`rng_state_to_json` output."""
    bitgen = np.random.Philox()
    bitgen.state = {
        "bit_generator": blob["bit_generator"],
        "state": {
            "counter": np.array(blob["counter"], dtype=np.uint64),
            "key": np.array(blob["key"], dtype=np.uint64),
        },
        "buffer": np.array(blob["buffer"], dtype=np.uint64),
        "buffer_pos": blob["buffer_pos"],
        "has_uint32": blob["has_uint32"],
        "uinteger": blob["uinteger"],
    }
    return np.random.Generator(bitgen)
