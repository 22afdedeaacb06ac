"""Deterministic, addressable Gaussian noise streams.

Every normal variate the simulator consumes is a pure function of
(seed, run nonce, block, kind, particle index, step, coordinate), realized
on top of the counter-based Philox bit generator:

  * each (block, kind) pair keys its own Philox stream
    (kinds: idiosyncratic, common, initial);
  * within the idiosyncratic stream, step k owns the fixed-width slab of
    draws [k*S, (k+1)*S) with S = STEP_STRIDE, and particle i owns offsets
    i*d .. i*d+d-1 inside the slab, independent of how many particles a
    given run actually has;
  * uniforms map to normals through the inverse normal CDF (fixed
    consumption: one 64-bit draw per variate), so random access by counter
    arithmetic is exact.

The slab layout is what lets a small system and a large reference system
consume *identical* per-particle noise: particle i's draws sit at the same
offsets regardless of ensemble size.  It also makes results independent of
any internal parallelism: noise is addressed, never "next in line".
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.special import ndtri

KIND_IDIO = 0
KIND_COMMON = 1
KIND_INIT = 2

# Draws per (step, block) slab of the idiosyncratic stream.  Bounds the
# supported particles-per-block at STEP_STRIDE / dim.
STEP_STRIDE = 1 << 22

_TINY = float(np.finfo(np.float64).tiny)


def _root_word(seed: int, nonce: int = 0) -> int:
    """64-bit key word derived from (seed, nonce); distinct nonces give
    independent stream families (fresh noise for restarted runs)."""
    ss = SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(nonce)])
    return int(ss.generate_state(1, np.uint64)[0])


def _key(root: int, block: int, kind: int):
    return [root, (int(block) << 2) | kind]


def _to_normals(u: np.ndarray) -> np.ndarray:
    return ndtri(np.maximum(u, _TINY))


class IdioStream:
    """Per-block idiosyncratic stream, stepped sequentially.

    Each call to step_normals(n) returns the (n, d) normal slab for the
    next step; the generator then jumps to the next step boundary, so the
    values for particle i at step k never depend on n.
    """

    def __init__(self, root: int, block: int, dim: int):
        if dim > STEP_STRIDE:
            raise ValueError("dimension exceeds stream stride")
        self._bg = Philox(key=_key(root, block, KIND_IDIO))
        self._gen = Generator(self._bg)
        self._dim = dim

    def step_normals(self, n: int) -> np.ndarray:
        d = self._dim
        m = n * d
        if m > STEP_STRIDE:
            raise ValueError(f"{n} particles x {d} dims exceeds stride {STEP_STRIDE}")
        draw = -(-m // 4) * 4  # round up to the 4-draw Philox block
        u = self._gen.random(draw)[:m]
        self._bg.advance(STEP_STRIDE // 4 - draw // 4)
        return _to_normals(u).reshape(n, d)

    def skip_steps(self, k: int):
        self._bg.advance(k * (STEP_STRIDE // 4))


class CommonStream:
    """Per-block common-noise stream: one d-vector per step, sequential."""

    def __init__(self, root: int, block: int, dim: int):
        self._gen = Generator(Philox(key=_key(root, block, KIND_COMMON)))
        self._dim = dim
        self._buf = np.empty((0, dim))
        self._pos = 0

    def step_normals(self, chunk: int = 256) -> np.ndarray:
        if self._pos >= len(self._buf):
            u = self._gen.random(chunk * self._dim)
            self._buf = _to_normals(u).reshape(chunk, self._dim)
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        return z


def init_normals(root: int, block: int, n: int, dim: int) -> np.ndarray:
    """Initial-draw normals for particles 0..n-1 of a block (counter 0)."""
    gen = Generator(Philox(key=_key(root, block, KIND_INIT)))
    u = gen.random(n * dim)
    return _to_normals(u).reshape(n, dim)


def init_uniforms(root: int, block: int, n: int) -> np.ndarray:
    """Initial-draw uniforms (for resampling from a stored point cloud);
    taken from the tail of the init stream so they never collide with the
    normal draws of realistic dimensions."""
    gen = Generator(Philox(key=_key(root, block, KIND_INIT)))
    gen.bit_generator.advance((STEP_STRIDE // 4) * 1024)
    return gen.random(n)


def draw_normal(seed: int, block: int, kind: int, index: int, counter: int, dim: int,
                nonce: int = 0) -> np.ndarray:
    """Random access to a single stream element.

    kind KIND_IDIO: 'index' is the particle, 'counter' the step.
    kind KIND_COMMON: 'counter' is the step ('index' ignored).
    kind KIND_INIT: 'index' is the particle ('counter' ignored).
    """
    root = _root_word(seed, nonce)
    if kind == KIND_IDIO:
        offset = counter * STEP_STRIDE + index * dim
    elif kind == KIND_COMMON:
        offset = counter * dim
    elif kind == KIND_INIT:
        offset = index * dim
    else:
        raise ValueError(f"unknown stream kind {kind}")
    bg = Philox(key=_key(root, block, kind))
    bg.advance(offset // 4)
    u = Generator(bg).random(offset % 4 + dim)[offset % 4:]
    return _to_normals(u)
