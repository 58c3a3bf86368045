"""Laplace mechanism with decaying per-agent scale schedules.

Randomness comes from a counter-based keyed generator (Philox4x64-10,
bit-compatible with numpy's Philox) evaluated directly on a lattice of
counters.  Each draw is addressed by (master seed, purpose, run, agent,
step, position), so identical addresses give identical bits on every
platform, runs never share generator state, and skipping a draw (for
example when noise is switched off) does not shift any other stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError

# Philox4x64 round constants (same as Random123 / numpy).
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_ROUNDS = 10

# Key word 1 separates independent stream families.
PURPOSE_NOISE = 0
PURPOSE_INIT = 1
PURPOSE_PARAMS = 2

# Redraw attempts move to a reserved high range of the block word.
_REDRAW_BASE = np.uint64(1) << np.uint64(62)

_INV_2_53 = float(2.0 ** -53)


def _mulhilo(a: np.ndarray, b: np.uint64):
    lo = a * b
    ah = a >> np.uint64(32)
    al = a & _MASK32
    bh = b >> np.uint64(32)
    bl = b & _MASK32
    ll = al * bl
    lh = al * bh
    hl = ah * bl
    mid = (ll >> np.uint64(32)) + (lh & _MASK32) + (hl & _MASK32)
    hi = ah * bh + (lh >> np.uint64(32)) + (hl >> np.uint64(32)) + (mid >> np.uint64(32))
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0: np.uint64, k1: np.uint64):
    """Philox4x64-10 block function, vectorized over counter arrays."""
    old = np.seterr(over="ignore")
    try:
        for _ in range(_ROUNDS):
            hi0, lo0 = _mulhilo(c0, _M0)
            hi1, lo1 = _mulhilo(c2, _M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    finally:
        np.seterr(**old)
    return c0, c1, c2, c3


@dataclass(frozen=True)
class RngSpec:
    """Master seed for all randomness in a scenario.

    Substreams are addressed by (run, agent, step); the position inside
    a substream is the counter's block word.
    """

    master_seed: int

    def __post_init__(self):
        s = int(self.master_seed)
        if not (0 <= s < 2 ** 64):
            raise ConfigError("master seed must fit in 64 bits (0 <= seed < 2**64)")


def _key(spec: RngSpec, purpose: int):
    return np.uint64(spec.master_seed), np.uint64(purpose)


def _bits_to_unit(bits: np.ndarray) -> np.ndarray:
    return (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform_block(spec: RngSpec, purpose: int, run, agent, step, count: int,
                  attempt: int = 0) -> np.ndarray:
    """``count`` uniforms in [0, 1) for each (run, agent, step) address.

    ``run``, ``agent``, ``step`` are broadcast-compatible integer arrays;
    the result has their broadcast shape plus a trailing axis of length
    ``count``.
    """
    run, agent, step = np.broadcast_arrays(
        np.asarray(run, dtype=np.uint64),
        np.asarray(agent, dtype=np.uint64),
        np.asarray(step, dtype=np.uint64),
    )
    shape = run.shape
    blocks = (count + 3) // 4
    base = np.arange(blocks, dtype=np.uint64)
    if attempt:
        base = base + _REDRAW_BASE * np.uint64(attempt)
    c0 = np.broadcast_to(base, shape + (blocks,)).ravel()
    c1 = np.repeat(step.ravel(), blocks)
    c2 = np.repeat(agent.ravel(), blocks)
    c3 = np.repeat(run.ravel(), blocks)
    k0, k1 = _key(spec, purpose)
    x0, x1, x2, x3 = philox4x64(c0.copy(), c1, c2, c3, k0, k1)
    bits = np.stack([x0, x1, x2, x3], axis=-1).reshape(shape + (blocks * 4,))
    return _bits_to_unit(bits[..., :count])


def laplace_from_uniform(spec: RngSpec, purpose: int, run, agent, step,
                         u: np.ndarray, count: int) -> np.ndarray:
    """Inverse-CDF map u -> Laplace(0, 1), redrawing the measure-zero edge.

    With v = u - 1/2 ~ U(-1/2, 1/2), the draw is -sign(v) * ln(1 - 2|v|).
    Entries where 1 - 2|v| underflows to zero are redrawn from a reserved
    counter range so the guard never disturbs neighbouring draws.
    """
    v = u - 0.5
    attempt = 1
    while True:
        bad = (1.0 - 2.0 * np.abs(v)) <= 0.0
        if not bad.any():
            break
        fresh = uniform_block(spec, purpose, run, agent, step, count, attempt=attempt)
        v = np.where(bad, fresh - 0.5, v)
        attempt += 1
    return -np.sign(v) * np.log1p(-2.0 * np.abs(v))


def sample_laplace(spec: RngSpec, run: int, agent: int, step: int,
                   b: float, dim: int) -> np.ndarray:
    """``dim`` i.i.d. Laplace(0, b) draws from the (run, agent, step) stream."""
    if not b > 0:
        raise PreconditionError(f"Laplace scale must be positive, got {b}")
    u = uniform_block(spec, PURPOSE_NOISE, run, agent, step, dim)
    return b * laplace_from_uniform(spec, PURPOSE_NOISE, run, agent, step, u, dim)


def laplace_noise_block(spec: RngSpec, run: int, scales: np.ndarray,
                        dim: int) -> np.ndarray:
    """Noise for one run: shape (H, N, dim) given per-step scales (H, N).

    Bit-identical to calling :func:`sample_laplace` at every (run, agent,
    step) address; zero scale yields a zero vector without consuming or
    shifting any stream.
    """
    scales = np.asarray(scales, dtype=float)
    h, n = scales.shape
    steps, agents = np.meshgrid(np.arange(h), np.arange(n), indexing="ij")
    u = uniform_block(spec, PURPOSE_NOISE, run, agents, steps, dim)
    unit = laplace_from_uniform(spec, PURPOSE_NOISE, run, agents, steps, u, dim)
    return scales[:, :, None] * unit


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-agent Laplace scale b(k) = c * p(k).

    Kinds: ``exponential`` p(k) = g**k with g in (0, 1); ``polynomial``
    p(k) = (k+1)**-power with integer power >= 1; ``custom`` an explicit
    finite nonnegative sequence.  ``c = 0`` is the noise-off convention
    used by noise-free experiments.
    """

    c: float
    kind: str
    g: float | None = None
    power: int | None = None
    seq: tuple | None = None

    def __post_init__(self):
        if not (self.c >= 0 and np.isfinite(self.c)):
            raise ConfigError(f"noise scale c must be >= 0, got {self.c}")
        if self.kind == "exponential":
            if self.g is None or not (0 < self.g < 1):
                raise ConfigError(f"exponential schedule needs g in (0, 1), got {self.g}")
        elif self.kind == "polynomial":
            if self.power is None or int(self.power) < 1:
                raise ConfigError(f"polynomial schedule needs integer power >= 1, got {self.power}")
            object.__setattr__(self, "power", int(self.power))
        elif self.kind == "custom":
            if self.seq is None or len(self.seq) == 0:
                raise ConfigError("custom schedule needs a nonempty sequence")
            seq = tuple(float(v) for v in self.seq)
            if any(v < 0 or not np.isfinite(v) for v in seq):
                raise ConfigError("custom schedule entries must be finite and >= 0")
            object.__setattr__(self, "seq", seq)
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")

    @staticmethod
    def exponential(c: float, g: float) -> "NoiseSchedule":
        return NoiseSchedule(c=c, kind="exponential", g=g)

    @staticmethod
    def polynomial(c: float, power: int) -> "NoiseSchedule":
        return NoiseSchedule(c=c, kind="polynomial", power=power)

    @staticmethod
    def custom(c: float, seq) -> "NoiseSchedule":
        return NoiseSchedule(c=c, kind="custom", seq=tuple(seq))


def p_at(s: NoiseSchedule, k: int) -> float:
    """Decay factor p(k) of the schedule."""
    if k < 0:
        raise PreconditionError(f"step must be >= 0, got {k}")
    if s.kind == "exponential":
        return float(s.g) ** k
    if s.kind == "polynomial":
        return float(k + 1) ** (-s.power)
    if k >= len(s.seq):
        raise PreconditionError(
            f"custom schedule has {len(s.seq)} entries, step {k} out of range")
    return s.seq[k]


def scale_at(s: NoiseSchedule, k: int) -> float:
    """Laplace scale b(k) = c * p(k)."""
    return s.c * p_at(s, k)


def is_summable(s: NoiseSchedule) -> bool:
    """Whether the decay factors p(k) have a finite sum."""
    if s.kind == "exponential":
        return True
    if s.kind == "polynomial":
        return s.power >= 2
    return True  # custom sequences are finite, hence summable
