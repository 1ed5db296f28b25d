"""Reproducible random number generation.

All randomness in this package flows through keyed Philox counter-based
streams.  A stream is identified by the pair ``(seed, stream)`` which is
used directly as the 2x64-bit Philox key, so any draw is addressable as
(key, counter position) and disjoint streams never overlap.  Standard
normals are produced by the Box-Muller transform applied to consecutive
uniform pairs: uniforms ``(u_{2k}, u_{2k+1})`` map to normals
``(z_{2k}, z_{2k+1})``.

Because streams are keyed rather than split from one sequential state,
path blocks can be generated in any order or in parallel and the result
is identical to sequential generation.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Paths are partitioned into fixed-size blocks; block b of a simulation
# draws from streams (2b, 2b+1) regardless of worker count or total size.
BLOCK_PATHS = 65536


def mix64(a: int, b: int) -> int:
    """Mix two 64-bit integers into one (splitmix64 finalizer).

    Used to derive sub-seeds, e.g. one per training iteration, from a
    user seed without overlapping the raw seed's own streams.
    """
    x = (a * 0x9E3779B97F4A7C15 + b + 1) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def uniform_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for the stream keyed by (seed, stream)."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, stream & _MASK64]))


def draw_normals(gen: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` standard normals from `gen` via Box-Muller.

    Consumes 2*ceil(count/2) uniforms; an odd request discards the sine
    branch of the final pair so successive calls stay pair-aligned.
    """
    pairs = (count + 1) // 2
    u = gen.random(2 * pairs)
    # 1 - u maps [0, 1) to (0, 1] so the log is always defined.
    radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
    angle = (2.0 * np.pi) * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count]


def gaussian_stream(seed: int, count: int, stream: int = 0) -> np.ndarray:
    """`count` reproducible standard normals from stream (seed, stream)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return draw_normals(uniform_generator(seed, stream), count)


def path_blocks(n_paths: int) -> list[tuple[int, int]]:
    """Fixed partition of path indices into (start, size) blocks."""
    return [
        (start, min(BLOCK_PATHS, n_paths - start))
        for start in range(0, n_paths, BLOCK_PATHS)
    ]


def correlated_increments(
    rho: float, dt: float, n_paths: int, n_steps: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Brownian increments (dW_x, dW_v, dZ), each of shape (n_paths, n_steps).

    Z is independent of W_x and dW_v = rho*dW_x + sqrt(1-rho^2)*dZ holds
    elementwise; every increment is N(0, dt).  Block b of paths draws
    dW_x from stream 2b and dZ from stream 2b+1, consumed step-major
    (all paths of step 0, then step 1, ...) so a streaming simulator can
    reproduce the same increments without materialising them.
    """
    if abs(rho) > 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    dwx = np.empty((n_paths, n_steps))
    dz = np.empty((n_paths, n_steps))
    sqdt = np.sqrt(dt)
    for block, (start, size) in enumerate(path_blocks(n_paths)):
        gen_x = uniform_generator(seed, 2 * block)
        gen_z = uniform_generator(seed, 2 * block + 1)
        for step in range(n_steps):
            dwx[start : start + size, step] = sqdt * draw_normals(gen_x, size)
            dz[start : start + size, step] = sqdt * draw_normals(gen_z, size)
    dwv = rho * dwx + np.sqrt(1.0 - rho * rho) * dz
    return dwx, dwv, dz
