"""Forward simulation: truncated-Euler Heston paths and GBM baskets.

The Heston scheme keeps the raw (possibly negative) discretised variance
as state and applies the truncation v+ = max(v, 0) wherever v enters a
square root or a drift:

    X_{n+1} = X_n + sqrt(v_n+) dW_n^X + (r - v_n+/2) dt
    v_{n+1} = v_n + kappa (theta - v_n+) dt + eta sqrt(v_n+) dW_n^v

with dW^v = rho dW^X + sqrt(1-rho^2) dZ and Z independent of W^X.

Paths are generated block-by-block from keyed streams (see :mod:`rng`),
so the streaming estimator used for million-path pricing reproduces the
exact same paths as :func:`simulate_heston` for equal (seed, M, N).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rng import draw_normals, path_blocks, uniform_generator


@dataclass(frozen=True)
class HestonParams:
    """Model parameters; rates and clocks are per year."""

    rate: float = 0.0
    kappa: float = 3.0
    theta: float = 0.16
    eta: float = 1.0
    rho: float = -0.5
    s0: float = 1.0
    v0: float = 0.04
    maturity: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0 or self.theta <= 0 or self.eta <= 0:
            raise ValueError("kappa, theta, eta must be positive")
        if abs(self.rho) > 1.0:
            raise ValueError(f"correlation must lie in [-1, 1], got {self.rho}")
        if self.s0 <= 0:
            raise ValueError("spot must be positive")
        if self.v0 < 0:
            raise ValueError("initial variance must be non-negative")
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")


@dataclass
class PathSet:
    """M paths of (X, v) on a uniform grid plus the increments that
    generated them; replaying the increments regenerates X and v
    bit-identically."""

    t: np.ndarray  # (N+1,)
    x: np.ndarray  # (M, N+1), X = log S
    v: np.ndarray  # (M, N+1)
    dwx: np.ndarray  # (M, N)
    dz: np.ndarray  # (M, N)
    seed: int

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def _heston_step(
    x: np.ndarray,
    v: np.ndarray,
    dwx: np.ndarray,
    dwv: np.ndarray,
    p: HestonParams,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    v_plus = np.maximum(v, 0.0)
    root_v = np.sqrt(v_plus)
    x_next = x + root_v * dwx + (p.rate - 0.5 * v_plus) * dt
    v_next = v + p.kappa * (p.theta - v_plus) * dt + p.eta * root_v * dwv
    return x_next, v_next


def simulate_heston(
    params: HestonParams, n_steps: int, n_paths: int, seed: int
) -> PathSet:
    """Simulate and store full paths; memory scales with M*N (use
    :func:`heston_terminal` for large M)."""
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be positive")
    dt = params.maturity / n_steps
    sqdt = np.sqrt(dt)
    corr_z = np.sqrt(1.0 - params.rho * params.rho)
    x = np.empty((n_paths, n_steps + 1))
    v = np.empty((n_paths, n_steps + 1))
    dwx = np.empty((n_paths, n_steps))
    dz = np.empty((n_paths, n_steps))
    x[:, 0] = np.log(params.s0)
    v[:, 0] = params.v0
    for block, (start, size) in enumerate(path_blocks(n_paths)):
        gen_x = uniform_generator(seed, 2 * block)
        gen_z = uniform_generator(seed, 2 * block + 1)
        rows = slice(start, start + size)
        for step in range(n_steps):
            dwx_s = sqdt * draw_normals(gen_x, size)
            dz_s = sqdt * draw_normals(gen_z, size)
            dwv_s = params.rho * dwx_s + corr_z * dz_s
            dwx[rows, step] = dwx_s
            dz[rows, step] = dz_s
            x[rows, step + 1], v[rows, step + 1] = _heston_step(
                x[rows, step], v[rows, step], dwx_s, dwv_s, params, dt
            )
    t = np.linspace(0.0, params.maturity, n_steps + 1)
    return PathSet(t=t, x=x, v=v, dwx=dwx, dz=dz, seed=seed)


def replay_paths(paths: PathSet, params: HestonParams) -> tuple[np.ndarray, np.ndarray]:
    """Re-run the scheme from the stored increments (replay determinism)."""
    n_paths, n_steps = paths.dwx.shape
    dt = params.maturity / n_steps
    corr_z = np.sqrt(1.0 - params.rho * params.rho)
    x = np.empty((n_paths, n_steps + 1))
    v = np.empty((n_paths, n_steps + 1))
    x[:, 0] = np.log(params.s0)
    v[:, 0] = params.v0
    for step in range(n_steps):
        dwv = params.rho * paths.dwx[:, step] + corr_z * paths.dz[:, step]
        x[:, step + 1], v[:, step + 1] = _heston_step(
            x[:, step], v[:, step], paths.dwx[:, step], dwv, params, dt
        )
    return x, v


def heston_terminal(
    params: HestonParams, n_steps: int, n_paths: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal (X_T, v_T) for M paths without storing the history.

    Same streams and arithmetic as :func:`simulate_heston`, so terminal
    values agree bit-for-bit for equal (seed, M, N).
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be positive")
    dt = params.maturity / n_steps
    sqdt = np.sqrt(dt)
    corr_z = np.sqrt(1.0 - params.rho * params.rho)
    x_out = np.empty(n_paths)
    v_out = np.empty(n_paths)
    for block, (start, size) in enumerate(path_blocks(n_paths)):
        gen_x = uniform_generator(seed, 2 * block)
        gen_z = uniform_generator(seed, 2 * block + 1)
        x = np.full(size, np.log(params.s0))
        v = np.full(size, params.v0)
        for _ in range(n_steps):
            dwx = sqdt * draw_normals(gen_x, size)
            dz = sqdt * draw_normals(gen_z, size)
            dwv = params.rho * dwx + corr_z * dz
            x, v = _heston_step(x, v, dwx, dwv, params, dt)
        x_out[start : start + size] = x
        v_out[start : start + size] = v
    return x_out, v_out


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n_paths: int


def mc_european_price(
    params: HestonParams,
    strike: float,
    kind: str = "call",
    n_steps: int = 1000,
    n_paths: int = 1_000_000,
    seed: int = 0,
) -> McEstimate:
    """Discounted Monte Carlo payoff mean under the truncated-Euler scheme."""
    x_t, _ = heston_terminal(params, n_steps, n_paths, seed)
    s_t = np.exp(x_t)
    if kind == "call":
        pay = np.maximum(s_t - strike, 0.0)
    elif kind == "put":
        pay = np.maximum(strike - s_t, 0.0)
    else:
        raise ValueError(f"unknown payoff kind {kind!r}")
    disc = np.exp(-params.rate * params.maturity)
    mean = disc * float(pay.mean())
    std_err = disc * float(pay.std(ddof=1) / np.sqrt(n_paths))
    return McEstimate(mean=mean, std_err=std_err, n_paths=n_paths)


def write_paths_csv(paths: PathSet, path) -> None:
    """Dump a PathSet as rows (path_id, step, t, X, v)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "step", "t", "X", "v"])
        for j in range(paths.n_paths):
            for i in range(paths.n_steps + 1):
                writer.writerow(
                    [j, i, repr(float(paths.t[i])), repr(float(paths.x[j, i])), repr(float(paths.v[j, i]))]
                )


# ---------------------------------------------------------------------------
# multi-asset geometric Brownian motion (independent drivers)


@dataclass(frozen=True)
class GbmBasketParams:
    """Basket of d independent lognormal assets with a common dividend yield."""

    n_assets: int
    s0: float = 100.0
    rate: float = 0.05
    dividend: float = 0.10
    volatility: float = 0.2
    maturity: float = 3.0
    n_exercise: int = 9

    def __post_init__(self):
        if self.n_assets < 1:
            raise ValueError("n_assets must be >= 1")
        if self.volatility <= 0:
            raise ValueError("volatility must be positive")
        if self.s0 <= 0:
            raise ValueError("spot must be positive")
        if self.maturity <= 0 or self.n_exercise < 1:
            raise ValueError("maturity and n_exercise must be positive")


def simulate_gbm_basket(
    params: GbmBasketParams, n_steps: int, n_paths: int, seed: int
) -> np.ndarray:
    """Exact log-Euler paths, shape (n_paths, n_steps+1, d).

    The log-normal update is exact at any step size, so n_steps only
    needs to cover the dates where prices are observed.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be positive")
    d = params.n_assets
    dt = params.maturity / n_steps
    drift = (params.rate - params.dividend - 0.5 * params.volatility**2) * dt
    volstep = params.volatility * np.sqrt(dt)
    s = np.empty((n_paths, n_steps + 1, d))
    s[:, 0, :] = params.s0
    for block, (start, size) in enumerate(path_blocks(n_paths)):
        gen = uniform_generator(seed, block)
        rows = slice(start, start + size)
        for step in range(n_steps):
            z = draw_normals(gen, size * d).reshape(size, d)
            s[rows, step + 1, :] = s[rows, step, :] * np.exp(drift + volstep * z)
    return s
