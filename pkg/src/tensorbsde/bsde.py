"""Deep-BSDE training for the Heston pricing PDE.

Each iteration simulates a fresh batch of paths, evaluates the network
estimate u_hat(t_i, X_i, v_i) and its (X, v)-gradients along every path,
rolls a second estimate u_tilde forward through the discretised backward
SDE,

    u_tilde_{i+1} = (1 + r dt) u_hat_i
                    + du/dX_i * sqrt(v_i+) dW_i^X
                    + du/dv_i * eta sqrt(v_i+) (rho dW_i^X
                                                + sqrt(1-rho^2) dZ_i),

and minimises the mismatch between the two estimators plus a terminal
payoff penalty.  The t=0 network value is the price estimate.

Both the pathwise residuals and the gradients of the loss flow through
the input-gradient graph, so parameter updates see exact second-order
derivatives (d/d theta of du/dx).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import Adam, Network, NetworkSpec, build_network, param_count
from .rng import mix64
from .sde import HestonParams, PathSet, simulate_heston

# Stream tags for deriving independent sub-seeds from one run seed.
INIT_TAG = 1 << 40


def payoff(x_terminal: np.ndarray, strike: float, kind: str = "call") -> np.ndarray:
    """Vanilla payoff evaluated on terminal log-prices."""
    s = np.exp(np.asarray(x_terminal, dtype=np.float64))
    if kind == "call":
        return np.maximum(s - strike, 0.0)
    if kind == "put":
        return np.maximum(strike - s, 0.0)
    raise ValueError(f"unknown payoff kind {kind!r}")


def _rollforward_coeffs(paths: PathSet, params: HestonParams):
    """Constant diffusion factors of the discrete backward SDE."""
    v_plus = np.maximum(paths.v[:, :-1], 0.0)
    root_v = np.sqrt(v_plus)
    corr_z = np.sqrt(1.0 - params.rho * params.rho)
    coef_x = root_v * paths.dwx
    coef_v = params.eta * root_v * (params.rho * paths.dwx + corr_z * paths.dz)
    return coef_x, coef_v


def utilde_rollforward(
    uhat: np.ndarray,
    grad_x: np.ndarray,
    grad_v: np.ndarray,
    paths: PathSet,
    params: HestonParams,
) -> np.ndarray:
    """One-step Euler propagation of the network estimate along each path.

    All inputs are (n_paths, n_steps+1) arrays evaluated on the path
    grid; column 0 of the result copies uhat (the two estimators agree
    at t=0 by construction).
    """
    shape = paths.x.shape
    for name, arr in (("uhat", uhat), ("grad_x", grad_x), ("grad_v", grad_v)):
        if arr.shape != shape:
            raise ValueError(f"{name} has shape {arr.shape}, want {shape}")
    coef_x, coef_v = _rollforward_coeffs(paths, params)
    growth = 1.0 + params.rate * paths.dt
    utilde = np.empty_like(uhat)
    utilde[:, 0] = uhat[:, 0]
    utilde[:, 1:] = (
        growth * uhat[:, :-1] + grad_x[:, :-1] * coef_x + grad_v[:, :-1] * coef_v
    )
    return utilde


def bsde_loss(
    uhat: np.ndarray,
    utilde: np.ndarray,
    x_terminal: np.ndarray,
    strike: float,
    kind: str = "call",
    loss: str = "logcosh",
) -> float:
    """Mean pathwise mismatch over steps 1..N plus the terminal penalty."""
    if uhat.shape != utilde.shape:
        raise ValueError(f"shape mismatch: {uhat.shape} vs {utilde.shape}")
    if x_terminal.shape != (uhat.shape[0],):
        raise ValueError(
            f"x_terminal has shape {x_terminal.shape}, want ({uhat.shape[0]},)"
        )
    match_resid = uhat[:, 1:] - utilde[:, 1:]
    term_resid = uhat[:, -1] - payoff(x_terminal, strike, kind)
    if loss == "logcosh":
        return float(np.mean(ad._logcosh(match_resid)) + np.mean(ad._logcosh(term_resid)))
    if loss == "mse":
        return float(np.mean(match_resid**2) + np.mean(term_resid**2))
    raise ValueError(f"unknown loss {loss!r}")


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkSpec
    heston: HestonParams = HestonParams()
    n_steps: int = 50
    batch_size: int = 100
    iterations: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    payoff_kind: str = "call"
    strike: float = 1.0
    loss: str = "logcosh"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.payoff_kind not in ("call", "put"):
            raise ValueError(f"unknown payoff kind {self.payoff_kind!r}")
        if self.loss not in ("logcosh", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainHistory:
    config: TrainConfig
    losses: np.ndarray
    prices: np.ndarray
    wallclock_ms: np.ndarray
    initial_price: float
    network: Network
    seed: int = field(init=False)

    def __post_init__(self):
        self.seed = self.config.seed
        n = self.config.iterations
        if not (len(self.losses) == len(self.prices) == len(self.wallclock_ms) == n):
            raise ValueError("history lengths must equal the iteration count")

    @property
    def final_price(self) -> float:
        return float(self.prices[-1]) if len(self.prices) else self.initial_price

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if len(self.losses) else float("nan")


def _loss_graph(
    net: Network, paths: PathSet, params: HestonParams, cfg: TrainConfig
) -> tuple[ad.Expr, float]:
    n_paths, n_cols = paths.x.shape
    t_cols = np.broadcast_to(paths.t, (n_paths, n_cols))
    inputs = np.column_stack([t_cols.ravel(), paths.x.ravel(), paths.v.ravel()])
    inp = ad.constant(inputs)
    u_flat = net.forward_expr(inp)
    (grad_in,) = ad.input_gradient(u_flat, [inp])
    u = ad.reshape(u_flat, (n_paths, n_cols))
    grad_x = ad.reshape(grad_in[:, 1:2], (n_paths, n_cols))
    grad_v = ad.reshape(grad_in[:, 2:3], (n_paths, n_cols))
    coef_x, coef_v = _rollforward_coeffs(paths, params)
    growth = 1.0 + params.rate * paths.dt
    utilde_tail = ad.add(
        ad.smul(growth, u[:, :-1]),
        ad.add(
            ad.mul(grad_x[:, :-1], ad.constant(coef_x)),
            ad.mul(grad_v[:, :-1], ad.constant(coef_v)),
        ),
    )
    match_resid = ad.sub(u[:, 1:], utilde_tail)
    term_target = payoff(paths.x[:, -1], cfg.strike, cfg.payoff_kind).reshape(-1, 1)
    term_resid = ad.sub(u[:, n_cols - 1 : n_cols], ad.constant(term_target))
    penalty = ad.logcosh if cfg.loss == "logcosh" else ad.square
    loss = ad.add(ad.mean_all(penalty(match_resid)), ad.mean_all(penalty(term_resid)))
    return loss, float(u_flat.value[0, 0])


def _price_now(net: Network, params: HestonParams) -> float:
    probe = np.array([[0.0, np.log(params.s0), params.v0]])
    return float(net.forward(probe)[0, 0])


def train(config: TrainConfig) -> TrainHistory:
    """Run the training loop; same config gives a bit-identical history."""
    net = build_network(config.network, mix64(config.seed, INIT_TAG))
    adam = Adam(net.parameters(), learning_rate=config.learning_rate)
    params = config.heston
    initial_price = _price_now(net, params)
    losses = np.empty(config.iterations)
    prices = np.empty(config.iterations)
    wallclock = np.empty(config.iterations)
    for it in range(config.iterations):
        tic = time.perf_counter()
        paths = simulate_heston(
            params, config.n_steps, config.batch_size, seed=mix64(config.seed, it)
        )
        loss_expr, _ = _loss_graph(net, paths, params, config)
        grads = ad.backward(loss_expr)
        loss_val = float(loss_expr.value)
        if not np.isfinite(loss_val):
            raise RuntimeError(
                f"training aborted: non-finite loss {loss_val} at iteration {it} "
                f"(seed {config.seed}, architecture {config.network.name})"
            )
        adam.step(grads)
        losses[it] = loss_val
        prices[it] = _price_now(net, params)
        wallclock[it] = (time.perf_counter() - tic) * 1e3
    return TrainHistory(
        config=config,
        losses=losses,
        prices=prices,
        wallclock_ms=wallclock,
        initial_price=initial_price,
        network=net,
    )


def price_at_t0(histories) -> tuple[float, float]:
    """Cross-run mean and population standard deviation of the final
    price estimate."""
    finals = [h.final_price for h in histories]
    if not finals:
        raise ValueError("need at least one completed run")
    return float(np.mean(finals)), float(np.std(finals))


# ---------------------------------------------------------------------------
# artifacts


def write_run_csv(history: TrainHistory, path) -> None:
    """Per-iteration trace: (iteration, loss, price_t0, wallclock_ms).

    All floats are written with shortest round-trip formatting, so the
    deterministic columns are byte-stable across reruns.
    """
    with open(path, "w", newline="") as fh:
        fh.write("iteration,loss,price_t0,wallclock_ms\n")
        for i in range(len(history.losses)):
            fh.write(
                f"{i},{float(history.losses[i])!r},"
                f"{float(history.prices[i])!r},{float(history.wallclock_ms[i])!r}\n"
            )


def summary_dict(history: TrainHistory, config_hash: str = "") -> dict:
    cfg = history.config
    return {
        "schema": "v1",
        "config_hash": config_hash,
        "architecture": cfg.network.name,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "param_count": param_count(cfg.network),
        "final_price": history.final_price,
        "final_loss": history.final_loss,
        "initial_price": history.initial_price,
    }


def write_summary_json(history: TrainHistory, path, config_hash: str = "") -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(history, config_hash), fh, indent=2)
        fh.write("\n")
