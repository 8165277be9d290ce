"""Iterative solvers that minimize the variational cost.

The trainable solver is a convolutional LSTM fed the (scaled) cost
gradient; each step subtracts a learned linear map of the LSTM output
from the state. Unrolled for a fixed number of iterations it forms one
differentiable reconstruction operator. A parameter-free fixed-point
solver (repeated prior application with data overwriting) is provided as
the classic baseline variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .prior import CostWeights, PriorParams, variational_cost


class NumericError(RuntimeError):
    """A solver or training iterate became non-finite."""


@dataclass
class SolverConfig:
    state_channels: int = 21
    hidden: int = 32
    kernel_size: int = 3
    padding: str = "circular"
    # None resolves to the state size, so the LSTM sees the raw
    # sum-gradient (grid-size-independent per-cell scale)
    alpha: float | None = None


_GATES = ("inp", "forget", "out", "cand")


class SolverParams:
    """Conv-LSTM gate kernels/biases plus the linear state-update map."""

    def __init__(self, cfg: SolverConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: SolverConfig, seed: int) -> "SolverParams":
        rng = np.random.default_rng(seed)
        c, h, k = cfg.state_channels, cfg.hidden, cfg.kernel_size
        p: dict[str, Tensor] = {}
        for gate in _GATES:
            w = rng.standard_normal((h, c + h, k, k)) / np.sqrt((c + h) * k * k)
            p[f"gate.{gate}.w"] = Tensor(w, requires_grad=True)
            p[f"gate.{gate}.b"] = Tensor(np.zeros(h), requires_grad=True)
        # small update map so the untrained solver starts near the identity
        p["tmap.w"] = Tensor(1e-2 * rng.standard_normal((c, h, 1, 1)), requires_grad=True)
        p["tmap.b"] = Tensor(np.zeros(c), requires_grad=True)
        return cls(cfg, p)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def n_params(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    def copy(self) -> "SolverParams":
        return SolverParams(
            self.cfg, {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.params.items()}
        )


@dataclass
class SolverState:
    h: Tensor
    c: Tensor
    iteration: int = 0

    @classmethod
    def zeros(cls, batch: int, hidden: int, H: int, W: int) -> "SolverState":
        return cls(h=Tensor(np.zeros((batch, hidden, H, W))), c=Tensor(np.zeros((batch, hidden, H, W))))


def grad_step(
    x: Tensor, grad: Tensor, s: SolverState, params: SolverParams
) -> tuple[Tensor, SolverState]:
    """One learned descent step: x' = x - T(LSTM(alpha * grad, h, c))."""
    if x.data.shape != grad.data.shape:
        raise ShapeError(f"grad_step: state {x.data.shape} vs gradient {grad.data.shape}")
    alpha = params.cfg.alpha
    if alpha is None:
        alpha = float(np.prod(x.data.shape[1:]))
    inp = ad.smul(grad, alpha)
    stacked = ad.concat([inp, s.h])
    # the four gate convolutions share their input; run them as one kernel
    p = params.params
    w_all = ad.concat([p[f"gate.{g}.w"] for g in _GATES], axis=0)
    pre = ad.conv2d(stacked, w_all, padding=params.cfg.padding)
    h = params.cfg.hidden
    pre_i, pre_f, pre_o, pre_c = (
        ad.bias_add(part, p[f"gate.{g}.b"])
        for part, g in zip(ad.split(pre, [h, h, h, h]), _GATES)
    )
    i = ad.sigmoid(pre_i)
    f = ad.sigmoid(pre_f)
    o = ad.sigmoid(pre_o)
    cand = ad.tanh(pre_c)
    c_next = ad.add(ad.mul(f, s.c), ad.mul(i, cand))
    h_next = ad.mul(o, ad.tanh(c_next))
    upd = ad.bias_add(
        ad.conv2d(h_next, params.params["tmap.w"], padding=params.cfg.padding),
        params.params["tmap.b"],
    )
    x_next = ad.sub(x, upd)
    return x_next, SolverState(h=h_next, c=c_next, iteration=s.iteration + 1)


def solve(
    x0: Tensor,
    y: Tensor,
    mask: np.ndarray,
    prior_params: PriorParams,
    solver_params: SolverParams,
    weights: CostWeights | None = None,
    n_iter: int = 5,
    training: bool = False,
) -> tuple[Tensor, list[float]]:
    """Run n_iter learned descent steps from x0.

    During training the inner cost gradients are taken with create_graph,
    so the whole unroll stays differentiable in the prior and solver
    parameters. At inference each iterate is detached to keep memory flat.
    Returns the final state and the per-iteration cost trace.
    """
    if n_iter < 1:
        raise ValueError("solve: n_iter must be >= 1")
    weights = weights or CostWeights()
    B, _, H, W = x0.data.shape
    x = x0 if x0.requires_grad else Tensor(x0.data, requires_grad=True)
    s = SolverState.zeros(B, solver_params.cfg.hidden, H, W)
    trace: list[float] = []
    for it in range(n_iter):
        cost = variational_cost(x, y, mask, weights, prior_params)
        cval = float(cost.data)
        if not np.isfinite(cval):
            raise NumericError(f"variational cost non-finite at solver iteration {it}")
        trace.append(cval)
        (gx,) = ad.backward(cost, wrt=[x], create_graph=training)
        if not np.all(np.isfinite(gx.data)):
            raise NumericError(f"cost gradient non-finite at solver iteration {it}")
        x, s = grad_step(x, gx, s, solver_params)
        if not training:
            # detach so the consumed graph can be freed between iterations
            x = Tensor(x.data, requires_grad=True)
            s = SolverState(h=Tensor(s.h.data), c=Tensor(s.c.data), iteration=s.iteration)
    return x, trace


def fixed_point_solve(
    x0: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    phi_fn,
    n_fp: int = 10,
) -> np.ndarray:
    """Parameter-free solver: iterate the prior, re-imposing data on the mask.

    Observed cells carry y bit-exactly after every iteration; gap cells
    keep the prior output. phi_fn maps an ndarray to an ndarray of the
    same shape.
    """
    if n_fp < 1:
        raise ValueError("fixed_point_solve: n_fp must be >= 1")
    m = np.asarray(mask, dtype=bool)
    x = np.where(m, y, np.asarray(x0, dtype=np.float64))
    for it in range(n_fp):
        x = np.asarray(phi_fn(x), dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"fixed-point iterate non-finite at iteration {it}")
        x = np.where(m, y, x)
    return x
