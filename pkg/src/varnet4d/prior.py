"""The learned prior and the variational cost it regularizes.

The prior is a residual two-scale CNN built from bilinear units: each
unit runs two hidden convolutions (one linear, one ReLU) and recombines
them through a pointwise conv over [linear, relu, linear*relu]. The same
two blocks process the input at full resolution and at a 2x pooled
resolution (shared weights, the net being fully convolutional); the
upsampled coarse branch and the fine branch are summed and mapped back
to state channels by a final linear conv, added residually to the input.

With every weight and bias at zero the operator is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass
class CostWeights:
    """Scalar weights of the observation and prior terms."""

    lambda_obs: float = 1.0
    lambda_prior: float = 1.0

    def __post_init__(self):
        if self.lambda_obs < 0 or self.lambda_prior < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.lambda_obs == 0 and self.lambda_prior == 0:
            raise ValueError("cost weights must not both be zero")


@dataclass
class PriorConfig:
    state_channels: int = 21  # 3 components x window length
    hidden: int = 16
    kernel_size: int = 3
    n_blocks: int = 2
    padding: str = "circular"

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and positive")


class PriorParams:
    """Named conv kernels/biases for the residual blocks and output conv."""

    def __init__(self, cfg: PriorConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: PriorConfig, seed: int) -> "PriorParams":
        rng = np.random.default_rng(seed)
        c, m, k = cfg.state_channels, cfg.hidden, cfg.kernel_size
        p: dict[str, Tensor] = {}

        def conv_init(name, c_out, c_in, ksz, zero=False):
            if zero:
                w = np.zeros((c_out, c_in, ksz, ksz))
            else:
                w = rng.standard_normal((c_out, c_in, ksz, ksz)) / np.sqrt(c_in * ksz * ksz)
            p[name + ".w"] = Tensor(w, requires_grad=True)
            p[name + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)

        for i in range(cfg.n_blocks):
            conv_init(f"block{i}.lin", m, c, k)
            conv_init(f"block{i}.relu", m, c, k)
            conv_init(f"block{i}.mix", c, 3 * m, 1)
        # zero-initialized output conv: the prior starts as the identity
        conv_init("out", c, c, k, zero=True)
        return cls(cfg, p)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def n_params(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    @staticmethod
    def expected_n_params(cfg: PriorConfig) -> int:
        """Closed-form parameter count for the architecture."""
        c, m, k = cfg.state_channels, cfg.hidden, cfg.kernel_size
        per_block = 2 * (c * m * k * k + m) + (3 * m * c + c)
        return cfg.n_blocks * per_block + (c * c * k * k + c)

    def copy(self) -> "PriorParams":
        return PriorParams(
            self.cfg, {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.params.items()}
        )


def _conv(p: PriorParams, name: str, x: Tensor) -> Tensor:
    y = ad.conv2d(x, p.params[name + ".w"], padding=p.cfg.padding)
    return ad.bias_add(y, p.params[name + ".b"])


def _bilinear_block(p: PriorParams, i: int, u: Tensor) -> Tensor:
    # the two hidden convolutions share their input; run them as one kernel
    w_all = ad.concat([p.params[f"block{i}.lin.w"], p.params[f"block{i}.relu.w"]], axis=0)
    both = ad.conv2d(u, w_all, padding=p.cfg.padding)
    m = p.cfg.hidden
    a_pre, b_pre = ad.split(both, [m, m])
    a = ad.bias_add(a_pre, p.params[f"block{i}.lin.b"])
    b = ad.relu(ad.bias_add(b_pre, p.params[f"block{i}.relu.b"]))
    z = _conv(p, f"block{i}.mix", ad.concat([a, b, ad.mul(a, b)]))
    return ad.add(u, z)


def _blocks(p: PriorParams, u: Tensor) -> Tensor:
    for i in range(p.cfg.n_blocks):
        u = _bilinear_block(p, i, u)
    return u


def phi_apply(params: PriorParams, x: Tensor) -> Tensor:
    """Residual two-scale prior: x + out(fine(x) + up(coarse(pool(x))))."""
    if x.data.ndim != 4 or x.data.shape[1] != params.cfg.state_channels:
        raise ShapeError(
            f"prior expects (B, {params.cfg.state_channels}, H, W) input, got {x.data.shape}"
        )
    fine = _blocks(params, x)
    coarse = ad.upsample_linear2(_blocks(params, ad.avg_pool2(x)))
    return ad.add(x, _conv(params, "out", ad.add(fine, coarse)))


def variational_cost(
    x: Tensor,
    y: Tensor,
    mask: np.ndarray,
    weights: CostWeights,
    params: PriorParams,
) -> Tensor:
    """Masked observation misfit plus prior misfit, both mean-square.

    x, y are (B, C, H, W) channel-stacked augmented states; mask is the
    boolean stack matching them. The result is differentiable w.r.t. x and
    the prior parameters.
    """
    if x.data.shape != y.data.shape:
        raise ShapeError(f"cost: state shape {x.data.shape} != obs shape {y.data.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise ShapeError(f"cost: mask shape {m.shape} != state shape {x.data.shape}")
    n_obs = int(m.sum())
    if n_obs == 0 and weights.lambda_prior == 0:
        raise ValueError("degenerate cost: empty observation mask with zero prior weight")

    terms = []
    if n_obs > 0:
        obs = ad.masked_mean(ad.square(ad.sub(y, x)), m)
        terms.append(ad.smul(obs, weights.lambda_obs))
    pri = ad.mean(ad.square(ad.sub(x, phi_apply(params, x))))
    terms.append(ad.smul(pri, weights.lambda_prior))
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
