"""Supervised training of the prior and solver.

The loss combines four per-frame mean-square terms weighted along the
assimilation window (endpoints get zero weight): reconstruction misfit,
misfit of spatial gradients, and two prior-consistency terms evaluated on
the reconstruction and on the truth. Training samples are window/space
patches enumerated on a stride grid and shuffled deterministically per
epoch; parameters follow Adam, and the checkpoint with the best
validation mean RMSE-score is returned.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import psd_resolved_scales, rmse_score_series
from .prior import CostWeights, PriorConfig, PriorParams, phi_apply
from .solver import NumericError, SolverConfig, SolverParams, solve
from .state import (
    FieldSeq,
    ObsSet,
    SeqData,
    aug_to_array,
    build_augmented_obs,
    init_state,
    mask_to_array,
    recon_channels,
)


def derive_seed(seed: int, name: str) -> int:
    """Stable named sub-seed so each randomness source is independent."""
    return (seed * 1_000_003 + zlib.crc32(name.encode())) % (2**32)


def default_window_weights(n: int) -> np.ndarray:
    """Hann-shaped weights emphasizing the window center; endpoints are 0.

    For n = 7 this is exactly [0, 0.25, 0.75, 1, 0.75, 0.25, 0].
    """
    if n < 3 or n % 2 == 0:
        raise ValueError("window length must be odd and >= 3")
    i = np.arange(n)
    return np.sin(np.pi * i / (n - 1)) ** 2


@dataclass
class TrainConfig:
    lambda1: float = 1.0  # reconstruction misfit
    lambda2: float = 1.0  # spatial-gradient misfit
    lambda3: float = 0.1  # prior consistency of the reconstruction
    lambda4: float = 0.1  # prior consistency of the truth
    window: int = 7  # assimilation window length N (days)
    w: list[float] | None = None  # per-frame weights, default Hann(N)
    n_iter_grad: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 2
    epochs: int = 30
    seed: int = 0
    patch_rows: int = 64
    patch_cols: int = 64
    stride_days: int = 1
    stride_rows: int | None = None  # default: half the patch extent
    stride_cols: int | None = None
    # model sizes
    prior_hidden: int = 16
    prior_kernel: int = 3
    solver_hidden: int = 32
    cost_lambda_obs: float = 1.0
    cost_lambda_prior: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ValueError("window length N must be odd and >= 3")
        if self.w is not None:
            if len(self.w) != self.window:
                raise ValueError(f"len(w)={len(self.w)} must equal window={self.window}")
            if any(v < 0 for v in self.w):
                raise ValueError("window weights must be nonnegative")
        if self.stride_rows is None:
            self.stride_rows = max(1, self.patch_rows // 2)
        if self.stride_cols is None:
            self.stride_cols = max(1, self.patch_cols // 2)

    def weight_array(self) -> np.ndarray:
        if self.w is None:
            return default_window_weights(self.window)
        return np.asarray(self.w, dtype=np.float64)

    def prior_config(self) -> PriorConfig:
        return PriorConfig(
            state_channels=3 * self.window, hidden=self.prior_hidden, kernel_size=self.prior_kernel
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(state_channels=3 * self.window, hidden=self.solver_hidden)

    def cost_weights(self) -> CostWeights:
        return CostWeights(self.cost_lambda_obs, self.cost_lambda_prior)


@dataclass(frozen=True)
class PatchIndex:
    t0: int
    r0: int
    c0: int


def sample_patches(extent: tuple[int, int, int], cfg: TrainConfig, seed: int) -> list[PatchIndex]:
    """Deterministically shuffled stride-grid patch origins for one epoch."""
    T, H, W = extent
    pt, pr, pc = cfg.window, cfg.patch_rows, cfg.patch_cols
    if pt > T or pr > H or pc > W:
        raise ValueError(f"patch {(pt, pr, pc)} larger than dataset extent {(T, H, W)}")
    origins = [
        PatchIndex(t, r, c)
        for t in range(0, T - pt + 1, cfg.stride_days)
        for r in range(0, H - pr + 1, cfg.stride_rows)
        for c in range(0, W - pc + 1, cfg.stride_cols)
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(origins))
    return [origins[i] for i in order]


# ---------------------------------------------------------------------------
# loss

def _weighted_sq_mean(delta: Tensor, w: np.ndarray, groups: int) -> Tensor:
    """sum_i w_i * mean(square(frame i)) over a (B, groups*N, H, W) tensor.

    Frame i's mean runs over its `groups` channel copies and space.
    """
    B, C, H, W = delta.data.shape
    wt = Tensor(np.tile(w, groups))
    sq = ad.mul(ad.square(delta), ad.channel_broadcast(wt, delta.data.shape))
    return ad.smul(ad.sum_(sq), 1.0 / (B * groups * H * W))


def training_loss(
    x_true: Tensor, x_hat: Tensor, prior_params: PriorParams, cfg: TrainConfig
) -> Tensor:
    """Four-term weighted loss on channel-stacked augmented states.

    x_true carries the augmented ground truth (coarse component plus the
    true anomaly in both anomaly slots), x_hat the solver output.
    """
    if x_true.data.shape != x_hat.data.shape:
        raise ad.ShapeError(
            f"training_loss: shapes differ, {x_true.data.shape} vs {x_hat.data.shape}"
        )
    n = cfg.window
    w = cfg.weight_array()
    bar_sl, dx2_sl = recon_channels(n)

    def recon(t: Tensor) -> Tensor:
        return ad.add(
            ad.channel_slice(t, bar_sl.start, bar_sl.stop),
            ad.channel_slice(t, dx2_sl.start, dx2_sl.stop),
        )

    rec_true = recon(x_true)
    rec_hat = recon(x_hat)
    terms = []
    if cfg.lambda1:
        terms.append(ad.smul(_weighted_sq_mean(ad.sub(rec_true, rec_hat), w, 1), cfg.lambda1))
    if cfg.lambda2:
        gdiff = ad.sub(ad.spatial_gradient(rec_true), ad.spatial_gradient(rec_hat))
        terms.append(ad.smul(_weighted_sq_mean(gdiff, w, 2), cfg.lambda2))
    if cfg.lambda3:
        d3 = ad.sub(x_true, phi_apply(prior_params, x_hat))
        terms.append(ad.smul(_weighted_sq_mean(d3, w, 3), cfg.lambda3))
    if cfg.lambda4:
        d4 = ad.sub(x_true, phi_apply(prior_params, x_true))
        terms.append(ad.smul(_weighted_sq_mean(d4, w, 3), cfg.lambda4))
    if not terms:
        raise ValueError("training_loss: all term weights are zero")
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Standard Adam on a list of parameter tensors (in-place updates)."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# window assembly and sliding reconstruction

def make_window_tensors(data: SeqData, pidx: PatchIndex, cfg: TrainConfig):
    """Slice one training window into solver-ready tensors.

    Returns (x0, y_aug, mask_stack, x_true_aug) as (1, 3N, h, w) items;
    x_true_aug is None when the window is used for inference only.
    """
    n, pr, pc = cfg.window, cfg.patch_rows, cfg.patch_cols
    sl = (
        slice(pidx.t0, pidx.t0 + n),
        slice(pidx.r0, pidx.r0 + pr),
        slice(pidx.c0, pidx.c0 + pc),
    )
    g = dict(cell_deg=data.truth.cell_deg, dt_days=data.truth.dt_days)
    obs_w = ObsSet(FieldSeq(data.obs.values.values[sl], **g), data.obs.mask[sl])
    oi_w = FieldSeq(data.oi.values[sl], **g)
    aug_obs, aug_mask = build_augmented_obs(obs_w, oi_w)
    x0_arr = aug_to_array(init_state(aug_obs, aug_mask))
    y_arr = aug_to_array(aug_obs)
    m_arr = mask_to_array(aug_mask)

    truth_w = data.truth.values[sl]
    anom = truth_w - oi_w.values
    x_true = np.concatenate([oi_w.values, anom, anom], axis=0)
    return (
        Tensor(x0_arr[None], requires_grad=True),
        Tensor(y_arr[None]),
        m_arr[None],
        Tensor(x_true[None]),
    )


def reconstruct_window(x_hat: Tensor, n: int) -> np.ndarray:
    """(1, 3N, H, W) solver output -> (N, H, W) reconstructed field."""
    bar_sl, dx2_sl = recon_channels(n)
    arr = x_hat.data[0]
    return arr[bar_sl] + arr[dx2_sl]


def sliding_reconstruct(
    data: SeqData,
    prior_params: PriorParams,
    solver_params: SolverParams,
    cfg: TrainConfig,
) -> FieldSeq:
    """Reconstruct a sequence longer than the window.

    Windows slide with stride 1 and only each window's center frame is
    kept; frames near the boundaries come from the nearest window.
    """
    T, H, W = data.truth.shape
    n = cfg.window
    if T < n:
        raise ValueError(f"sequence length {T} shorter than window {n}")
    half = n // 2
    cfg_full = replace(cfg, patch_rows=H, patch_cols=W)
    out = np.zeros((T, H, W))
    cache: dict[int, np.ndarray] = {}
    for t in range(T):
        t0 = min(max(t - half, 0), T - n)
        if t0 not in cache:
            x0, y, m, _ = make_window_tensors(data, PatchIndex(t0, 0, 0), cfg_full)
            with ad.enable_grad():
                x_hat, _ = solve(
                    x0, y, m, prior_params, solver_params,
                    weights=cfg.cost_weights(), n_iter=cfg.n_iter_grad, training=False,
                )
            cache[t0] = reconstruct_window(x_hat, n)
            if len(cache) > 2:  # windows are visited in order; keep memory flat
                cache.pop(min(cache), None)
        out[t] = cache[t0][t - t0]
    return FieldSeq(out, data.truth.cell_deg, data.truth.dt_days)


# ---------------------------------------------------------------------------
# fit

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mu_rmse_score: float
    val_lambda_x: float
    val_lambda_t: float


def fit(
    train_data: SeqData,
    val_data: SeqData,
    cfg: TrainConfig,
) -> tuple[PriorParams, SolverParams, list[EpochLog]]:
    """Train prior and solver; return the best-validation checkpoint.

    Batches accumulate per-sample gradients sequentially (identical math
    to batched evaluation at a fraction of the memory). Aborts with epoch
    and step context if the loss goes non-finite.
    """
    prior_params = PriorParams.init(cfg.prior_config(), derive_seed(cfg.seed, "phi-init"))
    solver_params = SolverParams.init(cfg.solver_config(), derive_seed(cfg.seed, "gamma-init"))
    tensors = [t for _, t in prior_params.named_parameters()] + [
        t for _, t in solver_params.named_parameters()
    ]
    opt = Adam(tensors, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    best = (prior_params.copy(), solver_params.copy())
    best_mu = -np.inf
    log: list[EpochLog] = []

    for epoch in range(cfg.epochs):
        patches = sample_patches(train_data.truth.shape, cfg, derive_seed(cfg.seed, f"ep{epoch}"))
        losses = []
        for b0 in range(0, len(patches), cfg.batch_size):
            batch = patches[b0 : b0 + cfg.batch_size]
            opt.zero_grad()
            for pidx in batch:
                x0, y, m, x_true = make_window_tensors(train_data, pidx, cfg)
                x_hat, _ = solve(
                    x0, y, m, prior_params, solver_params,
                    weights=cfg.cost_weights(), n_iter=cfg.n_iter_grad, training=True,
                )
                loss = training_loss(x_true, x_hat, prior_params, cfg)
                lval = float(loss.data)
                if not np.isfinite(lval):
                    raise NumericError(
                        f"training loss non-finite at epoch {epoch}, batch {b0 // cfg.batch_size}"
                    )
                losses.append(lval)
                ad.backward(ad.smul(loss, 1.0 / len(batch)))
            opt.step()
        val_mu, lam_x, lam_t = _validate(val_data, prior_params, solver_params, cfg)
        log.append(EpochLog(epoch, float(np.mean(losses)) if losses else np.nan,
                            val_mu, lam_x, lam_t))
        if val_mu > best_mu:
            best_mu = val_mu
            best = (prior_params.copy(), solver_params.copy())
    if cfg.epochs == 0:
        return prior_params, solver_params, log
    return best[0], best[1], log


def _validate(
    val_data: SeqData, prior_params: PriorParams, solver_params: SolverParams, cfg: TrainConfig
) -> tuple[float, float, float]:
    recon = sliding_reconstruct(val_data, prior_params, solver_params, cfg)
    _, mu, _ = rmse_score_series(recon, val_data.truth)
    T = val_data.truth.shape[0]
    if T >= 4:
        lam_x, lam_t = psd_resolved_scales(recon, val_data.truth)
    else:
        lam_x = lam_t = float("nan")
    return mu, lam_x, lam_t
