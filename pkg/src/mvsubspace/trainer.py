"""Training loop: auto-encoder pretraining, joint fine-tuning, clustering.

Fine-tuning runs two networks per view.  The diversity network (Dnet)
pairs view ``i``'s encoder with its own self-representation matrix
``Z_i``; the universality network (Unet) pairs every view's encoder with
the shared ``Z``.  Every epoch is one full batch: forward all networks,
evaluate the objective, compute every gradient from the same snapshot,
then commit one Adam step to all parameters and re-zero the diagonals.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import autoencoder as ae
from .dataset import MultiViewDataset
from .metrics import acc as acc_score
from .metrics import nmi as nmi_score
from .selfexpr import (
    Lambdas,
    LossBreakdown,
    SelfExprState,
    grad_latent,
    grad_Z_common,
    grad_Z_view,
    project_zero_diag,
    total_loss,
)
from .spectral import build_affinity, spectral_cluster

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float, epoch: int, stage: str):
        super().__init__(f"{stage} epoch {epoch}: non-finite {term} ({value})")
        self.term = term
        self.value = value
        self.epoch = epoch


def default_lambda1(k: int) -> float:
    """Self-expression weight ``10^(k/10 - 3)`` for ``k`` subspaces."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return 10.0 ** (k / 10.0 - 3.0)


@dataclass
class TrainConfig:
    """Hyper-parameters of a full run.

    ``lambda1_mode`` is ``"fixed"`` (use ``lambda1``) or ``"auto"``
    (use :func:`default_lambda1` of the cluster count).  ``widths`` is one
    width list per view, or ``None`` for the layout defaults.

    By default the decoders reconstruct from ``F`` and the self-representation
    matrices follow only their own objective terms.  ``decode_selfexpr``
    feeds ``F Z`` to the decoders instead, so reconstruction error also
    shapes ``Z``.
    """

    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    lambda4: float = 0.1
    lambda1_mode: str = "fixed"
    learning_rate: float = 1e-3
    pretrain_epochs: int = 1000
    finetune_epochs: int = 300
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    widths: Optional[List[List[int]]] = None
    strides: int = 2
    n_clusters: Optional[int] = None
    z_init_scale: float = 1e-4
    kmeans_restarts: int = 50
    eval_every: int = 0
    decode_selfexpr: bool = False

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lambda1_mode not in ("fixed", "auto"):
            raise ValueError(f"lambda1_mode must be 'fixed' or 'auto', got {self.lambda1_mode!r}")

    def lambdas(self, k: Optional[int] = None) -> Lambdas:
        l1 = self.lambda1
        if self.lambda1_mode == "auto":
            if k is None:
                raise ValueError("lambda1_mode='auto' needs the cluster count")
            l1 = default_lambda1(k)
        return Lambdas(l1, self.lambda2, self.lambda3, self.lambda4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have equal length")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# ---------------------------------------------------------------------------
# logs and results
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    losses: List[LossBreakdown] = field(default_factory=list)
    nmi: List[Optional[float]] = field(default_factory=list)
    acc: List[Optional[float]] = field(default_factory=list)

    def totals(self) -> np.ndarray:
        return np.array([b.total for b in self.losses])

    def write_csv(self, path: str) -> None:
        cols = LossBreakdown.field_names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", *cols, "nmi", "acc"])
            for epoch, (b, n, a) in enumerate(zip(self.losses, self.nmi, self.acc), start=1):
                w.writerow([epoch, *(repr(x) for x in b.as_list()),
                            "" if n is None else repr(n), "" if a is None else repr(a)])


@dataclass
class ClusteringResult:
    labels: np.ndarray
    affinity: np.ndarray
    state: SelfExprState
    dnet: List[ae.AutoencoderParams]
    unet: List[ae.AutoencoderParams]
    log: TrainLog
    pretrain_losses: List[List[float]]
    config: TrainConfig
    n_clusters: int


# ---------------------------------------------------------------------------
# pretraining / fine-tuning
# ---------------------------------------------------------------------------


def _seeds(config: TrainConfig, n_views: int) -> dict:
    """Independent integer seeds for every random consumer of a run."""
    children = np.random.SeedSequence(config.seed).spawn(n_views + 2)
    return {
        "views": [int(c.generate_state(1)[0]) for c in children[:n_views]],
        "z": np.random.default_rng(children[n_views]),
        "spectral": int(children[n_views + 1].generate_state(1)[0]),
    }


def _view_widths(config: TrainConfig, i: int, sample_shape):
    if config.widths is None:
        return None
    widths = config.widths
    if widths and np.ndim(widths[0]) == 0:  # one list shared by all views
        return list(widths)
    return list(widths[i])


def init_networks(dataset: MultiViewDataset, config: TrainConfig) -> List[ae.AutoencoderParams]:
    seeds = _seeds(config, dataset.n_views)["views"]
    return [
        ae.init_params(x.shape[1:], _view_widths(config, i, x.shape[1:]), seed=seeds[i],
                       strides=config.strides)
        for i, x in enumerate(dataset.views)
    ]


def _check_finite(value: float, term: str, epoch: int, stage: str) -> None:
    if not math.isfinite(value):
        log.error("%s epoch %d: %s is %r, aborting", stage, epoch, term, value)
        raise NonFiniteLossError(term, value, epoch, stage)


def pretrain(dataset: MultiViewDataset, config: TrainConfig):
    """Train one auto-encoder per view on reconstruction alone.

    Returns ``(params_per_view, loss_history_per_view)``.  With zero epochs
    the freshly initialised parameters come back unchanged.
    """
    config.validate()
    nets = init_networks(dataset, config)
    histories = []
    for i, (net, x) in enumerate(zip(nets, dataset.views)):
        opt = AdamState.zeros_like(net.weights())
        hist = []
        for epoch in range(config.pretrain_epochs):
            with np.errstate(over="ignore", invalid="ignore"):
                _, xhat, cache = ae.forward(net, x)
                diff = xhat - x
                loss = float(np.sum(diff * diff))
            _check_finite(loss, f"reconstruction loss (view {i})", epoch + 1, "pretrain")
            hist.append(loss)
            grads, _ = ae.backward(net, cache, 2.0 * diff, None)
            adam_step(net.weights(), grads, opt, config.learning_rate,
                      config.adam_beta1, config.adam_beta2, config.adam_epsilon)
        histories.append(hist)
        if hist:
            log.debug("pretrain view %d: loss %.4g -> %.4g", i, hist[0], hist[-1])
    return nets, histories


def finetune(dataset: MultiViewDataset, pretrained: Sequence[ae.AutoencoderParams],
             config: TrainConfig, k: Optional[int] = None):
    """Jointly fine-tune Dnet, Unet and the self-representation matrices.

    Returns ``(state, dnet, unet, TrainLog)``.
    """
    config.validate()
    lam = config.lambdas(k)
    X = dataset.views
    v, n = dataset.n_views, dataset.n_samples
    if len(pretrained) != v:
        raise ValueError(f"need {v} pretrained networks, got {len(pretrained)}")
    for net, x in zip(pretrained, X):
        if tuple(x.shape[1:]) != net.input_shape:
            raise ValueError(f"pretrained input shape {net.input_shape} does not fit view {x.shape[1:]}")

    dnet = [p.copy() for p in pretrained]
    unet = [p.copy() for p in pretrained]
    state = SelfExprState.initial(n, v, _seeds(config, v)["z"], config.z_init_scale)

    params = [w for net in dnet + unet for w in net.weights()] + state.Z_views + [state.Z]
    opt = AdamState.zeros_like(params)
    trace = TrainLog()
    spectral_seed = _seeds(config, v)["spectral"]

    for epoch in range(1, config.finetune_epochs + 1):
        through_z = config.decode_selfexpr
        with np.errstate(over="ignore", invalid="ignore"):
            breakdown, passes = _evaluate(X, dnet, unet, state, lam, through_z)
        for term, value in zip(LossBreakdown.field_names(), breakdown.as_list()):
            _check_finite(value, term, epoch, "finetune")
        trace.losses.append(breakdown)
        _log_metrics(trace, dataset, state, config, k, epoch, spectral_seed)
        grads = _gradients(X, dnet, unet, state, lam, through_z, passes)
        adam_step(params, grads, opt, config.learning_rate,
                  config.adam_beta1, config.adam_beta2, config.adam_epsilon)
        for M in [*state.Z_views, state.Z]:
            np.fill_diagonal(M, 0.0)
    return state, dnet, unet, trace


def _evaluate(X, dnet, unet, state: SelfExprState, lam: Lambdas, through_z: bool):
    v = len(X)
    Z_of = state.Z_views + [state.Z] * v
    passes = [_forward_pair(net, x, Z, through_z) for net, x, Z in zip(dnet + unet, X + X, Z_of)]
    breakdown = total_loss(X, [p[1] for p in passes[:v]], [p[1] for p in passes[v:]],
                           [p[0] for p in passes[:v]], [p[0] for p in passes[v:]], state, lam)
    return breakdown, passes


def _gradients(X, dnet, unet, state: SelfExprState, lam: Lambdas, through_z: bool, passes):
    v = len(X)
    Z_of = state.Z_views + [state.Z] * v
    grads = []
    recon_z = []
    for net, x, Z, (F, xhat, cache) in zip(dnet + unet, X + X, Z_of, passes):
        dec_g, d_dec = ae.backward_decoder(net, cache, 2.0 * (xhat - x))
        d_f = grad_latent(F, Z, lam.lambda1)
        if through_z:
            d_f += d_dec @ Z.T
            recon_z.append(F.T @ d_dec)
        else:
            d_f += d_dec
        enc_g, _ = ae.backward_encoder(net, cache, d_f)
        grads.extend(enc_g + dec_g)
    gz = [grad_Z_view(i, passes[i][0], state, lam) for i in range(v)]
    gz.append(grad_Z_common([p[0] for p in passes[v:]], state, lam))
    if through_z:
        for i in range(v):
            gz[i] += project_zero_diag(recon_z[i])
        gz[v] += project_zero_diag(sum(recon_z[v:]))
    grads.extend(gz)
    return grads


def objective_and_grads(X, dnet, unet, state: SelfExprState, lam: Lambdas,
                        through_z: bool = False):
    """Joint objective and its gradient, all from one parameter snapshot.

    Gradients come back in the order ``[dnet weights..., unet weights...,
    Z_views..., Z]``, matching the parameter list used by :func:`finetune`.
    With ``through_z`` the decoders see ``F Z`` rather than ``F``, so the
    reconstruction error also reaches the self-representation matrices.
    """
    breakdown, passes = _evaluate(X, dnet, unet, state, lam, through_z)
    return breakdown, _gradients(X, dnet, unet, state, lam, through_z, passes)


def _forward_pair(net, x, Z, through_z: bool):
    """Encode ``x`` and decode either ``F Z`` or ``F``; returns ``(F, xhat, cache)``."""
    F, cache = ae.encode(net, x)
    xhat = ae.decode(net, F @ Z if through_z else F, cache)
    return F, xhat, cache


def _log_metrics(trace, dataset, state, config, k, epoch, seed) -> None:
    every = config.eval_every
    if every and dataset.labels is not None and k and epoch % every == 0:
        pred = spectral_cluster(build_affinity(state.Z), k, seed=seed, n_init=config.kmeans_restarts)
        trace.nmi.append(nmi_score(dataset.labels, pred))
        trace.acc.append(acc_score(dataset.labels, pred))
    else:
        trace.nmi.append(None)
        trace.acc.append(None)


def resolve_k(dataset: MultiViewDataset, config: TrainConfig) -> int:
    k = config.n_clusters or dataset.n_clusters
    if k is None:
        raise ValueError("cluster count unknown: set n_clusters or supply labels")
    return int(k)


def train(dataset: MultiViewDataset, config: TrainConfig) -> ClusteringResult:
    """Pretrain, fine-tune, then spectral-cluster the common affinity."""
    config.validate()
    k = resolve_k(dataset, config)
    pretrained, pre_hist = pretrain(dataset, config)
    state, dnet, unet, trace = finetune(dataset, pretrained, config, k)
    affinity = build_affinity(state.Z)
    labels = spectral_cluster(affinity, k, seed=_seeds(config, dataset.n_views)["spectral"],
                              n_init=config.kmeans_restarts)
    return ClusteringResult(labels, affinity, state, dnet, unet, trace, pre_hist, config, k)


def cluster_state(state: SelfExprState, k: int, config: TrainConfig, n_views: int) -> np.ndarray:
    """Re-run spectral clustering on a stored common ``Z``."""
    return spectral_cluster(build_affinity(state.Z), k,
                            seed=_seeds(config, n_views)["spectral"], n_init=config.kmeans_restarts)


__all__ = [
    "AdamState", "ClusteringResult", "NonFiniteLossError", "TrainConfig", "TrainLog",
    "adam_step", "cluster_state", "default_lambda1", "finetune", "init_networks",
    "objective_and_grads",
    "pretrain", "project_zero_diag", "resolve_k", "train",
]
