"""Adam training loops: seeded minibatch with exponential decay, and
full-batch with a plateau-triggered learning-rate cut."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .initializer import make_rng
from .kernel_field import KernelField
from .losses import TERMS, LossReport, Objective

logger = logging.getLogger(__name__)

PARAMS = ("weights", "centers", "radii")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes NaN or infinite."""


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr) -> dict:
    """One bias-corrected Adam update.  ``lr`` may be a scalar or a per-parameter dict."""
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = dict(params)
    for name, g in grads.items():
        g = np.asarray(g, dtype=float)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        out[name] = np.asarray(params[name], dtype=float) - step_lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


@dataclass
class TrainConfig:
    mode: str = "minibatch"
    epochs: int = 20
    batch_size: int = 128
    lr: float = 5e-4
    lr_centers: float | None = None
    lr_radii: float | None = None
    gamma: float = 0.95
    plateau_window: int = 20
    plateau_tol: float = 1e-4
    plateau_factor: float = 0.9
    seed: int = 0
    trainable: tuple = ("weights",)
    deterministic: bool = False

    def __post_init__(self):
        if self.mode not in ("minibatch", "fullbatch"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        self.trainable = tuple(self.trainable)
        bad = set(self.trainable) - set(PARAMS)
        if bad or "weights" not in self.trainable:
            raise ValueError(f"trainable must include weights and be a subset of {PARAMS}")

    @property
    def geometry(self):
        return "centers" in self.trainable or "radii" in self.trainable

    def rates(self, scale=1.0):
        base = {"weights": self.lr,
                "centers": self.lr_centers if self.lr_centers is not None else self.lr,
                "radii": self.lr_radii if self.lr_radii is not None else self.lr}
        return {k: base[k] * scale for k in self.trainable}


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    report: LossReport

    def as_dict(self):
        row = {"epoch": self.epoch, "lr": self.lr}
        row.update({t: self.report.terms.get(t, 0.0) for t in TERMS})
        row["total"] = self.report.total
        return row


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", *TERMS, "total"])
        w.writeheader()
        for row in history:
            w.writerow(row.as_dict())


def _check_report(rep: LossReport):
    if not math.isfinite(rep.total):
        raise TrainingDiverged(f"loss became {rep.total}")


def _mean_report(reports):
    terms = {t: float(np.mean([r.terms[t] for r in reports])) for t in reports[0].terms}
    return LossReport(terms, float(np.mean([r.total for r in reports])))


def _apply(field: KernelField, params: dict, min_radius: float) -> KernelField:
    radii = params.get("radii", field.radii)
    if "radii" in params:
        radii = np.maximum(radii, min_radius)
    return KernelField(field.kind, params.get("centers", field.centers), radii,
                       params["weights"], field.frame_dt)


def run_training(field: KernelField, objective: Objective, cfg: TrainConfig, callback=None):
    """Optimize ``field`` against ``objective``.

    Returns the trained field and one :class:`HistoryRow` per epoch (row 0 is
    the initial full-data loss).  Minibatch rows hold the mean batch loss of
    the epoch; full-batch rows the loss after that epoch's step.
    All reductions are fixed-order, so runs are bit-reproducible for a fixed
    seed whether or not ``cfg.deterministic`` is set.
    """
    rng = make_rng(cfg.seed, 1)
    state = AdamState()
    min_radius = 1e-4 * objective.domain_diagonal()
    geometry = cfg.geometry
    full = cfg.mode == "fullbatch"
    rep = objective.evaluate(field, None, geometry=geometry and full)
    _check_report(rep)
    history = [HistoryRow(0, cfg.lr, rep)]
    if field.n_kernels == 0:
        history += [HistoryRow(e, cfg.lr, rep) for e in range(1, cfg.epochs + 1)]
        return field, history

    lr_scale = 1.0
    best, best_epoch = rep.total, 0

    def update(field, r):
        params = {k: getattr(field, k) for k in cfg.trainable}
        grads = {k: getattr(r.grad, k) for k in cfg.trainable}
        params = adam_step(state, params, grads, cfg.rates(lr_scale))
        return _apply(field, params, min_radius)

    for epoch in range(1, cfg.epochs + 1):
        if not full:
            lr_scale = cfg.gamma ** (epoch - 1)
            reports = []
            for batch in objective.batches(rng, cfg.batch_size):
                r = objective.evaluate(field, batch, geometry=geometry)
                _check_report(r)
                field = update(field, r)
                reports.append(r)
            rep = _mean_report(reports)
        else:
            # the post-step evaluation also carries the next step's gradient
            field = update(field, rep)
            rep = objective.evaluate(field, None, geometry=geometry)
            if rep.total < best * (1 - cfg.plateau_tol):
                best, best_epoch = rep.total, epoch
            elif epoch - best_epoch >= cfg.plateau_window:
                lr_scale *= cfg.plateau_factor
                best_epoch = epoch
                logger.debug("plateau at epoch %d: lr scale %.4g", epoch, lr_scale)
        _check_report(rep)
        history.append(HistoryRow(epoch, cfg.lr * lr_scale, rep))
        if callback is not None:
            callback(epoch, field, rep)
        logger.info("epoch %d loss %.6g", epoch, rep.total)
    return field, history
