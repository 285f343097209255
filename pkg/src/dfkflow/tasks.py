"""End-to-end reconstruction pipelines: fitting, inpainting, Leray projection,
super-resolution and multi-frame inference from passive scalars."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .grids import GridField, grid_points
from .initializer import InitConfig, init_field, make_rng
from .kernel_field import KernelField, decompose, evaluate_velocity, evaluate_vorticity
from .losses import BoundarySet, LossConfig, Objective, ObservationSet, ScalarSequence
from .matrix_kernels import DFK_WEN4, Kind, KernelKind, radial_coefficients
from .metrics import metrics_report
from .optimizer import TrainConfig, run_training

logger = logging.getLogger(__name__)

TASKS = ("fit", "project", "inpaint", "superres", "infer")
# per-task (eta, epochs, mode); smooth completions need wide kernel overlap
TASK_DEFAULTS = {
    "fit": (6.0, 20, "minibatch"),
    "superres": (9.0, 150, "minibatch"),
    "project": (18.0, 200, "minibatch"),
    "inpaint": (27.0, 5000, "fullbatch"),
    "infer": (18.0, 1500, "fullbatch"),
}

# Learning rates relative to the natural parameter scales (see ``auto_rates``).
WEIGHT_LR_FACTOR = 1.5
CENTER_LR_FACTOR = 2e-3
RADIUS_LR_FACTOR = 4e-4
FULLBATCH_WEIGHT_LR_FACTOR = 0.06


@dataclass
class TaskSpec:
    task: str
    kind: KernelKind = DFK_WEN4
    n_kernels: int = 1000
    eta: float | None = None
    seed: int = 0
    epochs: int | None = None
    batch_size: int = 256
    mode: str | None = None
    lr: float | None = None
    lr_centers: float | None = None
    lr_radii: float | None = None
    gamma: float = 0.95
    trainable: tuple | None = None
    deterministic: bool = False
    loss: LossConfig | None = None
    velocity: GridField | None = None
    observations: ObservationSet | None = None
    scalars: ScalarSequence | None = None
    mask: GridField | None = None
    boundary: BoundarySet | None = None
    reference: GridField | None = None
    target_shape: tuple | None = None
    domain: tuple | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        eta, epochs, mode = TASK_DEFAULTS[self.task]
        self.eta = eta if self.eta is None else float(self.eta)
        self.epochs = epochs if self.epochs is None else int(self.epochs)
        self.mode = mode if self.mode is None else self.mode
        if self.n_kernels < 1:
            raise ValueError("need at least one kernel")


@dataclass
class TaskResult:
    field: KernelField
    history: list
    manifest: dict = dc_field(default_factory=dict)
    outputs: dict = dc_field(default_factory=dict)


# ---- helpers --------------------------------------------------------------------


def kernel_gain(kind: KernelKind, d: int) -> float:
    """Peak magnitude of the radial factor multiplying a unit weight."""
    r = np.linspace(0.0, 0.999, 512)
    if kind.kind is Kind.CURL:
        c = radial_coefficients(kind, r, d, ["a"])
        return float(np.max(np.abs(c["a"] * r)))
    c = radial_coefficients(kind, r, d, ["F"])
    return float(np.max(np.abs(c["F"])))


def auto_rates(kind: KernelKind, d: int, h: float, speed: float, eta: float, overlap=True):
    """Default Adam step sizes from the scale of the problem.

    A velocity of magnitude ``speed`` built from about ``eta^d`` overlapping
    kernels of radius ``h`` needs weights of order
    ``speed h^p / (gain eta^d)``; geometry steps scale with ``h``.
    With ``overlap=False`` the ``eta^d`` division is dropped: near-uniform
    flows are built from cancelling kernels whose weights do not shrink
    as the overlap grows.
    """
    w = max(speed, 1e-12) * h ** kind.scale_power / kernel_gain(kind, d)
    if overlap:
        w /= eta**d
    if kind.kind is Kind.CURL:
        w *= h
    return w, CENTER_LR_FACTOR * h, RADIUS_LR_FACTOR * h


def _domain(spec: TaskSpec, points):
    if spec.domain is not None:
        return spec.domain
    if spec.velocity is not None:
        return spec.velocity.lo, spec.velocity.hi
    if spec.scalars is not None:
        return spec.scalars.lo, spec.scalars.hi
    return tuple(points.min(axis=0)), tuple(points.max(axis=0))


def _observations(spec: TaskSpec) -> ObservationSet:
    if spec.observations is not None:
        obs = spec.observations
    elif spec.velocity is not None:
        obs = ObservationSet(spec.velocity.points(), spec.velocity.values())
    else:
        raise ValueError(f"task {spec.task} needs velocity observations")
    if spec.mask is not None:
        if spec.velocity is None:
            raise ValueError("a mask applies to gridded velocity input")
        keep = spec.mask.values()[:, 0] > 0.5
        if keep.size != len(obs):
            raise ValueError("mask grid does not match the velocity grid")
        if not keep.any():
            raise ValueError("mask hides every sample")
        obs = ObservationSet(obs.points[keep], obs.values[keep], obs.frame)
    if len(obs) == 0:
        raise ValueError("no observations")
    return obs


def _eval_points(spec: TaskSpec, lo, hi, d):
    """Samples for the divergence/regularization terms."""
    if spec.mask is not None and spec.velocity is not None:
        return spec.velocity.points()
    if spec.velocity is not None:
        return None
    rng = make_rng(spec.seed, 2)
    return np.asarray(lo) + rng.random((4096, d)) * (np.asarray(hi) - np.asarray(lo))


def _default_loss(spec: TaskSpec) -> LossConfig:
    if spec.loss is not None:
        return spec.loss
    if spec.task == "infer":
        return LossConfig(lambda_div=0.1, lambda_bou=1.0, lambda_reg=0.1, lambda_con=0.1)
    if spec.task == "project":
        return LossConfig(lambda_bou=1.0 if spec.boundary is not None else 0.0)
    lam_div = 0.0 if spec.kind.divergence_free else 0.5
    return LossConfig(lambda_div=lam_div, lambda_bou=1.0 if spec.boundary is not None else 0.0)


def _train_config(spec: TaskSpec, field: KernelField, speed: float) -> TrainConfig:
    mode = spec.mode
    full = mode == "fullbatch"
    trainable = spec.trainable or (("weights",) if full else ("weights", "centers", "radii"))
    w, c, r = auto_rates(field.kind, field.dim, float(np.median(field.radii)), speed, spec.eta,
                         overlap=not full)
    if full:
        w *= FULLBATCH_WEIGHT_LR_FACTOR / WEIGHT_LR_FACTOR
    return TrainConfig(mode=mode, epochs=spec.epochs, batch_size=spec.batch_size,
                       lr=spec.lr if spec.lr is not None else WEIGHT_LR_FACTOR * w,
                       lr_centers=spec.lr_centers if spec.lr_centers is not None else c,
                       lr_radii=spec.lr_radii if spec.lr_radii is not None else r,
                       gamma=spec.gamma, seed=spec.seed, trainable=trainable,
                       deterministic=spec.deterministic)


def _manifest(spec: TaskSpec, field, history, train: TrainConfig, loss: LossConfig):
    final = history[-1].report
    return {
        "task": spec.task,
        "kind": str(field.kind),
        "dim": field.dim,
        "kernels_requested": spec.n_kernels,
        "kernels": field.n_kernels,
        "frames": field.n_frames,
        "eta": spec.eta,
        "seed": spec.seed,
        "deterministic": spec.deterministic,
        "train": {"mode": train.mode, "epochs": train.epochs, "batch_size": train.batch_size,
                  "lr": train.lr, "lr_centers": train.lr_centers, "lr_radii": train.lr_radii,
                  "gamma": train.gamma, "trainable": list(train.trainable)},
        "loss": {"lambda_div": loss.lambda_div, "lambda_bou": loss.lambda_bou,
                 "lambda_reg": loss.lambda_reg, "lambda_con": loss.lambda_con},
        "final_losses": dict(final.terms, total=final.total),
    }


def _train(spec: TaskSpec, kind: KernelKind, obs: list, lo, hi, frames=1, frame_dt=1.0,
           scalars=None, eval_points=None, speed=1.0):
    loss = _default_loss(spec)
    field = init_field(InitConfig(lo, hi, spec.n_kernels, spec.eta, seed=spec.seed), kind, frames, frame_dt)
    objective = Objective(loss, obs or None, spec.boundary, scalars, eval_points)
    train = _train_config(spec, field, speed)
    logger.info("%s: %d kernels (%s), lr %.3g", spec.task, field.n_kernels, kind, train.lr)
    field, history = run_training(field, objective, train)
    return field, history, _manifest(spec, field, history, train, loss)


# ---- tasks --------------------------------------------------------------------


def run_fit(spec: TaskSpec) -> TaskResult:
    """Fit velocity samples; with a mask this is inpainting of the hidden region."""
    obs = _observations(spec)
    lo, hi = _domain(spec, obs.points)
    speed = float(np.mean(np.linalg.norm(obs.values, axis=1)))
    field, history, manifest = _train(spec, spec.kind, [obs], lo, hi,
                                      eval_points=_eval_points(spec, lo, hi, len(lo)), speed=speed)
    return TaskResult(field, history, manifest)


def run_inpaint(spec: TaskSpec) -> TaskResult:
    if spec.mask is None:
        raise ValueError("inpainting needs a mask")
    return run_fit(spec)


def run_project(spec: TaskSpec) -> TaskResult:
    """Fit ``-Laplacian phi`` kernels, then keep the divergence-free half of the split."""
    kind = KernelKind(Kind.NEGLAP, spec.kind.base)
    res = run_fit(replace(spec, kind=kind))
    curlfree, divfree = decompose(res.field)
    res.manifest["outputs"] = ["curlfree", "divfree"]
    res.outputs = {"fitted": res.field, "curlfree": curlfree, "divfree": divfree}
    res.field = divfree
    return res


def evaluate_on_grid(field: KernelField, lo, hi, shape, frame=0) -> GridField:
    pts = grid_points(lo, hi, shape)
    return GridField.from_values(evaluate_velocity(field, frame, pts), shape, lo, hi)


def vorticity_on_grid(field: KernelField, lo, hi, shape, frame=0) -> np.ndarray:
    w = evaluate_vorticity(field, frame, grid_points(lo, hi, shape))
    return w.reshape(tuple(shape) + ((3,) if field.dim == 3 else ()))


def run_superres(spec: TaskSpec) -> TaskResult:
    """Fit coarse samples and evaluate on a finer grid (metrics when a reference is given)."""
    if spec.velocity is None:
        raise ValueError("super-resolution needs a gridded velocity input")
    res = run_fit(spec)
    shape = spec.target_shape
    if shape is None:
        shape = spec.reference.shape if spec.reference is not None else spec.velocity.shape
    dense = evaluate_on_grid(res.field, spec.velocity.lo, spec.velocity.hi, tuple(shape))
    res.outputs["dense"] = dense
    if spec.reference is not None:
        if tuple(spec.reference.shape) != tuple(shape):
            raise ValueError("reference grid does not match the target resolution")
        res.manifest["metrics"] = metrics_report(dense.data, spec.reference.data)
    return res


def run_infer(spec: TaskSpec) -> TaskResult:
    """Per-frame weights on shared geometry, trained full-batch on advection losses."""
    seq = spec.scalars
    if seq is None:
        raise ValueError("inference needs a scalar sequence")
    if seq.n_frames < 3:
        raise ValueError("inference needs at least three frames")
    lo, hi = seq.lo, seq.hi
    # characteristic speed: |sigma_t| / |grad sigma| where the gradient is strong
    st = np.abs(seq.time_derivative(seq.n_frames // 2, allow_edges=True)).ravel()
    gs = np.linalg.norm(seq.spatial_gradient(seq.n_frames // 2), axis=1)
    strong = gs >= 0.1 * gs.max() if gs.max() > 0 else np.ones_like(gs, dtype=bool)
    speed = float(np.median(st[strong] / np.maximum(gs[strong], 1e-12))) if gs.max() > 0 else 1.0
    speed = speed if speed > 0 else 1.0
    field, history, manifest = _train(spec, spec.kind, [], lo, hi, frames=seq.n_frames,
                                      frame_dt=seq.dt, scalars=seq, speed=speed)
    return TaskResult(field, history, manifest)


RUNNERS = {"fit": run_fit, "inpaint": run_inpaint, "project": run_project,
           "superres": run_superres, "infer": run_infer}


def run_task(spec: TaskSpec) -> TaskResult:
    return RUNNERS[spec.task](spec)
