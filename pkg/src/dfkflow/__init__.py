"""Divergence-free kernel representations of fluid velocity fields."""

from .fieldgen import (
    analytic_vortices,
    gen_advected_scalar,
    gen_analytic_vortices,
    gen_laminar_stitch,
    gen_projection_pair,
)
from .formats import read_field, read_model, write_field, write_model
from .grids import GridField, grid_points
from .initializer import InitConfig, init_field, init_radii
from .kernel_field import KernelField, decompose, evaluate_velocity, evaluate_vorticity
from .losses import LossConfig, Objective, ObservationSet, ScalarSequence
from .matrix_kernels import DFK_WEN4, Kind, KernelKind
from .metrics import metric_psnr, metric_ssim
from .optimizer import TrainConfig, run_training
from .rbf_core import ScalarRBF
from .tasks import TaskSpec, run_task

__version__ = "0.1.0"
