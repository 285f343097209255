"""Acceptance criteria 1-11.  Each test prints one ``PASS``/``FAIL`` line.

The end-to-end criteria (6-10) train real models and take minutes each.
"""

import time

import numpy as np
import pytest

from dfkflow import cli
from dfkflow.fieldgen import (
    GaussianBlob,
    advection_truncation_estimate,
    fd_divergence,
    gen_advected_scalar,
    gen_analytic_vortices,
    gen_laminar_stitch,
    gen_projection_pair,
    taylor_green_2d,
)
from dfkflow.formats import read_model
from dfkflow.grids import grid_points
from dfkflow.initializer import init_radii
from dfkflow.kernel_field import KernelField, curl_fd, decompose, evaluate_jacobian, evaluate_velocity
from dfkflow.matrix_kernels import (
    DFK_WEN4,
    AdjointBuffers,
    KernelKind,
    adjoint_weights,
    eval_matrix,
    eval_neglap,
    jacobian_contribution,
    velocity_contribution,
    vorticity_contribution,
    vorticity_jacobian_contribution,
)
from dfkflow.metrics import metric_psnr, relative_l1
from dfkflow.tasks import TaskSpec, run_fit, run_infer, run_inpaint, run_project, run_superres, vorticity_on_grid

CURLFREE = KernelKind("curlfree", "wen4")
NEGLAP = KernelKind("neglap", "wen4")


@pytest.fixture
def report(capsys):
    """Print one verdict line outside pytest's capture, then assert."""

    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return emit


def unit_field(rng, d, n, kind=DFK_WEN4, hr=(0.3, 0.8)):
    """Random kernels in [-1, 1]^d with weights scaled so each peaks near |u| = 1."""
    radii = rng.uniform(*hr, n)
    w = rng.normal(size=(1, n, kind.weight_width(d))) * radii[None, :, None] ** 2 / 112
    return KernelField(kind, rng.uniform(-1, 1, (n, d)), radii, w)


def random_offsets(rng, n, d, h_range=(0.5, 1.5)):
    """Offsets strictly inside the support and away from the origin, with their radii."""
    h = rng.uniform(*h_range, n)
    y = rng.uniform(-1, 1, (4 * n, d))
    r = np.linalg.norm(y, axis=1)
    y = y[(r > 0.05) & (r < 0.95)][:n]
    return y * h[:, None], h


def fd_jac(fn, off, step):
    """Central differences of ``fn(off)`` (M, ...) w.r.t. each offset component, shape (M, ..., d).

    ``step`` holds one step per row.
    """
    cols = []
    for j in range(off.shape[1]):
        e = np.zeros_like(off)
        e[:, j] = step
        diff = fn(off + e) - fn(off - e)
        cols.append(diff / (2 * step).reshape((-1,) + (1,) * (diff.ndim - 1)))
    return np.stack(cols, axis=-1)


def per_row_rel(got, want, floor=None):
    got = got.reshape(len(got), -1)
    want = want.reshape(len(want), -1)
    den = np.linalg.norm(want, axis=1)
    if floor is not None:
        den = np.maximum(den, floor)
    return np.linalg.norm(got - want, axis=1) / den


def curl_from_jac(J):
    if J.shape[-1] == 2:
        return J[..., 1, 0] - J[..., 0, 1]
    return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]], axis=-1)


# ---- 1 ------------------------------------------------------------------------------


def test_criterion_01_divergence_free_construction(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, trace_nonzero = 0.0, 0
    for i in range(50):
        d = 2 + i % 2
        f = unit_field(rng, d, int(rng.integers(1, 101)))
        pts = rng.uniform(-1, 1, (1000, d))
        div = fd_divergence(lambda x: evaluate_velocity(f, 0, x), pts, 1e-5)
        worst = max(worst, float(np.abs(div).max()))
        trace_nonzero += int(np.count_nonzero(np.trace(evaluate_jacobian(f, 0, pts), axis1=1, axis2=2)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and trace_nonzero == 0 and dt < 10
    report(1, "divergence-free construction", ok,
           f"max |FD div| = {worst:.2e} (<= 1e-6), nonzero traces = {trace_nonzero}, {dt:.1f} s (< 10 s)")


# ---- 2 ------------------------------------------------------------------------------


def test_criterion_02_closed_form_integrity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    n = 1000
    fast_err, deriv_err, adj_err = 0.0, 0.0, 0.0
    for d in (2, 3):
        off, h = random_offsets(rng, n, d)
        a = rng.normal(size=(n, d))
        # fast Wen4 closed forms against the generic operator path
        for fn in (velocity_contribution, jacobian_contribution, vorticity_contribution):
            fast = fn(DFK_WEN4, off, h, a, fast=True)
            slow = fn(DFK_WEN4, off, h, a, fast=False)
            fast_err = max(fast_err, float(np.abs(fast - slow).max() / np.abs(slow).max()))
        step = 1e-5 * h
        for kk in (DFK_WEN4, CURLFREE, NEGLAP):
            J = jacobian_contribution(kk, off, h, a)
            Jfd = fd_jac(lambda x: velocity_contribution(kk, x, h, a), off, step)
            deriv_err = max(deriv_err, per_row_rel(J, Jfd).max())
            # curl-free kernels have zero vorticity: measure against the Jacobian scale
            w = vorticity_contribution(kk, off, h, a)
            deriv_err = max(deriv_err, per_row_rel(w, curl_from_jac(Jfd), np.linalg.norm(Jfd.reshape(n, -1), axis=1)).max())
        if d == 3:
            VJ = vorticity_jacobian_contribution(DFK_WEN4, off, h, a)
            VJfd = fd_jac(lambda x: vorticity_contribution(DFK_WEN4, x, h, a), off, step)
            deriv_err = max(deriv_err, per_row_rel(VJ, VJfd).max())
        # adjoints: FD of <output(alpha), G> over alpha
        paths = [("velocity", velocity_contribution, "dL_du"), ("jacobian", jacobian_contribution, "dL_djacobian"),
                 ("vorticity", vorticity_contribution, "dL_dvorticity")]
        if d == 3:
            paths.append(("vortjac", vorticity_jacobian_contribution, "dL_dvortjac"))
        for which, fn, slot in paths:
            G = rng.normal(size=fn(DFK_WEN4, off, h, a).shape)
            got = adjoint_weights(DFK_WEN4, off, h, AdjointBuffers(**{slot: G}), which)
            fd = np.empty_like(a)
            for j in range(d):
                e = np.zeros_like(a)
                e[:, j] = 1e-3
                hi = (fn(DFK_WEN4, off, h, a + e) * G).reshape(n, -1).sum(axis=1)
                lo = (fn(DFK_WEN4, off, h, a - e) * G).reshape(n, -1).sum(axis=1)
                fd[:, j] = (hi - lo) / 2e-3
            adj_err = max(adj_err, per_row_rel(got, fd).max())
    dt = time.perf_counter() - t0
    ok = fast_err <= 1e-12 and deriv_err <= 1e-6 and adj_err <= 1e-5 and dt < 30
    report(2, "closed-form integrity", ok,
           f"fast vs generic {fast_err:.1e} (<= 1e-12), derivatives vs FD {deriv_err:.1e} (<= 1e-6), "
           f"adjoints vs FD {adj_err:.1e} (<= 1e-5), {dt:.1f} s (< 30 s)")


# ---- 3 ------------------------------------------------------------------------------


def test_criterion_03_helmholtz_identities(report):
    rng = np.random.default_rng(303)
    split_err = 0.0
    for d in (2, 3):
        for _ in range(200):
            off = rng.uniform(-1.2, 1.2, d)
            h = rng.uniform(0.5, 1.5)
            total = eval_matrix(DFK_WEN4, off, h) + eval_matrix(CURLFREE, off, h)
            split_err = max(split_err, float(np.abs(total - eval_neglap("wen4", off, h) * np.eye(d)).max()))
    f = unit_field(rng, 2, 60, NEGLAP, (0.4, 0.8))
    cf, df = decompose(f)
    probes = rng.uniform(-1, 1, (500, 2))
    u = evaluate_velocity(f, 0, probes)
    sum_err = float(np.abs(evaluate_velocity(cf, 0, probes) + evaluate_velocity(df, 0, probes) - u).max())
    curl_err = float(np.abs(curl_fd(df, 0, probes) - curl_fd(f, 0, probes)).max())
    ok = split_err <= 1e-12 and sum_err <= 1e-12 and curl_err <= 1e-6
    report(3, "Helmholtz/Leray identities", ok,
           f"CF + DF - NegLap I = {split_err:.1e}, decompose sum {sum_err:.1e} (<= 1e-12), "
           f"curl difference {curl_err:.1e} (<= 1e-6)")


# ---- 4 ------------------------------------------------------------------------------


def test_criterion_04_positive_definiteness(report):
    rng = np.random.default_rng(404)
    failures, min_eig = 0, np.inf
    for i in range(20):
        d = 2 + i % 2
        n = int(rng.integers(5, 51))
        pts = rng.uniform(-1, 1, (n, d))
        h = rng.uniform(0.5, 2.0)
        G = np.zeros((n * d, n * d))
        for a in range(n):
            for b in range(n):
                G[a * d:(a + 1) * d, b * d:(b + 1) * d] = eval_matrix(DFK_WEN4, pts[a] - pts[b], h)
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            failures += 1
        min_eig = min(min_eig, float(np.linalg.eigvalsh(G).min()))
    report(4, "positive definiteness", failures == 0,
           f"{20 - failures}/20 Cholesky factorizations succeeded, min eigenvalue {min_eig:.2e}")


# ---- 5 ------------------------------------------------------------------------------


def test_criterion_05_radius_formula(report):
    cases = [((1, np.pi, 2, 1.0), 1.0), ((1, 4 * np.pi / 3, 3, 1.0), 1.0), ((100, np.pi, 2, 9.0), 0.9)]
    errs = [abs(init_radii(*args) - want) for args, want in cases]
    report(5, "radius formula", max(errs) <= 1e-12, f"errors {[f'{e:.1e}' for e in errs]} (<= 1e-12)")


# ---- 6 ------------------------------------------------------------------------------


def test_criterion_06_desk_scale_fitting(report):
    gt = gen_analytic_vortices(48)
    t0 = time.perf_counter()
    res = run_fit(TaskSpec("fit", n_kernels=4000, velocity=gt))
    dt = time.perf_counter() - t0
    u = evaluate_velocity(res.field, 0, gt.points())
    rl1 = relative_l1(u, gt.values())
    psnr = metric_psnr(u, gt.values())
    ok = rl1 <= 0.05 and psnr >= 30 and dt <= 600
    report(6, "desk-scale fitting", ok,
           f"{res.field.n_kernels} kernels, relative L1 {rl1:.4f} (<= 0.05), PSNR {psnr:.2f} dB (>= 30), "
           f"{dt:.0f} s (<= 600 s)")


# ---- 7 ------------------------------------------------------------------------------


def test_criterion_07_projection(report):
    clean, dirty = gen_projection_pair(64, 0.5, seed=0)
    res = run_project(TaskSpec("project", n_kernels=1000, velocity=dirty))
    f = res.field
    probes = np.random.default_rng(707).uniform(-1, 1, (1000, 2))
    div = float(np.abs(fd_divergence(lambda x: evaluate_velocity(f, 0, x), probes, 1e-5)).max())
    w = vorticity_on_grid(f, clean.lo, clean.hi, clean.shape)
    psnr = metric_psnr(w.ravel(), taylor_green_2d().vorticity(clean.points()))
    ok = div <= 1e-6 and psnr >= 25
    report(7, "projection", ok, f"max |FD div| {div:.1e} (<= 1e-6), vorticity PSNR {psnr:.2f} dB (>= 25)")


# ---- 8 ------------------------------------------------------------------------------


def test_criterion_08_super_resolution(report):
    coarse, ref = gen_analytic_vortices(12), gen_analytic_vortices(48)
    res = run_superres(TaskSpec("superres", n_kernels=1000, velocity=coarse, reference=ref))
    psnr = res.manifest["metrics"]["psnr_db"]
    report(8, "super-resolution", psnr >= 28, f"12^3 -> 48^3, PSNR {psnr:.2f} dB (>= 28)")


# ---- 9 ------------------------------------------------------------------------------


def test_criterion_09_inpainting(report):
    straight = gen_laminar_stitch(0.0, resolution=64)
    res = run_inpaint(TaskSpec("inpaint", n_kernels=1000, velocity=straight.grid, mask=straight.mask))
    pts = straight.grid.points()[straight.annulus]
    err = float(np.linalg.norm(evaluate_velocity(res.field, 0, pts) - [1.0, 0.0], axis=1).max())

    turned = gen_laminar_stitch(90.0, resolution=64)
    res90 = run_inpaint(TaskSpec("inpaint", n_kernels=1000, velocity=turned.grid, mask=turned.mask))
    ring = turned.grid.points()[turned.annulus]
    div = float(np.abs(fd_divergence(lambda x: evaluate_velocity(res90.field, 0, x), ring, 1e-5)).max())
    ok = err <= 0.05 and div <= 1e-6
    report(9, "inpainting", ok, f"0 deg annulus max error {err:.4f} (<= 0.05 of inflow), "
                                f"90 deg annulus max |FD div| {div:.1e} (<= 1e-6)")


# ---- 10 -----------------------------------------------------------------------------


def test_criterion_10_inference(report):
    u = np.array([0.3, 0.15])
    frames, dt = 21, 0.05
    blob = GaussianBlob(-0.5 * (frames - 1) * dt * u, 0.25, 100.0)
    seq = gen_advected_scalar(u, blob, frames, dt, 48)
    res = run_infer(TaskSpec("infer", n_kernels=800, scalars=seq))
    nodes = seq.node_points()
    worst = 0.0
    for k in range(frames):
        g = np.linalg.norm(seq.spatial_gradient(k), axis=1)
        strong = g >= 0.1 * g.max()
        v = evaluate_velocity(res.field, k, nodes[strong])
        worst = max(worst, float((np.linalg.norm(v - u, axis=1) / np.linalg.norm(u)).max()))
    # the ground-truth velocity leaves only the finite-difference truncation in the advection residual
    mask = seq.interior_mask()
    bounded = True
    ratios = []
    for k in range(1, frames - 1):
        r = np.abs(seq.time_derivative(k).ravel()[mask] + seq.spatial_gradient(k)[mask] @ u)
        est = advection_truncation_estimate(seq, u, blob, k)
        bounded &= bool(r.mean() <= est.mean() and r.max() <= est.max())
        ratios.append(r.mean() / est.mean())
    ok = worst <= 0.10 and bounded
    report(10, "inference", ok, f"max relative velocity error {worst:.4f} (<= 0.10); truth residual within "
                                f"truncation estimate on all interior frames: {bounded} "
                                f"(worst mean ratio {max(ratios):.2f})")


# ---- 11 -----------------------------------------------------------------------------


def test_criterion_11_determinism(report, tmp_path):
    run = lambda *a: cli.cli_main([str(x) for x in a])  # noqa: E731
    gt = tmp_path / "gt.vfld"
    blob = tmp_path / "blob.sfld"
    assert run("gen", "--case", "analytic-vortices", "--res", 10, "--out", gt) == 0
    assert run("gen", "--case", "advected-blob", "--res", 16, "--frames", 5, "--out", blob) == 0
    jobs = {
        "fit": ("fit", "--input", gt, "--kernels", 80, "--epochs", 3),
        "project": ("project", "--input", gt, "--kernels", 60, "--epochs", 2),
        "infer": ("infer", "--input", blob, "--dt", 0.05, "--kernels", 40, "--epochs", 5),
    }
    same = {}
    for name, args in jobs.items():
        outs = []
        for i in range(2):
            out = tmp_path / f"{name}{i}.dfkm"
            assert run(*args, "--seed", 7, "--deterministic", "--out", out) == 0
            outs.append(out.read_bytes())
        read_model(tmp_path / f"{name}0.dfkm")
        same[name] = outs[0] == outs[1]
    report(11, "determinism", all(same.values()), f"byte-identical DFKM per task: {same}")
