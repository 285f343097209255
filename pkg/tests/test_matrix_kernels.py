import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfkflow.matrix_kernels import (
    DFK_WEN4,
    AdjointBuffers,
    Kind,
    KernelKind,
    NotImplementedForKind,
    adjoint_geometry,
    adjoint_weights,
    eval_matrix,
    eval_neglap,
    jacobian_contribution,
    velocity_contribution,
    vorticity_contribution,
    vorticity_jacobian_contribution,
)
from helpers import fd_grad, random_config, rel_err

KINDS = [
    KernelKind("divfree", "wen4"),
    KernelKind("divfree", "poly6"),
    KernelKind("curlfree", "wen4"),
    KernelKind("neglap", "wen4"),
    KernelKind("curl", "wen4"),
    KernelKind("regular", "wen2"),
]


def weight(kk, d, rng):
    w = kk.weight_width(d)
    return rng.normal(size=w) if w > 1 else float(rng.normal())


def test_divfree_at_origin_3d():
    np.testing.assert_allclose(eval_matrix(DFK_WEN4, np.zeros(3), 1.0), 112 * np.eye(3), atol=1e-12)


def test_divfree_outside_support():
    assert not eval_matrix(DFK_WEN4, np.array([0.6, 0.8, 0.0]), 1.0).any()
    assert not eval_matrix(DFK_WEN4, np.array([2.0, 0.0]), 1.5).any()


def test_helmholtz_split_identity():
    off = np.array([0.3, 0.4])
    total = eval_matrix(DFK_WEN4, off, 1.0) + eval_matrix(KernelKind("curlfree", "wen4"), off, 1.0)
    np.testing.assert_allclose(total, -14 * np.eye(2), atol=1e-12)
    assert eval_neglap("wen4", off, 1.0) == pytest.approx(-14.0, abs=1e-12)
    assert eval_neglap("wen4", np.zeros(2), 1.0) == pytest.approx(112.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 3]), st.floats(0.2, 3.0))
def test_radius_scaling(seed, d, h):
    rng = np.random.default_rng(seed)
    off = rng.uniform(-1, 1, d) * h
    np.testing.assert_allclose(eval_matrix(DFK_WEN4, off, h), eval_matrix(DFK_WEN4, off / h, 1.0) / h**2,
                               rtol=1e-12, atol=1e-12)


def test_velocity_equals_matrix_product():
    rng = np.random.default_rng(1)
    for kk in (k for k in KINDS if k.kind is not Kind.CURL):
        for d in (2, 3):
            off, h = random_config(rng, d)
            a = rng.normal(size=d)
            np.testing.assert_allclose(velocity_contribution(kk, off, h, a), eval_matrix(kk, off, h) @ a,
                                       rtol=1e-12, atol=1e-12)
    assert not velocity_contribution(DFK_WEN4, np.array([0.1, 0.2, 0.3]), 1.0, np.zeros(3)).any()
    np.testing.assert_allclose(velocity_contribution(DFK_WEN4, np.zeros(3), 1.0, np.eye(3)[0]), [112, 0, 0])


def test_fast_path_equals_generic():
    rng = np.random.default_rng(2)
    for d in (2, 3):
        off = rng.uniform(-1, 1, (200, d))
        h = rng.uniform(0.5, 1.5, 200)
        a = rng.normal(size=(200, d))
        for fn in (velocity_contribution, jacobian_contribution, vorticity_contribution):
            fast = fn(DFK_WEN4, off, h, a, fast=True)
            slow = fn(DFK_WEN4, off, h, a, fast=False)
            np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12 * np.abs(slow).max())


@pytest.mark.parametrize("kk", KINDS, ids=str)
@pytest.mark.parametrize("d", [2, 3])
def test_jacobian_matches_fd(kk, d):
    rng = np.random.default_rng(3)
    for _ in range(10):
        off, h = random_config(rng, d)
        a = weight(kk, d, rng)
        J = jacobian_contribution(kk, off, h, a)
        fd = fd_grad(lambda x: velocity_contribution(kk, x, h, a), off)  # (d, d) as [j, i]
        assert rel_err(J, fd.T) < 1e-6


@pytest.mark.parametrize("kk", KINDS, ids=str)
@pytest.mark.parametrize("d", [2, 3])
def test_vorticity_matches_fd_curl(kk, d):
    rng = np.random.default_rng(4)
    for _ in range(10):
        off, h = random_config(rng, d)
        a = weight(kk, d, rng)
        J = fd_grad(lambda x: velocity_contribution(kk, x, h, a), off).T
        if d == 2:
            want = J[1, 0] - J[0, 1]
        else:
            want = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
        # curl-free kernels have identically zero vorticity: compare against the Jacobian scale
        assert rel_err(vorticity_contribution(kk, off, h, a), want, floor=np.linalg.norm(J)) < 1e-6


def test_divfree_jacobian_trace_is_exactly_zero():
    rng = np.random.default_rng(5)
    for d in (2, 3):
        off = rng.uniform(-1, 1, (1000, d))
        J = jacobian_contribution(DFK_WEN4, off, 1.0, rng.normal(size=(1000, d)))
        assert np.all(np.trace(J, axis1=1, axis2=2) == 0.0)
    assert not jacobian_contribution(DFK_WEN4, np.zeros(3), 1.0, np.ones(3)).any()


def test_vorticity_special_cases():
    a = np.array([0.3, -0.2, 0.5])
    assert not np.any(vorticity_contribution(DFK_WEN4, np.zeros(3), 1.0, a))
    np.testing.assert_allclose(vorticity_contribution(DFK_WEN4, 0.5 * a, 1.0, a), 0.0, atol=1e-13)


def test_vorticity_jacobian_matches_fd():
    rng = np.random.default_rng(6)
    for _ in range(20):
        off, h = random_config(rng, 3)
        a = rng.normal(size=3)
        VJ = vorticity_jacobian_contribution(DFK_WEN4, off, h, a)
        fd = fd_grad(lambda x: vorticity_contribution(DFK_WEN4, x, h, a), off).T
        assert rel_err(VJ, fd) < 1e-6
    assert not vorticity_jacobian_contribution(DFK_WEN4, np.array([1.2, 0, 0]), 1.0, a).any()


def test_vorticity_jacobian_only_for_3d_divfree():
    with pytest.raises(NotImplementedForKind):
        vorticity_jacobian_contribution(KernelKind("curl", "wen4"), np.full(3, 0.1), 1.0, np.ones(3))
    with pytest.raises(ValueError):
        vorticity_jacobian_contribution(DFK_WEN4, np.full(2, 0.1), 1.0, np.ones(2))


def test_curl_kernel_has_no_matrix():
    with pytest.raises(NotImplementedForKind):
        eval_matrix(KernelKind("curl", "wen4"), np.full(3, 0.1), 1.0)


# ---- adjoints -----------------------------------------------------------------------

PROBES = {
    "velocity": (velocity_contribution, "dL_du"),
    "jacobian": (jacobian_contribution, "dL_djacobian"),
    "vorticity": (vorticity_contribution, "dL_dvorticity"),
    "vortjac": (vorticity_jacobian_contribution, "dL_dvortjac"),
}


def quadratic_probe(out, target):
    return 0.5 * np.sum((np.asarray(out) - target) ** 2)


@pytest.mark.parametrize("which", list(PROBES))
def test_weight_adjoints_match_fd(which):
    rng = np.random.default_rng(7)
    fn, slot = PROBES[which]
    kinds = [DFK_WEN4] if which == "vortjac" else KINDS
    for kk in kinds:
        for d in ((3,) if which == "vortjac" else (2, 3)):
            off, h = random_config(rng, d)
            a = np.atleast_1d(weight(kk, d, rng))
            target = rng.normal(size=np.shape(fn(kk, off, h, a if a.size > 1 else a[0])))
            unpack = (lambda x: x) if a.size > 1 else (lambda x: x[0])
            out = fn(kk, off, h, unpack(a))
            adj = AdjointBuffers(**{slot: np.asarray(out) - target})
            got = np.atleast_1d(adjoint_weights(kk, off, h, adj, which))
            want = fd_grad(lambda w: quadratic_probe(fn(kk, off, h, unpack(w)), target), a)
            assert rel_err(got, want, floor=1e-4) < 1e-5, (str(kk), d)


def test_velocity_adjoint_is_matrix_transpose():
    rng = np.random.default_rng(8)
    for d in (2, 3):
        off, h = random_config(rng, d)
        g = rng.normal(size=d)
        got = adjoint_weights(DFK_WEN4, off, h, AdjointBuffers(dL_du=g))
        np.testing.assert_allclose(got, eval_matrix(DFK_WEN4, off, h).T @ g, rtol=1e-12, atol=1e-12)
    zero = adjoint_weights(DFK_WEN4, off, h, AdjointBuffers(dL_du=np.zeros(d)))
    assert not np.any(zero)


@pytest.mark.parametrize("kk", KINDS, ids=str)
@pytest.mark.parametrize("d", [2, 3])
def test_geometry_adjoint_matches_fd(kk, d):
    rng = np.random.default_rng(9)
    for _ in range(5):
        off, h = random_config(rng, d)
        c = rng.normal(size=d)
        x = c + off
        a = weight(kk, d, rng)
        target = rng.normal(size=d)

        def loss(center, radius):
            return quadratic_probe(velocity_contribution(kk, x - center, radius, a), target)

        g = velocity_contribution(kk, off, h, a) - target
        dc, dh = adjoint_geometry(kk, off, h, a, g)
        assert rel_err(dc, fd_grad(lambda cc: loss(cc, h), c)) < 1e-5
        assert rel_err(dh, fd_grad(lambda hh: loss(c, hh), np.array(h))) < 1e-5


def test_geometry_adjoint_zero_weight():
    dc, dh = adjoint_geometry(DFK_WEN4, np.array([0.2, 0.1]), 1.0, np.zeros(2), np.ones(2))
    assert not np.any(dc) and dh == 0.0


def test_missing_adjoint_buffer():
    with pytest.raises(ValueError):
        adjoint_weights(DFK_WEN4, np.full(2, 0.1), 1.0, AdjointBuffers(), "jacobian")
    with pytest.raises(ValueError):
        adjoint_weights(DFK_WEN4, np.full(2, 0.1), 1.0, AdjointBuffers(dL_du=np.ones(2)), "hessian")
