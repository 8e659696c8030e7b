"""Shared fixtures: small random scenes and a finite-difference gradient checker."""

import numpy as np

from gspose import lie
from gspose import rasterizer as rz
from gspose.camera import Camera, look_at
from gspose.scene import GaussianCloud

FD_STEP = 1e-5
FD_REL = 1e-5
FD_ABS = 1e-8


def random_cloud(rng, n=10, degree=3, spread=0.6, scale=(0.1, 0.35)):
    means = rng.uniform(-spread, spread, (n, 3))
    quats = rng.normal(size=(n, 4))
    log_scales = np.log(rng.uniform(scale[0], scale[1], (n, 3)))
    logits = rng.uniform(-1.0, 2.0, (n, 1))
    coeffs = rng.normal(scale=0.3, size=(n, 3, (degree + 1) ** 2))
    return GaussianCloud(means, quats, log_scales, logits, coeffs)


def random_scene(seed, n=10, size=32, degree=3):
    """Ten-ish Gaussians in front of a slightly jittered camera, plus a random upstream gradient."""
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, n, degree)
    eye = rng.normal(size=3) * 0.3 + [0.0, 0.0, -3.0]
    cam = Camera(30.0, 32.0, size / 2 - 0.3, size / 2 + 0.2, size, size, look_at(eye, [0, 0, 0]))
    d_image = rng.normal(size=(size, size, 3))
    background = rng.uniform(0, 0.5, 3)
    return cloud, cam, d_image, background


def structure(out: rz.RenderOutput, config=rz.DEFAULT_RASTER):
    """Discrete compositing state of a render.

    The image is smooth in the parameters only while this stays fixed: which
    splats are visible, which (splat, pixel) pairs fall inside the cutoff,
    which alphas hit the clamp, and where each pixel terminates.
    """
    st = out.splats
    h, w = out.image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs[None] - st.mean2d[:, 0, None, None]
    dy = ys[None] - st.mean2d[:, 1, None, None]
    a, b, c = (st.conic[:, i, None, None] for i in range(3))
    q = a * dx * dx + 2 * b * dx * dy + c * dy * dy
    inside = q <= config.cutoff_sigma**2
    clamped = inside & (st.opacity[:, None, None] * np.exp(-0.5 * q) > config.alpha_max)
    return (st.index.tobytes(), inside.tobytes(), clamped.tobytes(), out.n_contrib.tobytes())


def _eval(cloud, cam, d_image, background, config):
    out = rz.render(cloud, cam, background, config)
    return float(np.sum(out.image * d_image)), structure(out, config)


def _derivative(f, h, base):
    """Central difference, or a second-order one-sided stencil when one side
    crosses a cutoff, clamp or termination event. Returns None if both sides do."""
    fp, sp = f(h)
    fm, sm = f(-h)
    if sp == base and sm == base:
        return (fp - fm) / (2 * h)
    for sign, f1, s1 in ((1, fp, sp), (-1, fm, sm)):
        if s1 != base:
            continue
        f2, s2 = f(2 * sign * h)
        if s2 == base:
            f0, _ = f(0.0)
            return sign * (-3 * f0 + 4 * f1 - f2) / (2 * h)
    return None


def fd_gradient_check(cloud, cam, d_image, background, config=rz.DEFAULT_RASTER, h=FD_STEP):
    """Compare every analytic gradient entry against central differences.

    Returns a list of ``(name, index, analytic, numeric)`` failures, where an
    entry passes if its absolute error is below FD_ABS or its relative error
    below FD_REL. An entry sitting within 2h of discontinuities on both sides
    counts as a failure with ``numeric`` set to None.
    """
    out = rz.render(cloud, cam, background, config)
    grads = rz.backward(cloud, cam, out, d_image)
    base = structure(out, config)
    failures = []

    def check(name, idx, analytic, numeric):
        if numeric is None:
            failures.append((name, idx, analytic, None))
            return
        err = abs(analytic - numeric)
        if err > FD_ABS and err / max(abs(analytic), abs(numeric)) >= FD_REL:
            failures.append((name, idx, analytic, numeric))

    for name, grad in grads.param_grads().items():
        arr = getattr(cloud, name)
        for idx in np.ndindex(arr.shape):
            def f(eps, name=name, idx=idx):
                moved = cloud.copy()
                getattr(moved, name)[idx] += eps
                return _eval(moved, cam, d_image, background, config)
            check(name, idx, grad[idx], _derivative(f, h, base))
    for j in range(6):
        def f(eps, j=j):
            step = np.zeros(6)
            step[j] = eps
            return _eval(cloud, cam.with_pose(lie.exp(step) @ cam.world_to_cam), d_image,
                         background, config)
        check("pose", (j,), grads.d_pose[j], _derivative(f, h, base))
    return failures
