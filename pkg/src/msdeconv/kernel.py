"""Test functions and deconvolution kernels.

A test function ``phi`` is a product of a univariate polynomial profile
restricted to ``[-1, 1]``.  For a triple ``(s, t, h)`` the deconvolution
kernel ``F_{s,t,h}`` is the inverse Fourier transform of
``F(d_s phi_{t,h}) / conj(F(f_eps))``.  Two constructions are provided:

* a closed form for the symmetric Laplace error, where dividing by the
  characteristic function turns into the differential operator
  ``(1 - sigma^2/2 * Laplacian) d_s`` applied to ``phi_{t,h}``;
* a spectral construction that inverts the truncated integrand on a
  regular frequency grid with an FFT and works for any error law with
  a known Fourier transform.

The closed form is piecewise polynomial, so inner products between two
such kernels are computed exactly with tensor Gauss-Legendre rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "TestKernel",
    "Triple",
    "LaplaceError",
    "SpectralError",
    "LaplaceDeconvKernel",
    "SpectralDeconvKernel",
    "KernelConfigurationError",
    "make_quartic_kernel",
    "make_product_kernel",
    "make_smooth_kernel",
    "laplace_as_spectral",
    "make_deconv_kernel_laplace",
    "make_deconv_kernel_spectral",
    "kernel_inner_product",
]


class KernelConfigurationError(ValueError):
    """Raised when a spectral kernel cannot be resolved to tolerance."""

    def __init__(self, message: str, estimated_error: float):
        super().__init__(f"{message} (estimated error {estimated_error:.3g})")
        self.estimated_error = estimated_error


def _as_points(x, d: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if pts.shape[0] == d else pts.reshape(-1, d)
    if pts.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {pts.shape}")
    return pts


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestKernel:
    """Product test function ``c * prod_k p(x_k)`` supported on ``[-1, 1]^d``.

    ``profile`` must vanish at ``+-1``.  Partial derivatives are taken
    analytically from the polynomial coefficients.
    """

    __test__ = False  # not a pytest class

    dim: int
    profile: Polynomial
    name: str = "product"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        ends = self.profile(np.array([-1.0, 1.0]))
        if np.max(np.abs(ends)) > 1e-12:
            raise ValueError("profile must vanish at -1 and 1")

    @cached_property
    def normalization(self) -> float:
        antideriv = self.profile.integ()
        mass = float(antideriv(1.0) - antideriv(-1.0))
        return mass ** (-self.dim)

    @property
    def degree(self) -> int:
        return self.profile.degree()

    @cached_property
    def _derivatives(self) -> list[Polynomial]:
        out = [self.profile]
        for _ in range(self.degree + 1):
            out.append(out[-1].deriv())
        return out

    def profile_derivative(self, order: int) -> Polynomial:
        if order > self.degree:
            return Polynomial([0.0])
        return self._derivatives[order]

    def partial_derivative(self, alpha: Sequence[int], x) -> np.ndarray:
        """Evaluate ``d^alpha phi`` at ``x`` (points as rows)."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim or min(alpha) < 0:
            raise ValueError(f"invalid multi-index {alpha} for dimension {self.dim}")
        pts = _as_points(x, self.dim)
        inside = np.all(np.abs(pts) <= 1.0, axis=1)
        val = np.full(pts.shape[0], self.normalization)
        for k, a in enumerate(alpha):
            val = val * self.profile_derivative(a)(pts[:, k])
        return np.where(inside, val, 0.0)

    def evaluate(self, x) -> np.ndarray:
        return self.partial_derivative((0,) * self.dim, x)

    __call__ = evaluate

    def fourier_profile(self, omega) -> np.ndarray:
        """``int_{-1}^{1} p(u) exp(-i omega u) du`` by Gauss-Legendre."""
        omega = np.asarray(omega, dtype=float)
        # oscillatory integrand: enough nodes to resolve the largest frequency
        m = int(max(64, self.degree + 1, 0.75 * np.max(np.abs(omega), initial=0.0) + 48))
        nodes, weights = np.polynomial.legendre.leggauss(m)
        vals = self.profile(nodes) * weights
        return np.exp(-1j * np.multiply.outer(omega, nodes)) @ vals

    def fourier(self, y) -> np.ndarray:
        """Fourier transform of ``phi`` at frequencies ``y`` (rows)."""
        pts = _as_points(y, self.dim)
        out = np.full(pts.shape[0], self.normalization, dtype=complex)
        for k in range(self.dim):
            out *= self.fourier_profile(pts[:, k])
        return out


def make_product_kernel(profile_coefficients: Sequence[float], dim: int = 2,
                        name: str = "product") -> TestKernel:
    """Build a product test function from ascending profile coefficients."""
    return TestKernel(dim=dim, profile=Polynomial(list(profile_coefficients)), name=name)


def make_quartic_kernel(d: int = 2) -> TestKernel:
    """The quartic product kernel ``c2 (1 - x1^4)(1 - x2^4)`` on ``[-1, 1]^2``."""
    if d != 2:
        raise ValueError(f"the quartic kernel is defined for d=2 only, got d={d}")
    return make_product_kernel([1.0, 0.0, 0.0, 0.0, -1.0], dim=2, name="quartic")


def make_smooth_kernel(d: int = 2, power: int = 6) -> TestKernel:
    """``(1 - u^2)^power`` profile; vanishes to order ``power`` at the edge.

    Used where the spectral route needs a rapidly decaying transform.
    """
    profile = Polynomial([1.0, 0.0, -1.0]) ** power
    return TestKernel(dim=d, profile=profile, name=f"smooth{power}")


# ---------------------------------------------------------------------------
# Triples and error models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Triple:
    """A test configuration: unit direction ``s``, location ``t``, scale ``h``."""

    s: tuple[float, ...]
    t: tuple[float, ...]
    h: float

    def __post_init__(self):
        s = tuple(float(v) for v in self.s)
        t = tuple(float(v) for v in self.t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "h", float(self.h))
        if len(s) != len(t):
            raise ValueError("direction and location dimensions differ")
        if abs(math.hypot(*s) - 1.0) > 1e-12:
            raise ValueError(f"direction {s} is not a unit vector")
        if not self.h > 0:
            raise ValueError(f"scale must be positive, got {self.h}")

    @classmethod
    def from_direction(cls, s, t, h) -> "Triple":
        s = np.asarray(s, dtype=float)
        return cls(tuple(s / np.linalg.norm(s)), tuple(t), h)

    @property
    def dim(self) -> int:
        return len(self.s)

    def negated(self) -> "Triple":
        return Triple(tuple(-v for v in self.s), self.t, self.h)


@dataclass(frozen=True)
class LaplaceError:
    """Symmetric multivariate Laplace error, ``F f_eps(y) = 1/(1 + sigma^2 |y|^2 / 2)``."""

    sigma: float
    dim: int = 2
    r: float = 2.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def label(self) -> str:
        return f"laplace(sigma={self.sigma:g})"

    def fourier(self, y) -> np.ndarray:
        pts = _as_points(y, self.dim)
        return 1.0 / (1.0 + 0.5 * self.sigma**2 * np.sum(pts**2, axis=1))


def _decay_ratios(fourier: Callable, dim: int, r: float, radii: Sequence[float]) -> np.ndarray:
    dirs = np.eye(dim)
    if dim > 1:
        diag = np.ones(dim) / math.sqrt(dim)
        dirs = np.vstack([dirs, diag])
    ratios = []
    for rad in radii:
        y = rad * dirs
        mod = np.abs(fourier(y))
        ratios.append(mod * (1.0 + rad**2) ** (r / 2))
    return np.concatenate(ratios)


@dataclass(frozen=True)
class SpectralError:
    """Error law known through its Fourier transform with polynomial decay ``r``.

    ``radius_scale`` and ``nodes`` set the default truncation radius
    ``radius_scale / h`` and frequency nodes per axis of the spectral path.
    """

    fourier_transform: Callable[[np.ndarray], np.ndarray]
    r: float
    dim: int = 2
    radius_scale: float = 40.0
    nodes: int = 256
    name: str = "spectral"
    max_decay_spread: float = 100.0

    def __post_init__(self):
        if self.r <= 0 or (self.dim == 1 and self.r <= 0.5):
            raise ValueError("decay exponent must satisfy r > 0 (r > 1/2 when d = 1)")
        ratios = _decay_ratios(self.fourier, self.dim, self.r, np.geomspace(1.0, 1e3, 13))
        if np.min(ratios) <= 0 or np.max(ratios) / np.min(ratios) > self.max_decay_spread:
            raise ValueError(
                f"Fourier transform is not polynomially decaying with exponent {self.r}: "
                f"scaled modulus spans [{np.min(ratios):.3g}, {np.max(ratios):.3g}]"
            )

    @property
    def label(self) -> str:
        return self.name

    def fourier(self, y) -> np.ndarray:
        return np.asarray(self.fourier_transform(_as_points(y, self.dim)), dtype=complex)


def laplace_as_spectral(err: LaplaceError, **kwargs) -> SpectralError:
    """Wrap a Laplace error as a generic spectral error (for cross-checks).

    ``|F f_eps(y)| (1 + |y|^2)`` lies between ``min(1, 2/sigma^2)`` and
    ``max(1, 2/sigma^2)``, so the decay check is given that spread.
    """
    if "max_decay_spread" not in kwargs:
        spread = math.inf if err.sigma == 0 else max(1.0, 2 / err.sigma**2, err.sigma**2 / 2)
        kwargs["max_decay_spread"] = max(100.0, 1.01 * spread)
    return SpectralError(err.fourier, r=err.r, dim=err.dim, name=f"spectral-{err.label}", **kwargs)


# ---------------------------------------------------------------------------
# Deconvolution kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceDeconvKernel:
    """Closed-form ``F_{s,t,h}`` under Laplace error; piecewise polynomial."""

    triple: Triple
    error: LaplaceError
    test_kernel: TestKernel

    @property
    def dim(self) -> int:
        return self.triple.dim

    @property
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(self.triple.t)
        return t - self.triple.h, t + self.triple.h

    @property
    def polynomial_degree(self) -> int:
        return self.test_kernel.degree

    def _terms(self):
        # (coefficient, multi-index) pairs of (d_s - sigma^2/2 * Lap d_s) in unit coordinates
        d, h = self.dim, self.triple.h
        lap = 0.5 * self.error.sigma**2 / h**2
        terms = []
        for k, sk in enumerate(self.triple.s):
            if sk == 0.0:
                continue
            base = [0] * d
            base[k] = 1
            terms.append((sk, tuple(base)))
            if lap > 0:
                for m in range(d):
                    alpha = list(base)
                    alpha[m] += 2
                    terms.append((-lap * sk, tuple(alpha)))
        return terms

    def evaluate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        h = self.triple.h
        u = (pts - np.asarray(self.triple.t)) / h
        out = np.zeros(pts.shape[0])
        for coef, alpha in self._terms():
            out += coef * self.test_kernel.partial_derivative(alpha, u)
        return out * h ** (-self.dim - 1)

    __call__ = evaluate


def make_deconv_kernel_laplace(k: TestKernel, tr: Triple, sigma: float) -> LaplaceDeconvKernel:
    """Closed-form deconvolution kernel for symmetric Laplace error of scale ``sigma``."""
    if k.dim != tr.dim:
        raise ValueError("kernel and triple dimensions differ")
    if k.degree < 3:
        raise ValueError("test kernel must expose partial derivatives to total order 3")
    return LaplaceDeconvKernel(tr, LaplaceError(sigma, dim=k.dim), k)


@dataclass(frozen=True, eq=False)
class SpectralDeconvKernel:
    """``F_{s,t,h}`` tabulated on a regular grid by FFT inversion.

    Values between grid nodes are obtained by multilinear interpolation;
    outside the grid extent the kernel is taken as zero.
    """

    triple: Triple
    error: LaplaceError | SpectralError
    test_kernel: TestKernel
    radius: float
    nodes: int
    oversample: int
    axes: tuple[np.ndarray, ...] = field(repr=False)
    values: np.ndarray = field(repr=False)
    estimated_error: float = 0.0

    @property
    def dim(self) -> int:
        return self.triple.dim

    @property
    def polynomial_degree(self) -> None:
        return None

    @property
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return lo, hi

    @property
    def spacing(self) -> float:
        return float(self.axes[0][1] - self.axes[0][0])

    @cached_property
    def _interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.axes, self.values, method="linear",
                                       bounds_error=False, fill_value=0.0)

    def evaluate(self, x) -> np.ndarray:
        return self._interp(_as_points(x, self.dim))

    __call__ = evaluate


def _spectral_integrand(k: TestKernel, tr: Triple, err, v_axis: np.ndarray) -> np.ndarray:
    """``i (s.v) F(phi)(v) / conj(F f_eps)(v/h)`` on the tensor grid of ``v_axis``."""
    d = tr.dim
    prof = k.normalization ** (1.0 / d) * k.fourier_profile(v_axis)
    grids = np.meshgrid(*([v_axis] * d), indexing="ij")
    phi_hat = np.ones(grids[0].shape, dtype=complex)
    for k_ax in range(d):
        shape = [1] * d
        shape[k_ax] = -1
        phi_hat = phi_hat * prof.reshape(shape)
    s_dot_v = sum(sk * g for sk, g in zip(tr.s, grids))
    pts = np.stack([g.ravel() for g in grids], axis=1) / tr.h
    denom = np.conj(err.fourier(pts)).reshape(grids[0].shape)
    return 1j * s_dot_v * phi_hat / denom


def make_deconv_kernel_spectral(k: TestKernel, tr: Triple, e, *, radius_scale: float | None = None,
                                nodes: int | None = None, oversample: int = 8,
                                tolerance: float = 1e-3) -> SpectralDeconvKernel:
    """Deconvolution kernel by discrete Fourier inversion.

    In unit coordinates ``u = (x - t)/h`` the kernel is
    ``h^{-d-1} (2 pi)^{-d} int exp(i v.u) i(s.v) F(phi)(v) / conj(F f_eps)(v/h) dv``.
    The integral is truncated to ``|v_k| <= radius_scale`` (``R = radius_scale/h``
    in the original frequency variable) and sampled with ``nodes`` points per
    axis.  ``oversample`` zero-pads the frequency grid so that the spatial grid
    is finer than the bare FFT spacing.

    Raises
    ------
    KernelConfigurationError
        If the share of integrand L1 mass in the outer tenth of the
        frequency box exceeds ``tolerance``; this flags integrands that
        have not decayed at the cutoff.
    """
    if k.dim != tr.dim or e.dim != tr.dim:
        raise ValueError("dimension mismatch between kernel, triple and error model")
    if radius_scale is None:
        radius_scale = getattr(e, "radius_scale", 40.0)
    if nodes is None:
        nodes = getattr(e, "nodes", 256)
    if nodes % 2:
        raise ValueError("nodes per axis must be even")
    d, h = tr.dim, tr.h
    dv = 2.0 * radius_scale / nodes
    v_axis = (np.arange(nodes) - nodes // 2) * dv
    g = _spectral_integrand(k, tr, e, v_axis)
    # the -R row/column has no +R partner; dropping it keeps the result real
    for ax in range(d):
        idx = [slice(None)] * d
        idx[ax] = 0
        g[tuple(idx)] = 0.0

    m = nodes * oversample
    padded = np.zeros((m,) * d, dtype=complex)
    off = (m - nodes) // 2
    padded[tuple(slice(off, off + nodes) for _ in range(d))] = g
    spatial = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(padded))) * m**d
    scale = h ** (-d - 1) * (2 * np.pi) ** (-d) * dv**d
    values = np.real(spatial) * scale

    du = 2 * np.pi / (m * dv)
    u_axis = (np.arange(m) - m // 2) * du
    axes = tuple(tr.t[ax] + h * u_axis for ax in range(d))

    # share of integrand mass still present in the outermost shell of the box
    vmag = np.max(np.abs(np.stack(np.meshgrid(*([v_axis] * d), indexing="ij"))), axis=0)
    total = np.sum(np.abs(g))
    est = float(np.sum(np.abs(g[vmag >= 0.9 * radius_scale])) / total) if total > 0 else 0.0
    if est > tolerance:
        raise KernelConfigurationError(
            f"spectral kernel for {tr} not resolved at radius {radius_scale}/h with {nodes} nodes", est)
    return SpectralDeconvKernel(tr, e, k, radius_scale / h, nodes, oversample, axes, values, est)


# ---------------------------------------------------------------------------
# Inner products
# ---------------------------------------------------------------------------


def _gauss_legendre_box(lo, hi, npts: int):
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    axes, wts = [], []
    for a, b in zip(lo, hi):
        axes.append(0.5 * (b - a) * nodes + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * weights)
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    w = np.ones(1)
    for wk in wts:
        w = np.multiply.outer(w, wk).ravel()
    return pts, w


def kernel_inner_product(a, b) -> float:
    """``int a(x) b(x) dx`` for two compatible kernels.

    Closed-form kernels are integrated exactly on the overlap of their
    support boxes; spectral kernels by a trapezoidal sum on a shared grid.
    """
    if isinstance(a, LaplaceDeconvKernel) and isinstance(b, LaplaceDeconvKernel):
        lo = np.maximum(a.support_box[0], b.support_box[0])
        hi = np.minimum(a.support_box[1], b.support_box[1])
        if np.any(hi <= lo):
            return 0.0
        npts = math.ceil((a.polynomial_degree + b.polynomial_degree) / 2) + 1
        pts, w = _gauss_legendre_box(lo, hi, npts)
        return float(np.sum(w * a(pts) * b(pts)))
    if isinstance(a, SpectralDeconvKernel) and isinstance(b, SpectralDeconvKernel):
        if a.dim != b.dim or not math.isclose(a.spacing, b.spacing, rel_tol=1e-12):
            raise TypeError("spectral kernels must share grid spacing")
        # evaluate b on a's nodes; trapezoid weights are uniform since edges are ~0
        grids = np.meshgrid(*a.axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        return float(np.sum(a.values.ravel() * b(pts)) * a.spacing ** a.dim)
    raise TypeError(
        f"incompatible kernel representations: {type(a).__name__} and {type(b).__name__}")
