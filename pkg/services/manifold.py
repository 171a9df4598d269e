"""
Discretized compact manifolds (flat circle, flat torus, round unit sphere)
and the differential operators every other service consumes.

Scalar fields have shape ``(..., *grid.shape)`` and vector fields
``(..., grid.dim, *grid.shape)``; leading axes are batch axes. Vector
components are contravariant in the chart frame, metric factors are applied
here and never by callers.
"""

import logging
import math
from functools import cached_property
from typing import List, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from models import DensityField, DiffusionTrajectory, ManifoldKind, ManifoldSpec, TransportPath
from services.errors import GridError

logger = logging.getLogger(__name__)

# Eigenvalues below this fraction of the spectral radius count as null modes
NULL_EIGENVALUE_RTOL = 1e-8


class ManifoldGrid:
    """A manifold discretized on a tensor grid with matched quadrature"""

    def __init__(self, spec: ManifoldSpec):
        self.spec = spec
        self.kind = spec.kind
        self.shape: Tuple[int, ...] = tuple(spec.resolution)
        self.dim = len(self.shape)
        self.size = int(np.prod(self.shape))
        self.length = spec.length

        if self.is_sphere:
            self.ricci_lambda = 1.0
            self.volume = 4.0 * math.pi
            self._build_sphere()
        else:
            self.ricci_lambda = 0.0
            self.volume = self.length ** self.dim
            self._build_flat()

        logger.debug(f"Built grid {spec.label()} with {self.size} nodes, volume {self.volume:.6g}")

    # ==================== construction ====================

    @property
    def is_sphere(self) -> bool:
        return self.kind == ManifoldKind.sphere2

    def _build_flat(self):
        h = self.length / np.array(self.shape, dtype=float)
        self.spacing = float(h.min())
        axes = [np.arange(n) * hi for n, hi in zip(self.shape, h)]
        self.coordinates = tuple(np.meshgrid(*axes, indexing="ij"))
        self.vol_weights = np.full(self.shape, self.volume / self.size)
        self.frame_scales = np.ones((self.dim,) + self.shape)

    def _build_sphere(self):
        nt, nphi = self.shape
        dth, dph = math.pi / nt, 2.0 * math.pi / nphi
        self.spacing = dth
        theta = (np.arange(nt) + 0.5) * dth
        phi = np.arange(nphi) * dph
        self.theta, self.phi = theta, phi
        self.coordinates = tuple(np.meshgrid(theta, phi, indexing="ij"))

        faces = np.arange(nt + 1) * dth
        face_area = np.sin(faces)
        face_area[0] = face_area[-1] = 0.0
        row_weights = dph * (np.cos(faces[:-1]) - np.cos(faces[1:]))
        self.vol_weights = np.repeat(row_weights[:, None], nphi, axis=1)

        # theta-gradient: area-weighted average of the two staggered face differences
        coef = dph / (2.0 * row_weights)
        t_theta = sp.diags(
            [-coef[1:] * face_area[1:-1], coef * (face_area[:-1] - face_area[1:]), coef[:-1] * face_area[1:-1]],
            [-1, 0, 1],
        )
        c_phi = sp.diags(
            [1.0, -1.0, -1.0, 1.0],
            [1, -1, nphi - 1, -(nphi - 1)],
            shape=(nphi, nphi),
        ) / (2.0 * dph)
        self._g_theta = sp.kron(t_theta, sp.identity(nphi), format="csr")
        self._g_phi = sp.kron(sp.identity(nt), c_phi, format="csr")

        sin_t = np.sin(self.coordinates[0]).ravel()
        cos_t = np.cos(self.coordinates[0]).ravel()
        self._sin, self._cos = sin_t, cos_t
        self._inv_sin2 = 1.0 / sin_t ** 2

        w = self.vol_weights.ravel()
        wd = sp.diags(w)
        self._stiffness = (
            self._g_theta.T @ wd @ self._g_theta
            + self._g_phi.T @ sp.diags(w * self._inv_sin2) @ self._g_phi
        ).tocsr()
        self._laplacian_sparse = (-sp.diags(1.0 / w) @ self._stiffness).tocsr()

        self.frame_scales = np.stack([np.ones(self.shape), np.sin(self.coordinates[0])])

    # ==================== helpers ====================

    def check_scalar(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[f.ndim - self.dim:] != self.shape:
            raise GridError(f"{name} has shape {f.shape}, expected trailing {self.shape}")
        return f

    def check_vector(self, X: np.ndarray, name: str = "vector field") -> np.ndarray:
        X = np.asarray(X, dtype=float)
        expected = (self.dim,) + self.shape
        if X.shape[X.ndim - self.dim - 1:] != expected:
            raise GridError(f"{name} has shape {X.shape}, expected trailing {expected}")
        return X

    def _apply(self, op: sp.spmatrix, f: np.ndarray) -> np.ndarray:
        """Apply a sparse node operator to the last two axes of a batched field"""
        batch = f.shape[:-2]
        flat = f.reshape(-1, self.size)
        return (op @ flat.T).T.reshape(batch + self.shape)

    def _wavenumbers(self, n: int) -> np.ndarray:
        k = 2.0 * math.pi * np.fft.rfftfreq(n, d=self.length / n)
        if n % 2 == 0:
            k[-1] = 0.0
        return k

    def _spectral_derivative(self, f: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        n = self.shape[axis]
        ax = f.ndim - self.dim + axis
        mult = (1j * self._wavenumbers(n)) ** order
        bshape = [1] * f.ndim
        bshape[ax] = -1
        return np.fft.irfft(np.fft.rfft(f, axis=ax) * mult.reshape(bshape), n=n, axis=ax)

    # ==================== differential operators ====================

    def gradient(self, f: np.ndarray) -> np.ndarray:
        f = self.check_scalar(f)
        if self.is_sphere:
            f_theta = self._apply(self._g_theta, f)
            f_phi = self._apply(self._g_phi, f)
            return np.stack([f_theta, f_phi / np.sin(self.coordinates[0]) ** 2], axis=-3)
        return np.stack([self._spectral_derivative(f, a) for a in range(self.dim)], axis=-self.dim - 1)

    def divergence(self, X: np.ndarray) -> np.ndarray:
        X = self.check_vector(X)
        if self.is_sphere:
            w = self.vol_weights
            acc = self._apply(self._g_theta.T.tocsr(), w * X[..., 0, :, :])
            acc += self._apply(self._g_phi.T.tocsr(), w * X[..., 1, :, :])
            return -acc / w
        total = np.zeros(X.shape[:-self.dim - 1] + self.shape)
        for a in range(self.dim):
            total += self._spectral_derivative(np.take(X, a, axis=-self.dim - 1), a)
        return total

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.divergence(self.gradient(f))

    def inner(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Pointwise metric inner product g(X, Y)"""
        X, Y = self.check_vector(X), self.check_vector(Y)
        prod = X * Y
        if self.is_sphere:
            return prod[..., 0, :, :] + np.sin(self.coordinates[0]) ** 2 * prod[..., 1, :, :]
        return prod.sum(axis=-self.dim - 1)

    def to_frame(self, X: np.ndarray) -> np.ndarray:
        """Components in the orthonormal frame (Euclidean inner product)"""
        return self.check_vector(X) * self.frame_scales

    def from_frame(self, E: np.ndarray) -> np.ndarray:
        return self.check_vector(E) / self.frame_scales

    def hessian_components(self, f: np.ndarray) -> List[List[np.ndarray]]:
        """Covariant Hessian components in the chart frame"""
        f = self.check_scalar(f)
        if self.is_sphere:
            f_t = self._apply(self._g_theta, f)
            f_p = self._apply(self._g_phi, f)
            f_tt = self._apply(self._g_theta, f_t)
            f_tp = 0.5 * (self._apply(self._g_phi, f_t) + self._apply(self._g_theta, f_p))
            f_pp = self._apply(self._g_phi, f_p)
            theta = self.coordinates[0]
            h_tp = f_tp - np.cos(theta) / np.sin(theta) * f_p
            h_pp = f_pp + np.sin(theta) * np.cos(theta) * f_t
            return [[f_tt, h_tp], [h_tp, h_pp]]
        first = [self._spectral_derivative(f, a) for a in range(self.dim)]
        return [[self._spectral_derivative(first[a], b) for b in range(self.dim)] for a in range(self.dim)]

    def hessian_norm_sq(self, f: np.ndarray) -> np.ndarray:
        h = self.hessian_components(f)
        if self.is_sphere:
            s2 = np.sin(self.coordinates[0]) ** 2
            return h[0][0] ** 2 + 2.0 * h[0][1] ** 2 / s2 + h[1][1] ** 2 / s2 ** 2
        return sum(h[a][b] ** 2 for a in range(self.dim) for b in range(self.dim))

    def ricci_quadratic(self, X: np.ndarray) -> np.ndarray:
        X = self.check_vector(X)
        if self.is_sphere:
            return self.inner(X, X)
        return np.zeros(X.shape[:-self.dim - 1] + self.shape)

    def bochner_residual(self, f: np.ndarray) -> np.ndarray:
        """<grad f, grad lap f> - lap|grad f|^2 / 2 + |Hess f|^2 + Ric(grad f, grad f)"""
        grad = self.gradient(f)
        lhs = self.inner(grad, self.gradient(self.laplacian(f))) - 0.5 * self.laplacian(self.inner(grad, grad))
        return lhs + self.hessian_norm_sq(f) + self.ricci_quadratic(grad)

    def integrate(self, f: np.ndarray) -> Union[float, np.ndarray]:
        f = self.check_scalar(f)
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        total = np.sum(f * self.vol_weights, axis=axes)
        return float(total) if np.ndim(total) == 0 else total

    # ==================== spectral data ====================

    @cached_property
    def null_modes(self) -> List[np.ndarray]:
        """L2(V)-orthonormal basis of the kernel of the discrete gradient"""
        if self.is_sphere:
            periodic = [1] if self.shape[1] % 2 == 0 else []
        else:
            periodic = [a for a in range(self.dim) if self.shape[a] % 2 == 0]
        modes = [np.ones(self.shape)]
        for a in periodic:
            idx = np.arange(self.shape[a])
            alt = (-1.0) ** idx
            bshape = [1] * self.dim
            bshape[a] = -1
            modes += [m * alt.reshape(bshape) for m in modes]
        return [m / math.sqrt(self.integrate(m * m)) for m in modes]

    def project_null(self, f: np.ndarray) -> Tuple[np.ndarray, float]:
        """Remove the gradient kernel from f; returns the cleaned field and the removed L2 norm"""
        f = self.check_scalar(f)
        removed = np.zeros_like(f)
        for mode in self.null_modes:
            removed += self.integrate(f * mode) * mode if f.ndim == self.dim else \
                np.multiply.outer(self.integrate(f * mode), mode)
        norm = float(np.sqrt(np.max(np.atleast_1d(self.integrate(removed * removed)))))
        return f - removed, norm

    @cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of -laplacian, ordered like spectral_transform coefficients"""
        if self.is_sphere:
            return self._sphere_eigen[0]
        ks = []
        for n in self.shape:
            k = 2.0 * math.pi * np.fft.fftfreq(n, d=self.length / n)
            if n % 2 == 0:
                k[n // 2] = 0.0
            ks.append(k)
        grids = np.meshgrid(*ks, indexing="ij")
        mu = sum(k ** 2 for k in grids).ravel()
        mu[mu < NULL_EIGENVALUE_RTOL * mu.max()] = 0.0
        return mu

    @cached_property
    def _sphere_eigen(self) -> Tuple[np.ndarray, np.ndarray]:
        logger.info(f"Computing dense Laplacian eigenbasis for {self.spec.label()} ({self.size} nodes)")
        mu, vecs = scipy.linalg.eigh(self._stiffness.toarray(), np.diag(self.vol_weights.ravel()))
        mu = np.where(mu < NULL_EIGENVALUE_RTOL * mu.max(), 0.0, mu)
        return mu, vecs

    def spectral_transform(self, f: np.ndarray) -> np.ndarray:
        """Coefficients in the Laplacian eigenbasis, shape (batch, size)"""
        f = self.check_scalar(f)
        batch = f.reshape(-1, *self.shape)
        if self.is_sphere:
            vecs = self._sphere_eigen[1]
            return (batch.reshape(len(batch), -1) * self.vol_weights.ravel()) @ vecs
        axes = tuple(range(1, self.dim + 1))
        return np.fft.fftn(batch, axes=axes).reshape(len(batch), -1)

    def spectral_inverse(self, coeffs: np.ndarray) -> np.ndarray:
        if self.is_sphere:
            return (coeffs @ self._sphere_eigen[1].T).reshape((-1,) + self.shape)
        axes = tuple(range(1, self.dim + 1))
        return np.fft.ifftn(coeffs.reshape((-1,) + self.shape), axes=axes).real

    @cached_property
    def stiffness_diagonal(self) -> np.ndarray:
        """Diagonal of the weighted stiffness matrix -W laplacian"""
        if self.is_sphere:
            return self._stiffness.diagonal()
        return -self.vol_weights.ravel() * np.diag(self.laplacian_matrix)

    @cached_property
    def laplacian_matrix(self) -> Union[np.ndarray, sp.csr_matrix]:
        """Node matrix of the Laplacian (dense on flat grids, sparse on the sphere)"""
        if self.is_sphere:
            return self._laplacian_sparse
        eye = np.eye(self.size).reshape((self.size,) + self.shape)
        return self.laplacian(eye).reshape(self.size, self.size).T

    def heat_propagate(self, f: np.ndarray, t: float) -> np.ndarray:
        """Exact semigroup exp(t * laplacian) of the discrete operator"""
        f = self.check_scalar(f)
        if self.is_sphere:
            flat = f.reshape(-1, self.size).T
            return expm_multiply(self._laplacian_sparse * t, flat).T.reshape(f.shape)
        out = f
        for a, n in enumerate(self.shape):
            ax = out.ndim - self.dim + a
            mult = np.exp(-self._wavenumbers(n) ** 2 * t)
            bshape = [1] * out.ndim
            bshape[ax] = -1
            out = np.fft.irfft(np.fft.rfft(out, axis=ax) * mult.reshape(bshape), n=n, axis=ax)
        return out

    # ==================== geometry ====================

    def embedding(self) -> np.ndarray:
        """Unit vectors of sphere nodes, shape (size, 3)"""
        if not self.is_sphere:
            raise GridError("embedding is only defined for sphere2")
        theta, phi = (c.ravel() for c in self.coordinates)
        return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1)

    def distance_matrix(self) -> np.ndarray:
        """Closed-form geodesic distances between all node pairs"""
        if self.is_sphere:
            xyz = self.embedding()
            return np.arccos(np.clip(xyz @ xyz.T, -1.0, 1.0))
        sq = np.zeros((self.size, self.size))
        for coord in self.coordinates:
            x = coord.ravel()
            d = np.abs(x[:, None] - x[None, :])
            sq += np.minimum(d, self.length - d) ** 2
        return np.sqrt(sq)

    def translate(self, f: np.ndarray, offsets: Tuple[int, ...]) -> np.ndarray:
        """Shift a field by whole grid cells on a flat grid"""
        if self.is_sphere:
            raise GridError("grid translations are only defined on flat grids")
        f = self.check_scalar(f)
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        return np.roll(f, offsets, axis=axes)

    def fourier_shift(self, f: np.ndarray, displacement: Tuple[float, ...]) -> np.ndarray:
        """Band-limited translation x -> f(x - d) by an arbitrary displacement"""
        if self.is_sphere:
            raise GridError("translations are only defined on flat grids")
        out = self.check_scalar(f)
        for a, (n, d) in enumerate(zip(self.shape, displacement)):
            ax = out.ndim - self.dim + a
            k = 2.0 * math.pi * np.fft.rfftfreq(n, d=self.length / n)
            bshape = [1] * out.ndim
            bshape[ax] = -1
            out = np.fft.irfft(np.fft.rfft(out, axis=ax) * np.exp(-1j * k * d).reshape(bshape), n=n, axis=ax)
        return out


def build_grid(spec: ManifoldSpec) -> ManifoldGrid:
    """
    Build a discretized manifold

    Args:
        spec: Validated manifold description

    Returns:
        Grid with quadrature weights, operators and curvature data
    """
    if spec.kind not in (ManifoldKind.circle, ManifoldKind.torus2, ManifoldKind.sphere2):
        raise GridError(f"Unsupported manifold kind: {spec.kind}")
    return ManifoldGrid(spec)


def gradient(grid: ManifoldGrid, f: np.ndarray) -> np.ndarray:
    return grid.gradient(f)


def divergence(grid: ManifoldGrid, X: np.ndarray) -> np.ndarray:
    return grid.divergence(X)


def laplacian(grid: ManifoldGrid, f: np.ndarray) -> np.ndarray:
    return grid.laplacian(f)


def hessian_norm_sq(grid: ManifoldGrid, f: np.ndarray) -> np.ndarray:
    return grid.hessian_norm_sq(f)


def ricci_quadratic(grid: ManifoldGrid, X: np.ndarray) -> np.ndarray:
    return grid.ricci_quadratic(X)


def bochner_residual(grid: ManifoldGrid, f: np.ndarray) -> np.ndarray:
    return grid.bochner_residual(f)


def integrate(grid: ManifoldGrid, f: np.ndarray) -> float:
    return grid.integrate(f)


# models annotate grid fields by name; resolve them now that ManifoldGrid exists
for _model in (DensityField, DiffusionTrajectory, TransportPath):
    _model.model_rebuild(_types_namespace={"ManifoldGrid": ManifoldGrid})
