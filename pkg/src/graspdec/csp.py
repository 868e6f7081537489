"""Common spatial patterns for two-class variance contrasts.

The fitting route is the standard simultaneous-diagonalization
construction: trace-normalized trial covariances are averaged per class,
the composite covariance is whitened, and the whitened class-1 covariance
is diagonalized.  Projections onto the resulting filters maximize the
variance ratio between the two classes; log-normalized variances of the
projected series are the classification features.

All symmetric eigenproblems are solved with a cyclic Jacobi iteration:
matrices here are small (channels x channels) and the rotation-based
solver is unconditionally stable and deterministic, which keeps fitted
models bit-reproducible across runs.
"""

from __future__ import annotations

import base64
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError

# Variances below this floor are clamped before the log (all-zero blocks
# would otherwise produce -inf features).
VAR_FLOOR = 1e-300

MODEL_FORMAT_VERSION = 1


def trial_covariance(block: np.ndarray) -> np.ndarray:
    """Trace-normalized covariance E E^T / tr(E E^T) of one trial block.

    No mean removal: upstream highpass filtering takes out DC, and the
    normalization makes the result scale-invariant.  The output is exactly
    symmetric and has unit trace.

    Raises NumericalError for an all-zero (degenerate) block.
    """
    e = np.asarray(block, dtype=np.float64)
    if e.ndim != 2:
        raise DataError(f"trial block must be 2-D, got shape {e.shape}")
    cov = e @ e.T
    cov = 0.5 * (cov + cov.T)
    tr = float(np.trace(cov))
    if not np.isfinite(tr) or tr <= 0.0:
        raise NumericalError("degenerate trial block: zero or non-finite power")
    return cov / tr


def class_mean_covariance(blocks: list[np.ndarray]) -> np.ndarray:
    """Mean of per-trial normalized covariances for one class."""
    if len(blocks) == 0:
        raise DataError("cannot average covariance over zero trials")
    acc = trial_covariance(blocks[0])
    for b in blocks[1:]:
        acc = acc + trial_covariance(b)
    return acc / len(blocks)


def _offdiag_sq(a: np.ndarray) -> float:
    # summed squares of the off-diagonal entries only; subtracting the
    # diagonal from the total Frobenius norm instead would cancel
    # catastrophically once the true off-diagonal mass is tiny
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sum(off * off))


def sym_eig(
    s: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps annihilate every off-diagonal pair per cycle until the
    off-diagonal Frobenius norm falls below ``tol`` times the Frobenius
    norm of the input.  Eigenvalues are returned in descending order; each
    eigenvector is sign-fixed so its largest-magnitude component is
    positive, making the output deterministic.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues, descending.
    v : ndarray, shape (n, n)
        Orthonormal eigenvectors as columns, ``s @ v[:, i] == w[i] * v[:, i]``.
    """
    a = np.asarray(s, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape != (n, n):
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if n else 1.0)
    if float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise NumericalError("matrix is not symmetric within 1e-10")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    thresh = tol * float(np.linalg.norm(a, "fro"))
    # a pair below this cannot keep the total off-diagonal norm above thresh
    skip = thresh / max(1, n * n)
    converged = n < 2
    for _ in range(max_sweeps):
        if _offdiag_sq(a) <= thresh * thresh:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = 0.5 * (aqq - app) / apq
                if abs(theta) > 1e10:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - sn * cq
                a[:, q] = sn * cp + c * cq
                # exact pivot-block update (avoids accumulating rotation error)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        converged = _offdiag_sq(a) <= thresh * thresh
    if not converged:
        raise NumericalError(f"Jacobi iteration failed to converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0.0:
            v[:, j] = -v[:, j]
    return w, v


def whitening_transform(cov: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Whitening matrix P with P cov P^T = I, from the eigensystem of cov.

    P = D^{-1/2} U^T where cov = U D U^T.  Raises NumericalError when the
    smallest eigenvalue falls below ``rank_tol`` times the largest
    (rank-deficient covariance cannot be whitened).
    """
    w, u = sym_eig(cov)
    if w[0] <= 0.0:
        raise NumericalError("covariance is not positive definite")
    if w[-1] <= rank_tol * w[0]:
        raise NumericalError(
            f"rank-deficient covariance: eigenvalue ratio {w[-1] / w[0]:.3e}"
        )
    return (u / np.sqrt(w)).T


@dataclass
class CspModel:
    """Fitted spatial filters for one two-class contrast.

    Attributes
    ----------
    filters : ndarray, shape (n_channels, n_channels)
        Filter matrix W; column j is one spatial filter.
    eigenvalues : ndarray, shape (n_channels,)
        Whitened class-1 variance per filter, descending in [0, 1].  The
        class-2 values are their complements.
    band, scenario, phase : str
        Provenance tags for bookkeeping and serialization.
    montage_hash : str
        Hash of the montage the model was fitted on.
    """

    filters: np.ndarray
    eigenvalues: np.ndarray
    band: str = ""
    scenario: str = ""
    phase: str = ""
    montage_hash: str = ""

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        n = self.filters.shape[0]
        if self.filters.shape != (n, n):
            raise DataError(f"filter matrix must be square, got {self.filters.shape}")
        if self.eigenvalues.shape != (n,):
            raise DataError("eigenvalue count does not match filter count")

    @property
    def n_channels(self) -> int:
        return self.filters.shape[0]

    def to_json(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "csp",
            "n_channels": int(self.n_channels),
            "filters_b64": encode_array(self.filters),
            "eigenvalues_b64": encode_array(self.eigenvalues),
            "band": self.band,
            "scenario": self.scenario,
            "phase": self.phase,
            "montage_hash": self.montage_hash,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CspModel":
        if not isinstance(obj, dict) or obj.get("kind") != "csp":
            raise DataError("not a spatial filter model record")
        if obj.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError(f"unknown model format version {obj.get('format_version')!r}")
        n = int(obj["n_channels"])
        return cls(
            filters=decode_array(obj["filters_b64"], (n, n)),
            eigenvalues=decode_array(obj["eigenvalues_b64"], (n,)),
            band=str(obj.get("band", "")),
            scenario=str(obj.get("scenario", "")),
            phase=str(obj.get("phase", "")),
            montage_hash=str(obj.get("montage_hash", "")),
        )


def encode_array(a: np.ndarray) -> str:
    """Base64 of float64 row-major bytes (exact round trip)."""
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise DataError(f"bad base64 array payload: {exc}") from exc
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != int(np.prod(shape)):
        raise DataError(f"array payload has {flat.size} values, expected shape {shape}")
    return flat.reshape(shape).astype(np.float64)


def fit_csp_from_covariances(
    cov_a: np.ndarray,
    cov_b: np.ndarray,
    band: str = "",
    scenario: str = "",
    phase: str = "",
    montage_hash: str = "",
) -> CspModel:
    """Fit spatial filters from two class-mean covariances.

    The composite covariance is whitened, the whitened class-a covariance
    is diagonalized, and the filters are W = P^T V.  W^T cov_a W and
    W^T cov_b W are then simultaneously diagonal with complementary
    spectra.
    """
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    if cov_a.shape != cov_b.shape or cov_a.ndim != 2:
        raise DataError("class covariances must share a square shape")
    composite = cov_a + cov_b
    p = whitening_transform(composite)
    white_a = p @ cov_a @ p.T
    white_a = 0.5 * (white_a + white_a.T)
    lam, v = sym_eig(white_a)
    w = p.T @ v
    return CspModel(
        filters=w,
        eigenvalues=lam,
        band=band,
        scenario=scenario,
        phase=phase,
        montage_hash=montage_hash,
    )


def fit_csp(
    blocks_a: list[np.ndarray],
    blocks_b: list[np.ndarray],
    band: str = "",
    scenario: str = "",
    phase: str = "",
    montage_hash: str = "",
) -> CspModel:
    """Fit spatial filters from raw per-trial blocks of the two classes."""
    return fit_csp_from_covariances(
        class_mean_covariance(blocks_a),
        class_mean_covariance(blocks_b),
        band=band,
        scenario=scenario,
        phase=phase,
        montage_hash=montage_hash,
    )


def project(model: CspModel, block: np.ndarray) -> np.ndarray:
    """Project a (channels x samples) block onto the fitted filters: S = W^T E."""
    e = np.asarray(block, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != model.n_channels:
        raise DataError(
            f"block shape {e.shape} incompatible with {model.n_channels}-channel model"
        )
    return model.filters.T @ e


def log_variance_features(projected: np.ndarray) -> np.ndarray:
    """Log of normalized per-component variances of a projected block.

    Variance is the per-row mean square (no centering; DC is removed by
    the upstream highpass).  Components are normalized by the summed
    variance, so ``sum(exp(features)) == 1``.  Zero variances are floored
    at 1e-300 with a warning instead of raising.
    """
    s = np.asarray(projected, dtype=np.float64)
    if s.ndim != 2:
        raise DataError(f"projected block must be 2-D, got shape {s.shape}")
    if s.shape[1] == 0:
        raise DataError("projected block has no samples")
    var = np.mean(s * s, axis=1)
    return _log_normalized(var)


def _log_normalized(var: np.ndarray) -> np.ndarray:
    if np.any(var < VAR_FLOOR):
        warnings.warn(
            "zero-variance component floored before log feature", RuntimeWarning
        )
    var = np.maximum(var, VAR_FLOOR)
    return np.log(var / np.sum(var))


def csp_patterns(model: CspModel) -> np.ndarray:
    """Spatial patterns A = (W^{-1})^T; column j is the scalp distribution
    that filter j extracts.  A^T W = I within numerical error."""
    try:
        inv = np.linalg.inv(model.filters)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"filter matrix is singular: {exc}") from exc
    return inv.T
