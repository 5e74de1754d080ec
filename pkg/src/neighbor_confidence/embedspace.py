"""Embedding sets (latent vector, id, split, error) and PCA for 2-D reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ParameterError, ShapeError


def fmt_float(x: float) -> str:
    """17-significant-digit round-trip form; infinities as ``inf``/``-inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass
class EmbeddingSet:
    ids: list[int]
    splits: list[str]
    z: np.ndarray  # (n, d)
    errors: np.ndarray  # (n,), NaN where absent

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.errors = np.asarray(self.errors, dtype=np.float64)
        n = len(self.ids)
        if self.z.ndim != 2 or self.z.shape[0] != n or len(self.splits) != n or self.errors.shape != (n,):
            raise ShapeError("ids, splits, z and errors must describe the same number of records")
        if len(set(self.ids)) != n:
            raise DataError("embedding ids must be unique")
        for s in self.splits:
            if s not in ("train", "new"):
                raise DataError(f"invalid split {s!r}")
        if not np.all(np.isfinite(self.z)):
            raise DataError("latent vectors must be finite")
        present = ~np.isnan(self.errors)
        if np.any(~np.isfinite(self.errors[present])) or np.any(self.errors[present] < 0):
            raise DataError("errors must be finite and >= 0 when present")
        self._pos = {i: k for k, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.z.shape[1])

    def index_of(self, record_id: int) -> int:
        return self._pos[record_id]

    def vectors(self, ids) -> np.ndarray:
        return self.z[[self._pos[i] for i in ids]]

    def error_of(self, record_id: int) -> float:
        return float(self.errors[self._pos[record_id]])

    def split_ids(self, split: str) -> list[int]:
        return [i for i, s in zip(self.ids, self.splits) if s == split]


def write_embeddings(path, emb: EmbeddingSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split", "err"] + [f"z{j}" for j in range(emb.dim)])
        for i, s, err, z in zip(emb.ids, emb.splits, emb.errors, emb.z):
            w.writerow([i, s, "" if math.isnan(err) else fmt_float(err)] + [fmt_float(v) for v in z])


def read_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if header[:3] != ["id", "split", "err"] or len(header) < 4:
        raise FormatError(f"{path}: header must start with id,split,err,z0")
    d = len(header) - 3
    if header[3:] != [f"z{j}" for j in range(d)]:
        raise FormatError(f"{path}: latent columns must be z0..z{d - 1}")
    ids, splits, errs, zs = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: field 'id' is not an integer: {row[0]!r}") from None
        splits.append(row[1])
        try:
            errs.append(float(row[2]) if row[2] != "" else math.nan)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: field 'err' is not a number: {row[2]!r}") from None
        try:
            zs.append([float(v) for v in row[3:]])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: latent field is not a number") from None
    try:
        return EmbeddingSet(ids, splits, np.array(zs, dtype=np.float64).reshape(len(ids), d), np.array(errs))
    except DataError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return int(self.components.shape[0])


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Pivots are visited in row-major order (p < q). Sweeps stop once the
    Frobenius norm of the off-diagonal part falls below
    ``tol * max(1, ||a||_F)``. Returns ``(eigenvalues, eigenvectors)`` with
    eigenvectors as columns, in the order the diagonal ends up in (unsorted).
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError("jacobi_eigh needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise DataError("matrix has non-finite entries")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    limit = tol * max(1.0, float(np.sqrt((a * a).sum())))
    for _ in range(max_sweeps):
        off = a - np.diag(np.diag(a))
        if math.sqrt(float((off * off).sum())) < limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise DataError(f"Jacobi eigendecomposition did not converge in {max_sweeps} sweeps")
    return np.diag(a).copy(), v


def pca_fit(data, k: int) -> PcaModel:
    """Top-``k`` principal axes of the rows of ``data`` (sample covariance, n-1).

    Each component is sign-normalized so its largest-magnitude entry (lowest
    index on ties) is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("pca_fit needs at least 2 records")
    d = x.shape[1]
    if not 1 <= k <= d:
        raise ParameterError(f"k must be in [1, {d}], got {k}")
    if not np.all(np.isfinite(x)):
        raise DataError("pca_fit input has non-finite values")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    evals, evecs = jacobi_eigh(cov)
    order = sorted(range(d), key=lambda i: -evals[i])[:k]
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[int(np.argmax(np.abs(row)))] < 0:
            row *= -1.0
    variances = np.maximum(evals[order], 0.0)
    return PcaModel(mean=mean, components=comps, explained_variance=variances)


def pca_transform(model: PcaModel, z) -> np.ndarray:
    """Project one vector (d,) or a batch (n, d) onto the components."""
    zv = np.asarray(z, dtype=np.float64)
    if zv.shape[-1] != model.mean.shape[0]:
        raise ShapeError(f"expected dimension {model.mean.shape[0]}, got {zv.shape[-1]}")
    return (zv - model.mean) @ model.components.T
