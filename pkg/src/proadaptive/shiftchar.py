"""
Temporal variability characterization.

Per-batch histograms on shared bins, Jensen-Shannon distances between
batches, and a classical (Torgerson) MDS embedding of the distance matrix
giving an information-geometric temporal map of the batches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SMOOTHING = 1e-6


@dataclass(frozen=True, eq=False)
class BatchPdf:
    batch_index: int
    bin_edges: np.ndarray
    masses: np.ndarray
    degenerate: bool = False  # empty batch or absent class replaced by uniform mass


@dataclass(frozen=True, eq=False)
class IgtProjection:
    coordinates: np.ndarray  # (Q, dims)
    eigenvalues: np.ndarray

    def embedded_distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.coordinates[i] - self.coordinates[j]))


def prevalence_series(batches) -> np.ndarray:
    """Fraction of positive labels per batch; NaN marks an empty batch."""
    out = np.full(len(batches), np.nan)
    for i, b in enumerate(batches):
        y = b.y if hasattr(b, "y") else np.asarray(b)
        if len(y):
            out[i] = float(np.mean(y == 1))
    return out


def shared_edges(values_per_batch: Sequence[np.ndarray], bins: int = 50) -> np.ndarray:
    pooled = np.concatenate([np.asarray(v, dtype=float).ravel() for v in values_per_batch])
    if pooled.size == 0:
        raise ValueError("no values to estimate densities from")
    lo, hi = pooled.min(), pooled.max()
    if lo == hi:
        raise ValueError("pooled values are constant: a single degenerate bin")
    return np.linspace(lo, hi, bins + 1)


def _masses(values: np.ndarray, edges: np.ndarray) -> tuple[np.ndarray, bool]:
    values = np.asarray(values, dtype=float).ravel()
    k = len(edges) - 1
    if values.size == 0:
        return np.full(k, 1.0 / k), True
    counts, _ = np.histogram(values, bins=edges)
    m = counts / values.size + SMOOTHING
    return m / m.sum(), False


def estimate_pdf(values_per_batch: Sequence[np.ndarray], bins: int = 50,
                 edges: np.ndarray | None = None) -> list[BatchPdf]:
    """Smoothed histograms of every batch on one set of bin edges.

    Edges default to ``bins`` equal-width bins over the pooled range.
    """
    if edges is None:
        edges = shared_edges(values_per_batch, bins)
    out = []
    for i, v in enumerate(values_per_batch):
        m, degenerate = _masses(v, edges)
        out.append(BatchPdf(i, edges, m, degenerate))
    return out


def conditional_pdf_concat(values, labels, edges: np.ndarray, batch_index: int = 0) -> BatchPdf:
    """Concatenation ``[p(x|y=0), p(x|y=1)]`` renormalised to unit mass."""
    values = np.asarray(values, dtype=float).ravel()
    labels = np.asarray(labels)
    halves, flags = zip(*(_masses(values[labels == c], edges) for c in (0, 1)))
    m = np.concatenate(halves)
    return BatchPdf(batch_index, edges, m / m.sum(), any(flags))


def conditional_pdfs(values_per_batch, labels_per_batch, bins: int = 50,
                     edges: np.ndarray | None = None) -> list[BatchPdf]:
    if edges is None:
        edges = shared_edges(values_per_batch, bins)
    return [conditional_pdf_concat(v, y, edges, i)
            for i, (v, y) in enumerate(zip(values_per_batch, labels_per_batch))]


def _kl2(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / m[nz])))


def js_distance(P: BatchPdf | np.ndarray, Q: BatchPdf | np.ndarray) -> float:
    """Square root of the base-2 Jensen-Shannon divergence, in [0, 1]."""
    if isinstance(P, BatchPdf) and isinstance(Q, BatchPdf):
        if not np.array_equal(P.bin_edges, Q.bin_edges):
            raise ValueError("densities are defined on different bins")
    p = np.asarray(getattr(P, "masses", P), dtype=float)
    q = np.asarray(getattr(Q, "masses", Q), dtype=float)
    if p.shape != q.shape:
        raise ValueError("densities have different lengths")
    m = 0.5 * (p + q)
    jsd = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return float(np.sqrt(min(max(jsd, 0.0), 1.0)))


def distance_matrix(pdfs: Sequence) -> np.ndarray:
    n = len(pdfs)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = js_distance(pdfs[i], pdfs[j])
    return D


def igt_project(D, dims: int = 2) -> IgtProjection:
    """Classical MDS of a distance matrix.

    Negative eigenvalues are clamped to zero; each axis is flipped so its
    first non-negligible coordinate is positive.
    """
    D = np.asarray(D, dtype=float)
    n = len(D)
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D < 0):
        raise ValueError("distance matrix must be symmetric, nonnegative, zero on the diagonal")
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    if n < dims + 1:
        raise ValueError(f"need at least {dims + 1} batches for a {dims}-d projection")
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D ** 2) @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dims]
    lam = np.clip(evals[order], 0.0, None)
    X = evecs[:, order] * np.sqrt(lam)
    X -= X.mean(axis=0)
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    for k in range(dims):
        nz = np.flatnonzero(np.abs(X[:, k]) > 1e-12 * scale)
        if nz.size and X[nz[0], k] < 0:
            X[:, k] = -X[:, k]
    return IgtProjection(X, lam)


def write_projection(proj: IgtProjection, period_labels: Sequence[str], path) -> None:
    dims = proj.coordinates.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch_index", "period_label", *(f"dim{k + 1}" for k in range(dims))])
        for i, (label, row) in enumerate(zip(period_labels, proj.coordinates)):
            w.writerow([i, label, *(repr(float(v)) for v in row)])


def write_distances(D: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch_index", *range(len(D))])
        for i, row in enumerate(D):
            w.writerow([i, *(repr(float(v)) for v in row)])


def write_prevalence(prev: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "p_positive"])
        for i, p in enumerate(prev):
            w.writerow([i, "" if np.isnan(p) else repr(float(p))])
