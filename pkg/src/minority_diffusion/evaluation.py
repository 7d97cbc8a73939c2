"""Evaluation machinery: exact densities, neighborhood metrics, rank
correlation, and the numeric verifiers for the metric/ELBO identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .gmm import GmmSpec
from .minority import tweedie
from .models import ScoreModel
from .schedule import NoiseSchedule, perturb


def log_density_gmm(x, spec: GmmSpec, t=None, sched: NoiseSchedule | None = None):
    """Exact mixture log-density; perturbed to timestep t when given."""
    return gmm.log_density(x, spec, t, sched)


def log_density_gmm_grad(x, spec: GmmSpec, t=None, sched: NoiseSchedule | None = None):
    return gmm.score(x, spec, t, sched)


@dataclass(frozen=True)
class DensityReport:
    clean_log_density: np.ndarray
    perturbed_log_density: np.ndarray | None = None
    perturbed_t: int | None = None

    def summary(self) -> dict:
        vals = self.clean_log_density
        out = {
            "mean": float(np.mean(vals)),
            "std_error": float(np.std(vals, ddof=1) / np.sqrt(vals.size)),
            "q10": float(np.quantile(vals, 0.10)),
            "q50": float(np.quantile(vals, 0.50)),
            "q90": float(np.quantile(vals, 0.90)),
        }
        if self.perturbed_log_density is not None:
            out["perturbed_mean"] = float(np.mean(self.perturbed_log_density))
            out["perturbed_t"] = self.perturbed_t
        return out


@dataclass(frozen=True)
class NeighborReport:
    avg_knn: np.ndarray
    lof: np.ndarray
    knn_k: int
    lof_k: int
    reference_mode: str

    def summary(self) -> dict:
        return {
            "avg_knn_mean": float(np.mean(self.avg_knn)),
            "avg_knn_se": float(np.std(self.avg_knn, ddof=1) / np.sqrt(self.avg_knn.size)),
            "lof_mean": float(np.mean(self.lof)),
            "knn_k": self.knn_k,
            "lof_k": self.lof_k,
            "reference_mode": self.reference_mode,
        }


def _neighbor_order(dists: np.ndarray) -> np.ndarray:
    # stable sort => ties broken by index order
    return np.argsort(dists, kind="stable")


def avg_knn(query, refset, k: int, exclude_index: int | None = None) -> float:
    """Mean Euclidean distance from query to its k nearest reference points.

    When the query is a member of the reference set, pass its index so it is
    excluded from its own neighborhood.
    """
    refset = np.atleast_2d(np.asarray(refset, float))
    d = np.linalg.norm(refset - np.asarray(query, float), axis=1)
    if exclude_index is not None:
        d = np.delete(d, exclude_index)
    if d.size < k or k < 1:
        raise ValueError(f"need at least k={k} neighbors, have {d.size}")
    order = _neighbor_order(d)
    return float(np.mean(d[order[:k]]))


def _knn_stats(dists_row: np.ndarray, k: int):
    """Neighbor indices (ties index-ordered) and the k-distance."""
    order = _neighbor_order(dists_row)
    nbrs = order[:k]
    return nbrs, dists_row[nbrs[-1]]


def _lrd(dists_row: np.ndarray, nbrs: np.ndarray, kdist: np.ndarray) -> float:
    reach = np.maximum(kdist[nbrs], dists_row[nbrs])
    mean_reach = float(np.mean(reach))
    return np.inf if mean_reach == 0.0 else 1.0 / mean_reach


def lof(query, refset, k: int, exclude_index: int | None = None) -> float:
    """Local outlier factor of query w.r.t. refset.

    Reachability uses reach_k(a, b) = max(k-distance(b), dist(a, b)). Local
    reachability densities of reference points are computed within the full
    reference set (each point excluding itself). A zero reachability sum, which
    happens for duplicated points, makes the density infinite; a query with
    infinite density gets LOF = 1 (duplicates are maximally inlying).
    """
    refset = np.atleast_2d(np.asarray(refset, float))
    n = refset.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    pair = np.linalg.norm(refset[:, None, :] - refset[None, :, :], axis=-1)
    np.fill_diagonal(pair, np.inf)  # self-exclusion inside the reference set
    avail = n - 1 if exclude_index is None else n - 1
    if avail < k:
        raise ValueError(f"need at least k={k} neighbors in the reference set")
    ref_nbrs = []
    kdist = np.empty(n)
    for i in range(n):
        nbrs, kd = _knn_stats(pair[i], k)
        ref_nbrs.append(nbrs)
        kdist[i] = kd
    ref_lrd = np.array([_lrd(pair[i], ref_nbrs[i], kdist) for i in range(n)])

    dq = np.linalg.norm(refset - np.asarray(query, float), axis=1)
    if exclude_index is not None:
        dq = dq.copy()
        dq[exclude_index] = np.inf
    if np.sum(np.isfinite(dq)) < k:
        raise ValueError(f"need at least k={k} usable neighbors for the query")
    q_nbrs, _ = _knn_stats(dq, k)
    lrd_q = _lrd(dq, q_nbrs, kdist)
    if np.isinf(lrd_q):
        return 1.0
    return float(np.mean(ref_lrd[q_nbrs]) / lrd_q)


def _knn_scan(
    queries: np.ndarray,
    refset: np.ndarray,
    k: int,
    self_offset: int | None = None,
    chunk: int = 512,
):
    """Indices and distances of the k nearest reference points per query.

    Ties are broken by reference index. If queries are a contiguous slice of
    the reference set starting at self_offset, each query excludes itself.
    Row-chunked so the full pairwise matrix is never materialized.
    """
    queries = np.atleast_2d(np.asarray(queries, float))
    refset = np.atleast_2d(np.asarray(refset, float))
    nq = queries.shape[0]
    if refset.shape[0] - (1 if self_offset is not None else 0) < k:
        raise ValueError(f"need at least k={k} neighbors in the reference set")
    nbr_idx = np.empty((nq, k), dtype=int)
    nbr_dist = np.empty((nq, k))
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        block = queries[lo:hi]
        d = np.linalg.norm(block[:, None, :] - refset[None, :, :], axis=-1)
        if self_offset is not None:
            rows = np.arange(lo, hi)
            d[np.arange(hi - lo), self_offset + rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        nbr_idx[lo:hi] = order
        nbr_dist[lo:hi] = np.take_along_axis(d, order, axis=1)
    return nbr_idx, nbr_dist


def avg_knn_batch(queries, refset, k: int, self_offset: int | None = None) -> np.ndarray:
    """avg_knn for many queries against one reference set."""
    _, nbr_dist = _knn_scan(queries, refset, k, self_offset)
    return nbr_dist.mean(axis=1)


def lof_batch(queries, refset, k: int, self_offset: int | None = None) -> np.ndarray:
    """LOF for many queries against one reference set (same conventions as lof)."""
    refset = np.atleast_2d(np.asarray(refset, float))
    ref_idx, ref_dist = _knn_scan(refset, refset, k, self_offset=0)
    kdist = ref_dist[:, -1]
    reach = np.maximum(kdist[ref_idx], ref_dist)
    mean_reach = reach.mean(axis=1)
    with np.errstate(divide="ignore"):
        ref_lrd = np.where(mean_reach == 0.0, np.inf, 1.0 / np.where(mean_reach == 0, 1, mean_reach))

    q_idx, q_dist = _knn_scan(queries, refset, k, self_offset)
    q_reach = np.maximum(kdist[q_idx], q_dist)
    q_mean = q_reach.mean(axis=1)
    lrd_q = np.where(q_mean == 0.0, np.inf, 1.0 / np.where(q_mean == 0, 1, q_mean))
    out = np.empty(q_idx.shape[0])
    for i in range(out.size):
        if np.isinf(lrd_q[i]):
            out[i] = 1.0
        else:
            out[i] = np.mean(ref_lrd[q_idx[i]]) / lrd_q[i]
    return out


def spearman(a, b) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 3:
        raise ValueError("spearman needs two equal-length sequences of length >= 3")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa, sb = np.std(ra), np.std(rb)
    if sa == 0.0 or sb == 0.0:
        raise ValueError("correlation undefined for a constant sequence")
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class IdentityReport:
    """Per-timestep comparison of the weighted reconstruction loss against the
    noise-matching objective, with shared noise draws on both sides."""

    timesteps: np.ndarray
    lhs: np.ndarray  # weighted metric, per t (MC mean)
    rhs: np.ndarray  # noise-prediction error, per t (MC mean)
    max_pointwise_rel_gap: float
    mc_samples: int

    @property
    def total_lhs(self) -> float:
        return float(np.sum(self.lhs))

    @property
    def total_rhs(self) -> float:
        return float(np.sum(self.rhs))

    @property
    def total_gap(self) -> float:
        return self.total_lhs - self.total_rhs

    def summary(self) -> dict:
        return {
            "total_lhs": self.total_lhs,
            "total_rhs": self.total_rhs,
            "total_gap": self.total_gap,
            "max_pointwise_rel_gap": self.max_pointwise_rel_gap,
            "mc_samples": self.mc_samples,
        }


def verify_prop1(
    x0: np.ndarray,
    model: ScoreModel,
    sched: NoiseSchedule,
    m: int = 1,
    rng: np.random.Generator | None = None,
) -> IdentityReport:
    """Check sum_t abar/(1-abar) * ||x0 - x0_hat||^2 == sum_t ||eps - eps_theta||^2.

    Both sides share the same noise draws per (t, draw), so the equality is
    pointwise, not just in expectation. Summed over the full timestep grid.
    """
    x0 = np.asarray(x0, float)
    if rng is None:
        rng = np.random.default_rng(0)
    ts = np.arange(1, sched.T + 1)
    lhs = np.empty(sched.T)
    rhs = np.empty(sched.T)
    worst = 0.0
    for t in ts:
        ab = float(sched.alpha_bar(t))
        wbar = ab / (1.0 - ab)
        l_draws = np.empty(m)
        r_draws = np.empty(m)
        for j in range(m):
            eps = rng.standard_normal(x0.shape)
            xt = perturb(x0, t, eps, sched)
            resid = x0 - tweedie(xt, t, model, sched)
            l_draws[j] = wbar * float(np.sum(resid * resid))
            e_resid = eps - model.eps(xt, t)
            r_draws[j] = float(np.sum(e_resid * e_resid))
            denom = max(abs(r_draws[j]), 1e-300)
            worst = max(worst, abs(l_draws[j] - r_draws[j]) / denom)
        lhs[t - 1] = l_draws.mean()
        rhs[t - 1] = r_draws.mean()
    return IdentityReport(
        timesteps=ts, lhs=lhs, rhs=rhs, max_pointwise_rel_gap=worst, mc_samples=m
    )


def verify_corollary1(
    x_t: np.ndarray,
    t: int,
    model: ScoreModel,
    sched: NoiseSchedule,
    m: int = 1,
    rng: np.random.Generator | None = None,
) -> IdentityReport:
    """Same identity with the Tweedie surrogate of a noisy latent as the clean point."""
    return verify_prop1(tweedie(x_t, t, model, sched), model, sched, m=m, rng=rng)
