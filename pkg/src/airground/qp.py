"""Minimally invasive velocity filter: Euclidean projection of the nominal
input onto the polytope cut out by the active barrier rows and the admissible
velocity box.

The projection is computed by a dual active-set method specialized to an
identity Hessian: start from the unconstrained optimum (the nominal input),
repeatedly drive the most violated row to its boundary, dropping working-set
rows whose multipliers would go negative.  The method terminates finitely,
needs no tuning, and produces an exact infeasibility certificate, which makes
it straightforward to cross-check against the brute-force enumeration oracle.

Infeasible problems escalate to a slack-relaxed form (solve_relaxed) so the
control loop always has a defined, observable degradation path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .barriers import ConstraintRow
from .errors import InvalidInputError

RELAXATION_WEIGHT = 1e4
_FEAS_TOL = 1e-10
_DEP_TOL = 1e-12


class QpStatus(Enum):
    OPTIMAL = "optimal"
    RELAXED = "relaxed"
    FAILED = "failed"


@dataclass
class QpProblem:
    """One filtering instance: nominal velocity, barrier rows, admissible box."""

    u_nominal: np.ndarray
    rows: list[ConstraintRow]
    box: float | np.ndarray  # per-axis speed limit, |u_j| <= box_j

    def dimension(self) -> int:
        return len(self.u_nominal)

    def box_limits(self) -> np.ndarray:
        lim = np.asarray(self.box, dtype=float)
        if lim.ndim == 0:
            lim = np.full(self.dimension(), float(lim))
        if lim.shape != (self.dimension(),) or np.any(lim <= 0):
            raise InvalidInputError(f"box limits must be positive per axis, got {self.box!r}")
        return lim


@dataclass
class QpSolution:
    u_star: np.ndarray
    status: QpStatus
    max_violation: float = 0.0
    iterations: int = 0


def _stack(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All halfspaces a . u >= -b as arrays: barrier rows first, then the box
    encoded as axis-aligned rows (so minimal invasiveness holds jointly)."""
    n = problem.dimension()
    u = np.asarray(problem.u_nominal, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("u_nominal must be finite")
    rows_a = []
    rows_b = []
    for row in problem.rows:
        a = np.asarray(row.a, dtype=float)
        if a.shape != (n,):
            raise InvalidInputError(
                f"row gradient dimension {a.shape} does not match input dimension {n}"
            )
        if not (np.all(np.isfinite(a)) and np.isfinite(row.b)):
            raise InvalidInputError("constraint rows must be finite")
        rows_a.append(a)
        rows_b.append(float(row.b))
    lim = problem.box_limits()
    eye = np.eye(n)
    for j in range(n):
        rows_a.append(eye[j])
        rows_b.append(lim[j])
        rows_a.append(-eye[j])
        rows_b.append(lim[j])
    return np.array(rows_a), np.array(rows_b)


def _project(z: np.ndarray, A: np.ndarray, b: np.ndarray,
             max_iter: int = 2000) -> tuple[np.ndarray | None, int]:
    """Project z onto {u : A u + b >= 0}; returns (point, iterations) or
    (None, iterations) when the polytope is empty."""
    m = A.shape[0]
    u = z.astype(float).copy()
    row_scale = np.maximum(1.0, np.abs(A).max(axis=1)) if m else np.ones(0)
    feas_tol = _FEAS_TOL * row_scale
    work: list[int] = []
    lam = np.zeros(0)
    iters = 0
    while iters < max_iter:
        iters += 1
        f = A @ u + b
        p = int(np.argmin(f + feas_tol))
        if f[p] >= -feas_tol[p]:
            return u, iters
        a_p = A[p]
        b_p = b[p]
        lam_p = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                raise RuntimeError("active-set projection did not converge")
            if work:
                N = A[work].T
                gram = N.T @ N
                try:
                    r = np.linalg.solve(gram, N.T @ a_p)
                except np.linalg.LinAlgError:
                    # Numerically dependent working set; least-squares keeps
                    # the step well defined.
                    r = np.linalg.lstsq(gram, N.T @ a_p, rcond=None)[0]
                w = a_p - N @ r
            else:
                r = np.zeros(0)
                w = a_p
            w_sq = float(w @ w)
            if w_sq > _DEP_TOL * max(1.0, float(a_p @ a_p)):
                # Primal step toward the boundary of row p.
                t_full = -(float(a_p @ u) + b_p) / w_sq
                t_block = np.inf
                blocker = -1
                for idx in range(len(work)):
                    if r[idx] > _DEP_TOL:
                        cand = lam[idx] / r[idx]
                        if cand < t_block:
                            t_block = cand
                            blocker = idx
                if t_full <= t_block:
                    u = u + t_full * w
                    lam = lam - t_full * r
                    lam_p += t_full
                    work.append(p)
                    lam = np.append(lam, lam_p)
                    break
                u = u + t_block * w
                lam = lam - t_block * r
                lam_p += t_block
            else:
                # a_p lies in the span of the working set: dual-only step.
                if not np.any(r > _DEP_TOL):
                    return None, iters  # exact infeasibility certificate
                t_block = np.inf
                blocker = -1
                for idx in range(len(work)):
                    if r[idx] > _DEP_TOL:
                        cand = lam[idx] / r[idx]
                        if cand < t_block:
                            t_block = cand
                            blocker = idx
                lam = lam - t_block * r
                lam_p += t_block
            del work[blocker]
            lam = np.delete(lam, blocker)
    raise RuntimeError("active-set projection did not converge")


def solve(problem: QpProblem) -> QpSolution:
    """Least-perturbation filter: the unique projection of the nominal input
    onto the feasible polytope, or status FAILED when it is empty."""
    A, b = _stack(problem)
    z = np.asarray(problem.u_nominal, dtype=float)
    u, iters = _project(z, A, b)
    if u is None:
        return QpSolution(u_star=z.copy(), status=QpStatus.FAILED,
                          max_violation=float("inf"), iterations=iters)
    residual = A @ u + b
    violation = max(0.0, float(-residual.min())) if residual.size else 0.0
    return QpSolution(u_star=u, status=QpStatus.OPTIMAL,
                      max_violation=violation, iterations=iters)


_BOX_ROWS_CACHE: dict[int, np.ndarray] = {}


def _box_rows(n: int) -> np.ndarray:
    rows = _BOX_ROWS_CACHE.get(n)
    if rows is None:
        eye = np.eye(n)
        rows = np.concatenate([eye, -eye])
        rows.flags.writeable = False
        _BOX_ROWS_CACHE[n] = rows
    return rows


def project_with_box(z: np.ndarray, A: np.ndarray, b: np.ndarray,
                     limit: float) -> tuple[np.ndarray | None, int]:
    """Control-loop fast path: project z onto {A u >= -b} inside |u_j| <= limit.

    Takes the barrier rows as raw arrays (the shape the coordinator already
    ships) and skips the per-row object conversion of solve(); same active-set
    core, bit-identical results.
    """
    n = z.shape[0]
    box_a = _box_rows(n)
    box_b = np.full(2 * n, limit)
    if A.shape[0]:
        A_all = np.concatenate([A, box_a])
        b_all = np.concatenate([b, box_b])
    else:
        A_all, b_all = box_a, box_b
    return _project(z, A_all, b_all)


_COMBO_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _combos(m: int, k: int) -> np.ndarray:
    key = (m, k)
    if key not in _COMBO_CACHE:
        _COMBO_CACHE[key] = np.array(list(itertools.combinations(range(m), k)), dtype=int)
    return _COMBO_CACHE[key]


def oracle_solve(problem: QpProblem) -> QpSolution:
    """Exact reference solution by enumerating candidate active sets.

    Every subset of up to n rows is treated as equalities; the resulting
    least-distance point is kept if it satisfies all rows, and the feasible
    candidate closest to the nominal is returned.  The true projection's
    active set (reduced to a maximal independent subset) is always among the
    candidates, so no feasible candidate at all certifies emptiness.
    Practical up to ~16 rows; intended for testing, not the control loop.
    """
    A, b = _stack(problem)
    z = np.asarray(problem.u_nominal, dtype=float)
    m, n = A.shape
    # Normalize row scales so singularity thresholds are geometric.
    norms = np.linalg.norm(A, axis=1)
    degenerate = norms < 1e-14
    if np.any(degenerate) and np.any(b[degenerate] < -_FEAS_TOL):
        return QpSolution(u_star=z.copy(), status=QpStatus.FAILED,
                          max_violation=float("inf"), iterations=0)
    keep = np.where(~degenerate)[0]
    An = A[keep] / norms[keep, None]
    bn = b[keep] / norms[keep]
    mk = len(keep)

    scale = max(1.0, float(np.abs(bn).max()) if mk else 1.0)
    feas_tol = 1e-9 * scale
    best_u = None
    best_obj = np.inf
    candidates = 0

    def consider(us: np.ndarray):
        nonlocal best_u, best_obj, candidates
        feas = np.all(An @ us.T + bn[:, None] >= -feas_tol, axis=0)
        candidates += us.shape[0]
        if not np.any(feas):
            return
        objs = np.einsum("ij,ij->i", us - z, us - z)
        objs = np.where(feas, objs, np.inf)
        i = int(np.argmin(objs))
        if objs[i] < best_obj:
            best_obj = objs[i]
            best_u = us[i]

    consider(z[None, :])
    for k in range(1, min(n, mk) + 1):
        idx = _combos(mk, k)
        if idx.size == 0:
            continue
        sub_a = An[idx]                       # (S, k, n)
        sub_b = bn[idx]                       # (S, k)
        gram = sub_a @ sub_a.transpose(0, 2, 1)
        if k == 1:
            det = gram[:, 0, 0]
        elif k == 2:
            det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
        else:
            det = (
                gram[:, 0, 0] * (gram[:, 1, 1] * gram[:, 2, 2] - gram[:, 1, 2] * gram[:, 2, 1])
                - gram[:, 0, 1] * (gram[:, 1, 0] * gram[:, 2, 2] - gram[:, 1, 2] * gram[:, 2, 0])
                + gram[:, 0, 2] * (gram[:, 1, 0] * gram[:, 2, 1] - gram[:, 1, 1] * gram[:, 2, 0])
            )
        ok = np.abs(det) > 1e-10
        if not np.any(ok):
            continue
        sub_a = sub_a[ok]
        rhs = -(sub_b[ok] + np.einsum("skn,n->sk", sub_a, z))
        try:
            nu = np.linalg.solve(gram[ok], rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            # A member slipped past the determinant screen; solve one by one
            # and drop the genuinely singular subsets.
            grams = gram[ok]
            rows = []
            for s in range(grams.shape[0]):
                try:
                    rows.append((s, np.linalg.solve(grams[s], rhs[s])))
                except np.linalg.LinAlgError:
                    pass
            if not rows:
                continue
            sel = [s for s, _ in rows]
            sub_a = sub_a[sel]
            nu = np.stack([x for _, x in rows])
        us = z[None, :] + np.einsum("sk,skn->sn", nu, sub_a)
        consider(us)

    if best_u is None:
        return QpSolution(u_star=z.copy(), status=QpStatus.FAILED,
                          max_violation=float("inf"), iterations=candidates)
    return QpSolution(u_star=best_u, status=QpStatus.OPTIMAL,
                      max_violation=0.0, iterations=candidates)


def solve_relaxed(problem: QpProblem,
                  weight: float = RELAXATION_WEIGHT) -> QpSolution:
    """Slack fallback for infeasible instances.

    Solves min |u - u_nominal|^2 + weight * sum(s_i^2) subject to
    a_i . u >= -b_i - s_i, s_i >= 0 and the box.  Substituting s_i ->
    s_i * sqrt(weight) turns this into the same identity-Hessian projection in
    n + m variables, so the active-set core is reused unchanged.  Always
    feasible; max_violation reports the largest slack actually used.
    """
    n = problem.dimension()
    z = np.asarray(problem.u_nominal, dtype=float)
    mc = len(problem.rows)
    if mc == 0:
        base = solve(problem)
        return QpSolution(u_star=base.u_star, status=QpStatus.RELAXED,
                          max_violation=0.0, iterations=base.iterations)
    sw = np.sqrt(weight)
    A_rows, b_rows = _stack(problem)
    dim = n + mc
    A = np.zeros((A_rows.shape[0] + mc, dim))
    b = np.zeros(A_rows.shape[0] + mc)
    A[: A_rows.shape[0], :n] = A_rows
    b[: A_rows.shape[0]] = b_rows
    for i in range(mc):
        A[i, n + i] = 1.0 / sw          # slack loosens its barrier row
        A[A_rows.shape[0] + i, n + i] = 1.0  # s_i >= 0
    z_lift = np.concatenate([z, np.zeros(mc)])
    u_lift, iters = _project(z_lift, A, b)
    if u_lift is None:  # cannot happen: slacks make the polytope nonempty
        raise RuntimeError("relaxed problem reported infeasible")
    slacks = u_lift[n:] / sw
    return QpSolution(u_star=u_lift[:n], status=QpStatus.RELAXED,
                      max_violation=max(0.0, float(slacks.max())), iterations=iters)


def filter_velocity(problem: QpProblem) -> QpSolution:
    """solve() with automatic escalation to the slack relaxation."""
    sol = solve(problem)
    if sol.status is QpStatus.FAILED:
        return solve_relaxed(problem)
    return sol
