"""Feasibility and margin maximization for finite families of affine
symmetric-matrix constraints.

A problem asks for a decision vector z with

    C_j + sum_k z_k A_{j,k}  >=  eps * I_{s_j}   for every block j,
    l <= z <= u                                  (optional box bounds),

where eps is either fixed at a small tolerance (feasibility objective) or
maximized (margin objective).  The solver bisects on eps; each trial level
is decided by a phase-1 interior-point method, i.e. Newton iterations on a
log-det barrier over the block-diagonal PSD cone that drive the largest
constraint violation t below zero.  After bisection the iterate is polished
by analytic centering just below the certified level, which makes solutions
deterministic and well-centered.  Margins reported on solutions are always
recomputed from eigenvalue decompositions of the assembled blocks,
independent of the path the solver took.

Blocks may carry coefficient matrices for a subset of the decision entries
(``var_indices``); this keeps large point families cheap when each
constraint touches only a few variables.  Linear inequalities on the
decision vector beyond the box (trace bounds and the like) are expressed as
1 x 1 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import (DataError, DimensionError, NumericalFailureError,
                     UnboundedMarginError)

__all__ = [
    "AffineBlock",
    "LmiProblem",
    "LmiSolution",
    "SolverConfig",
    "solve",
    "assemble_block",
    "assemble_margin",
    "dump_problem",
]

MAXIMIZE_MARGIN = "maximize-margin"
FEASIBILITY = "feasibility"


@dataclass
class AffineBlock:
    """One affine symmetric constraint ``const + sum_k z_k coeffs[k] >= eps I``.

    ``var_indices`` maps ``coeffs`` onto decision entries; ``None`` means the
    coefficients are aligned with the full decision vector.
    """

    const: np.ndarray
    coeffs: np.ndarray
    var_indices: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.const = np.asarray(self.const, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.size == 0:
            self.coeffs = self.coeffs.reshape(0, *self.const.shape)
        if self.var_indices is not None:
            self.var_indices = np.asarray(self.var_indices, dtype=int)

    @property
    def size(self):
        return self.const.shape[0]


@dataclass
class LmiProblem:
    dim: int
    blocks: list
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    objective: str = MAXIMIZE_MARGIN
    initial_z: np.ndarray | None = None

    def validate(self):
        if self.dim < 0:
            raise DataError("dim must be nonnegative")
        if len(self.blocks) == 0:
            raise DataError("problem needs at least one block")
        if self.objective not in (MAXIMIZE_MARGIN, FEASIBILITY):
            raise DataError(f"unknown objective '{self.objective}'")
        for j, blk in enumerate(self.blocks):
            s = blk.const.shape
            if len(s) != 2 or s[0] != s[1]:
                raise DimensionError(f"blocks[{j}].const", "square", s)
            if not (np.all(np.isfinite(blk.const))
                    and np.all(np.isfinite(blk.coeffs))):
                raise DataError(f"blocks[{j}] contains non-finite entries")
            if not np.allclose(blk.const, blk.const.T, atol=1e-10 * (1 + np.abs(blk.const).max())):
                raise DataError(f"blocks[{j}].const is not symmetric")
            k = blk.coeffs.shape[0]
            if blk.coeffs.shape[1:] != s:
                raise DimensionError(f"blocks[{j}].coeffs", f"(*, {s[0]}, {s[0]})",
                                     blk.coeffs.shape)
            if blk.var_indices is None:
                if k != self.dim:
                    raise DimensionError(f"blocks[{j}].coeffs", f"{self.dim} matrices", k)
            else:
                if blk.var_indices.shape[0] != k:
                    raise DimensionError(f"blocks[{j}].var_indices", k,
                                         blk.var_indices.shape[0])
                if k and (blk.var_indices.min() < 0 or blk.var_indices.max() >= self.dim):
                    raise DataError(f"blocks[{j}].var_indices out of range")
        for name, arr in (("lower", self.lower), ("upper", self.upper)):
            if arr is not None and np.asarray(arr).shape[0] != self.dim:
                raise DimensionError(name, self.dim, np.asarray(arr).shape[0])
        if self.lower is not None and self.upper is not None:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            both = np.isfinite(lo) & np.isfinite(hi)
            if np.any(lo[both] >= hi[both]):
                raise DataError("lower bounds must be strictly below upper bounds")


@dataclass
class LmiSolution:
    z: np.ndarray
    margin: float
    status: str  # "optimal" | "feasible" | "infeasible" | "numerical-failure"
    info: dict = field(default_factory=dict)


@dataclass
class SolverConfig:
    feas_tol: float = 1e-7        # margin at/above this counts as feasible
    width: float = 1e-5           # eps resolution of the outer bisection
    margin_cap: float = 1e8       # doubling past this raises UnboundedMarginError
    max_newton: int = 80
    newton_tol: float = 1e-10
    mu_factor: float = 0.15
    mu_floor: float = 1e-12
    center_tol: float = 1e-13
    armijo: float = 0.25


# ---------------------------------------------------------------------------
# assembly / certification


def assemble_block(block: AffineBlock, z):
    """C + sum_k z_k A_k for one block."""
    z = np.asarray(z, dtype=float).reshape(-1)
    zk = z if block.var_indices is None else z[block.var_indices]
    if zk.shape[0] == 0:
        return block.const.copy()
    return block.const + np.tensordot(zk, block.coeffs, axes=(0, 0))


def assemble_margin(problem: LmiProblem, z):
    """Smallest eigenvalue over all assembled blocks at z.

    This is the a-posteriori certificate every caller relies on; it uses a
    plain symmetric eigensolver and is independent of the solve internals.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != problem.dim:
        raise DimensionError("z", problem.dim, z.shape[0])
    worst = np.inf
    for blk in problem.blocks:
        M = assemble_block(blk, z)
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]))
    return worst


def block_margins(problem: LmiProblem, z):
    """Per-block smallest eigenvalues at z."""
    return np.array([float(np.linalg.eigvalsh(
        0.5 * (assemble_block(b, z) + assemble_block(b, z).T))[0])
        for b in problem.blocks])


# ---------------------------------------------------------------------------
# solver internals


class _Workspace:
    """Precomputed arrays for fast barrier assembly.

    Blocks are grouped by (size, active-variable count) so every barrier
    evaluation runs through stacked LAPACK calls: one batched Cholesky per
    group plus batched solves for the gradient/Hessian contributions of the
    coefficient matrices (an identity slot is appended for the phase-1
    slack variable).
    """

    def __init__(self, problem: LmiProblem):
        self.problem = problem
        m = problem.dim
        self.m = m
        self.n_blocks = len(problem.blocks)
        grouped = {}
        for j, blk in enumerate(problem.blocks):
            idx = (np.arange(m) if blk.var_indices is None
                   else blk.var_indices.astype(int))
            key = (blk.size, idx.shape[0])
            grouped.setdefault(key, []).append((j, blk.const, blk.coeffs, idx))
        self.groups = []
        for (s, k), items in grouped.items():
            js = np.array([it[0] for it in items])
            const = np.stack([0.5 * (it[1] + it[1].T) for it in items])
            coeffs = np.stack([it[2] for it in items]) if k else np.zeros((len(items), 0, s, s))
            idx_mat = (np.stack([it[3] for it in items]) if k
                       else np.zeros((len(items), 0), dtype=int))
            eye_slot = np.broadcast_to(np.eye(s), (len(items), 1, s, s))
            coeffs_t = np.concatenate([coeffs, eye_slot], axis=1)
            idx_mat_t = np.concatenate(
                [idx_mat, np.full((len(items), 1), m, dtype=int)], axis=1)
            self.groups.append({
                "js": js, "size": s, "k": k,
                "const": const, "coeffs": coeffs, "idx": idx_mat,
                "coeffs_t": coeffs_t, "idx_t": idx_mat_t,
                "eye": np.eye(s),
            })
        lo = (np.full(m, -np.inf) if problem.lower is None
              else np.asarray(problem.lower, dtype=float).copy())
        hi = (np.full(m, np.inf) if problem.upper is None
              else np.asarray(problem.upper, dtype=float).copy())
        self.lo, self.hi = lo, hi
        self.has_lo = np.isfinite(lo)
        self.has_hi = np.isfinite(hi)
        # barrier degree: one per box side plus block sizes (t shares blocks)
        self.nu = sum(g["size"] * g["js"].shape[0] for g in self.groups)
        self.nu += int(self.has_lo.sum() + self.has_hi.sum())

    def default_start(self):
        """Deterministic start: analytic center of the bound box (midpoints),
        zero for unbounded entries, unit offset for one-sided bounds."""
        z = np.zeros(self.m)
        both = self.has_lo & self.has_hi
        z[both] = 0.5 * (self.lo[both] + self.hi[both])
        only_lo = self.has_lo & ~self.has_hi
        z[only_lo] = self.lo[only_lo] + 1.0
        only_hi = self.has_hi & ~self.has_lo
        z[only_hi] = self.hi[only_hi] - 1.0
        return z

    def clip_inside(self, z):
        z = z.copy()
        both = self.has_lo & self.has_hi
        pad = np.zeros(self.m)
        pad[both] = 1e-3 * (self.hi[both] - self.lo[both])
        pad[self.has_lo & ~self.has_hi] = 1e-3
        z[self.has_lo] = np.maximum(z[self.has_lo], (self.lo + pad)[self.has_lo])
        pad_hi = np.zeros(self.m)
        pad_hi[both] = 1e-3 * (self.hi[both] - self.lo[both])
        pad_hi[self.has_hi & ~self.has_lo] = 1e-3
        z[self.has_hi] = np.minimum(z[self.has_hi], (self.hi - pad_hi)[self.has_hi])
        return z

    def _assemble(self, group, z, eps, t, with_t):
        S = group["const"].copy()
        if group["k"]:
            S += np.einsum("jk,jkab->jab", z[group["idx"]], group["coeffs"])
        shift = (t - eps) if with_t else -eps
        if shift != 0.0:
            S += shift * group["eye"]
        return S

    def margins(self, z):
        out = np.empty(self.n_blocks)
        for g in self.groups:
            S = self._assemble(g, z, 0.0, 0.0, False)
            out[g["js"]] = np.linalg.eigvalsh(S)[:, 0]
        return out

    def in_box(self, z):
        return (np.all(z[self.has_lo] > self.lo[self.has_lo])
                and np.all(z[self.has_hi] < self.hi[self.has_hi]))


def _box_barrier(ws, z, grad=None, hess_diag=None):
    """Box-barrier value; optionally accumulates gradient/diagonal Hessian.
    Returns None when z is not strictly inside the box."""
    dlo = z - ws.lo
    dhi = ws.hi - z
    if np.any(dlo[ws.has_lo] <= 0.0) or np.any(dhi[ws.has_hi] <= 0.0):
        return None
    phi = -(float(np.sum(np.log(dlo[ws.has_lo])))
            + float(np.sum(np.log(dhi[ws.has_hi]))))
    if grad is not None:
        grad[:ws.m][ws.has_lo] -= 1.0 / dlo[ws.has_lo]
        grad[:ws.m][ws.has_hi] += 1.0 / dhi[ws.has_hi]
    if hess_diag is not None:
        hess_diag[ws.has_lo] += 1.0 / dlo[ws.has_lo] ** 2
        hess_diag[ws.has_hi] += 1.0 / dhi[ws.has_hi] ** 2
    return phi


def _barrier_value(ws: _Workspace, eps, z, t, mu, with_t):
    """Value of obj/mu + Phi at (z, t), or None if not strictly feasible."""
    phi = 0.0
    for g in ws.groups:
        S = ws._assemble(g, z, eps, t, with_t)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return None
        diag = np.diagonal(L, axis1=1, axis2=2)
        if np.any(diag <= 0.0):
            return None
        phi -= 2.0 * float(np.sum(np.log(diag)))
    box = _box_barrier(ws, z)
    if box is None:
        return None
    phi += box
    if with_t:
        phi += t / mu
    return phi


def _barrier_terms(ws: _Workspace, eps, z, t, mu, with_t):
    """Value, gradient and Hessian of  obj/mu + Phi  at (z, t).

    ``obj`` is t when ``with_t`` else 0; Phi is the log-det barrier of the
    shifted blocks plus box barriers.  Returns None when (z, t) is not
    strictly feasible for the shifted cone.
    """
    m = ws.m
    dim = m + 1 if with_t else m
    g = np.zeros(dim)
    H = np.zeros((dim, dim))
    phi = 0.0
    for grp in ws.groups:
        S = ws._assemble(grp, z, eps, t, with_t)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return None
        diag = np.diagonal(L, axis1=1, axis2=2)
        if np.any(diag <= 0.0):
            return None
        phi -= 2.0 * float(np.sum(np.log(diag)))
        A = grp["coeffs_t"] if with_t else grp["coeffs"]
        idx = grp["idx_t"] if with_t else grp["idx"]
        J, K, s, _ = A.shape
        if K == 0:
            continue
        # V_k = L^{-1} A_k L^{-T}; grad gets -tr(V_k), Hessian <V_k, V_l>_F
        X = np.linalg.solve(L[:, None], A)
        V = np.linalg.solve(L[:, None], X.transpose(0, 1, 3, 2))
        traces = np.einsum("jkaa->jk", V)
        np.add.at(g, idx, -traces)
        Vflat = V.reshape(J, K, s * s)
        Hb = Vflat @ Vflat.transpose(0, 2, 1)
        for jj in range(J):
            ii = idx[jj]
            H[np.ix_(ii, ii)] += Hb[jj]
    hess_diag = np.zeros(m)
    box = _box_barrier(ws, z, grad=g, hess_diag=hess_diag)
    if box is None:
        return None
    phi += box
    H[np.arange(m), np.arange(m)] += hess_diag
    val = phi
    if with_t:
        val += t / mu
        g[m] += 1.0 / mu
    return val, g, H


def _newton_solve(H, g):
    reg = 1e-13 * (1.0 + float(np.abs(np.diag(H)).max(initial=0.0)))
    eye = np.eye(H.shape[0])
    for _ in range(6):
        try:
            L = cholesky(H + reg * eye, lower=True)
            step = solve_triangular(
                L.T, solve_triangular(L, -g, lower=True), lower=False)
            return step
        except Exception:
            reg *= 100.0
    return np.linalg.lstsq(H + reg * eye, -g, rcond=None)[0]


def _minimize_barrier(ws, eps, z, t, mu, with_t, cfg, trace,
                      stop_margin=None):
    """Newton descent of obj/mu + Phi; returns (z, t, converged).

    If ``stop_margin`` is given, iteration exits early as soon as the
    recomputed block margin at z reaches it.
    """
    cur = _barrier_terms(ws, eps, z, t, mu, with_t)
    if cur is None:
        raise NumericalFailureError("barrier start point not strictly feasible",
                                    trace)
    f, g, H = cur
    alpha0 = 1.0  # adaptive start; boundary-hugging iterates reuse short steps
    for it in range(cfg.max_newton):
        step = _newton_solve(H, g)
        decrement = float(-g @ step)
        if not np.isfinite(decrement):
            raise NumericalFailureError("non-finite Newton decrement", trace)
        if decrement <= 2.0 * cfg.newton_tol:
            return z, t, True
        alpha = alpha0
        accepted = False
        for _ in range(60):
            z_try = z + alpha * step[:ws.m]
            t_try = t + alpha * step[ws.m] if with_t else t
            val = _barrier_value(ws, eps, z_try, t_try, mu, with_t)
            if val is not None and val <= f - cfg.armijo * alpha * decrement:
                z, t = z_try, t_try
                f, g, H = _barrier_terms(ws, eps, z, t, mu, with_t)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            trace.append(f"line search stalled (mu={mu:.2e}, it={it})")
            return z, t, False
        alpha0 = min(1.0, 4.0 * alpha)
        if stop_margin is not None and float(ws.margins(z).min()) >= stop_margin:
            return z, t, True
    trace.append(f"newton budget exhausted (mu={mu:.2e})")
    return z, t, False


def _phase1(ws: _Workspace, eps, z_start, cfg, trace, tighten=False):
    """Decide feasibility of  blocks(z) >= eps I  within the box.

    Returns a dict with ``feasible`` plus the final iterate; on infeasible
    exit ``gap`` estimates how far eps overshoots the best achievable
    margin.  With ``tighten`` the barrier path is followed until the gap
    estimate is sharp (used for infeasibility reports); otherwise the probe
    returns as soon as infeasibility is certified.
    """
    z = ws.clip_inside(z_start.copy())
    margins = ws.margins(z)
    m0 = float(margins.min())
    if m0 >= eps:
        return {"feasible": True, "z": z, "margin": m0}
    t = (eps - m0) * 1.05 + 1e-8
    # start the path at the scale of the violation; warm starts are nearly
    # centered already, so large initial mu only wastes stages
    mu = max(t, 1e-8)
    certified = False
    while True:
        z, t, converged = _minimize_barrier(
            ws, eps, z, t, mu, with_t=True, cfg=cfg, trace=trace,
            stop_margin=eps)
        mg = float(ws.margins(z).min())
        if mg >= eps:
            return {"feasible": True, "z": z, "margin": mg}
        if t < 0.0:
            # strictly feasible in t yet margin check missed by roundoff
            return {"feasible": True, "z": z, "margin": mg}
        gap_bound = ws.nu * mu
        if converged and t - gap_bound > 0.0:
            certified = True
            if not tighten:
                return {"feasible": False, "z": z, "gap": t,
                        "gap_low": t - gap_bound}
            if gap_bound <= 1e-6 * max(1.0, abs(t)):
                return {"feasible": False, "z": z, "gap": t,
                        "gap_low": t - gap_bound}
        if mu <= cfg.mu_floor * max(1.0, abs(t)):
            return {"feasible": False, "z": z, "gap": t,
                    "gap_low": t - gap_bound if certified else None}
        mu *= cfg.mu_factor


def _center(ws: _Workspace, eps, z_start, cfg, trace):
    """Analytic center of the strictly feasible set at level eps."""
    z = z_start.copy()
    t = 0.0
    if _barrier_value(ws, eps, z, t, 1.0, with_t=False) is None:
        return z_start
    tight = SolverConfig(**{**cfg.__dict__, "newton_tol": cfg.center_tol,
                            "max_newton": 120})
    try:
        z, _, _ = _minimize_barrier(ws, eps, z, t, 1.0, with_t=False,
                                    cfg=tight, trace=trace)
    except NumericalFailureError:
        return z_start
    return z


def solve(problem: LmiProblem, config: SolverConfig | None = None) -> LmiSolution:
    """Solve an LMI family for the requested objective.

    For ``maximize-margin`` the returned status is ``optimal`` and the
    margin is within the configured bisection width of the supremum; for
    ``feasibility`` the status is ``feasible`` as soon as the margin clears
    the feasibility tolerance.  ``infeasible`` solutions carry the best
    achievable margin estimate in ``info``.  The reported margin is always
    recomputed from the assembled blocks at the returned z.
    """
    cfg = config or SolverConfig()
    problem.validate()
    ws = _Workspace(problem)
    trace = []
    info = {"probes": 0, "trace": trace}

    if problem.dim == 0:
        z = np.zeros(0)
        margin = assemble_margin(problem, z)
        if margin >= cfg.feas_tol:
            status = "optimal" if problem.objective == MAXIMIZE_MARGIN else "feasible"
        else:
            status = "infeasible"
            info["best_margin"] = margin
        return LmiSolution(z=z, margin=margin, status=status, info=info)

    z0 = (ws.clip_inside(np.asarray(problem.initial_z, dtype=float).copy())
          if problem.initial_z is not None else ws.default_start())

    try:
        res = _phase1(ws, cfg.feas_tol, z0, cfg, trace, tighten=True)
        info["probes"] += 1
        if not res["feasible"]:
            best = cfg.feas_tol - res["gap"]
            info["best_margin"] = best
            if res.get("gap_low") is not None:
                info["best_margin_upper"] = cfg.feas_tol - res["gap_low"]
            return LmiSolution(z=res["z"],
                               margin=assemble_margin(problem, res["z"]),
                               status="infeasible", info=info)
        z_best = res["z"]
        if problem.objective == FEASIBILITY:
            return LmiSolution(z=z_best,
                               margin=assemble_margin(problem, z_best),
                               status="feasible", info=info)

        lo = float(ws.margins(z_best).min())
        hi = max(1.0, 2.0 * lo)
        while True:
            if hi > cfg.margin_cap:
                raise UnboundedMarginError(
                    "margin maximization appears unbounded; add normalization "
                    "bounds on the decision vector")
            r = _phase1(ws, hi, z_best, cfg, trace)
            info["probes"] += 1
            if r["feasible"]:
                z_best = r["z"]
                lo = max(lo, float(ws.margins(z_best).min()))
                hi = 2.0 * hi
            else:
                break
        while hi - lo > cfg.width:
            mid = 0.5 * (lo + hi)
            r = _phase1(ws, mid, z_best, cfg, trace)
            info["probes"] += 1
            if r["feasible"]:
                z_best = r["z"]
                lo = max(mid, float(ws.margins(z_best).min()))
                if lo >= hi:
                    hi = lo + 1e-3 * cfg.width
            else:
                hi = mid
        # polish: analytic centering just below the certified level
        eps_c = lo - max(1e-12, 0.1 * cfg.width)
        z_c = _center(ws, eps_c, z_best, cfg, trace)
        if float(ws.margins(z_c).min()) >= eps_c:
            z_best = z_c
        margin = assemble_margin(problem, z_best)
        info["bisection_interval"] = (lo, hi)
        return LmiSolution(z=z_best, margin=margin, status="optimal", info=info)
    except UnboundedMarginError:
        raise
    except NumericalFailureError as exc:
        info["message"] = str(exc)
        info["trace"] = exc.trace or trace
        return LmiSolution(z=z0, margin=-np.inf, status="numerical-failure",
                           info=info)


def dump_problem(problem: LmiProblem, path):
    """Write a problem to JSON for external cross-checking."""
    import json

    data = {
        "dim": problem.dim,
        "objective": problem.objective,
        "lower": None if problem.lower is None else list(map(float, problem.lower)),
        "upper": None if problem.upper is None else list(map(float, problem.upper)),
        "blocks": [
            {
                "label": blk.label,
                "const": blk.const.tolist(),
                "coeffs": blk.coeffs.tolist(),
                "var_indices": (None if blk.var_indices is None
                                else blk.var_indices.tolist()),
            }
            for blk in problem.blocks
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
