"""Stiff-limit orchestration: gamma sweeps with residual-decay fits, the
elliptic reference solution on the positivity set, and Cauchy-in-gamma
trajectory comparisons.

The reference pressure solves -Lap(p) = G(p, c) with p = 0 on the boundary of
O = {p_num > eps_O}, by the shifted fixed point

    (-Lap + beta) p_new = G(p_old, c) + beta * p_old,

a contraction when dG/dp <= -beta and the Lipschitz spread of G in p is small
against the principal Dirichlet eigenvalue of O.  The matrix is factored once
and reused across iterations; non-contraction (three consecutive growing
updates) aborts with a pointer to the monotonicity assumption.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix, identity as sparse_identity
from scipy.sparse.linalg import splu

from . import model, monitors, solver
from .grid import DIRICHLET_ZERO, Grid, gradient_array

__all__ = [
    "PositivitySet",
    "SweepReport",
    "HeleShawResult",
    "heleshaw_reference",
    "gamma_sweep",
    "limit_compare",
    "fit_decay",
]


@dataclass
class PositivitySet:
    """Mask O = {p > eps} plus its boundary cell layer (cells in O with a
    neighbor outside)."""

    grid: Grid
    mask: np.ndarray
    eps: float

    @classmethod
    def from_pressure(cls, g: Grid, p: np.ndarray, eps: float) -> "PositivitySet":
        return cls(grid=g, mask=p > eps, eps=eps)

    @property
    def boundary_layer(self) -> np.ndarray:
        m = self.mask
        inner = np.ones_like(m)
        for ax in range(m.ndim):
            lo = np.take(m, range(0, m.shape[ax] - 1), axis=ax)
            hi = np.take(m, range(1, m.shape[ax]), axis=ax)
            pad_hi = np.concatenate([hi, np.zeros_like(np.take(m, [0], axis=ax))], axis=ax)
            pad_lo = np.concatenate([np.zeros_like(np.take(m, [0], axis=ax)), lo], axis=ax)
            inner &= pad_hi & pad_lo
        return self.mask & ~inner

    @property
    def interior(self) -> np.ndarray:
        return self.mask & ~self.boundary_layer

    def measure(self) -> float:
        return float(np.sum(self.mask)) * self.grid.cell_volume

    def symmetric_difference(self, other_mask: np.ndarray) -> float:
        """|O symdiff other| in grid measure (reported, never asserted)."""
        return float(np.sum(self.mask ^ other_mask)) * self.grid.cell_volume


def _masked_dirichlet_laplacian(g: Grid, mask: np.ndarray) -> csr_matrix:
    """Laplacian on the masked cells with the value 0 at every face leading
    outside the mask (ghost fold-in, so the matrix stays symmetric)."""
    idx = -np.ones(g.shape, dtype=np.int64)
    cells = np.argwhere(mask)
    for row, cell in enumerate(cells):
        idx[tuple(cell)] = row
    n_cells = len(cells)
    rows, cols, vals = [], [], []
    inv_h2 = 1.0 / (g.h * g.h)
    for row, cell in enumerate(cells):
        diag = -2.0 * g.dim * inv_h2
        for ax in range(g.dim):
            for off in (-1, 1):
                nb = list(cell)
                nb[ax] += off
                inside = 0 <= nb[ax] < g.n and mask[tuple(nb)]
                if inside:
                    rows.append(row)
                    cols.append(idx[tuple(nb)])
                    vals.append(inv_h2)
                else:
                    diag -= inv_h2
        rows.append(row)
        cols.append(row)
        vals.append(diag)
    return csr_matrix((vals, (rows, cols)), shape=(n_cells, n_cells))


@dataclass
class HeleShawResult:
    pressure: np.ndarray           # reference pressure on the full grid
    mask: PositivitySet
    iterations: int
    contraction: float             # last observed update ratio
    update_history: np.ndarray
    residual_inf: float            # |Lap p + G|_inf on the mask interior


def heleshaw_reference(p_num: np.ndarray, c_num: np.ndarray,
                       spec: model.ReactionSpec, eps_O: float, g: Grid,
                       tol: float = 1e-8, max_iter: int = 500) -> HeleShawResult:
    """Solve -Lap(p) = G(p, c_num) on O = {p_num > eps_O}, zero outside."""
    params = spec.params
    beta = params.beta
    pos = PositivitySet.from_pressure(g, p_num, eps_O)
    out = np.zeros(g.shape)
    if not np.any(pos.mask):
        return HeleShawResult(pressure=out, mask=pos, iterations=0,
                              contraction=0.0, update_history=np.zeros(0),
                              residual_inf=0.0)
    L = _masked_dirichlet_laplacian(g, pos.mask)
    lu = splu((-L + beta * sparse_identity(L.shape[0], format="csr")).tocsc())
    c_m = c_num[pos.mask]
    p = p_num[pos.mask].astype(float)
    updates = []
    grow = 0
    for it in range(1, max_iter + 1):
        rhs = np.asarray(spec.G(p, c_m), dtype=float) + beta * p
        p_new = lu.solve(rhs)
        upd = float(np.max(np.abs(p_new - p)))
        scale = max(float(np.max(np.abs(p_new))), 1e-300)
        if updates and upd > updates[-1]:
            grow += 1
            if grow >= 3:
                raise RuntimeError(
                    "fixed point diverging for 3 consecutive iterations; "
                    "check the monotonicity assumption dG/dp < -beta")
        else:
            grow = 0
        updates.append(upd)
        p = p_new
        if upd <= tol * scale:
            break
    else:
        raise RuntimeError(f"fixed point did not converge in {max_iter} iterations")
    out[pos.mask] = p
    resid_field = np.abs(L @ p + np.asarray(spec.G(p, c_m), dtype=float))
    interior = pos.interior[pos.mask]
    resid = float(np.max(resid_field[interior])) if np.any(interior) else 0.0
    contraction = updates[-1] / updates[-2] if len(updates) > 1 else 0.0
    return HeleShawResult(pressure=out, mask=pos, iterations=len(updates),
                          contraction=contraction,
                          update_history=np.asarray(updates),
                          residual_inf=resid)


# ---------------------------------------------------------------------------
# gamma sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    gammas: list
    rows: list                     # per-gamma accumulated monitor dicts
    failed: list
    fit_graph_residual: tuple | None   # (exponent, stderr)
    fit_compl_rhs: tuple | None
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])


def fit_decay(gammas, values) -> tuple:
    """Log-log least squares of value ~ gamma^(-q); returns (q, stderr(q))."""
    x = np.log(np.asarray(gammas, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if len(x) < 3:
        raise ValueError("at least 3 points required for a decay fit")
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    s2 = float(res[0]) / dof if len(res) and dof > 0 else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    return -float(coef[0]), float(np.sqrt(cov[0, 0]))


def _sweep_worker(args):
    from . import config as config_mod
    cfg_text, gamma, keep = args
    cfg = config_mod.parse_config_text(cfg_text)
    setup, zeta, weight_on = config_mod.build_setup(cfg, gamma_override=gamma)
    t0 = _time.perf_counter()
    traj = solver.run(setup)
    weight = monitors.build_weight(setup.grid) if weight_on else None
    report = monitors.compute_report(traj, setup.spec, zeta=zeta, weight=weight)
    runtime = _time.perf_counter() - t0
    payload = traj if keep else None
    return gamma, report.accum, report.meta, runtime, payload


def gamma_sweep(cfg_text: str, gammas, workers: int = 1,
                keep_trajectories: bool = False):
    """Run the configured experiment once per gamma and fit the decays.

    Per-gamma runs are independent and deterministic, so the pool size cannot
    change any output.  Returns (SweepReport, {gamma: Trajectory} or {}).
    """
    gammas = sorted(float(g) for g in gammas)
    if len(gammas) != len(set(gammas)):
        raise ValueError("gamma list must be strictly increasing")
    jobs = [(cfg_text, g, keep_trajectories) for g in gammas]
    results = {}
    failed = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for gamma, out in zip(gammas, pool.map(_sweep_worker, jobs)):
                results[gamma] = out
    else:
        for job in jobs:
            gamma = job[1]
            try:
                results[gamma] = _sweep_worker(job)
            except Exception as exc:   # noqa: BLE001 - per-run isolation
                failed.append((gamma, repr(exc)))
    rows = []
    trajectories = {}
    ok_gammas = [g for g in gammas if g in results]
    for g in ok_gammas:
        _, accum, meta, runtime, payload = results[g]
        row = dict(accum)
        row["gamma"] = g
        row["runtime_s"] = runtime
        rows.append(row)
        if payload is not None:
            trajectories[g] = payload
    fit_graph = fit_compl = None
    if len(ok_gammas) >= 3:
        fit_graph = fit_decay(ok_gammas, [r["graph_residual_max"] for r in rows])
        rhs_abs = [abs(r["compl_rhs"]) for r in rows if "compl_rhs" in r]
        if len(rhs_abs) == len(ok_gammas):
            fit_compl = fit_decay(ok_gammas, rhs_abs)
    report = SweepReport(gammas=ok_gammas, rows=rows, failed=failed,
                         fit_graph_residual=fit_graph, fit_compl_rhs=fit_compl)
    return report, trajectories


# ---------------------------------------------------------------------------
# Cauchy-in-gamma comparison
# ---------------------------------------------------------------------------

def limit_compare(traj_a: solver.Trajectory, traj_b: solver.Trajectory) -> dict:
    """Space-time distances between two runs on matching grids and times:
    L1 for p and c, L2 for the pressure gradient."""
    if traj_a.grid != traj_b.grid:
        raise ValueError("trajectories live on different grids")
    if len(traj_a) != len(traj_b) or not np.allclose(traj_a.times, traj_b.times,
                                                     rtol=0.0, atol=1e-12):
        raise ValueError("snapshot times do not match")
    g = traj_a.grid
    hd = g.cell_volume
    dts = np.diff(traj_a.times)
    l1_p = l1_c = l2g = 0.0
    for k, dt in enumerate(dts):
        l1_p += float(np.sum(np.abs(traj_a.p[k] - traj_b.p[k]))) * hd * dt
        l1_c += float(np.sum(np.abs(traj_a.c[k] - traj_b.c[k]))) * hd * dt
        diff = traj_a.p[k] - traj_b.p[k]
        grads = gradient_array(diff, g.h, DIRICHLET_ZERO)
        l2g += float(np.sum(sum(x * x for x in grads))) * hd * dt
    return {"l1_p": l1_p, "l1_c": l1_c, "l2_grad_p": math.sqrt(l2g)}
