"""Safety-filter quadratic program over a 2-D input box.

minimize |u - u_nom|^2  subject to  row . u + const >= 0  and  lo <= u <= hi.

The problem is small enough to solve exactly: every optimal active set of a
two-variable QP with one affine constraint plus box bounds corresponds to one
of at most 14 candidate points (nominal input, its projection onto the
constraint line, the four box faces, the four line/face intersections, and
the four vertices).  We enumerate them, keep the feasible ones, and return
the cheapest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BarrierEval, ControlInput, GammaPair, InputBounds

CLASSIFY_TOL = 1e-9

_BOUND_NAMES = (("a_lo", "a_hi"), ("omega_lo", "omega_hi"))


class QpInfeasibleError(RuntimeError):
    """No admissible input satisfies the barrier constraint.

    Carries the best achievable constraint value and the input achieving it,
    so callers can apply a least-violating control and record the event.
    """

    def __init__(self, margin_max: float, u_best: ControlInput):
        super().__init__(
            f"CBF constraint infeasible over the input box (max margin {margin_max:.6g})"
        )
        self.margin_max = margin_max
        self.u_best = u_best


@dataclass(frozen=True)
class QpProblem:
    u_nom: tuple[float, float]
    row: tuple[float, float]
    const: float
    lo: tuple[float, float]
    hi: tuple[float, float]

    def margin(self, u) -> float:
        return self.row[0] * u[0] + self.row[1] * u[1] + self.const


@dataclass(frozen=True)
class QpSolution:
    u: ControlInput
    margin: float
    active_set: frozenset[str]
    cost: float


def build_qp(
    be: BarrierEval, u_nom: ControlInput, gamma: GammaPair, bounds: InputBounds
) -> QpProblem:
    """Assemble the QP for one barrier evaluation and parameter pair."""
    g0, g1 = gamma.gamma0, gamma.gamma1
    const = be.lf2h + (g0 + g1) * be.h_dot + g0 * g1 * be.h
    return QpProblem(
        u_nom=(u_nom.accel, u_nom.omega),
        row=be.lglfh,
        const=const,
        lo=(-bounds.a_max, -bounds.omega_max),
        hi=(bounds.a_max, bounds.omega_max),
    )


def margin_max(qp: QpProblem) -> float:
    """Maximum of row . u + const over the box (sign-matched vertex)."""
    total = qp.const
    for i in range(2):
        total += max(qp.row[i] * qp.lo[i], qp.row[i] * qp.hi[i])
    return total


def least_violating(qp: QpProblem) -> ControlInput:
    """Input maximizing the constraint value; nominal on zero-coefficient axes."""
    u = [0.0, 0.0]
    for i in range(2):
        if qp.row[i] > 0.0:
            u[i] = qp.hi[i]
        elif qp.row[i] < 0.0:
            u[i] = qp.lo[i]
        else:
            u[i] = min(max(qp.u_nom[i], qp.lo[i]), qp.hi[i])
    return ControlInput(u[0], u[1])


def _candidates(qp: QpProblem):
    ax, ay = qp.row
    nx, ny = qp.u_nom
    pts = [(nx, ny)]
    nrm2 = ax * ax + ay * ay
    if nrm2 > 0.0:
        # projection of u_nom onto the constraint boundary
        t = (ax * nx + ay * ny + qp.const) / nrm2
        pts.append((nx - t * ax, ny - t * ay))
    for i in range(2):
        for b in (qp.lo[i], qp.hi[i]):
            if i == 0:
                pts.append((b, ny))
                if ay != 0.0:
                    pts.append((b, (-qp.const - ax * b) / ay))
            else:
                pts.append((nx, b))
                if ax != 0.0:
                    pts.append(((-qp.const - ay * b) / ax, b))
    for bx in (qp.lo[0], qp.hi[0]):
        for by in (qp.lo[1], qp.hi[1]):
            pts.append((bx, by))
    return pts


def solve(qp: QpProblem, tol: float = CLASSIFY_TOL) -> QpSolution:
    """Exact minimizer of |u - u_nom|^2 over box intersected with half-plane.

    Raises QpInfeasibleError exactly when margin_max(qp) < 0.
    """
    mmax = margin_max(qp)
    if mmax < 0.0:
        raise QpInfeasibleError(mmax, least_violating(qp))

    best = None
    best_cost = np.inf
    for (ux, uy) in _candidates(qp):
        if not (qp.lo[0] - tol <= ux <= qp.hi[0] + tol):
            continue
        if not (qp.lo[1] - tol <= uy <= qp.hi[1] + tol):
            continue
        ux_c = min(max(ux, qp.lo[0]), qp.hi[0])
        uy_c = min(max(uy, qp.lo[1]), qp.hi[1])
        if qp.margin((ux_c, uy_c)) < -tol:
            continue
        cost = (ux_c - qp.u_nom[0]) ** 2 + (uy_c - qp.u_nom[1]) ** 2
        if cost < best_cost - 0.0:
            best_cost = cost
            best = (ux_c, uy_c)
    if best is None:
        # margin_max >= 0 guarantees the sign-matched vertex is feasible
        u = least_violating(qp)
        best = (u.accel, u.omega)
        best_cost = (best[0] - qp.u_nom[0]) ** 2 + (best[1] - qp.u_nom[1]) ** 2

    margin = qp.margin(best)
    active = set()
    if abs(margin) <= tol:
        active.add("cbf")
    for i in range(2):
        if abs(best[i] - qp.lo[i]) <= tol:
            active.add(_BOUND_NAMES[i][0])
        elif abs(best[i] - qp.hi[i]) <= tol:
            active.add(_BOUND_NAMES[i][1])
    return QpSolution(
        u=ControlInput(best[0], best[1]),
        margin=margin,
        active_set=frozenset(active),
        cost=best_cost,
    )
