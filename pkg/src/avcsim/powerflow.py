"""Steady-state AC power flow on a radial case, plus two-bus closed forms.

The solver retrieves bus voltages v_i∠θ_i from net injections by
Newton-Raphson on the polar power balance equations

    p_i = v_i² Σ g_ij − v_i Σ v_j (g_ij cos θ_ij + b_ij sin θ_ij)
    q_i = −v_i² Σ b_ij + v_i Σ v_j (b_ij cos θ_ij − g_ij sin θ_ij)

with θ_ij = θ_i − θ_j and (g_ij, b_ij) the series admittance of branch
(i, j). All non-slack buses are PQ; the slack holds v_ref∠0. Non-convergence
is a first-class result (``converged=False``), not an exception, because the
environment's safety rule consumes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.sparse import csr_matrix

from .network import NetworkCase, ValidationError, branch_admittance

TOLERANCE = 1e-8  # pu, max power mismatch
MAX_ITERATIONS = 30


@dataclass(frozen=True)
class InjectionSet:
    """Device injections in physical units (MW / MVAr), keyed by bus label.

    PV active power is generation (>= 0); loads are consumption.
    """

    p_pv: Mapping[int, float] = field(default_factory=dict)
    q_pv: Mapping[int, float] = field(default_factory=dict)
    p_load: Mapping[int, float] = field(default_factory=dict)
    q_load: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("p_pv", "q_pv", "p_load", "q_load"):
            values = getattr(self, name)
            for bus, value in values.items():
                if not np.isfinite(value):
                    raise ValueError(f"{name}[{bus}] is not finite")
        for bus, value in self.p_pv.items():
            if value < 0:
                raise ValueError(f"p_pv[{bus}] must be non-negative generation")

    def net_complex_pu(self, case: NetworkCase) -> np.ndarray:
        """Net complex injection per bus position, per-unit on the case base."""
        s = np.zeros(case.n_buses, dtype=complex)
        for bus, p in self.p_pv.items():
            s[case.bus_position(bus)] += p
        for bus, q in self.q_pv.items():
            s[case.bus_position(bus)] += 1j * q
        for bus, p in self.p_load.items():
            s[case.bus_position(bus)] -= p
        for bus, q in self.q_load.items():
            s[case.bus_position(bus)] -= 1j * q
        return s / case.base_power


@dataclass(frozen=True)
class GridState:
    """One solved operating point. Arrays follow the case's bus ordering."""

    v: np.ndarray  # pu magnitude per bus
    theta: np.ndarray  # radians per bus
    injections: InjectionSet
    slack_p: float  # MW
    slack_q: float  # MVAr
    total_loss: float  # MW
    converged: bool
    iterations: int


def build_ybus(case: NetworkCase) -> csr_matrix:
    """Complex nodal admittance matrix with off-nominal taps on the from side."""
    n = case.n_buses
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for br in case.branches:
        g, b = branch_admittance(br)
        y = complex(g, b)
        f = case.bus_position(br.from_bus)
        t = case.bus_position(br.to_bus)
        tau = br.tap_ratio
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [y / (tau * tau), y, -y / tau, -y / tau]
    return csr_matrix(
        (np.asarray(vals), (np.asarray(rows), np.asarray(cols))), shape=(n, n)
    )


_YBUS_CACHE: dict[int, tuple[NetworkCase, np.ndarray]] = {}


def _ybus_for(case: NetworkCase) -> np.ndarray:
    """Dense admittance matrix; networks here stay small (<= a few hundred buses)."""
    hit = _YBUS_CACHE.get(id(case))
    if hit is not None and hit[0] is case:
        return hit[1]
    ybus = build_ybus(case).toarray()
    _YBUS_CACHE[id(case)] = (case, ybus)
    if len(_YBUS_CACHE) > 64:
        _YBUS_CACHE.pop(next(iter(_YBUS_CACHE)))
    return ybus


def _power_residual(ybus: np.ndarray, voltage: np.ndarray, s_spec: np.ndarray) -> np.ndarray:
    """Specified minus computed complex injections, per bus."""
    return s_spec - voltage * np.conj(ybus @ voltage)


def solve_power_flow(
    case: NetworkCase,
    inj: InjectionSet,
    *,
    tol: float = TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
    v0: np.ndarray | None = None,
    theta0: np.ndarray | None = None,
    trace: list | None = None,
) -> GridState:
    """Newton-Raphson power flow from a flat start (or a supplied warm start).

    ``iterations`` counts mismatch evaluations, so a no-load flat start
    converges at 1. Returns a GridState with ``converged=False`` carrying the
    best iterate if the iteration diverges or hits ``max_iterations`` steps.
    When ``trace`` is a list, (iteration, max residual) pairs are appended to
    it for diagnostics.
    """
    n = case.n_buses
    ybus = _ybus_for(case)
    s_spec = inj.net_complex_pu(case)
    slack = case.bus_position(case.slack_bus)
    ns = np.array([i for i in range(n) if i != slack], dtype=int)

    v = np.full(n, case.v_ref, dtype=float) if v0 is None else np.array(v0, dtype=float)
    th = np.zeros(n, dtype=float) if theta0 is None else np.array(theta0, dtype=float)
    v[slack] = case.v_ref
    th[slack] = 0.0

    best_v, best_th = v.copy(), th.copy()
    best_norm = np.inf
    converged = False
    iterations = 0

    while True:
        voltage = v * np.exp(1j * th)
        residual = _power_residual(ybus, voltage, s_spec)
        f = np.concatenate([residual[ns].real, residual[ns].imag])
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        iterations += 1
        if trace is not None:
            trace.append((iterations, norm))
        if not np.isfinite(norm):
            break
        if norm < best_norm:
            best_norm = norm
            best_v, best_th = v.copy(), th.copy()
        if norm <= tol:
            converged = True
            break
        if iterations > max_iterations:
            break

        # Complex-form Jacobian blocks dS/dθ and dS/d|V| (dense: the largest
        # supported case is a few hundred buses, where dense factorization
        # beats sparse machinery by a wide margin).
        ibus = ybus @ voltage
        vnorm = voltage / np.abs(voltage)
        y_dv = ybus * voltage[np.newaxis, :]
        ds_dva = 1j * voltage[:, np.newaxis] * np.conj(np.diag(ibus) - y_dv)
        ds_dvm = (
            voltage[:, np.newaxis] * np.conj(ybus * vnorm[np.newaxis, :])
            + np.conj(ibus)[:, np.newaxis] * np.diag(vnorm)
        )

        sub = np.ix_(ns, ns)
        m = len(ns)
        jac = np.empty((2 * m, 2 * m))
        jac[:m, :m] = ds_dva[sub].real
        jac[:m, m:] = ds_dvm[sub].real
        jac[m:, :m] = ds_dva[sub].imag
        jac[m:, m:] = ds_dvm[sub].imag
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            break
        th[ns] += dx[:m]
        v[ns] += dx[m:]
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            break

    if not converged:
        v, th = best_v, best_th
    slack_s = _slack_power(case, ybus, v, th)
    loss = total_branch_loss(case, v, th) if converged else 0.0
    return GridState(
        v=v,
        theta=th,
        injections=inj,
        slack_p=slack_s.real * case.base_power,
        slack_q=slack_s.imag * case.base_power,
        total_loss=loss,
        converged=converged,
        iterations=iterations,
    )


def _slack_power(case: NetworkCase, ybus: csr_matrix, v: np.ndarray, th: np.ndarray) -> complex:
    voltage = v * np.exp(1j * th)
    slack = case.bus_position(case.slack_bus)
    return complex(voltage[slack] * np.conj((ybus @ voltage)[slack]))


def diagnostic_dump(case: NetworkCase, inj: InjectionSet, **solve_options) -> str:
    """Solve and render the iteration history as plain text for debugging."""
    trace: list = []
    state = solve_power_flow(case, inj, trace=trace, **solve_options)
    lines = [f"case {case.name}: converged={state.converged} iterations={state.iterations}"]
    for iteration, norm in trace:
        lines.append(f"  iter {iteration:2d}  max|mismatch| = {norm:.3e}")
    lines.append(
        f"slack_p = {state.slack_p:.6f} MW  slack_q = {state.slack_q:.6f} MVAr  "
        f"loss = {state.total_loss:.6f} MW"
    )
    return "\n".join(lines)


def mismatch(case: NetworkCase, state: GridState) -> np.ndarray:
    """Residual vector (pu): specified minus network-side P and Q rows,
    two entries per non-slack bus (all P rows first, then all Q rows)."""
    if len(state.v) != case.n_buses or len(state.theta) != case.n_buses:
        raise ValueError("state dimensions do not match the case")
    ybus = _ybus_for(case)
    voltage = np.asarray(state.v) * np.exp(1j * np.asarray(state.theta))
    residual = _power_residual(ybus, voltage, state.injections.net_complex_pu(case))
    slack = case.bus_position(case.slack_bus)
    ns = np.array([i for i in range(case.n_buses) if i != slack], dtype=int)
    return np.concatenate([residual[ns].real, residual[ns].imag])


def branch_losses(case: NetworkCase, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Per-branch series I²r loss, per-unit."""
    voltage = np.asarray(v) * np.exp(1j * np.asarray(theta))
    out = np.empty(len(case.branches))
    for k, br in enumerate(case.branches):
        g, b = branch_admittance(br)
        y = complex(g, b)
        vf = voltage[case.bus_position(br.from_bus)] / br.tap_ratio
        vt = voltage[case.bus_position(br.to_bus)]
        current = (vf - vt) * y
        out[k] = (current * np.conj(current)).real * br.r
    return out


def total_branch_loss(case: NetworkCase, v: np.ndarray, theta: np.ndarray) -> float:
    """Network loss Σ I²r in physical MW."""
    return float(branch_losses(case, v, theta).sum()) * case.base_power


def branch_apparent_flows(
    case: NetworkCase, v: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Apparent power |S| entering each branch at its from side, MVA."""
    voltage = np.asarray(v) * np.exp(1j * np.asarray(theta))
    out = np.empty(len(case.branches))
    for k, br in enumerate(case.branches):
        g, b = branch_admittance(br)
        y = complex(g, b)
        vf = voltage[case.bus_position(br.from_bus)] / br.tap_ratio
        vt = voltage[case.bus_position(br.to_bus)]
        current = (vf - vt) * y
        out[k] = abs(vf * np.conj(current)) * case.base_power
    return out


def total_loss(case: NetworkCase, state: GridState) -> float:
    """Total network loss of a converged state, MW."""
    if not state.converged:
        raise ValidationError("total_loss requires a converged state")
    return total_branch_loss(case, state.v, state.theta)


# -- two-bus closed forms (analytic oracles) --------------------------------


def two_bus_voltage_drop(
    r: float, x: float, p_l: float, q_l: float, p_pv: float, q_pv: float, v: float
) -> float:
    """First-order voltage drop Δv = (r(p_l−p_pv) + x(q_l−q_pv)) / v.

    The denominator is the receiving-end voltage as printed; the source text
    is ambiguous about which end normalizes the drop, and this module follows
    the printed formula.
    """
    if v <= 0:
        raise ValueError("v must be positive")
    return (r * (p_l - p_pv) + x * (q_l - q_pv)) / v


def two_bus_power_loss(
    r: float, p_l: float, q_l: float, p_pv: float, q_pv: float, v_parent: float
) -> float:
    """Series loss ((p_l−p_pv)² + (q_l−q_pv)²) · r / v_parent²."""
    if v_parent <= 0:
        raise ValueError("v_parent must be positive")
    return ((p_l - p_pv) ** 2 + (q_l - q_pv) ** 2) / (v_parent * v_parent) * r


def zero_deviation_reactive(
    r: float, x: float, p_l: float, p_pv: float, q_l: float
) -> float:
    """Reactive setpoint enforcing zero voltage deviation: (r/x)(p_l−p_pv) + q_l."""
    if x <= 0:
        raise ValueError("x must be positive")
    return (r / x) * (p_l - p_pv) + q_l
