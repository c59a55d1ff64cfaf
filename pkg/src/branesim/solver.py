"""Periodic-grid method-of-lines evolution and diagnostics.

Two evolutions share only the grid and stencil code:

* the augmented path evolves the primitive field W with the symmetric-system
  right-hand side;
* the oracle path evolves the original graph unknowns (F, D), with xi and its
  gradient computed through determinants and adjugates, never minors.

Diagnostics track the energy, the entropy-law residual, the constraint
residuals, sigma (the lifted integrability constraint), and the
augmented-versus-oracle discrepancy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import flux as _flux
from .minors import MinorLayout, _rank, _sign, enumerate_layout
from .state import GraphData, PrimitiveState, SingularStateError, constraint_residuals, lift, to_conservative

CSV_HEADER = (
    "t,total_energy,entropy_residual_L2,lambda_Linf,omega_Linf,phi_Linf,"
    "psi_Linf,sigma_Linf,oracle_F_err_Linf,oracle_D_err_Linf"
)


class ConfigError(ValueError):
    """A run parameter is missing, malformed, or out of range."""


class BlowUpError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, t: float, rows=None, snapshots=None):
        super().__init__(f"non-finite state at t={t:.6g}")
        self.t = t
        self.rows = rows or []
        self.snapshots = snapshots or []


class TimelikeError(ConfigError):
    """Initial data violates the time-like margin."""


# ---------------------------------------------------------------------------
# grid and fields


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid in 1 or 2 spatial dimensions."""

    sizes: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if len(self.sizes) != len(self.lengths):
            raise ConfigError("sizes and lengths must have equal length")
        if not 1 <= len(self.sizes) <= 2:
            raise ConfigError("only 1 or 2 spatial dimensions are supported")
        if any(s < 8 for s in self.sizes):
            raise ConfigError("grids need at least 8 points per axis")
        if any(not math.isfinite(x) or x <= 0 for x in self.lengths):
            raise ConfigError("domain lengths must be positive and finite")

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(x / s for x, s in zip(self.lengths, self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.arange(s) * d for s, d in zip(self.sizes, self.spacing)]

    def coordinates(self) -> np.ndarray:
        """Coordinate arrays, shape (n, *sizes)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))


@dataclass
class GridField:
    """A primitive state sampled on every grid point; values (dim, *sizes)."""

    grid: Grid
    layout: MinorLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.layout.state_dim, *self.grid.sizes)
        if self.values.shape != expected:
            raise ConfigError(f"field has shape {self.values.shape}, expected {expected}")

    def state_view(self) -> PrimitiveState:
        """A PrimitiveState whose components are grid arrays (shared storage)."""
        m, n = self.layout.m, self.layout.n
        v = self.values
        return PrimitiveState(v[0], list(v[1 : 1 + m]), list(v[1 + m : 1 + m + n]), list(v[1 + m + n :]), self.layout)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.layout, self.values.copy())


def time_flip(values: np.ndarray, layout: MinorLayout) -> np.ndarray:
    """d -> -d, v -> -v; composing with t -> -t maps solutions to solutions."""
    out = values.copy()
    out[1 : 1 + layout.m + layout.n] *= -1.0
    return out


# ---------------------------------------------------------------------------
# stencils


def derivative(values: np.ndarray, grid: Grid, axis: int, order: int = 2) -> np.ndarray:
    """Central difference along spatial axis (0-based) with periodic wrap.

    Acts on the trailing grid axes, so leading component axes pass through.
    """
    if axis < 0 or axis >= grid.n:
        raise ConfigError(f"axis {axis} out of range for {grid.n}-d grid")
    ax = values.ndim - grid.n + axis
    dx = grid.spacing[axis]
    if order == 2:
        return (np.roll(values, -1, ax) - np.roll(values, 1, ax)) / (2 * dx)
    if order == 4:
        return (
            -np.roll(values, -2, ax)
            + 8 * np.roll(values, -1, ax)
            - 8 * np.roll(values, 1, ax)
            + np.roll(values, 2, ax)
        ) / (12 * dx)
    raise ConfigError(f"unsupported stencil order {order}")


# ---------------------------------------------------------------------------
# right-hand sides


def rhs_augmented(fld: GridField, order: int = 2) -> np.ndarray:
    """d_t W on the whole grid; the pointwise term table applied with stencils."""
    grads = [derivative(fld.values, fld.grid, j, order) for j in range(fld.grid.n)]
    out = np.zeros_like(fld.values)
    for row, coeff, deriv, axis, sign in _flux._direct_terms(fld.layout.m, fld.layout.n):
        out[row] -= sign * fld.values[coeff] * grads[axis - 1][deriv]
    return out


def _xi_and_xi_prime(F: np.ndarray):
    """xi and its half-gradient through determinant/adjugate closed forms.

    F has shape (m, n, ...); supports n = 1 and n = 2.  This is the oracle
    path, deliberately disjoint from the minor bookkeeping.
    """
    n = F.shape[1]
    if n == 1:
        xi = 1.0 + np.sum(F[:, 0] ** 2, axis=0)
        return xi, F.copy()
    if n == 2:
        a = np.sum(F[:, 0] * F[:, 0], axis=0)
        b = np.sum(F[:, 0] * F[:, 1], axis=0)
        c = np.sum(F[:, 1] * F[:, 1], axis=0)
        xi = (1.0 + a) * (1.0 + c) - b * b
        # adjugate of I + F^T F
        z00, z01, z11 = 1.0 + c, -b, 1.0 + a
        xp = np.empty_like(F)
        xp[:, 0] = F[:, 0] * z00 + F[:, 1] * z01
        xp[:, 1] = F[:, 0] * z01 + F[:, 1] * z11
        return xi, xp
    raise ConfigError("oracle closed forms cover n = 1 and n = 2 only")


def rhs_original(F: np.ndarray, D: np.ndarray, grid: Grid, order: int = 2):
    """d_t (F, D) of the original graph system on the grid."""
    m, n = F.shape[0], F.shape[1]
    if n != grid.n:
        raise ConfigError("F shape does not match grid dimension")
    P = np.einsum("ai...,a...->i...", F, D)
    xi, xp = _xi_and_xi_prime(F)
    h = np.sqrt(np.sum(D * D, axis=0) + np.sum(P * P, axis=0) + xi)
    dF = np.empty_like(F)
    dD = np.zeros_like(D)
    for alpha in range(m):
        base = D[alpha] + np.einsum("j...,j...->...", F[alpha], P)
        for i in range(n):
            dF[alpha, i] = -derivative(base / h, grid, i, order)
            dD[alpha] -= derivative((D[alpha] * P[i] + xp[alpha, i]) / h, grid, i, order)
    return dF, dD


def rk4_step(y: np.ndarray, dt: float, rhs) -> np.ndarray:
    """Classical four-stage Runge-Kutta update."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(float("nan"))
    return out


def max_wave_speed(fld: GridField) -> float:
    """Largest |eigenvalue| of the flux matrices over grid points and axes."""
    lay = fld.layout
    dim = lay.state_dim
    npts = int(np.prod(fld.grid.sizes))
    vals = fld.values.reshape(dim, npts)
    smax = 0.0
    for j in range(1, fld.grid.n + 1):
        A = np.zeros((npts, dim, dim))
        for p, q, slot, sign in _flux._symmetric_triplets(lay.m, lay.n, j):
            A[:, p, q] += sign * vals[slot]
        ev = np.linalg.eigvalsh(A)
        smax = max(smax, float(np.max(np.abs(ev))))
    return smax


def cfl_dt(fld: GridField, cfl: float) -> float:
    """dt = cfl * min(dx) / s_max, falling back to cfl * min(dx) for static fields."""
    if not 0 < cfl <= 1:
        raise ConfigError(f"cfl must lie in (0, 1], got {cfl}")
    dx = min(fld.grid.spacing)
    smax = max_wave_speed(fld)
    if smax == 0.0:
        return cfl * dx
    return cfl * dx / smax


def sigma_residual(fld: GridField, order: int = 2, eps: float = 1e-12) -> dict:
    """Discrete sigma_{A',I} = sum_{i in I} (-1)^{O_I(i)} d_i (m_{A',I\\{i}} / tau).

    Vanishes analytically on lifted data; empty for n = 1 where no index set
    of size >= 2 exists.
    """
    lay = fld.layout
    n, r = lay.n, lay.r
    tau = fld.values[0]
    if np.min(np.abs(tau)) <= eps:
        raise SingularStateError("tau is too small for sigma reconstruction")
    out = {}
    for kI in range(2, min(n, r + 1) + 1):
        for Ap in combinations(range(1, lay.m + 1), kI - 1):
            for I in combinations(range(1, n + 1), kI):
                acc = np.zeros_like(tau)
                for i in I:
                    Icut = tuple(x for x in I if x != i)
                    slot = lay.state_slot(Ap, Icut)
                    ratio = fld.values[slot] / tau
                    acc += _sign(_rank(I, i)) * derivative(ratio, fld.grid, i - 1, order)
                out[(Ap, I)] = acc
    return out


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class Mode:
    """One Fourier mode a * sin(2 pi k . x / L + phase) of a height or velocity."""

    component: int
    wave: tuple[int, ...]
    amplitude: float
    phase: float = 0.0


def fourier_series(modes, grid: Grid, m: int):
    """Values and analytic gradients of m components built from modes."""
    coords = grid.coordinates()
    u = np.zeros((m, *grid.sizes))
    du = np.zeros((m, grid.n, *grid.sizes))
    for mode in modes:
        if not 1 <= mode.component <= m:
            raise ConfigError(f"mode component {mode.component} out of range 1..{m}")
        if len(mode.wave) != grid.n:
            raise ConfigError("mode wave vector length must equal the grid dimension")
        k = np.array([2 * np.pi * w / L for w, L in zip(mode.wave, grid.lengths)])
        theta = mode.phase + np.einsum("j,j...->...", k, coords)
        a = mode.component - 1
        u[a] += mode.amplitude * np.sin(theta)
        for j in range(grid.n):
            du[a, j] += mode.amplitude * k[j] * np.cos(theta)
    return u, du


def graph_momentum(F: np.ndarray, V: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """D = h (I + F F^T)^{-1} V with h eliminated in closed form.

    Rejects data that is not comfortably time-like, i.e. whenever
    1 - V^T (I + F F^T)^{-1} V < margin anywhere.
    """
    m = F.shape[0]
    npts = int(np.prod(F.shape[2:])) if F.ndim > 2 else 1
    shape = F.shape[2:]
    Fr = F.reshape(m, F.shape[1], npts)
    Vr = V.reshape(m, npts)
    zeta = np.einsum("aip,bip->pab", Fr, Fr) + np.eye(m)
    W = np.linalg.solve(zeta, Vr.T[..., None])[..., 0]  # (npts, m)
    q = np.einsum("pa,ap->p", W, Vr)
    slack = 1.0 - q
    if np.min(slack) < margin:
        raise TimelikeError(
            f"initial data is not time-like enough: min(1 - V zeta^-1 V) = {np.min(slack):.6g} < {margin}"
        )
    # xi = det(I_n + F^T F) pointwise
    n = F.shape[1]
    FtF = np.einsum("aip,ajp->pij", Fr, Fr)
    xi = np.linalg.det(np.eye(n) + FtF)
    h = np.sqrt(xi) / np.sqrt(slack)
    D = (h[:, None] * W).T
    return D.reshape(m, *shape) if shape else D[:, 0]


def initial_fields(grid: Grid, m: int, x_modes, v_modes, margin: float = 0.05):
    """(W field, oracle (F, D), heights) from Fourier graph data.

    F comes from analytic differentiation and D from the velocity relation,
    so the lifted field sits on the constraint manifold up to rounding.
    """
    layout = enumerate_layout(m, grid.n)
    u, F = fourier_series(x_modes, grid, m)
    V, _ = fourier_series(v_modes, grid, m)
    D = graph_momentum(F, V, margin)
    U = lift(GraphData(F, D), layout)
    dim = layout.state_dim
    vals = np.empty((dim, *grid.sizes))
    vals[0] = 1.0 / U.h
    for a in range(m):
        vals[1 + a] = U.D[a] / U.h
    for i in range(grid.n):
        vals[1 + m + i] = U.P[i] / U.h
    for s, Mv in enumerate(U.M):
        vals[1 + m + grid.n + s] = Mv / U.h
    return GridField(grid, layout, vals), (F.copy(), np.asarray(D, dtype=float).copy()), u


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class DiagnosticsRow:
    t: float
    total_energy: float
    entropy_residual_L2: float
    lambda_Linf: float
    omega_Linf: float
    phi_Linf: float
    psi_Linf: float
    sigma_Linf: float
    oracle_F_err_Linf: float | None = None
    oracle_D_err_Linf: float | None = None


def _entropy_residual_field(fld: GridField, order: int) -> np.ndarray:
    """Discrete d_t S + div(entropy flux) along the actual evolution."""
    n = fld.layout.n
    v = fld.values
    tau = v[0]
    wt = rhs_augmented(fld, order)
    Q = np.sum(v[1:] * v[1:], axis=0)
    dS = 0.5 * (1.0 - Q / (tau * tau)) * wt[0]
    dS += np.sum(v[1:] * wt[1:], axis=0) / tau
    U = to_conservative(fld.state_view())
    res = dS
    for j in range(1, n + 1):
        res = res + derivative(np.asarray(_flux.entropy_flux(U, j)), fld.grid, j - 1, order)
    return res


def _oracle_errors(fld: GridField, F: np.ndarray, D: np.ndarray):
    lay = fld.layout
    tau = fld.values[0]
    errF = 0.0
    for a in range(1, lay.m + 1):
        for i in range(1, lay.n + 1):
            slot = lay.state_slot((a,), (i,))
            errF = max(errF, float(np.max(np.abs(fld.values[slot] / tau - F[a - 1, i - 1]))))
    errD = 0.0
    for a in range(lay.m):
        errD = max(errD, float(np.max(np.abs(fld.values[1 + a] / tau - D[a]))))
    return errF, errD


def diagnostics(fld: GridField, t: float, order: int = 2, oracle=None) -> DiagnosticsRow:
    vol = fld.grid.cell_volume
    tau = fld.values[0]
    energy = float(np.sum(1.0 / tau) * vol)
    res = constraint_residuals(fld.state_view())
    ent = _entropy_residual_field(fld, order)
    ent_l2 = float(np.sqrt(np.sum(ent * ent) * vol))
    sig = sigma_residual(fld, order)
    sig_linf = max((float(np.max(np.abs(v))) for v in sig.values()), default=0.0)
    row = DiagnosticsRow(
        t=t,
        total_energy=energy,
        entropy_residual_L2=ent_l2,
        lambda_Linf=res.lam_linf(),
        omega_Linf=res.omega_linf(),
        phi_Linf=res.phi_linf(),
        psi_Linf=res.psi_linf(),
        sigma_Linf=sig_linf,
    )
    if oracle is not None:
        row.oracle_F_err_Linf, row.oracle_D_err_Linf = _oracle_errors(fld, *oracle)
    return row


# ---------------------------------------------------------------------------
# spectral filter (off by default)


def _spectral_filter(values: np.ndarray, grid: Grid, strength: float) -> np.ndarray:
    if strength <= 0.0:
        return values
    out = values
    for axis in range(grid.n):
        ax = out.ndim - grid.n + axis
        size = grid.sizes[axis]
        k = np.fft.rfftfreq(size) * size
        damp = np.exp(-strength * (k / (size // 2)) ** 8)
        shape = [1] * out.ndim
        shape[ax] = damp.size
        out = np.fft.irfft(np.fft.rfft(out, axis=ax) * damp.reshape(shape), n=size, axis=ax)
    return out


# ---------------------------------------------------------------------------
# the time loop


@dataclass
class RunResult:
    rows: list
    snapshots: list
    field: GridField
    oracle: tuple | None
    dt: float
    steps: int


def _snapshot(fld: GridField, t: float) -> dict:
    lay = fld.layout
    return {
        "schema": 1,
        "t": t,
        "m": lay.m,
        "n": lay.n,
        "sizes": list(fld.grid.sizes),
        "lengths": list(fld.grid.lengths),
        "layout": [[list(A), list(I)] for A, I in lay._raw],
        "components": ["tau"]
        + [f"d_{a}" for a in range(1, lay.m + 1)]
        + [f"v_{i}" for i in range(1, lay.n + 1)]
        + [f"m_{list(A)}_{list(I)}" for A, I in lay._raw],
        "values": fld.values.tolist(),
    }


def run(
    fld: GridField,
    *,
    t_end: float,
    cfl: float = 0.4,
    order: int = 2,
    filter_strength: float = 0.0,
    output_cadence: float = 0.0,
    oracle=None,
    snapshot_cadence: float | None = None,
) -> RunResult:
    """Evolve the augmented field (and optionally the oracle) to t_end.

    The step is fixed from the CFL bound at t = 0 and rounded so the run
    lands exactly on t_end.  Diagnostics rows are emitted at t = 0, every
    output cadence, and at the end; a blow-up aborts with partial rows
    attached to the raised error.
    """
    if t_end <= 0 or not math.isfinite(t_end):
        raise ConfigError("t_end must be positive and finite")
    fld = fld.copy()
    dt0 = cfl_dt(fld, cfl)
    steps = max(1, math.ceil(t_end / dt0 - 1e-12))
    dt = t_end / steps
    out_every = steps if output_cadence <= 0 else max(1, round(output_cadence / dt))
    snap_every = None if snapshot_cadence is None else max(1, round(snapshot_cadence / dt))

    ora = None if oracle is None else (oracle[0].copy(), oracle[1].copy())
    rows = [diagnostics(fld, 0.0, order, ora)]
    snapshots = [] if snap_every is None else [(0.0, _snapshot(fld, 0.0))]

    def rhs_w(values):
        return rhs_augmented(GridField(fld.grid, fld.layout, values), order)

    t = 0.0
    for k in range(1, steps + 1):
        try:
            fld.values = rk4_step(fld.values, dt, rhs_w)
            if ora is not None:
                Fo, Do = ora
                m, nd = Fo.shape[0], Fo.shape[1]
                # pack (F, D) into one array so rk4_step applies unchanged
                y0 = np.concatenate([Fo.reshape(m * nd, -1), Do.reshape(m, -1)], axis=0)

                def rhs_pack(y):
                    dF, dD = rhs_original(
                        y[: m * nd].reshape(Fo.shape), y[m * nd :].reshape(Do.shape), fld.grid, order
                    )
                    return np.concatenate([dF.reshape(m * nd, -1), dD.reshape(m, -1)], axis=0)

                y1 = rk4_step(y0, dt, rhs_pack)
                ora = (y1[: m * nd].reshape(Fo.shape), y1[m * nd :].reshape(Do.shape))
            if filter_strength > 0.0:
                fld.values = _spectral_filter(fld.values, fld.grid, filter_strength)
                if ora is not None:
                    ora = (
                        _spectral_filter(ora[0], fld.grid, filter_strength),
                        _spectral_filter(ora[1], fld.grid, filter_strength),
                    )
        except BlowUpError:
            raise BlowUpError(t + dt, rows, snapshots) from None
        t = k * dt
        if k % out_every == 0 or k == steps:
            rows.append(diagnostics(fld, t, order, ora))
        if snap_every is not None and (k % snap_every == 0 or k == steps):
            snapshots.append((t, _snapshot(fld, t)))
    return RunResult(rows, snapshots, fld, ora, dt, steps)


# ---------------------------------------------------------------------------
# serialization of solver outputs


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                _fmt(x)
                for x in (
                    r.t,
                    r.total_energy,
                    r.entropy_residual_L2,
                    r.lambda_Linf,
                    r.omega_Linf,
                    r.phi_Linf,
                    r.psi_Linf,
                    r.sigma_Linf,
                    r.oracle_F_err_Linf,
                    r.oracle_D_err_Linf,
                )
            )
        )
    return "\n".join(lines) + "\n"


def snapshot_to_json(snap: dict) -> str:
    return json.dumps(snap, indent=1, sort_keys=True)
