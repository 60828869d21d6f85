"""Constant coefficients of the backstepping design.

Every virtual controller alpha_{i,k} is linear in x_i, so its Jacobian
(the xi table) and the map between x_i and the error coordinates z_i are
constant and can be tabulated once from the design parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SpecificationError


@dataclass(frozen=True)
class SubsystemGains:
    """Tabulated constants of one subsystem (arrays are 0-based).

    ``K[k]`` multiplies ``-z_{k+1}`` inside ``alpha_{k+1}``.
    ``xi[k, l]`` is ``d alpha_{k+1} / d x_{l+1}`` (lower triangular, row
    ``n-1`` is the Jacobian of the final virtual control).
    ``A @ x == B @ z`` and ``x == T @ z``.
    """

    K: np.ndarray
    xi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    T: np.ndarray
    M: np.ndarray  # z = M @ x
    frobenius: float

    @property
    def order(self) -> int:
        return len(self.K)


@dataclass(frozen=True)
class GainTable:
    subsystems: tuple[SubsystemGains, ...]

    def __getitem__(self, i: int) -> SubsystemGains:
        return self.subsystems[i]

    def __len__(self) -> int:
        return len(self.subsystems)

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(s.order for s in self.subsystems)


@dataclass(frozen=True)
class Lemma2Bounds:
    """Worst-case gaps between continuous and triggered error coordinates.

    ``dz[i][k]`` bounds ``|z_{i,k} - zbar_{i,k}|`` and ``dalpha[i][k]`` bounds
    ``|alpha_{i,k} - alphabar_{i,k}|`` (0-based).
    """

    dz: tuple[np.ndarray, ...]
    dalpha: tuple[np.ndarray, ...]


def _penalty(varpi1_i, varpi2_i, k):
    """sum_j (1/(4 w_{ij,k,1}) + 1/(4 w_{ij,k,2})) for 0-based channel k."""
    return sum(0.25 / w1[k] + 0.25 / w2[k] for w1, w2 in zip(varpi1_i, varpi2_i))


def subsystem_gains(c_i, varpi1_i, varpi2_i) -> SubsystemGains:
    """Tabulate one subsystem.

    ``c_i`` has one entry per channel, ``varpi*_i[j][k]`` one per
    (neighbour, channel) pair.
    """
    c_i = [float(v) for v in c_i]
    n = len(c_i)
    if n < 1:
        raise SpecificationError("subsystem needs at least one channel")
    for name, tab in (("varpi1", varpi1_i), ("varpi2", varpi2_i)):
        if any(len(row) != n for row in tab):
            raise SpecificationError(f"{name} rows must have {n} entries")
    values = list(c_i) + [v for row in varpi1_i for v in row] + [v for row in varpi2_i for v in row]
    if any(not v > 0 for v in values):
        raise SpecificationError("c and varpi parameters must be strictly positive")

    K = np.zeros(n)
    xi = np.zeros((n, n))
    # dz[k] = d z_{k+1} / d x
    dz = np.zeros((n, n))
    dz[0, 0] = 1.0
    for k in range(n):
        pen = _penalty(varpi1_i, varpi2_i, k)
        K[k] = c_i[k] + pen
        if k >= 1:
            K[k] += pen * float(np.sum(xi[k - 1, :k] ** 2))
        row = -K[k] * dz[k]
        if k >= 1:
            row = row - dz[k - 1]
            # + sum_l xi_{k-1,l} x_{l+1}
            row[1:k + 1] += xi[k - 1, :k]
        xi[k] = row
        if k + 1 < n:
            dz[k + 1] = -xi[k]
            dz[k + 1, k + 1] += 1.0

    A, B = _transform_matrices(K, xi)
    T = np.linalg.solve(A, B)
    return SubsystemGains(
        K=K, xi=xi, A=A, B=B, T=T, M=dz.copy(),
        frobenius=float(np.linalg.norm(T, "fro")),
    )


def _transform_matrices(K, xi):
    """Unit lower-triangular pair with ``A x = B z``.

    Row 1 is ``x_1 = z_1``; row 2 is ``x_2 = z_2 - K_1 z_1``; row ``k >= 3``
    rearranges ``z_k = x_k - alpha_{k-1}`` into
    ``x_k - sum_l xi_{k-2,l} x_{l+1} = z_k - K_{k-1} z_{k-1} - z_{k-2}``.
    """
    n = len(K)
    A = np.eye(n)
    B = np.eye(n)
    for k in range(1, n):
        B[k, k - 1] = -K[k - 1]
        if k >= 2:
            B[k, k - 2] = -1.0
            A[k, 1:k] = -xi[k - 2, :k - 1]
    return A, B


def compute_gain_table(c, varpi1, varpi2) -> GainTable:
    """Tabulate every subsystem from per-subsystem design parameters.

    ``c[i][k]``, ``varpi1[i][j][k]`` and ``varpi2[i][j][k]`` use 0-based indices.
    """
    N = len(c)
    if len(varpi1) != N or len(varpi2) != N:
        raise SpecificationError("varpi tables must have one entry per subsystem")
    for i in range(N):
        if len(varpi1[i]) != N or len(varpi2[i]) != N:
            raise SpecificationError(f"varpi tables of subsystem {i + 1} must cover all {N} subsystems")
    return GainTable(tuple(subsystem_gains(c[i], varpi1[i], varpi2[i]) for i in range(N)))


def gain_table_for(config) -> GainTable:
    return compute_gain_table(config.c, config.varpi1, config.varpi2)


def lemma1_constant(table: GainTable, i: int) -> float:
    """Frobenius norm of ``A_i^{-1} B_i`` (0-based ``i``), so ``||x_i|| <= const * ||z_i||``."""
    g = table[i]
    if abs(np.linalg.det(g.A)) < 1e-300:
        raise ContractError(f"transform matrix A_{i + 1} is singular")
    return g.frobenius


def lemma2_bounds(table: GainTable, dx) -> Lemma2Bounds:
    """Propagate state thresholds through the linear virtual controllers.

    ``dx[i][k]`` are the per-channel state thresholds (a ``TriggerThresholds``
    or anything indexable the same way). Input thresholds do not enter.
    """
    dx = getattr(dx, "dx", dx)
    if len(dx) != len(table):
        raise SpecificationError("thresholds must cover every subsystem")
    dzs, das = [], []
    for i, g in enumerate(table.subsystems):
        d = np.asarray(dx[i], dtype=float)
        if d.shape != (g.order,):
            raise SpecificationError(f"thresholds of subsystem {i + 1} must have {g.order} entries")
        if np.any(d < 0):
            raise SpecificationError("thresholds must be nonnegative")
        n = g.order
        dz = np.zeros(n)
        da = np.zeros(n)
        dz[0] = d[0]
        da[0] = g.K[0] * dz[0]
        for k in range(1, n):
            dz[k] = d[k] + da[k - 1]
            da[k] = g.K[k] * dz[k] + float(np.abs(g.xi[k - 1, :k]) @ d[1:k + 1]) + dz[k - 1]
        dzs.append(dz)
        das.append(da)
    return Lemma2Bounds(tuple(dzs), tuple(das))
