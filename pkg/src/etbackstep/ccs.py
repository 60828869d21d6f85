"""Decentralized adaptive backstepping under continuous state feedback.

All functions take a 0-based subsystem index ``i`` and the local state
``x_i`` only; nothing here reads another subsystem's signals.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericError
from .gains import GainTable, SubsystemGains


def backstep(g: SubsystemGains, x_i) -> tuple[np.ndarray, np.ndarray]:
    """Error coordinates and virtual controllers, evaluated recursively.

    Returns ``(z, alpha)`` with ``z[k] = x[k] - alpha[k-1]`` and
    ``alpha[k] = -K[k] z[k] - z[k-1] + sum_l xi[k-1, l] x[l+1]``.
    """
    x = np.asarray(x_i, dtype=float)
    n = g.order
    if x.shape != (n,):
        raise ContractError(f"local state must have {n} entries, got shape {x.shape}")
    z = np.empty(n)
    alpha = np.empty(n)
    z[0] = x[0]
    alpha[0] = -g.K[0] * z[0]
    for k in range(1, n):
        z[k] = x[k] - alpha[k - 1]
        alpha[k] = -g.K[k] * z[k] - z[k - 1] + float(g.xi[k - 1, :k] @ x[1:k + 1])
    return z, alpha


def transform_z(table: GainTable, i: int, x_i) -> np.ndarray:
    return backstep(table[i], x_i)[0]


def virtual_alpha(table: GainTable, i: int, k: int, x_i) -> float:
    """Virtual control of channel ``k`` (0-based, so ``k = n_i - 1`` is the last)."""
    g = table[i]
    if not 0 <= k < g.order:
        raise ContractError(f"channel index {k} out of range for order {g.order}")
    return float(backstep(g, x_i)[1][k])


def _regressor(spec, i, x_i):
    phi = np.asarray(spec.phi[i](x_i), dtype=float).reshape(-1)
    psi = float(spec.psi[i](x_i))
    if not (np.all(np.isfinite(phi)) and math.isfinite(psi)):
        raise NumericError("non-finite regressor or drift", (i + 1, tuple(np.asarray(x_i).tolist())))
    return phi, psi


def control_u(table: GainTable, spec, i: int, x_i, theta_hat_i) -> float:
    """``u_i = alpha_{i,n_i} - phi_i(x_i)^T theta_hat_i - psi_i(x_i)``."""
    _, alpha = backstep(table[i], x_i)
    phi, psi = _regressor(spec, i, x_i)
    return float(alpha[-1] - phi @ np.asarray(theta_hat_i, dtype=float) - psi)


def adapt_rate(spec, i: int, x_i, theta_hat_i, z_last: float, sigma: float, gamma) -> np.ndarray:
    """Sigma-modified gradient update ``Gamma (-sigma theta_hat + phi(x) z_n)``."""
    phi, _ = _regressor(spec, i, x_i)
    th = np.asarray(theta_hat_i, dtype=float)
    return np.asarray(gamma, dtype=float) @ (-sigma * th + phi * z_last)
