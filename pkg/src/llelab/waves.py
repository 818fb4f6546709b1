"""Stationary periodic waves: constant states, Newton iteration, continuation.

The governing field equation, in the real pair formulation, is

    u_t = J(-beta*u_xx - alpha*u) - u + N(u) + (F, 0),   J = [[0,-1],[1,0]],

with cubic nonlinearity N(u) = |u|^2 J u; in the complex packing u_r + i*u_i
the right-hand side is -beta*i*u_xx - (1+i*alpha)*u + i*|u|^2*u + F. Waves are
found by Newton iteration with a phase-fixing border (the translation mode is
in the kernel of the linearization at every solution) and by continuation in
the forcing from the patterned branch that bifurcates off the modulationally
unstable constant state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContinuationError, NewtonError, SingularJacobianError
from .spectral import (
    PeriodicGrid,
    RealPairField,
    dealias_modes,
    norm,
    spectral_derivative,
)

__all__ = [
    "WaveParameters",
    "WaveProfile",
    "homogeneous_states",
    "turing_guess",
    "newton_wave",
    "continuation",
    "stationary_residual",
]

NONCONSTANT_TOL = 1e-6


@dataclass(frozen=True)
class WaveParameters:
    """Detuning alpha, dispersion sign beta in {-1,+1}, forcing F >= 0, period T."""

    alpha: float
    beta: int
    forcing: float
    period: float

    def __post_init__(self):
        if self.beta not in (-1, 1):
            raise ValueError("beta must be -1 or +1")
        if self.forcing < 0:
            raise ValueError("forcing must be nonnegative")
        if not self.period > 0:
            raise ValueError("period must be positive")


@dataclass
class WaveProfile:
    """A converged stationary profile on one period, with derivatives."""

    params: WaveParameters
    profile: RealPairField
    derivative: RealPairField
    second_derivative: RealPairField
    residual_norm: float

    @property
    def satisfies_h1(self):
        """Nonconstant check: a valid wave has a nontrivial translation mode."""
        scale = 1.0 + norm(self.profile, "Linf")
        return norm(self.derivative, "Linf") > NONCONSTANT_TOL * scale

    def grid(self):
        return self.profile.grid


def complex_rhs(values, grid, params, dealias=True):
    """Right-hand side of the evolution equation in the complex packing.

    The cubic term is filtered by the 2/3 rule when dealias=True; this filtered
    operator is the discrete ground truth shared by the Newton solver and the
    time stepper, so converged waves are genuine fixed points of the stepper.
    """
    k = grid.wavenumbers
    vhat = np.fft.fft(values)
    uxx = np.fft.ifft(-(k**2) * vhat)
    cubic = 1j * np.abs(values) ** 2 * values
    if dealias:
        mask = dealias_modes(grid)
        cubic = np.fft.ifft(mask * np.fft.fft(cubic))
    return (
        -params.beta * 1j * uxx
        - (1.0 + 1j * params.alpha) * values
        + cubic
        + params.forcing
    )


def stationary_residual(f, params, dealias=True):
    """Residual field of the stationary equation for a candidate profile."""
    vals = complex_rhs(f.as_complex(), f.grid, params, dealias=dealias)
    return RealPairField.from_complex(f.grid, vals)


def homogeneous_states(params):
    """All spatially constant stationary states, as complex values.

    They satisfy F^2 = rho*(1+(alpha-rho)^2) with rho = |u|^2 and
    u = F/(1+i*(alpha-rho)); sorted by rho, residual-checked to 1e-12.
    """
    alpha, F = params.alpha, params.forcing
    if F == 0.0:
        return [0j]
    # rho^3 - 2*alpha*rho^2 + (1+alpha^2)*rho - F^2 = 0
    roots = np.roots([1.0, -2.0 * alpha, 1.0 + alpha**2, -(F**2)])
    states = []
    for rho in roots:
        if abs(rho.imag) > 1e-9 * (1.0 + abs(rho)):
            continue
        rho = float(rho.real)
        if rho < 0:
            continue
        u = F / (1.0 + 1j * (alpha - rho))
        # polish with a few scalar Newton steps on g(rho) = rho*(1+(alpha-rho)^2) - F^2
        for _ in range(5):
            g = rho * (1.0 + (alpha - rho) ** 2) - F**2
            dg = 1.0 + (alpha - rho) ** 2 - 2.0 * rho * (alpha - rho)
            if dg == 0:
                break
            rho = rho - g / dg
        u = F / (1.0 + 1j * (alpha - rho))
        states.append(u)
    states.sort(key=lambda u: abs(u) ** 2)
    # drop duplicates from nearly multiple roots
    unique = []
    for u in states:
        if not any(abs(u - v) < 1e-8 * (1.0 + abs(u)) for v in unique):
            unique.append(u)
    return unique


def constant_state_block(params, rho, k):
    """The 2x2 linearization block about a constant state with |u|^2 = rho at
    wavenumber k: J*S - I with S the symmetric cubic-coefficient matrix."""
    alpha, beta = params.alpha, params.beta
    u = params.forcing / (1.0 + 1j * (alpha - rho)) if params.forcing else 0j
    a, b = u.real, u.imag
    m = beta * k**2 - alpha + rho
    S = np.array([[m + 2 * a * a, 2 * a * b], [2 * a * b, m + 2 * b * b]])
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return J @ S - np.eye(2)


def turing_guess(params, num_points, amplitude=0.25, state=None):
    """Constant state plus the most relevant patterned seed at the grid period.

    The seed direction is the eigenvector of the constant-state block at the
    fundamental wavenumber k = 2*pi/T associated with the larger real part.
    """
    grid = PeriodicGrid(num_points, params.period, 1)
    if state is None:
        state = homogeneous_states(params)[-1]
    rho = abs(state) ** 2
    k = 2.0 * np.pi / params.period
    block = constant_state_block(params, rho, k)
    lam, vecs = np.linalg.eig(block)
    idx = int(np.argmax(lam.real))
    v = vecs[:, idx].real
    nv = np.linalg.norm(v)
    if nv < 1e-12:  # complex pair; fall back to the first component direction
        v = np.array([1.0, 0.0])
    else:
        v = v / nv
    x = grid.x
    data = np.stack(
        [
            state.real + amplitude * v[0] * np.cos(k * x),
            state.imag + amplitude * v[1] * np.cos(k * x),
        ]
    )
    return RealPairField(grid, data)


def _second_derivative_matrix(grid):
    n = grid.num_points
    mult = -(grid.wavenumbers**2)
    return np.fft.ifft(mult[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real


def _dealias_matrix(grid):
    n = grid.num_points
    mask = dealias_modes(grid).astype(float)
    return np.fft.ifft(mask[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real


def stationary_jacobian(f, params, dealias=True):
    """Exact Jacobian of the (optionally dealiased) discrete stationary map."""
    grid = f.grid
    n = grid.num_points
    ur, ui = f.data
    D2 = _second_derivative_matrix(grid)
    # J * (-beta*D2 - alpha) - I, acting blockwise on (u_r, u_i)
    K = -params.beta * D2 - params.alpha * np.eye(n)
    lin = np.zeros((2 * n, 2 * n))
    lin[:n, n:] = -K
    lin[n:, :n] = K
    lin -= np.eye(2 * n)
    # cubic part: J * [[3ur^2+ui^2, 2*ur*ui], [2*ur*ui, ur^2+3ui^2]]
    A = 3 * ur**2 + ui**2
    B = 2 * ur * ui
    C = ur**2 + 3 * ui**2
    nl = np.zeros((2 * n, 2 * n))
    nl[:n, :n] = np.diag(-B)
    nl[:n, n:] = np.diag(-C)
    nl[n:, :n] = np.diag(A)
    nl[n:, n:] = np.diag(B)
    if dealias:
        P = _dealias_matrix(grid)
        P2 = np.zeros((2 * n, 2 * n))
        P2[:n, :n] = P
        P2[n:, n:] = P
        nl = P2 @ nl
    return lin + nl


def _bordered_solve(J, border, rhs, rhs_c, cond_limit=1e13):
    n = J.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = J
    A[:n, n] = border
    A[n, :n] = border
    sol, *_ = np.linalg.lstsq(A, np.concatenate([rhs, [rhs_c]]), rcond=None)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularJacobianError(
            f"bordered Jacobian numerically singular (condition estimate {cond:.3e})",
            condition_estimate=float(cond),
        )
    return sol[:n]


def newton_wave(guess, params, tol=1e-11, max_iter=40, dealias=True):
    """Newton iteration for a stationary profile with a phase-fixing border.

    The border row <phi'_guess, u - guess> = 0 removes the translation null
    direction of the Jacobian. Converges to tol or to the double-precision
    residual floor, whichever is reached first (the floor sits around
    |u| * k_max^2 * eps and must stay below 1e-10 for a valid profile).
    Raises NewtonError on divergence and SingularJacobianError when the
    bordered matrix degenerates (folds).
    """
    if guess.grid.num_cells != 1:
        raise ValueError("newton_wave expects a one-cell guess")
    grid = guess.grid
    u = guess.copy()
    border_field = spectral_derivative(guess, 1)
    border = border_field.data.ravel() * grid.spacing
    if np.abs(border).max() < 1e-14:
        # constant guess: fix the first component mean instead
        border = np.zeros(2 * grid.num_points)
        border[0] = 1.0
    history = []
    for _ in range(max_iter):
        res = stationary_residual(u, params, dealias=dealias)
        rnorm = norm(res, "L2")
        history.append(rnorm)
        if rnorm <= tol:
            break
        if len(history) >= 3 and rnorm <= 1e-10 and rnorm > 0.5 * history[-2]:
            break  # roundoff plateau below the acceptance bound
        J = stationary_jacobian(u, params, dealias=dealias)
        cons = float(border @ (u.data.ravel() - guess.data.ravel()))
        delta = _bordered_solve(J, border, -res.data.ravel(), -cons)
        u = RealPairField(grid, u.data + delta.reshape(2, -1))
        if not u.is_finite:
            raise NewtonError("Newton iterate became nonfinite", residual_history=history)
    else:
        raise NewtonError(
            f"Newton did not converge in {max_iter} iterations "
            f"(last residual {history[-1]:.3e})",
            residual_history=history,
        )
    res = stationary_residual(u, params, dealias=dealias)
    return WaveProfile(
        params=params,
        profile=u,
        derivative=spectral_derivative(u, 1),
        second_derivative=spectral_derivative(u, 2),
        residual_norm=norm(res, "L2"),
    )


def continuation(start, target_forcing, steps, tol=1e-12, dealias=True):
    """Path-following in the forcing with a linear (tangent) predictor.

    Runs `steps` Newton solves on the way to target_forcing; re-raises solver
    failures as ContinuationError carrying the failing step index.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    params = start.params
    if target_forcing == params.forcing:
        return start
    forcings = np.linspace(params.forcing, target_forcing, steps + 1)[1:]
    profile = start
    for index, F in enumerate(forcings):
        dF = F - profile.params.forcing
        try:
            J = stationary_jacobian(profile.profile, params=profile.params, dealias=dealias)
            border = profile.derivative.data.ravel() * profile.grid().spacing
            dudF_rhs = np.zeros(2 * profile.grid().num_points)
            dudF_rhs[: profile.grid().num_points] = -1.0  # d(residual)/dF = e1
            tangent = _bordered_solve(J, border, dudF_rhs, 0.0)
            predicted = RealPairField(
                profile.grid(), profile.profile.data + dF * tangent.reshape(2, -1)
            )
            new_params = WaveParameters(params.alpha, params.beta, float(F), params.period)
            profile = newton_wave(predicted, new_params, tol=tol, dealias=dealias)
        except (NewtonError, SingularJacobianError) as exc:
            raise ContinuationError(
                f"continuation failed at step {index} (F={F:.6g}): {exc}",
                step_index=index,
                cause=exc,
            ) from exc
    return profile
