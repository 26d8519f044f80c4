"""Fixed-step Euler-Maruyama integration, optionally recorded on an autodiff tape.

The integrator is generic over the state representation: a numpy array gives a
fast float path for plain simulation, while a list of ``Value`` nodes unrolls
the whole solve onto a tape so that losses on the trajectory can be
backpropagated to any learned drift/diffusion parameters
(discretize-then-optimize).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Value, absval

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "SDEProblem",
    "IntegrationError",
    "sample_brownian",
    "em_step",
    "integrate",
    "export_trajectory_csv",
]


class IntegrationError(RuntimeError):
    """Raised when a step produces a non-finite state; carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.n_steps > 0 and not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps if self.n_steps else 0.0

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)


@dataclass
class BrownianPath:
    """Pre-sampled Wiener increments, one row per step, Normal(0, dt) entries."""

    increments: np.ndarray  # shape (n_steps, dim)
    seed: int

    @property
    def dim(self) -> int:
        return self.increments.shape[1] if self.increments.ndim == 2 else 0


def sample_brownian(grid: TimeGrid, dim: int, seed: int) -> BrownianPath:
    """i.i.d. Normal(0, dt) increments; dim=0 degenerates to a noiseless ODE."""
    if dim < 0:
        raise ValueError("dim must be nonnegative")
    rng = np.random.default_rng(seed)
    if dim == 0 or grid.n_steps == 0:
        return BrownianPath(np.zeros((grid.n_steps, dim)), seed)
    inc = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.n_steps, dim))
    return BrownianPath(inc, seed)


@dataclass
class SDEProblem:
    """Drift/diffusion fields combining a predefined game term with neural residuals.

    With the neural fields absent the dynamics are ``dx = b dt + sigma dB``;
    with them present, ``dx = (b + mu) dt + |sigma_theta| dB``. All callables
    take ``(t, x, mean_field, control)`` and return a state-shaped sequence.
    """

    base_drift: Callable
    noise_dim: int = 0
    fixed_diffusion: Optional[Callable] = None
    neural_drift: Optional[Callable] = None
    neural_diffusion: Optional[Callable] = None


def _comp(x):
    return x.v if isinstance(x, Value) else x


def _check_finite(x, step: int):
    if isinstance(x, np.ndarray):
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at step {step}", step)
    else:
        for c in x:
            if not np.isfinite(_comp(c)):
                raise IntegrationError(f"non-finite state at step {step}", step)


def em_step(x, t, dt, problem: SDEProblem, mean_field, control, dB, tape=None):
    """One Euler-Maruyama update: x + (b + mu) dt + |sigma| dB.

    Nonnegativity of the learned noise scale is enforced by absolute value at
    the point of use, keeping the network output scale-free.
    """
    b = problem.base_drift(t, x, mean_field, control)
    mu = problem.neural_drift(t, x, mean_field, control) if problem.neural_drift else None
    if problem.neural_diffusion is not None:
        sig = problem.neural_diffusion(t, x, mean_field, control)
        sig = [absval(s) for s in sig] if not isinstance(sig, np.ndarray) else np.abs(sig)
    elif problem.fixed_diffusion is not None:
        sig = problem.fixed_diffusion(t, x, mean_field, control)
    else:
        sig = None

    if isinstance(x, np.ndarray):
        new = x + np.asarray(b) * dt
        if mu is not None:
            new = new + np.asarray(mu) * dt
        if sig is not None and dB is not None:
            new = new + np.asarray(sig) * dB
        return new

    new = []
    for k, xk in enumerate(x):
        upd = xk + b[k] * dt
        if mu is not None:
            upd = upd + mu[k] * dt
        if sig is not None and dB is not None:
            upd = upd + sig[k] * dB[k]
        new.append(upd)
    return new


def integrate(problem: SDEProblem, x0, grid: TimeGrid, path: Optional[BrownianPath],
              mean_field_fn=None, control_fn=None, tape=None):
    """Integrate over the grid, returning the state at every grid point.

    The mean field is recomputed from the current state before each step
    (forward-in-time coupling, no lookahead). Errors carry the step index.
    """
    if path is not None and path.increments.shape[0] not in (0, grid.n_steps):
        raise ValueError("Brownian path length does not match the grid")
    times = grid.times()
    traj = [x0]
    x = x0
    for k in range(grid.n_steps):
        t = times[k]
        mf = mean_field_fn(k, t, x) if mean_field_fn else None
        ctrl = control_fn(k, t, x) if control_fn else None
        dB = path.increments[k] if (path is not None and path.increments.size) else None
        x = em_step(x, t, grid.dt, problem, mf, ctrl, dB, tape)
        _check_finite(x, k)
        traj.append(x)
    return traj


def export_trajectory_csv(path, grid: TimeGrid, trajectory, component_names) -> None:
    """CSV with header ``t,<components...>``, one row per grid point."""
    times = grid.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(component_names))
        for t, state in zip(times, trajectory):
            if isinstance(state, np.ndarray):
                row = [repr(float(c)) for c in state]
            else:
                row = [repr(float(_comp(c))) for c in state]
            writer.writerow([repr(float(t))] + row)
