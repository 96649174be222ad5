"""Gain-parameterized PD/impedance controllers and gain-regime tools.

The PD law tau = Kp (q_des - q) + Kd (q_dot_des - q_dot) [+ g(q)] acts as
a virtual spring-damper: at rest under a constant external torque the
displacement satisfies tau_ext = Kp (q - q_des). Per-joint second-order
parameters omega_n = sqrt(Kp/m), zeta = Kd / (2 sqrt(m Kp)) classify each
gain cell into the compliant/stiff x overdamped/underdamped quadrants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .dynamics import PlantParams, State, _as_vector

REGIMES = ("CO", "SO", "CU", "SU")


class NotSettledError(RuntimeError):
    """Compliance probe did not reach steady state within settle_time."""


@dataclass(frozen=True)
class GainConfig:
    """Diagonal joint stiffness/damping gains.

    ``gravity_comp_scale`` scales the compensation term; 1.0 is perfect
    compensation, 0.0 reproduces an uncompensated controller even when
    ``gravity_comp`` is set.
    """

    kp: np.ndarray
    kd: np.ndarray
    gravity_comp: bool = False
    gravity_comp_scale: float = 1.0

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if kd.size == 1 and kp.size > 1:
            kd = np.full(kp.size, kd[0])
        if kp.size == 1 and kd.size > 1:
            kp = np.full(kd.size, kp[0])
        if kp.shape != kd.shape:
            raise ValueError("kp and kd must have matching shapes")
        if np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("gains must be positive elementwise")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @property
    def n_joints(self) -> int:
        return self.kp.size

    def expand(self, n: int) -> "GainConfig":
        """Broadcast scalar gains to n joints."""
        if self.n_joints == n:
            return self
        if self.n_joints != 1:
            raise ValueError(f"cannot expand {self.n_joints}-joint gains to {n}")
        return GainConfig(kp=np.full(n, self.kp[0]), kd=np.full(n, self.kd[0]),
                          gravity_comp=self.gravity_comp,
                          gravity_comp_scale=self.gravity_comp_scale)


def pd_torque(gains: GainConfig, state: State, q_des, q_dot_des=None,
              gravity_term=None) -> np.ndarray:
    """PD control torque; q_dot_des defaults to zero (deploy-style -Kd*q_dot)."""
    n = state.n_joints
    g = gains.expand(n)
    q_des = _as_vector(q_des, n)
    qd_des = np.zeros(n) if q_dot_des is None else _as_vector(q_dot_des, n)
    tau = g.kp * (q_des - state.q) + g.kd * (qd_des - state.q_dot)
    if g.gravity_comp and gravity_term is not None:
        tau = tau + g.gravity_comp_scale * _as_vector(gravity_term, n)
    return tau


def limit_torque(plant: PlantParams, tau, tau_prev, dt: float) -> np.ndarray:
    """Clamp to +-torque_limit, then rate-limit against the previous torque."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = plant.n_joints
    tau = np.clip(_as_vector(tau, n), -plant.torque_limit, plant.torque_limit)
    tau_prev = _as_vector(tau_prev, n)
    max_delta = plant.torque_rate_limit * dt
    return tau_prev + np.clip(tau - tau_prev, -max_delta, max_delta)


@dataclass(frozen=True)
class GainRegime:
    """Per-joint natural frequency, damping ratio, and quadrant labels."""

    omega_n: np.ndarray
    zeta: np.ndarray
    labels: tuple[str, ...]

    @property
    def label(self) -> str:
        return self.labels[0] if len(set(self.labels)) == 1 else "mixed"


def classify_regime(gains: GainConfig, m_eff, stiffness_split: float) -> GainRegime:
    """Quadrant from (zeta >= 1 -> overdamped, Kp >= split -> stiff)."""
    m = np.atleast_1d(np.asarray(m_eff, dtype=float))
    if np.any(m <= 0):
        raise ValueError("m_eff must be positive")
    g = gains.expand(max(gains.n_joints, m.size))
    if m.size == 1:
        m = np.full(g.n_joints, m[0])
    omega_n = np.sqrt(g.kp / m)
    zeta = g.kd / (2.0 * np.sqrt(m * g.kp))
    labels = tuple(
        ("S" if kp >= stiffness_split else "C") + ("O" if z >= 1.0 else "U")
        for kp, z in zip(g.kp, zeta))
    return GainRegime(omega_n=omega_n, zeta=zeta, labels=labels)


@dataclass(frozen=True)
class GainGrid:
    """Log-spaced Kp x Kd grid; cells enumerate row-major, Kd outer."""

    kp_values: np.ndarray
    kd_values: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.kp_values, dtype=float)
        kd = np.asarray(self.kd_values, dtype=float)
        for name, v in (("kp_values", kp), ("kd_values", kd)):
            if v.size == 0 or np.any(np.diff(v) <= 0):
                raise ValueError(f"{name} must be non-empty and strictly increasing")
        object.__setattr__(self, "kp_values", kp)
        object.__setattr__(self, "kd_values", kd)

    @property
    def n_cells(self) -> int:
        return self.kp_values.size * self.kd_values.size

    def cells(self):
        """Yield (kp, kd) pairs; Kd outer, Kp inner (the CSV row order)."""
        for kd in self.kd_values:
            for kp in self.kp_values:
                yield float(kp), float(kd)

    def config(self, kp: float, kd: float, **kw) -> GainConfig:
        return GainConfig(kp=kp, kd=kd, **kw)

    @property
    def stiffness_split(self) -> float:
        """Geometric median of the Kp axis (median in log space)."""
        logs = np.log(self.kp_values)
        return float(np.exp(np.median(logs)))

    def corners(self) -> dict[str, tuple[float, float]]:
        """Regime-corner cells: compliant=low Kp, overdamped=high Kd."""
        kp_lo, kp_hi = self.kp_values[0], self.kp_values[-1]
        kd_lo, kd_hi = self.kd_values[0], self.kd_values[-1]
        return {"CO": (kp_lo, kd_hi), "SO": (kp_hi, kd_hi),
                "CU": (kp_lo, kd_lo), "SU": (kp_hi, kd_lo)}


def default_grid() -> GainGrid:
    """7x7 grid: Kp log2-spaced over [16, 1024], Kd over [2, 128]."""
    return GainGrid(kp_values=16.0 * 2.0 ** np.arange(7),
                    kd_values=2.0 * 2.0 ** np.arange(7))


def effective_stiffness(plant: PlantParams, gains: GainConfig, probe_force,
                        settle_time: float, policy=None, dt: float = 1e-3,
                        q0=None, vel_tol: float = 1e-8) -> float:
    """Measure K_eff = |F| / |dx| under a constant probe torque.

    Simulates the closed loop (PD on ``q_des`` from ``policy``, default
    holding the start pose) with a constant external torque until
    ``settle_time``, then requires the velocity norm to be below
    ``vel_tol``. ``policy(state) -> q_des`` lets scripted reactive
    policies change the composed-loop stiffness.
    """
    n = plant.n_joints
    probe = _as_vector(probe_force, n)
    if not np.any(probe != 0.0):
        raise ValueError("probe_force must be non-zero")
    start = dynamics.rest_state(plant, q=q0)
    q_ref = start.q.copy()

    def q_des_of(state):
        return q_ref if policy is None else _as_vector(policy(state), n)

    def torque_fn(state, k):
        grav = dynamics.gravity_torque(plant, state.q)
        return pd_torque(gains, state, q_des_of(state), gravity_term=grav)

    n_steps = int(round(settle_time / dt))
    _, final = dynamics.simulate(plant, start, torque_fn, dt, n_steps,
                                 f_ext_fn=lambda s, k: probe)
    if np.linalg.norm(final.q_dot) > vel_tol:
        raise NotSettledError(
            f"velocity norm {np.linalg.norm(final.q_dot):.3e} > {vel_tol:.1e} "
            f"after {settle_time} s")
    dx = np.linalg.norm(final.q - start.q)
    if dx == 0.0:
        raise NotSettledError("no displacement under probe force")
    return float(np.linalg.norm(probe) / dx)
