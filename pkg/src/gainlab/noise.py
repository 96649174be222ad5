"""Gain-dependent attenuation of stochastic action errors.

The perturbation of a PD-tracked trajectory under i.i.d. position-target
errors delta_a obeys

    m dq_dd + Kd dq_d + Kp dq = Kp delta_a(t),

a second-order system driven through the stiffness. For white-noise
errors of intensity sigma^2 the steady-state position error variance is
sigma^2 Kp / (2 Kd) -- independent of the mass. The classical mean-square
response E[y^2] = sigma_n^2 / (4 zeta omega_n^3) of the unit-coefficient
oscillator supplies the closed-form chain, and a seeded Monte Carlo
integrator verifies it. Per-trial noise streams derive from the root seed
by trial index, so results are reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .control import GainConfig
from .dynamics import PlantParams
from .retarget import RetargetedDemo, replay

CONTINUOUS = "continuous-limit"
HELD = "held"


class UnboundedVarianceError(ValueError):
    """Kd = 0 gives an unbounded steady-state variance."""


class PerturbationDivergedError(RuntimeError):
    """Perturbation state diverged across the burn-in (unstable setup)."""


@dataclass(frozen=True)
class NoiseSpec:
    """Action-noise description.

    ``sigma`` is the noise intensity: in the continuous-limit convention
    its units are rad*s^(1/2) and per-step draws have variance
    sigma^2/delta for hold interval delta; consumers that perturb held
    commands directly (open-loop replay) read it as the per-command std
    in rad. ``rate`` is the hold rate f (Hz) in held mode.
    """

    sigma: float
    mode: str = CONTINUOUS
    rate: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.mode not in (CONTINUOUS, HELD):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == HELD and not (self.rate and self.rate > 0):
            raise ValueError("held mode needs a positive rate")


@dataclass(frozen=True)
class VariancePrediction:
    """Theorem-level steady-state variance and attenuation factor."""

    var_pos: np.ndarray
    attenuation_factor: np.ndarray


def predict_variance(gains: GainConfig, sigma: float) -> VariancePrediction:
    """Steady-state position error variance sigma^2 Kp / (2 Kd) per joint."""
    if np.any(gains.kd <= 0):
        raise UnboundedVarianceError("Kd must be positive for a bounded variance")
    ratio = gains.kp / (2.0 * gains.kd)
    return VariancePrediction(var_pos=sigma**2 * ratio,
                              attenuation_factor=np.sqrt(ratio))


def crandall_oracle(omega_n: float, zeta: float, sigma_n: float) -> float:
    """Mean-square response sigma_n^2 / (4 zeta omega_n^3) of the driven oscillator."""
    if not (zeta > 0 and omega_n > 0):
        raise ValueError("zeta and omega_n must be positive")
    return sigma_n**2 / (4.0 * zeta * omega_n**3)


def effective_error(gains: GainConfig, eps_pi: float) -> np.ndarray:
    """RMS state deviation sqrt(Kp/(2 Kd)) * eps_pi induced by action RMS error."""
    if eps_pi < 0:
        raise ValueError("eps_pi must be non-negative")
    return np.sqrt(gains.kp / (2.0 * gains.kd)) * eps_pi


def time_constant(omega_n: float, zeta: float) -> float:
    """Slowest decay time: 1/(zeta wn) when zeta <= 1, else slow-pole based."""
    if zeta <= 1.0:
        return 1.0 / (zeta * omega_n)
    slow = omega_n * (zeta - math.sqrt(zeta * zeta - 1.0))
    return 1.0 / slow


def trial_rng(root_seed: int, trial: int) -> np.random.Generator:
    """Per-trial stream derived from the root seed by trial index only."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(trial,)))


@dataclass(frozen=True)
class VarianceEstimate:
    """Empirical steady-state variance with a batch-means standard error."""

    value: float
    stderr: float
    n_trials: int
    analytic: float


def simulate_perturbation(gains: GainConfig, m: float, noise: NoiseSpec,
                          dt: float, horizon: float, n_trials: int) -> VarianceEstimate:
    """Monte Carlo steady-state variance of the perturbation dynamics.

    Integrates m dq_dd + Kd dq_d + Kp dq = Kp delta_a with semi-implicit
    Euler; delta_a is redrawn every hold interval delta (= dt in
    continuous-limit mode, 1/rate in held mode) with per-draw variance
    sigma^2/delta. The first 10 time constants are discarded, and the
    remaining per-trial time averages of dq^2 give the estimate; the
    standard error comes from batch means across trials.
    """
    kp = float(np.atleast_1d(gains.kp)[0])
    kd = float(np.atleast_1d(gains.kd)[0])
    if m <= 0 or dt <= 0 or n_trials < 1:
        raise ValueError("m, dt must be positive and n_trials >= 1")
    omega_n = math.sqrt(kp / m)
    zeta = kd / (2.0 * math.sqrt(m * kp))
    if omega_n * dt >= 0.1:
        raise ValueError(f"dt too coarse: omega_n*dt = {omega_n * dt:.3f} >= 0.1")
    tau_c = time_constant(omega_n, zeta)
    if horizon < 20.0 * tau_c:
        warnings.warn(f"horizon {horizon:.1f} s covers < 20 time constants "
                      f"({tau_c:.2f} s each)", stacklevel=2)
    if noise.mode == HELD:
        delta = 1.0 / noise.rate
        hold = int(round(delta / dt))
        if abs(hold * dt - delta) > 1e-9 * delta:
            raise ValueError("hold interval must be an integer multiple of dt")
    else:
        delta = dt
        hold = 1
    n_steps = int(round(horizon / dt))
    burn = min(n_steps - 1, int(round(10.0 * tau_c / dt)))
    kept = n_steps - burn
    if kept <= 0:
        raise ValueError("horizon shorter than the burn-in window")
    step_sigma = noise.sigma / math.sqrt(delta)
    analytic = noise.sigma**2 * kp / (2.0 * kd)

    rngs = [trial_rng(noise.seed, i) for i in range(n_trials)]
    q = np.zeros(n_trials)
    v = np.zeros(n_trials)
    acc = np.zeros(n_trials)
    c_kp = dt * kp / m
    c_kd = dt * kd / m
    guard = 1e6 * (1.0 + analytic + noise.sigma**2)
    n_draws = -(-n_steps // hold)
    chunk_draws = 4096
    step_idx = 0
    for start in range(0, n_draws, chunk_draws):
        m_draws = min(chunk_draws, n_draws - start)
        block = np.stack([r.normal(0.0, step_sigma, size=m_draws) for r in rngs],
                         axis=1)
        for i in range(m_draws):
            a = block[i]
            for _ in range(min(hold, n_steps - step_idx)):
                v += c_kp * (a - q) - c_kd * v
                q += dt * v
                if step_idx >= burn:
                    acc += q * q
                step_idx += 1
        if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > guard:
            raise PerturbationDivergedError(
                f"perturbation diverged by step {step_idx} (|dq| > {guard:.1e})")
    trial_means = acc / kept
    value = float(np.mean(trial_means))
    stderr = float(np.std(trial_means, ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else float("inf")
    return VarianceEstimate(value=value, stderr=stderr, n_trials=n_trials,
                            analytic=analytic)


@dataclass(frozen=True)
class NoisyReplayResult:
    """Open-loop replay under held action noise, aggregated over trials."""

    goal_rate: float
    rms_deviation: float
    per_trial_rms: np.ndarray
    clean_goal_reached: bool


def noisy_openloop_replay(retargeted: RetargetedDemo, plant: PlantParams,
                          noise: NoiseSpec, n_trials: int,
                          decimation: int = 1) -> NoisyReplayResult:
    """Replay held commands with i.i.d. per-command noise, per trial.

    ``noise`` must be in held mode at the post-decimation command rate;
    sigma is the per-command std in rad. Reports the goal-reach rate and
    the mean (over trials) RMS joint-position deviation from the clean
    replay.
    """
    if noise.mode != HELD:
        raise ValueError("open-loop replay needs held-mode noise")
    eff_rate = retargeted.command_rate / decimation
    if abs(noise.rate - eff_rate) > 1e-9 * eff_rate:
        raise ValueError(f"noise rate {noise.rate} Hz != command rate {eff_rate} Hz")
    clean_traj, clean_rep = replay(retargeted, decimation, plant)
    n_cmd = retargeted.q_des[::decimation].shape[0]
    n_joints = retargeted.q_des.shape[1]
    rms = np.empty(n_trials)
    reached = 0
    for trial in range(n_trials):
        rng = trial_rng(noise.seed, trial)
        pert = rng.normal(0.0, noise.sigma, size=(n_cmd, n_joints))
        traj, rep = replay(retargeted, decimation, plant, command_noise=pert)
        m = min(traj.n_samples, clean_traj.n_samples)
        rms[trial] = math.sqrt(float(np.mean((traj.q[:m] - clean_traj.q[:m]) ** 2)))
        reached += rep.goal_reached
    return NoisyReplayResult(goal_rate=reached / n_trials,
                             rms_deviation=float(np.mean(rms)),
                             per_trial_rms=rms,
                             clean_goal_reached=clean_rep.goal_reached)
