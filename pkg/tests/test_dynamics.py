import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gainlab import dynamics
from gainlab.dynamics import (GRAVITY, RK4, SEMI_IMPLICIT, State, Trajectory,
                              chain, point_mass, two_link)


def make_gravity_arm(link_masses=(1.0, 0.5), link_lengths=(0.5, 0.4), **kw):
    kw.setdefault("gravity_enabled", True)
    return two_link(link_masses=link_masses, link_lengths=link_lengths, **kw)


# ---------------------------------------------------------------------------
# Independent Lagrangian oracle for the 2-link arm.
#
# Energies come from tip-position kinematics only; all Lagrangian
# derivatives are taken by central finite differences. No inertia,
# Coriolis, or gravity closed form is reused.


def _tip_positions(arm, q):
    l1, l2 = arm.link_lengths
    p1 = l1 * np.array([math.cos(q[0]), math.sin(q[0])])
    p2 = p1 + l2 * np.array([math.cos(q[0] + q[1]), math.sin(q[0] + q[1])])
    return p1, p2


def _tip_jacobians(arm, q, h=1e-6):
    J1 = np.zeros((2, 2))
    J2 = np.zeros((2, 2))
    for j in range(2):
        dq = np.zeros(2)
        dq[j] = h
        p1p, p2p = _tip_positions(arm, q + dq)
        p1m, p2m = _tip_positions(arm, q - dq)
        J1[:, j] = (p1p - p1m) / (2 * h)
        J2[:, j] = (p2p - p2m) / (2 * h)
    return J1, J2


def _lagrangian(arm, q, qd):
    m1, m2 = arm.link_masses
    J1, J2 = _tip_jacobians(arm, q)
    v1 = J1 @ qd
    v2 = J2 @ qd
    T = 0.5 * m1 * v1 @ v1 + 0.5 * m2 * v2 @ v2 + 0.5 * np.sum(arm.armature * qd**2)
    V = 0.0
    if arm.gravity_enabled:
        p1, p2 = _tip_positions(arm, q)
        V = GRAVITY * (m1 * p1[1] + m2 * p2[1])
    return T - V


def lagrangian_oracle_accel(arm, q, qd, tau, h=1e-4):
    """q_dd from d/dt(dL/dqd) - dL/dq = tau, all by finite differences.

    The kinetic energy is quadratic in qd, so the inner central
    differences are exact up to roundoff; the outer steps use a larger h
    to keep that roundoff from being amplified.
    """

    def momentum(q, qd):
        p = np.zeros(2)
        for i in range(2):
            d = np.zeros(2)
            d[i] = h
            p[i] = (_lagrangian(arm, q, qd + d) - _lagrangian(arm, q, qd - d)) / (2 * h)
        return p

    M = np.zeros((2, 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = h
        M[:, j] = (momentum(q, qd + d) - momentum(q, qd - d)) / (2 * h)
    dp_dq = np.zeros((2, 2))
    dL_dq = np.zeros(2)
    for j in range(2):
        d = np.zeros(2)
        d[j] = h
        dp_dq[:, j] = (momentum(q + d, qd) - momentum(q - d, qd)) / (2 * h)
        dL_dq[j] = (_lagrangian(arm, q + d, qd) - _lagrangian(arm, q - d, qd)) / (2 * h)
    rhs = tau - dp_dq @ qd + dL_dq
    return np.linalg.solve(M, rhs)


class TestForwardDynamics:
    def test_equilibrium_point_mass(self):
        p = point_mass(1.0)
        qdd = dynamics.forward_dynamics(p, dynamics.rest_state(p), tau=[0.0])
        assert_allclose(qdd, [0.0])

    def test_newtons_law(self):
        p = point_mass(2.0)
        qdd = dynamics.forward_dynamics(p, dynamics.rest_state(p), tau=[4.0])
        assert_allclose(qdd, [2.0])

    def test_armature_adds_inertia(self):
        p = point_mass(1.0, armature=1.0)
        qdd = dynamics.forward_dynamics(p, dynamics.rest_state(p), tau=[4.0])
        assert_allclose(qdd, [2.0])

    @pytest.mark.parametrize("gravity", [False, True])
    def test_two_link_matches_lagrangian_oracle(self, gravity):
        arm = two_link(link_masses=(1.2, 0.7), link_lengths=(0.6, 0.45),
                       armature=[0.05, 0.02], gravity_enabled=gravity)
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.uniform(-math.pi, math.pi, 2)
            qd = rng.uniform(-2.0, 2.0, 2)
            tau = rng.uniform(-5.0, 5.0, 2)
            got = dynamics.forward_dynamics(arm, State(q=q, q_dot=qd), tau)
            want = lagrangian_oracle_accel(arm, q, qd, tau)
            rel = np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want))
            assert rel < 1e-6

    def test_external_torque_channel(self):
        p = point_mass(1.0)
        qdd = dynamics.forward_dynamics(p, dynamics.rest_state(p), tau=[1.0],
                                        f_ext=[2.0])
        assert_allclose(qdd, [3.0])


class TestFriction:
    def test_zero_friction_zero_vector(self):
        p = chain([1.0, 1.0])
        assert_allclose(dynamics.friction_torque(p, [1.0, -2.0], [0.5, 0.5]),
                        [0.0, 0.0])

    def test_moving_joint_law(self):
        p = point_mass(1.0, static_friction=0.5, dynamic_friction_ratio=0.4,
                       viscous_friction=0.1)
        tau_f = dynamics.friction_torque(p, [1.0], [0.0])
        assert_allclose(tau_f, [-0.3])

    def test_stiction_holds_below_limit(self):
        p = point_mass(1.0, static_friction=0.5)
        assert_allclose(dynamics.friction_torque(p, [0.0], [0.3]), [-0.3])

    def test_stiction_saturates(self):
        p = point_mass(1.0, static_friction=0.5)
        assert_allclose(dynamics.friction_torque(p, [0.0], [0.8]), [-0.5])


class TestStep:
    def test_zero_dynamics_only_time_advances(self):
        p = point_mass(1.0)
        s0 = dynamics.rest_state(p, q=[0.3])
        for integ in (SEMI_IMPLICIT, RK4):
            s1 = dynamics.step(p, s0, [0.0], 1e-3, integrator=integ)
            assert_allclose(s1.q, s0.q)
            assert_allclose(s1.q_dot, s0.q_dot)
            assert s1.t == pytest.approx(1e-3)

    def test_rk4_energy_conservation(self):
        # Undamped oscillation driven by the plant's own conservative
        # force (gravity pendulum); a torque held over the step cannot
        # conserve energy by construction, so the oracle runs on the
        # smooth internal dynamics.
        arm = make_gravity_arm()
        m1, m2 = arm.link_masses
        l1, l2 = arm.link_lengths

        def energy(s):
            y1 = l1 * math.sin(s.q[0])
            y2 = y1 + l2 * math.sin(s.q[0] + s.q[1])
            return (dynamics.kinetic_energy(arm, s)
                    + GRAVITY * (m1 * y1 + m2 * y2))

        s = State(q=[0.4, -0.2], q_dot=[0.0, 0.0])
        e0 = energy(s)
        scale = abs(e0) + dynamics.kinetic_energy(arm, s) + 1.0
        for _ in range(1000):
            s = dynamics.step(arm, s, [0.0, 0.0], 1e-3, integrator=RK4)
            assert abs(energy(s) - e0) / scale < 1e-6

    def test_integrator_convergence_orders(self):
        # Damped oscillator realized with in-plant smooth forces
        # (pendulum gravity + viscous friction). Richardson ratios give
        # the observed order; semi-implicit >= 1 and RK4 >= 4.
        arm = make_gravity_arm(viscous_friction=[0.3, 0.2])
        s0 = State(q=[0.5, -0.3], q_dot=[0.4, 0.1])
        horizon = 0.5

        def final_q(dt, integ):
            s = s0
            for _ in range(int(round(horizon / dt))):
                s = dynamics.step(arm, s, [0.0, 0.0], dt, integrator=integ)
            return s.q

        ref = final_q(6.25e-5, RK4)
        orders = {}
        for integ in (SEMI_IMPLICIT, RK4):
            dts = [2e-3, 1e-3, 5e-4]
            sols = [final_q(dt, integ) for dt in dts]
            e = [np.linalg.norm(sol - ref) for sol in sols]
            orders[integ] = math.log2(e[0] / e[1])
            # both step sizes must keep shrinking the error
            assert e[2] < e[1] < e[0]
        # Richardson estimates approach the nominal order from below as
        # dt -> 0; allow the usual measurement slack.
        assert orders[SEMI_IMPLICIT] >= 1.0 - 0.03
        assert orders[RK4] >= 4.0 - 0.03

    def test_semi_implicit_and_rk4_converge_to_same_trajectory(self):
        arm = make_gravity_arm(viscous_friction=[0.3, 0.2])
        s0 = State(q=[0.5, -0.3], q_dot=[0.0, 0.0])

        def final_q(dt, integ):
            s = s0
            for _ in range(int(round(0.5 / dt))):
                s = dynamics.step(arm, s, [0.0, 0.0], dt, integrator=integ)
            return s.q

        gap_coarse = np.linalg.norm(final_q(2e-3, SEMI_IMPLICIT) - final_q(2e-3, RK4))
        gap_fine = np.linalg.norm(final_q(2.5e-4, SEMI_IMPLICIT) - final_q(2.5e-4, RK4))
        assert gap_fine < gap_coarse / 4.0

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_nonfinite_state_raises_with_step_index(self):
        p = point_mass(1.0)
        s = dynamics.rest_state(p)
        with pytest.raises(dynamics.SimulationDivergedError):
            dynamics.step(p, s, [1e308], 1e3, integrator=SEMI_IMPLICIT)

    def test_dt_must_be_positive(self):
        p = point_mass(1.0)
        with pytest.raises(ValueError):
            dynamics.step(p, dynamics.rest_state(p), [0.0], 0.0)


class TestInvariants:
    def test_decoupled_chain_reduces_to_point_masses_bitwise(self):
        masses = [1.0, 2.5, 0.7]
        ch = chain(masses, viscous_friction=[0.1, 0.2, 0.0],
                   static_friction=[0.3, 0.0, 0.1],
                   dynamic_friction_ratio=[0.5, 0.0, 1.0])
        rng = np.random.default_rng(7)
        taus = rng.normal(scale=2.0, size=(200, 3))
        s_chain = State(q=np.zeros(3), q_dot=np.zeros(3))
        singles = []
        for j in range(3):
            pj = point_mass(masses[j], viscous_friction=ch.viscous_friction[j],
                            static_friction=ch.static_friction[j],
                            dynamic_friction_ratio=ch.dynamic_friction_ratio[j])
            singles.append((pj, State(q=[0.0], q_dot=[0.0])))
        for k in range(200):
            s_chain = dynamics.step(ch, s_chain, taus[k], 1e-3)
            for j, (pj, sj) in enumerate(singles):
                sj = dynamics.step(pj, sj, [taus[k, j]], 1e-3)
                singles[j] = (pj, sj)
                assert s_chain.q[j] == sj.q[0]
                assert s_chain.q_dot[j] == sj.q_dot[0]

    def test_two_link_inertia_spd_on_random_grid(self):
        arm = two_link(link_masses=(1.5, 0.4), link_lengths=(0.7, 0.3),
                       armature=[0.01, 0.01])
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = rng.uniform(-math.pi, math.pi, 2)
            M = dynamics.mass_matrix(arm, q)
            assert_allclose(M, M.T)
            assert np.all(np.linalg.eigvalsh(M) > 0)

    @pytest.mark.parametrize("friction", [
        dict(),
        dict(viscous_friction=0.8),
        dict(static_friction=0.9, dynamic_friction_ratio=0.7),
        dict(static_friction=1.0, dynamic_friction_ratio=0.3,
             viscous_friction=0.5),
    ])
    def test_passivity_kinetic_energy_nonincreasing(self, friction):
        p = point_mass(1.0, **friction)
        s = State(q=[0.0], q_dot=[1.3])
        ke = dynamics.kinetic_energy(p, s)
        for _ in range(2000):
            s = dynamics.step(p, s, [0.0], 1e-3)
            ke_next = dynamics.kinetic_energy(p, s)
            assert ke_next <= ke + 1e-9
            ke = ke_next

    def test_determinism_across_runs(self):
        arm = make_gravity_arm(viscous_friction=[0.1, 0.1])
        rng = np.random.default_rng(13)
        taus = rng.normal(size=(100, 2))

        def run():
            s = State(q=[0.2, 0.1], q_dot=[0.0, 0.0])
            out = []
            for k in range(100):
                s = dynamics.step(arm, s, taus[k], 1e-3)
                out.append(s.q.copy())
            return np.array(out)

        assert np.array_equal(run(), run())

    def test_fast_stepper_matches_step_bitwise(self):
        p = chain([1.0, 2.5], armature=[0.1, 0.0], static_friction=[0.5, 0.2],
                  dynamic_friction_ratio=[0.4, 0.9], viscous_friction=[0.1, 0.3])
        advance = dynamics.decoupled_stepper(p)
        rng = np.random.default_rng(5)
        s = State(q=rng.normal(size=2), q_dot=rng.normal(size=2))
        q, qd = s.q.copy(), s.q_dot.copy()
        for _ in range(500):
            tau = rng.normal(scale=2.0, size=2)
            s = dynamics.step(p, s, tau, 1e-3)
            q, qd = advance(q, qd, tau, 1e-3)
            assert np.array_equal(s.q, q)
            assert np.array_equal(s.q_dot, qd)


class TestValidation:
    def test_bad_mass_rejected(self):
        with pytest.raises(ValueError):
            point_mass(0.0)

    def test_bad_friction_ratio_rejected(self):
        with pytest.raises(ValueError):
            point_mass(1.0, dynamic_friction_ratio=1.5)

    def test_state_must_be_finite(self):
        with pytest.raises(ValueError):
            State(q=[math.nan], q_dot=[0.0])

    def test_dimension_mismatch_rejected(self):
        p = chain([1.0, 1.0])
        with pytest.raises(ValueError):
            dynamics.forward_dynamics(p, dynamics.rest_state(p), tau=[1.0, 2.0, 3.0])


class TestTrajectoryIO:
    def _demo_traj(self):
        t = np.arange(6) / 100.0
        rng = np.random.default_rng(1)
        return Trajectory(sample_rate=100.0, t=t, q=rng.normal(size=(6, 2)),
                          q_dot=rng.normal(size=(6, 2)),
                          q_des=rng.normal(size=(6, 2)),
                          tau=rng.normal(size=(6, 2)))

    def test_header_contract(self):
        text = self._demo_traj().to_csv()
        assert text.splitlines()[0] == \
            "t,q0,q1,qd0,qd1,qdes0,qdes1,tau0,tau1"

    def test_round_trip_9_significant_digits(self):
        traj = self._demo_traj()
        back = Trajectory.from_csv(traj.to_csv())
        assert back.sample_rate == pytest.approx(traj.sample_rate)
        for name in ("q", "q_dot", "q_des", "tau"):
            assert_allclose(getattr(back, name), getattr(traj, name), rtol=1e-8)

    def test_external_force_channel_round_trip(self):
        rng = np.random.default_rng(2)
        t = np.arange(5) / 100.0
        traj = Trajectory(sample_rate=100.0, t=t, q=rng.normal(size=(5, 1)),
                          q_dot=rng.normal(size=(5, 1)),
                          q_des=rng.normal(size=(5, 1)),
                          tau=rng.normal(size=(5, 1)),
                          f_ext=rng.normal(size=(5, 1)))
        text = traj.to_csv()
        assert text.splitlines()[0].endswith(",fext0")
        back = Trajectory.from_csv(text)
        assert back.f_ext is not None
        assert_allclose(back.f_ext, traj.f_ext, rtol=1e-8)

    def test_nonuniform_spacing_rejected(self):
        t = np.array([0.0, 0.01, 0.03])
        with pytest.raises(ValueError):
            Trajectory(sample_rate=100.0, t=t, q=np.zeros((3, 1)),
                       q_dot=np.zeros((3, 1)), q_des=np.zeros((3, 1)),
                       tau=np.zeros((3, 1)))

    def test_plant_config_loading(self):
        text = """
[plant]
kind = chain
mass = 1.0, 2.0
armature = 0.1, 0.0
static_friction = 0.2, 0.2
gravity_enabled = true
torque_limit = 50.0
"""
        p = dynamics.load_plant(text)
        assert p.kind == dynamics.CHAIN
        assert p.n_joints == 2
        assert_allclose(p.mass, [1.0, 2.0])
        assert_allclose(p.armature, [0.1, 0.0])
        assert p.gravity_enabled
        assert p.torque_limit == 50.0
