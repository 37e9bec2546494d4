import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.integrate import solve_ivp

from chemotaxis_lab.exceptions import GridMismatchError, StabilityError
from kinetics.services.grid import FullGrid
from signaling.services.pathway import PathwayParams, adaptation_f
from signaling.services.signal_field import LogSensingParams, SignalField, SignalKind, SignalSpec
from .services.population import AgentPopulation, bin_population, max_stable_dt, run, step


def uniform_signal(**kwargs):
    return SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0, **kwargs))


class AgentPopulationTest(SimpleTestCase):
    """Test cases for population setup and bookkeeping"""

    def setUp(self):
        self.signal = SignalField(SignalSpec())
        self.pathway = PathwayParams(H=4.0)

    def test_create(self):
        """Test initial positions, velocities and methylation"""
        pop = AgentPopulation.create(5000, self.signal, self.pathway, [-20.0, 20.0], seed=7)
        self.assertEqual(pop.count, 5000)
        self.assertTrue(np.all((pop.x >= 0) & (pop.x < 800.0)))
        self.assertTrue(set(np.unique(pop.v)) <= {-20.0, 20.0})
        self.assertTrue(np.all(pop.m >= 0))
        y = pop.y_offsets(self.signal)
        self.assertAlmostEqual(np.var(y) * self.pathway.G0, 1.0, delta=0.1)

    def test_agent_view(self):
        """Test the per-agent record"""
        pop = AgentPopulation.create(10, self.signal, self.pathway, [-20.0, 20.0], seed=1)
        agent = pop.agent(3)
        self.assertEqual(agent.x, pop.x[3])
        self.assertIn(agent.v, (-20.0, 20.0))

    def test_invalid_population(self):
        """Test validation of counts and seeds"""
        with self.assertRaises(ValidationError):
            AgentPopulation.create(0, self.signal, self.pathway, [-20.0, 20.0])
        with self.assertRaises(ValidationError):
            AgentPopulation.create(10, self.signal, self.pathway, [-20.0, 20.0], seed=-1)

    def test_thinning_bound(self):
        """Test that Lambda_max * dt above 0.2 is rejected"""
        pop = AgentPopulation.create(10, self.signal, self.pathway, [-20.0, 20.0], seed=1)
        self.assertAlmostEqual(max_stable_dt(self.pathway), 0.2 / 20.14)
        with self.assertRaises(StabilityError) as ctx:
            step(pop, self.signal, 0.1)
        self.assertEqual(ctx.exception.stage, 'thinning')

    def test_determinism(self):
        """Test identical trajectories for identical seeds"""
        results = []
        for seed in (42, 42, 43):
            pop = AgentPopulation.create(500, self.signal, self.pathway.replace(noise_enabled=True),
                                         [-20.0, 20.0], seed=seed)
            run(pop, self.signal, t_end=0.5, dt=0.005)
            results.append(pop.to_frame())
        self.assertTrue(results[0].equals(results[1]))
        self.assertFalse(results[0].equals(results[2]))

    def test_count_is_constant(self):
        """Test that no agents are created or lost"""
        pop = AgentPopulation.create(300, self.signal, self.pathway, [-20.0, 20.0], seed=5)
        run(pop, self.signal, t_end=0.2, dt=0.005)
        self.assertEqual(pop.count, 300)
        self.assertAlmostEqual(pop.t, 0.2)
        self.assertEqual(pop.step_index, 40)


class MethylationDynamicsTest(SimpleTestCase):
    """Test cases for the methylation update"""

    def test_collapse_matches_scalar_ode(self):
        """Test deterministic relaxation against a per-sample ODE solve"""
        pathway = PathwayParams(H=4.0, epsilon=0.1)
        signal = uniform_signal()
        pop = AgentPopulation.create(2000, signal, pathway, [-20.0, 20.0], seed=3)
        r0 = pop.m - signal.methylation(pop.x, 0.0)
        t_end = 0.05
        run(pop, signal, t_end=t_end, dt=0.005)

        oracle = solve_ivp(
            lambda t, r: adaptation_f(r, pathway) / pathway.epsilon, (0.0, t_end), r0, rtol=1e-10, atol=1e-14,
        )
        r = pop.m - signal.methylation(pop.x, t_end)
        self.assertAlmostEqual(np.var(r) / np.var(oracle.y[:, -1]), 1.0, delta=1e-2)

    def test_small_offsets_decay_linearly(self):
        """Test the variance halving time epsilon*ln2/(2 G(0)) near y = 0"""
        pathway = PathwayParams(H=4.0, epsilon=0.1)
        signal = uniform_signal()
        pop = AgentPopulation.create(2000, signal, pathway, [-20.0, 20.0], seed=3, y_variance=0.01 / pathway.G0)
        r0 = pop.m - signal.methylation(pop.x, 0.0)
        t_end = 0.05
        run(pop, signal, t_end=t_end, dt=0.005)
        r = pop.m - signal.methylation(pop.x, t_end)
        halvings = t_end / (pathway.epsilon * math.log(2) / (2 * pathway.G0))
        self.assertAlmostEqual(np.var(r0) / np.var(r) / 2 ** halvings, 1.0, delta=0.05)

    def test_noise_stationary_variance(self):
        """Test the Gaussian y-profile with variance 1/G(0)"""
        pathway = PathwayParams(H=4.0, epsilon=0.05, noise_enabled=True)
        signal = uniform_signal()
        pop = AgentPopulation.create(100000, signal, pathway, [-20.0, 20.0], seed=11, y_variance=0.0)
        run(pop, signal, t_end=0.2, dt=0.005)
        y = pop.y_offsets(signal)
        self.assertAlmostEqual(abs(np.mean(y)) * math.sqrt(pathway.G0), 0.0, delta=0.02)
        self.assertAlmostEqual(np.var(y) * pathway.G0, 1.0, delta=0.05)

    def test_reflection_keeps_methylation_nonnegative(self):
        """Test m >= 0 over 10^6 agent-steps near m = 0"""
        signal = SignalField(SignalSpec(kind=SignalKind.STATIC, S0=1e-3, SA=0.0), LogSensingParams(m0=0.01))
        pathway = PathwayParams(H=4.0, epsilon=0.05, noise_enabled=True)
        pop = AgentPopulation.create(10000, signal, pathway, [-20.0, 20.0], seed=2)
        reflected = False
        for _ in range(100):
            step(pop, signal, 0.005)
            self.assertTrue(np.all(pop.m >= 0))
            reflected = reflected or bool(np.any(pop.m < 0.005))
        self.assertTrue(reflected)


class TumblingTest(SimpleTestCase):
    """Test cases for the tumble decision"""

    def test_first_tumble_times_are_exponential(self):
        """Test geometric first-tumble steps for a constant rate"""
        pathway = PathwayParams(tau=1e15, epsilon=1.0)
        signal = uniform_signal()
        pop = AgentPopulation.create(20000, signal, pathway, [-20.0, 20.0], seed=9)
        first = np.full(pop.count, np.nan)
        dt = 0.5
        while np.isnan(first).any() and pop.t < 300.0:
            step(pop, signal, dt)
            first = np.where(np.isnan(first) & pop.tumbled, pop.t, first)
        self.assertFalse(np.isnan(first).any())
        expected = dt / -math.expm1(-pathway.z0 * dt)
        self.assertAlmostEqual(np.mean(first) / expected, 1.0, delta=0.03)

    def test_resampled_velocities_are_uniform(self):
        """Test that tumbles redraw velocities from the whole set"""
        pathway = PathwayParams(tau=1e15, epsilon=1.0)
        signal = uniform_signal()
        pop = AgentPopulation.create(20000, signal, pathway, [-20.0, 0.0, 20.0], seed=4)
        pop.v_index[:] = 0
        run(pop, signal, t_end=60.0, dt=0.5)
        shares = np.bincount(pop.v_index, minlength=3) / pop.count
        self.assertTrue(np.allclose(shares, 1 / 3, atol=0.02))


class BinningTest(SimpleTestCase):
    """Test cases for density and flux binning"""

    def setUp(self):
        self.grid = FullGrid.two_velocity(50, 800.0, 20.0)
        self.signal = SignalField(SignalSpec())
        self.pathway = PathwayParams()

    def make(self, n, seed=0):
        return AgentPopulation.create(n, self.signal, self.pathway, [-20.0, 20.0], seed=seed)

    def test_single_spike(self):
        """Test agents at one position split between both directions"""
        pop = self.make(100)
        pop.x[:] = 401.0
        pop.v_index[:] = np.arange(100) % 2
        rho, J = bin_population(pop, self.grid)
        self.assertEqual(np.count_nonzero(rho), 1)
        self.assertAlmostEqual(rho.sum() * self.grid.dx, 1.0)
        self.assertAlmostEqual(J[25], 0.0)

    def test_flux_of_right_movers(self):
        """Test J = v0 rho when every agent moves right"""
        pop = self.make(1000)
        pop.v_index[:] = 1
        rho, J = bin_population(pop, self.grid)
        self.assertTrue(np.allclose(J, 20.0 * rho))

    def test_uniform_agents(self):
        """Test a flat density within Monte Carlo noise"""
        pop = self.make(100000, seed=8)
        rho, _ = bin_population(pop, self.grid)
        expected = 1.0 / 800.0
        tolerance = 5 * expected / math.sqrt(100000 / 50)
        self.assertTrue(np.all(np.abs(rho - expected) < tolerance))

    def test_grid_mismatch(self):
        """Test binning on a grid of another length"""
        with self.assertRaises(GridMismatchError):
            bin_population(self.make(10), FullGrid.two_velocity(50, 400.0, 20.0))
