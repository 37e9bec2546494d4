import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from agents.services.population import AgentPopulation
from chemotaxis_lab.exceptions import DegenerateInputError, GridMismatchError, TruncationError
from kinetics.services.full_solver import InitialSpec, initialize, marginal
from kinetics.services.grid import FullGrid
from kinetics.services.limit_solver import initialize as initialize_limit
from signaling.services.pathway import PathwayParams
from signaling.services.signal_field import SignalField, SignalKind, SignalSpec
from .services import diagnostics
from .services.convergence import STUDY_COLUMNS, convergence_study, convergence_verdict
from .services.diagnostics import (
    ConcentrationRecord, ProfileRecord, ProfileSource, concentration_record, density_flux,
    fit_gaussian_variance, l1_distance, marginal_growth_rate, mass_center, phase_shift,
    second_moment_bound, signed_circular_distance,
)


def profile(rho, J=None, length=800.0):
    rho = np.asarray(rho, dtype=float)
    J = np.zeros_like(rho) if J is None else np.asarray(J, dtype=float)
    return ProfileRecord(0.0, rho, J, float(rho.sum() * length / rho.size), ProfileSource.LIMIT, length)


class DensityFluxTest(SimpleTestCase):
    """Test cases for profiles of the three models"""

    def setUp(self):
        self.signal = SignalField(SignalSpec())
        self.pathway = PathwayParams()
        self.grid = FullGrid.two_velocity(40, 800.0, 20.0, ny=32)

    def test_full_state_symmetric_in_v(self):
        """Test zero flux for a velocity-symmetric full state"""
        state = initialize(self.grid, self.signal, self.pathway)
        record = density_flux(state)
        self.assertEqual(record.source, ProfileSource.FULL)
        self.assertTrue(np.allclose(record.J, 0.0, atol=1e-15))
        self.assertAlmostEqual(record.mass, 1.0)
        self.assertAlmostEqual(record.rho.sum() * record.dx, record.mass)

    def test_limit_state_uniform(self):
        """Test a flat density for the uniform limit state"""
        state = initialize_limit(self.grid, self.signal)
        record = density_flux(state)
        self.assertEqual(record.source, ProfileSource.LIMIT)
        self.assertTrue(np.allclose(record.rho, 1.0 / 800.0, rtol=1e-12))
        self.assertTrue(np.allclose(record.J, 0.0))

    def test_flux_bounded_by_density(self):
        """Test |J| <= v_max rho cellwise"""
        state = initialize(self.grid, self.signal, self.pathway, InitialSpec(v_profile=[1.0, 3.0]))
        record = density_flux(state)
        self.assertTrue(np.all(np.abs(record.J) <= 20.0 * record.rho * (1 + 1e-12)))
        self.assertTrue(np.allclose(record.J, 10.0 * record.rho))

    def test_agent_population(self):
        """Test binned agent profiles and the missing-grid error"""
        pop = AgentPopulation.create(1000, self.signal, self.pathway, [-20.0, 20.0], seed=1)
        record = density_flux(pop, self.grid)
        self.assertEqual(record.source, ProfileSource.AGENTS)
        self.assertAlmostEqual(record.mass, 1.0)
        with self.assertRaises(ValidationError):
            density_flux(pop)

    def test_comoving_frame(self):
        """Test the wave-frame coordinate is sorted and wrapped"""
        record = profile(np.arange(1.0, 11.0), length=100.0)
        record.t = 25.0
        frame = record.comoving_frame(wave_speed=1.0)
        self.assertEqual(list(frame.columns), ['xi', 'rho', 'J'])
        self.assertTrue(frame['xi'].is_monotonic_increasing)
        self.assertAlmostEqual(frame['xi'].iloc[0], 0.0)
        self.assertEqual(frame['rho'].iloc[0], 3.0)


class ConcentrationTest(SimpleTestCase):
    """Test cases for blow-up statistics"""

    def setUp(self):
        self.signal = SignalField(SignalSpec())
        self.pathway = PathwayParams()
        self.grid = FullGrid.two_velocity(10, 800.0, 20.0, ny=128)

    def test_default_gaussian(self):
        """Test mean 0 and variance 1/G(0) of the default state"""
        record = concentration_record(initialize(self.grid, self.signal, self.pathway))
        self.assertAlmostEqual(record.y_mean, 0.0, places=12)
        self.assertAlmostEqual(record.y_variance * self.pathway.G0, 1.0, places=3)
        self.assertAlmostEqual(record.second_moment, record.y_variance, places=12)

    def test_dirac_state(self):
        """Test a second moment near zero for a Dirac-like state"""
        state = initialize(self.grid, self.signal, self.pathway, InitialSpec(dirac=True, y_mean=0.01))
        record = concentration_record(state)
        self.assertLess(record.second_moment, self.grid.dy ** 2)
        self.assertLess(record.y_variance, 1e-20)

    def test_fit_gaussian_variance(self):
        """Test the Gaussian fit on a sampled Gaussian"""
        y = np.linspace(-3, 3, 241)
        values = 7.0 * np.exp(-0.5 * (y - 0.2) ** 2 / 0.2)
        self.assertAlmostEqual(fit_gaussian_variance(y, values), 0.2, places=5)

    def test_fit_needs_mass(self):
        """Test the Gaussian fit on an empty profile"""
        with self.assertRaises(DegenerateInputError):
            fit_gaussian_variance(np.linspace(-1, 1, 11), np.zeros(11))

    def test_second_moment_bound(self):
        """Test both ends of the Gronwall bound"""
        self.assertAlmostEqual(second_moment_bound(2.0, 0.1, 4.0, 1.0, 0.1, 0.0), 2.0 + 0.01 / 16)
        self.assertAlmostEqual(second_moment_bound(2.0, 0.1, 4.0, 1.0, 0.1, 100.0), 0.01 / 16)
        with self.assertRaises(ValidationError):
            second_moment_bound(1.0, 0.1, 0.0, 1.0, 0.1, 1.0)

    def test_marginal_growth_rate(self):
        """Test the measured exponential growth constant"""
        trail = [ConcentrationRecord(t, 0.0, 0.0, 0.0, 2.0 * math.exp(0.3 * t)) for t in (0.0, 1.0, 2.0)]
        self.assertAlmostEqual(marginal_growth_rate(trail), 0.3)
        decaying = [ConcentrationRecord(t, 0.0, 0.0, 0.0, math.exp(-t)) for t in (0.0, 1.0)]
        self.assertEqual(marginal_growth_rate(decaying), 0.0)

    def test_weak_limit_moment(self):
        """Test the test-function moment against its limit value"""
        state = initialize(self.grid, self.signal, self.pathway, InitialSpec(y_mean=0.5))
        qbar = marginal(state)
        moment, limit = diagnostics.test_function_moment(state, self.signal, np.ones_like)
        self.assertTrue(np.allclose(moment, limit, rtol=1e-12))
        moment, limit = diagnostics.test_function_moment(state, self.signal, lambda m: m)
        self.assertTrue(np.allclose(moment - limit, self.pathway.epsilon * 0.5 * qbar, rtol=1e-6))


class MassCenterTest(SimpleTestCase):
    """Test cases for circular mass centres and phase shifts"""

    def test_single_spike(self):
        """Test the centre of a one-cell spike"""
        rho = np.zeros(100)
        rho[37] = 2.0
        self.assertAlmostEqual(mass_center(rho, 800.0), 37.5 * 8.0)

    def test_cosine_bump(self):
        """Test the centre of 1 + cos bump"""
        x = (np.arange(100) + 0.5) * 8.0
        rho = 1 + np.cos(2 * np.pi * (x - 212.0) / 800.0)
        self.assertAlmostEqual(mass_center(rho, 800.0), 212.0, places=9)

    def test_wrapping_bump(self):
        """Test a bump straddling the periodic boundary"""
        x = (np.arange(100) + 0.5) * 8.0
        rho = 1 + np.cos(2 * np.pi * (x - 796.0) / 800.0)
        self.assertAlmostEqual(mass_center(rho, 800.0), 796.0, places=9)

    def test_degenerate_profiles(self):
        """Test antipodal spikes, uniform and empty profiles"""
        rho = np.zeros(100)
        rho[10] = rho[60] = 1.0
        for bad in (rho, np.ones(100), np.zeros(100)):
            with self.assertRaises(DegenerateInputError):
                mass_center(bad, 800.0)

    def test_equivariance(self):
        """Test translation equivariance and scale invariance"""
        rng = np.random.default_rng(3)
        rho = rng.random(50) + np.linspace(0, 1, 50)
        center = mass_center(rho, 800.0)
        shifted = mass_center(np.roll(rho, 7), 800.0)
        self.assertAlmostEqual(signed_circular_distance(center, shifted, 800.0), 7 * 16.0, places=9)
        self.assertAlmostEqual(mass_center(5.0 * rho, 800.0), center, places=9)

    def test_phase_shift(self):
        """Test a density shifted against the ligand profile"""
        signal = SignalField(SignalSpec(wave_speed_u=0.4))
        x = (np.arange(100) + 0.5) * 8.0
        t = 30.0
        rho = np.asarray(signal.ligand(x - 48.0, t))
        self.assertAlmostEqual(phase_shift(rho, signal, t), 48.0, places=6)
        rho = np.asarray(signal.ligand(x + 96.0, t))
        self.assertAlmostEqual(phase_shift(rho, signal, t), -96.0, places=6)

    def test_phase_shift_degenerate(self):
        """Test a uniform density has no phase"""
        with self.assertRaises(DegenerateInputError):
            phase_shift(np.ones(100), SignalField(SignalSpec()), 0.0)

    def test_phase_shift_needs_wave(self):
        """Test the ramp signal is rejected"""
        ramp = SignalField(SignalSpec(kind=SignalKind.UNIFORM_RAMP, ramp_rate=0.5))
        with self.assertRaises(ValidationError):
            phase_shift(np.ones(10), ramp, 0.0)

    def test_signed_distance_antisymmetric(self):
        """Test d(a, b) = -d(b, a) away from the half-period"""
        for a, b in ((10.0, 790.0), (100.0, 300.0), (0.0, 399.0)):
            self.assertAlmostEqual(signed_circular_distance(a, b, 800.0), -signed_circular_distance(b, a, 800.0))


class L1DistanceTest(SimpleTestCase):
    """Test cases for relative L1 distances"""

    def test_identity(self):
        """Test zero distance to itself"""
        a = profile(np.linspace(1, 2, 20), np.linspace(-1, 1, 20))
        self.assertEqual(l1_distance(a, a), (0.0, 0.0))

    def test_disjoint_spikes(self):
        """Test distance 2 between disjoint unit spikes"""
        rho_a, rho_b = np.zeros(20), np.zeros(20)
        rho_a[3] = rho_b[12] = 1.0
        self.assertAlmostEqual(l1_distance(profile(rho_a), profile(rho_b)).rho, 2.0)

    def test_metric_properties(self):
        """Test symmetry and the triangle inequality on equal-mass profiles"""
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b, c = (profile(r / r.sum(), rng.standard_normal(30)) for r in rng.random((3, 30)))
            self.assertAlmostEqual(l1_distance(a, b).rho, l1_distance(b, a).rho)
            self.assertLessEqual(l1_distance(a, c).rho, l1_distance(a, b).rho + l1_distance(b, c).rho + 1e-12)
            self.assertLessEqual(l1_distance(a, c).J, l1_distance(a, b).J + l1_distance(b, c).J + 1e-12)

    def test_grid_mismatch(self):
        """Test profiles on different grids"""
        with self.assertRaises(GridMismatchError):
            l1_distance(profile(np.ones(20)), profile(np.ones(40)))
        with self.assertRaises(GridMismatchError):
            l1_distance(profile(np.ones(20)), profile(np.ones(20), length=400.0))


class ConvergenceStudyTest(SimpleTestCase):
    """Test cases for the epsilon sweep"""

    def test_verdict(self):
        """Test the monotone-and-halved rule"""
        self.assertTrue(convergence_verdict([0.4, 0.2, 0.1, 0.05]))
        self.assertFalse(convergence_verdict([0.4, 0.3, 0.25]))
        self.assertFalse(convergence_verdict([0.4, 0.1, 0.15, 0.05]))
        self.assertFalse(convergence_verdict([0.4]))

    def test_eps_list_must_decrease(self):
        """Test rejection of an increasing epsilon list"""
        signal = SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0))
        grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=32)
        with self.assertRaises(ValidationError):
            convergence_study(signal, PathwayParams(), grid, [0.1, 0.2], t_end=1.0)

    def test_failure_keeps_error_type(self):
        """Test a failing full run surfaces its own error class and epsilon"""
        signal = SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0))
        grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=32)
        with self.assertRaises(TruncationError) as ctx:
            convergence_study(signal, PathwayParams(), grid, [0.4, 0.2], t_end=1.0, truncation_tol=1e-300)
        self.assertEqual(ctx.exception.epsilon, 0.4)

    def test_uniform_signal(self):
        """Test distances at round-off for a uniform signal"""
        signal = SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0))
        grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=32)
        study = convergence_study(signal, PathwayParams(), grid, [0.4, 0.2], t_end=9.0)
        frame = study.to_frame()
        self.assertEqual(list(frame.columns), STUDY_COLUMNS)
        self.assertEqual(list(frame['epsilon']), [0.4, 0.2])
        self.assertTrue(np.all(frame['l1_rho'] < 1e-10))
        self.assertTrue(np.all(frame['second_moment_max'] > 0))
        verdict = study.verdict()
        self.assertIn(verdict['verdict'], ('PASS', 'FAIL'))
        self.assertLess(verdict['mass_drift_max'], 1e-10)
        self.assertEqual(sorted(verdict['trails']), ['0.2', '0.4'])
