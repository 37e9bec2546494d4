import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from chemotaxis_lab.exceptions import DomainError, UnsupportedOrderError
from .services.pathway import (
    G, PathwayParams, activity, adaptation_f, epsilon_from_timescales, g_bounds,
    limit_kernel, limit_kernel_deterministic, limit_kernel_noise,
    methylation_rate_from_activity, tumbling_Lambda, tumbling_rate_from_activity,
)
from .services.signal_field import (
    LogSensingParams, SignalField, SignalKind, SignalSpec, f0, f0_inverse, f0_prime,
    ligand, methylation_equilibrium, pathwise_derivative,
)


class LogSensingTest(SimpleTestCase):
    """Test cases for the log-sensing free energy"""

    def setUp(self):
        self.params = LogSensingParams()

    def test_f0_value(self):
        """Test f0 at the mean concentration"""
        expected = math.log((1 + 500 / 18.2) / (1 + 500 / 3000))
        self.assertAlmostEqual(f0(500.0, self.params), expected, places=12)

    def test_f0_rejects_non_positive_concentration(self):
        """Test that S <= 0 is outside the log-sensing domain"""
        with self.assertRaises(DomainError):
            f0(0.0, self.params)

    def test_f0_prime_matches_difference_quotient(self):
        """Test the analytic derivative of f0"""
        h = 1e-4
        numeric = (f0(400.0 + h, self.params) - f0(400.0 - h, self.params)) / (2 * h)
        self.assertAlmostEqual(f0_prime(400.0, self.params), numeric, places=9)

    def test_f0_inverse(self):
        """Test that f0_inverse undoes f0"""
        levels = np.array([0.5, 1.0, 3.0])
        self.assertTrue(np.allclose(f0(f0_inverse(levels, self.params), self.params), levels, rtol=1e-12))

    def test_f0_inverse_out_of_range(self):
        """Test that levels beyond ln(K_A/K_I) are unreachable"""
        with self.assertRaises(DomainError):
            f0_inverse(math.log(3000 / 18.2) + 0.1, self.params)

    def test_invalid_constants(self):
        """Test that K_I must be below K_A"""
        with self.assertRaises(ValidationError):
            LogSensingParams(K_I=3000.0, K_A=18.2)


class TravelingWaveTest(SimpleTestCase):
    """Test cases for the traveling-wave signal"""

    def setUp(self):
        self.spec = SignalSpec()
        self.params = LogSensingParams()
        self.field = SignalField(self.spec, self.params)

    def test_ligand_is_periodic_and_translates(self):
        """Test S(x, t) = S(x - u t, 0) and periodicity in x"""
        x = np.linspace(0, 800, 17)
        self.assertTrue(np.allclose(ligand(self.spec, x, 0.0), ligand(self.spec, x + 800, 0.0)))
        self.assertTrue(np.allclose(ligand(self.spec, x, 50.0), ligand(self.spec, x - 20.0, 0.0)))

    def test_pathwise_derivative_reference_value(self):
        """Test D_t M at x=0, t=0 for the fastest right-moving cells"""
        value = pathwise_derivative(self.spec, self.params, 0.0, 20.0, 0.0)
        self.assertAlmostEqual(value, 0.01489, places=5)

    def test_pathwise_derivative_matches_path_difference(self):
        """Test D_t M against the change of M along a straight run"""
        x, v, t, h = 123.0, -20.0, 30.0, 1e-4
        forward = methylation_equilibrium(self.spec, self.params, x + v * h, t + h)
        backward = methylation_equilibrium(self.spec, self.params, x - v * h, t - h)
        numeric = (forward - backward) / (2 * h)
        self.assertAlmostEqual(pathwise_derivative(self.spec, self.params, x, v, t), numeric, places=8)

    def test_pathwise_derivative_first_order_path_difference(self):
        """Test the one-sided path difference approaches D_t M at first order"""
        x, v, t = 123.0, -20.0, 30.0
        exact = pathwise_derivative(self.spec, self.params, x, v, t)
        M0 = methylation_equilibrium(self.spec, self.params, x, t)
        errors = []
        for h in (1e-3, 1e-4):
            step = methylation_equilibrium(self.spec, self.params, x + v * h, t + h)
            errors.append(abs((step - M0) / h - exact))
        self.assertLess(errors[1], 1e-3 * abs(exact))
        self.assertAlmostEqual(errors[0] / errors[1], 10.0, delta=1.0)

    def test_co_moving_cells_feel_no_change(self):
        """Test that D_t M vanishes for v = u"""
        x = np.linspace(0, 800, 33)
        self.assertTrue(np.allclose(pathwise_derivative(self.spec, self.params, x, 0.4, 12.0), 0.0))

    def test_methylation_bounds(self):
        """Test m_minus <= M <= m_plus over space and time"""
        x, t = np.meshgrid(np.linspace(0, 800, 81), np.linspace(0, 2000, 21))
        M = self.field.methylation(x, t)
        self.assertEqual(self.field.m_minus, self.params.m0)
        self.assertTrue(np.all(M >= self.field.m_minus))
        self.assertTrue(np.all(M <= self.field.m_plus + 1e-12))

    def test_max_pathwise_derivative_bounds_samples(self):
        """Test the derivative bound used for stability checks"""
        x = np.linspace(0, 800, 401)
        sampled = np.max(np.abs(self.field.pathwise_derivative(x, np.array([[-20.0], [20.0]]), 0.0)))
        bound = self.field.max_pathwise_derivative([-20.0, 20.0])
        self.assertGreaterEqual(bound, sampled)
        self.assertLess(bound, 1.5 * sampled)

    def test_negative_time_rejected(self):
        """Test that the signal is not defined before t = 0"""
        with self.assertRaises(DomainError):
            ligand(self.spec, 0.0, -1.0)

    def test_signal_parameters_validated(self):
        """Test rejection of non-positive signals and mismatched domains"""
        with self.assertRaises(ValidationError):
            SignalSpec(S0=100.0, SA=100.0)
        with self.assertRaises(ValidationError):
            SignalSpec(domain_length=400.0)
        with self.assertRaises(ValidationError):
            SignalSpec(kind='spiral')


class OtherSignalKindsTest(SimpleTestCase):
    """Test cases for static, ramp and tabulated signals"""

    def setUp(self):
        self.params = LogSensingParams()

    def test_static_signal_is_frozen(self):
        """Test that the static profile does not move"""
        spec = SignalSpec(kind=SignalKind.STATIC)
        self.assertEqual(ligand(spec, 100.0, 0.0), ligand(spec, 100.0, 500.0))
        self.assertFalse(spec.is_time_dependent)

    def test_uniform_ramp(self):
        """Test M = m0 + c t with a space-independent derivative"""
        spec = SignalSpec(kind=SignalKind.UNIFORM_RAMP, ramp_rate=0.1, ramp_window=10.0)
        self.assertAlmostEqual(methylation_equilibrium(spec, self.params, 300.0, 4.0), 1.4)
        self.assertAlmostEqual(pathwise_derivative(spec, self.params, 300.0, 20.0, 4.0), 0.1)
        S = ligand(spec, 0.0, 4.0, self.params)
        self.assertAlmostEqual(self.params.m0 + f0(S, self.params) / self.params.alpha, 1.4, places=10)

    def test_uniform_ramp_window(self):
        """Test that the ramp is only defined inside its window"""
        spec = SignalSpec(kind=SignalKind.UNIFORM_RAMP, ramp_window=10.0)
        with self.assertRaises(DomainError):
            methylation_equilibrium(spec, self.params, 0.0, 10.5)

    def test_tabulated_matches_sampled_wave(self):
        """Test finite-difference derivatives of a tabulated static wave"""
        static = SignalSpec(kind=SignalKind.STATIC)
        table_x = np.linspace(0, 800, 801)
        table = SignalSpec(
            kind=SignalKind.TABULATED, domain_length=800.0,
            table_x=table_x, table_S=ligand(static, table_x, 0.0),
        )
        field = SignalField(table, self.params)
        self.assertEqual(field.derivative_method, 'finite-difference')
        x = np.array([100.5, 250.5, 600.5])
        exact = pathwise_derivative(static, self.params, x, 20.0, 0.0)
        approx = field.pathwise_derivative(x, 20.0, 0.0)
        self.assertTrue(np.allclose(approx, exact, rtol=1e-3, atol=1e-6))

    def test_tabulated_support(self):
        """Test lookups outside the tabulated support"""
        spec = SignalSpec(
            kind=SignalKind.TABULATED, domain_length=800.0,
            table_x=(100.0, 200.0, 300.0), table_S=(400.0, 500.0, 600.0),
        )
        with self.assertRaises(DomainError):
            ligand(spec, 50.0, 0.0)


class PathwayTest(SimpleTestCase):
    """Test cases for activity, adaptation and tumbling response"""

    def setUp(self):
        self.params = PathwayParams()

    def test_derived_constants(self):
        """Test G0, lambda_minus and lambda_plus"""
        self.assertAlmostEqual(self.params.G0, 5.1)
        self.assertAlmostEqual(self.params.lambda_minus, 0.14)
        self.assertAlmostEqual(self.params.lambda_plus, 1280.14)

    def test_activity_at_equilibrium(self):
        """Test that a = 1/2 when m = M"""
        self.assertAlmostEqual(activity(2.0, 2.0, self.params), 0.5)
        self.assertAlmostEqual(activity(1e6, 0.0, self.params), 1.0)
        self.assertAlmostEqual(activity(-1e6, 0.0, self.params), 0.0)

    def test_adaptation_is_restoring(self):
        """Test that f(r) has the sign of -r"""
        r = np.array([-0.5, -0.01, 0.01, 0.5])
        self.assertTrue(np.all(np.sign(adaptation_f(r, self.params)) == -np.sign(r)))
        self.assertEqual(adaptation_f(0.0, self.params), 0.0)

    def test_G_at_zero(self):
        """Test G(0) = N alpha / (4 a0)"""
        self.assertAlmostEqual(G(0.0, self.params), 5.1, places=12)

    def test_G_series_and_quotient_agree(self):
        """Test the series branch against the quotient just above the switch"""
        r = 2e-4
        quotient = -adaptation_f(r, self.params) / r
        self.assertAlmostEqual(G(r, self.params) / quotient, 1.0, places=10)
        tiny = G(1e-6, self.params)
        self.assertAlmostEqual(tiny / 5.1, 1.0, places=6)

    def test_G_positive_even_and_bounded(self):
        """Test 0 < G(r) <= G0 and G(-r) = G(r)"""
        r = np.linspace(-3, 3, 601)
        values = G(r, self.params)
        self.assertTrue(np.all(values > 0))
        self.assertTrue(np.all(values <= self.params.G0 + 1e-12))
        self.assertTrue(np.allclose(values, G(-r, self.params)))

    def test_g_bounds(self):
        """Test the G range over the truncated blow-up interval"""
        g_minus, g_plus = g_bounds(self.params, 3.0)
        self.assertAlmostEqual(g_plus, 5.1, places=6)
        self.assertAlmostEqual(g_minus, G(0.3, self.params), places=12)

    def test_lambda_profile(self):
        """Test Lambda(0), its limits and monotonicity"""
        self.assertAlmostEqual(tumbling_Lambda(0.0, self.params), 1.39, places=12)
        self.assertAlmostEqual(tumbling_Lambda(-50.0, self.params), 0.14, places=10)
        self.assertAlmostEqual(tumbling_Lambda(50.0, self.params) / 1280.14, 1.0, places=10)
        y = np.linspace(-0.3, 0.5, 161)
        self.assertTrue(np.all(np.diff(tumbling_Lambda(y, self.params)) > 0))

    def test_lambda_ignores_velocities(self):
        """Test that the tumbling rate is isotropic"""
        self.assertEqual(tumbling_Lambda(0.2, self.params, v=20.0, v_prime=-20.0), tumbling_Lambda(0.2, self.params))

    def test_activity_form(self):
        """Test the activity-form rates"""
        self.assertAlmostEqual(tumbling_rate_from_activity(0.5, self.params), 1.39)
        self.assertAlmostEqual(methylation_rate_from_activity(0.5, self.params), 0.0)
        self.assertAlmostEqual(methylation_rate_from_activity(0.0, self.params), 10.0)

    def test_epsilon_from_timescales(self):
        """Test epsilon from adaptation and run times"""
        self.assertAlmostEqual(epsilon_from_timescales(0.1, 1.0), 0.1)
        with self.assertRaises(ValidationError):
            epsilon_from_timescales(0.0, 1.0)

    def test_params_validation(self):
        """Test rejection of invalid pathway constants"""
        with self.assertRaises(ValidationError):
            PathwayParams(epsilon=0.0)
        with self.assertRaises(ValidationError):
            PathwayParams(a0=0.3)
        with self.assertRaises(ValidationError):
            PathwayParams(N=0)

    def test_preferred_activity_restricted_to_half(self):
        """Test a0 inside (0, 1) but away from 1/2 names the restriction"""
        with self.assertRaises(ValidationError) as ctx:
            PathwayParams(a0=0.3)
        self.assertIn('restricted to 1/2', ' '.join(ctx.exception.messages))
        with self.assertRaises(ValidationError) as ctx:
            PathwayParams(a0=1.5)
        self.assertIn('(0, 1)', ' '.join(ctx.exception.messages))


class LimitKernelTest(SimpleTestCase):
    """Test cases for the path-wise tumbling kernels"""

    def setUp(self):
        self.params = PathwayParams()

    def test_deterministic_kernel(self):
        """Test T_deterministic(0) = Lambda(0) and decrease in u"""
        self.assertAlmostEqual(limit_kernel_deterministic(0.0, self.params), 1.39)
        u = np.linspace(-1.5, 2.0, 141)
        self.assertTrue(np.all(np.diff(limit_kernel_deterministic(u, self.params)) < 0))
        wide = np.linspace(-20, 20, 401)
        self.assertTrue(np.all(np.diff(limit_kernel_deterministic(wide, self.params)) <= 0))

    def test_noise_kernel_exact_on_polynomials(self):
        """Test that the quadrature integrates constants, lines and parabolas"""
        u = np.array([-2.0, 0.0, 1.5])
        G0 = self.params.G0
        constant = limit_kernel_noise(u, self.params, rate_fn=lambda y: 3.0 + 0.0 * y)
        affine = limit_kernel_noise(u, self.params, rate_fn=lambda y: 2.0 + 5.0 * y)
        quadratic = limit_kernel_noise(u, self.params, rate_fn=lambda y: y ** 2, variance_scale=0.5)
        self.assertTrue(np.allclose(constant, 3.0, rtol=1e-12))
        self.assertTrue(np.allclose(affine, 2.0 - 5.0 * u / G0, rtol=1e-12))
        self.assertTrue(np.allclose(quadratic, (u / G0) ** 2 + 0.5 / G0, rtol=1e-12))

    def test_noise_kernel_matches_trapezoid(self):
        """Test the quadrature against a dense trapezoid rule"""
        G0 = self.params.G0
        for u in (-1.0, 0.0, 0.8):
            mean, sd = -u / G0, math.sqrt(1.0 / G0)
            y = np.linspace(mean - 12 * sd, mean + 12 * sd, 200001)
            density = np.exp(-0.5 * ((y - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
            reference = np.trapezoid(tumbling_Lambda(y, self.params) * density, y)
            value = limit_kernel_noise(u, self.params)
            self.assertAlmostEqual(value / reference, 1.0, places=4)

    def test_noise_kernel_collapses_without_variance(self):
        """Test T_noise -> T_deterministic as the variance vanishes"""
        u = np.array([-1.0, 0.0, 2.0])
        noise = limit_kernel_noise(u, self.params, variance_scale=1e-10)
        self.assertTrue(np.allclose(noise, limit_kernel_deterministic(u, self.params), rtol=1e-6))

    def test_noise_raises_kernel(self):
        """Test that averaging over the convex part raises the kernel near u = 0"""
        self.assertGreater(limit_kernel_noise(0.0, self.params), limit_kernel_deterministic(0.0, self.params))

    def test_unsupported_orders(self):
        """Test quadrature order limits"""
        with self.assertRaises(UnsupportedOrderError):
            limit_kernel_noise(0.0, self.params, quadrature_order=300)
        with self.assertRaises(UnsupportedOrderError):
            limit_kernel_noise(0.0, self.params, quadrature_order=1)

    def test_kernel_dispatch(self):
        """Test kernel mode dispatch"""
        self.assertEqual(limit_kernel(0.3, self.params), limit_kernel_deterministic(0.3, self.params))
        with self.assertRaises(ValidationError):
            limit_kernel(0.3, self.params, mode='stochastic')
