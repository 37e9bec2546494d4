import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.linalg import expm, solve_banded

from chemotaxis_lab.exceptions import DegenerateInputError, GridMismatchError, StabilityError, TruncationError
from signaling.services.pathway import PathwayParams, limit_kernel_deterministic
from signaling.services.signal_field import SignalField, SignalKind, SignalSpec
from .services.full_solver import (
    FullKineticSolver, InitialSpec, dense_generator, initialize, marginal, reconstruct_p, solve_tridiagonal, step,
    y_profile,
)
from .services.grid import FullGrid, snapshot_times, velocity_set
from .services.limit_solver import (
    KernelMode, LimitKineticSolver, exchange_general, exchange_two_velocity, from_marginal, kernel_field,
)
from .services.limit_solver import initialize as initialize_limit


def uniform_signal():
    return SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0))


def static_wave():
    return SignalField(SignalSpec(kind=SignalKind.STATIC))


def y_moments(state):
    profile = y_profile(state)
    y = state.grid.y_centers
    mean = float((y * profile).sum() / profile.sum())
    variance = float(((y - mean) ** 2 * profile).sum() / profile.sum())
    return mean, variance


class FullGridTest(SimpleTestCase):
    """Test cases for the phase-space grid"""

    def test_geometry(self):
        """Test cell sizes and centres"""
        grid = FullGrid.two_velocity(200, 800.0, 20.0)
        self.assertEqual(grid.dx, 4.0)
        self.assertAlmostEqual(grid.dy, 6.0 / 128)
        self.assertEqual(grid.shape, (200, 2, 128))
        self.assertEqual(grid.total_weight, 2.0)
        self.assertAlmostEqual(grid.x_centers[0], 2.0)
        self.assertAlmostEqual(grid.y_centers.mean(), 0.0)
        self.assertAlmostEqual(grid.cfl_limit(), 0.18)

    def test_velocity_set(self):
        """Test the symmetric velocity sets"""
        self.assertTrue(np.array_equal(velocity_set(20.0), [-20.0, 20.0]))
        self.assertTrue(np.allclose(velocity_set(20.0, 5), [-20, -10, 0, 10, 20]))

    def test_validation(self):
        """Test rejection of coarse y-grids and bad weights"""
        with self.assertRaises(ValidationError):
            FullGrid.two_velocity(10, 800.0, 20.0, ny=8)
        with self.assertRaises(ValidationError):
            FullGrid(10, 800.0, [-20.0, 20.0], weights=[1.0, -1.0])

    def test_coverage(self):
        """Test that the y-interval must hold the limit profile"""
        grid = FullGrid.two_velocity(10, 800.0, 20.0)
        grid.check_coverage(u_max=0.02, G0=5.1)
        narrow = FullGrid.two_velocity(10, 800.0, 20.0, y_halfwidth=1.0)
        with self.assertRaises(ValidationError):
            narrow.check_coverage(u_max=0.02, G0=5.1)

    def test_snapshot_times(self):
        """Test snapshot schedules"""
        self.assertEqual(snapshot_times(0.0, 400.0, 100.0), [100.0, 200.0, 300.0, 400.0])
        self.assertEqual(snapshot_times(0.0, 250.0, 100.0), [100.0, 200.0, 250.0])
        self.assertEqual(snapshot_times(0.0, 5.0), [5.0])


class FullInitializeTest(SimpleTestCase):
    """Test cases for full-model initial data"""

    def setUp(self):
        self.grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=32)
        self.signal = static_wave()
        self.pathway = PathwayParams()

    def test_default_profile(self):
        """Test unit mass and a uniform marginal"""
        state = initialize(self.grid, self.signal, self.pathway)
        self.assertAlmostEqual(state.mass(), 1.0, places=12)
        self.assertEqual(state.total_mass_initial, 1.0)
        qbar = marginal(state)
        self.assertTrue(np.allclose(qbar, qbar[0, 0]))

    def test_dirac_profile(self):
        """Test all y-mass in a single cell"""
        x_profile = np.arange(1.0, 9.0)
        state = initialize(self.grid, self.signal, self.pathway, InitialSpec(dirac=True, x_profile=x_profile))
        occupied = np.nonzero(y_profile(state))[0]
        self.assertEqual(occupied.tolist(), [16])
        qbar = marginal(state)
        self.assertTrue(np.allclose(qbar[:, 0] / qbar[0, 0], x_profile))

    def test_invalid_tables(self):
        """Test negative and empty initial tables"""
        table = np.ones(self.grid.shape)
        table[0, 0, 0] = -1.0
        with self.assertRaises(ValidationError):
            initialize(self.grid, self.signal, self.pathway, InitialSpec(table=table))
        with self.assertRaises(DegenerateInputError):
            initialize(self.grid, self.signal, self.pathway, InitialSpec(table=np.zeros(self.grid.shape)))

    def test_grid_signal_mismatch(self):
        """Test that the grid must span the signal domain"""
        grid = FullGrid.two_velocity(8, 400.0, 20.0, ny=32)
        with self.assertRaises(GridMismatchError):
            initialize(grid, self.signal, self.pathway)


class FullSolverTest(SimpleTestCase):
    """Test cases for the split full-model stepper"""

    def setUp(self):
        self.grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=32)

    def test_mass_and_positivity(self):
        """Test conservation and positivity with noise on a static wave"""
        pathway = PathwayParams(epsilon=0.2, noise_enabled=True)
        solver = FullKineticSolver(self.grid, static_wave(), pathway)
        state = solver.initialize()
        for _ in range(50):
            state = solver.step(state, 0.1)
        self.assertLess(state.mass_drift(), 1e-12)
        self.assertTrue(np.all(state.q >= 0))
        self.assertAlmostEqual(state.t, 5.0)
        self.assertEqual(state.steps, 50)

    def test_uniform_signal_keeps_x_symmetry(self):
        """Test that uniform data stay uniform in x"""
        pathway = PathwayParams(epsilon=0.2)
        solver = FullKineticSolver(self.grid, uniform_signal(), pathway)
        state = solver.run(solver.initialize(), t_end=2.0, dt=0.1)
        self.assertTrue(np.allclose(state.q, state.q[:1], rtol=1e-12, atol=0))

    def test_cfl_violation(self):
        """Test the x-transport stability contract"""
        solver = FullKineticSolver(self.grid, static_wave(), PathwayParams())
        with self.assertRaises(StabilityError) as ctx:
            solver.step(solver.initialize(), 10.0)
        self.assertEqual(ctx.exception.stage, 'x-transport')

    def test_variance_decays_without_noise(self):
        """Test monotone collapse of the y-profile"""
        pathway = PathwayParams(epsilon=0.2)
        solver = FullKineticSolver(self.grid, uniform_signal(), pathway)
        state = solver.initialize()
        variances = [y_moments(state)[1]]
        for _ in range(20):
            state = solver.step(state, 0.05)
            variances.append(y_moments(state)[1])
        self.assertTrue(np.all(np.diff(variances) <= 1e-15))
        self.assertLess(variances[-1], variances[0] / 4)

    def test_ramp_concentrates_near_shifted_equilibrium(self):
        """Test concentration at y* = -c/G(0) under a uniform ramp"""
        grid = FullGrid.two_velocity(4, 800.0, 20.0, ny=64)
        signal = SignalField(SignalSpec(kind=SignalKind.UNIFORM_RAMP, ramp_rate=0.5, ramp_window=10.0))
        pathway = PathwayParams(epsilon=0.1)
        solver = FullKineticSolver(grid, signal, pathway)
        state = solver.run(solver.initialize(), t_end=3.0, dt=0.1)
        mean, variance = y_moments(state)
        self.assertLess(abs(mean + 0.5 / pathway.G0), grid.dy)
        self.assertLess(variance, 4 * grid.dy ** 2)

    def test_noise_profile_is_gaussian(self):
        """Test the stationary y-variance 1/G(0) with noise"""
        grid = FullGrid.two_velocity(2, 800.0, 20.0, ny=512)
        pathway = PathwayParams(epsilon=0.05, noise_enabled=True)
        solver = FullKineticSolver(grid, uniform_signal(), pathway, y_scheme='implicit')
        state = solver.run(solver.initialize(InitialSpec(y_variance=0.05)), t_end=1.0, dt=0.05)
        mean, variance = y_moments(state)
        self.assertAlmostEqual(mean, 0.0, places=6)
        self.assertAlmostEqual(variance * pathway.G0, 1.0, delta=0.05)
        self.assertLess(state.mass_drift(), 1e-12)

    def test_implicit_scheme_tracks_explicit(self):
        """Test that both y-schemes reach the same concentrated profile"""
        signal = static_wave()
        pathway = PathwayParams(epsilon=0.2)
        explicit = FullKineticSolver(self.grid, signal, pathway)
        implicit = FullKineticSolver(self.grid, signal, pathway, y_scheme='implicit')
        a = explicit.run(explicit.initialize(), t_end=2.0, dt=0.1)
        b = implicit.run(implicit.initialize(), t_end=2.0, dt=0.1)
        self.assertTrue(np.allclose(marginal(a), marginal(b), rtol=1e-2))
        self.assertAlmostEqual(y_moments(a)[0], y_moments(b)[0], delta=self.grid.dy)

    def test_truncation_detected(self):
        """Test that mass near the y-boundary aborts the run"""
        pathway = PathwayParams(epsilon=0.2)
        solver = FullKineticSolver(self.grid, static_wave(), pathway)
        state = solver.initialize(InitialSpec(y_variance=4.0))
        with self.assertRaises(TruncationError):
            solver.step(state, 0.1)

    def test_worker_count_does_not_change_results(self):
        """Test bit-identical results for one and three workers"""
        pathway = PathwayParams(epsilon=0.2, noise_enabled=True)
        results = []
        for workers in (1, 3):
            solver = FullKineticSolver(self.grid, static_wave(), pathway, workers=workers)
            results.append(solver.run(solver.initialize(), t_end=1.0, dt=0.1).q)
        self.assertTrue(np.array_equal(results[0], results[1]))

    def test_functional_step(self):
        """Test the module-level step wrapper"""
        signal, pathway = static_wave(), PathwayParams(epsilon=0.2)
        state = initialize(self.grid, signal, pathway)
        wrapped = step(state, signal, pathway, 0.1)
        direct = FullKineticSolver(self.grid, signal, pathway).step(state, 0.1)
        self.assertTrue(np.array_equal(wrapped.q, direct.q))


class TridiagonalSolveTest(SimpleTestCase):
    """Test the batched tridiagonal solve used by the implicit y-stage"""

    def test_matches_banded_solve_per_row(self):
        """Test every batched row against scipy's banded solver"""
        rng = np.random.default_rng(3)
        shape = (3, 2, 12)
        lower = -rng.random(shape)
        upper = -rng.random(shape)
        lower[..., 0] = 0.0
        upper[..., -1] = 0.0
        diag = 1.0 + np.abs(lower) + np.abs(upper) + rng.random(shape)
        rhs = rng.random(shape)
        solved = solve_tridiagonal(lower, diag, upper, rhs)
        for i in range(shape[0]):
            for j in range(shape[1]):
                ab = np.zeros((3, shape[2]))
                ab[0, 1:] = upper[i, j, :-1]
                ab[1] = diag[i, j]
                ab[2, :-1] = lower[i, j, 1:]
                expected = solve_banded((1, 1), ab, rhs[i, j])
                self.assertTrue(np.allclose(solved[i, j], expected, rtol=1e-12, atol=1e-14))


class DenseOracleTest(SimpleTestCase):
    """Test the split scheme against the matrix exponential of the unsplit system"""

    def test_small_instance_matches_oracle(self):
        """Test nx=4, two velocities, ny=16, ten steps"""
        grid = FullGrid.two_velocity(4, 800.0, 20.0, ny=16)
        signal = static_wave()
        pathway = PathwayParams(epsilon=0.1)
        solver = FullKineticSolver(grid, signal, pathway, truncation_tol=1e-6)
        state = solver.initialize(InitialSpec(y_variance=0.1))
        q0 = state.q.ravel().copy()
        dt = 2e-4
        for _ in range(10):
            state = solver.step(state, dt)

        generator = dense_generator(grid, signal, pathway)
        exact = expm(generator * 10 * dt) @ q0
        error = np.linalg.norm(state.q.ravel() - exact) / np.linalg.norm(exact)
        self.assertLess(error, 1e-3)

    def test_generator_conserves_mass(self):
        """Test that weighted column sums of the generator vanish"""
        grid = FullGrid.two_velocity(4, 800.0, 20.0, ny=16)
        generator = dense_generator(grid, static_wave(), PathwayParams(epsilon=0.5, noise_enabled=True))
        weights = np.broadcast_to(grid.weights[None, :, None], grid.shape).ravel()
        self.assertTrue(np.allclose(weights @ generator, 0.0, atol=1e-9))


class ReconstructionTest(SimpleTestCase):
    """Test cases for the methylation-space density"""

    def setUp(self):
        self.grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=64)
        self.signal = static_wave()
        self.pathway = PathwayParams(epsilon=0.1)
        self.state = initialize(self.grid, self.signal, self.pathway)

    def test_integral_matches_marginal(self):
        """Test that integrating p over m recovers the marginal"""
        x = self.grid.x_centers[3]
        M = self.signal.methylation(x, 0.0)
        m = np.linspace(M + 0.1 * self.grid.y_min, M + 0.1 * self.grid.y_max, 20001)
        p = reconstruct_p(self.state, self.signal, x, 20.0, m)
        integral = np.trapezoid(p, m)
        self.assertAlmostEqual(integral / marginal(self.state)[3, 1], 1.0, places=3)

    def test_far_from_equilibrium_is_zero(self):
        """Test zero density outside the blow-up interval"""
        x = self.grid.x_centers[0]
        M = self.signal.methylation(x, 0.0)
        self.assertEqual(float(reconstruct_p(self.state, self.signal, x, -20.0, M + 0.5)), 0.0)

    def test_peak_scales_with_epsilon(self):
        """Test p(M) = q(y=0)/epsilon for a Dirac profile"""
        grid = FullGrid.two_velocity(8, 800.0, 20.0, ny=65)
        state = initialize(grid, self.signal, self.pathway, InitialSpec(dirac=True))
        x = grid.x_centers[2]
        M = self.signal.methylation(x, 0.0)
        value = reconstruct_p(state, self.signal, x, 20.0, M)
        self.assertAlmostEqual(float(value), state.q[2, 1, 32] / 0.1)


class LimitSolverTest(SimpleTestCase):
    """Test cases for the limit-model stepper"""

    def setUp(self):
        self.grid = FullGrid.two_velocity(4, 800.0, 20.0)
        self.pathway = PathwayParams()

    def test_uniform_data_fixed_point(self):
        """Test that uniform data are stationary under a uniform signal"""
        solver = LimitKineticSolver(self.grid, uniform_signal(), self.pathway)
        state = solver.run(solver.initialize(), t_end=20.0)
        self.assertTrue(np.allclose(state.pbar, 1.0 / 1600.0, rtol=1e-12, atol=0))

    def test_two_state_relaxation(self):
        """Test velocity equilibration against the closed-form two-state ODE"""
        solver = LimitKineticSolver(self.grid, uniform_signal(), self.pathway)
        state = solver.initialize(v_profile=[0.0, 1.0])
        state = solver.run(state, t_end=1.0, dt=0.1)
        total = state.pbar.sum(axis=1)
        difference = state.pbar[:, 1] - state.pbar[:, 0]
        self.assertTrue(np.allclose(difference, total * np.exp(-1.39), rtol=1e-10))
        self.assertLess(state.mass_drift(), 1e-13)

    def test_constant_kernel_preserves_sum(self):
        """Test that the exchange stage keeps p+ + p- with equal rates"""
        pbar = np.random.default_rng(3).random((6, 2))
        T = np.full((6, 2), 2.5)
        exchanged = exchange_two_velocity(pbar, T, np.ones(2), 0.3)
        self.assertTrue(np.allclose(exchanged.sum(axis=1), pbar.sum(axis=1), rtol=1e-15, atol=0))

    def test_general_exchange_matches_two_velocity(self):
        """Test the matrix-exponential exchange against the closed form"""
        rng = np.random.default_rng(11)
        pbar, T = rng.random((5, 2)), 0.1 + rng.random((5, 2))
        weights = np.array([1.0, 3.0])
        self.assertTrue(np.allclose(
            exchange_general(pbar, T, weights, 0.7), exchange_two_velocity(pbar, T, weights, 0.7), rtol=1e-10,
        ))

    def test_general_velocity_set_conserves_mass(self):
        """Test mass conservation with five velocities"""
        grid = FullGrid(10, 800.0, velocity_set(20.0, 5))
        solver = LimitKineticSolver(grid, static_wave(), self.pathway)
        state = solver.run(solver.initialize(), t_end=20.0)
        self.assertLess(state.mass_drift(), 1e-12)
        self.assertTrue(np.all(state.pbar >= 0))

    def test_cfl_violation(self):
        """Test the upwind stability contract"""
        solver = LimitKineticSolver(self.grid, static_wave(), self.pathway)
        with self.assertRaises(StabilityError):
            solver.step(solver.initialize(), 200.0)

    def test_run_extension_up_the_gradient(self):
        """Test up-gradient flux and accumulation at the signal maximum"""
        grid = FullGrid.two_velocity(80, 800.0, 20.0)
        solver = LimitKineticSolver(grid, static_wave(), self.pathway)
        state = solver.run(solver.initialize(), t_end=10.0)
        J = state.pbar @ grid.velocities
        self.assertGreater(J[0], 0.0)
        self.assertLess(J[40], 0.0)

        state = solver.run(state, t_end=400.0)
        rho = state.pbar.sum(axis=1)
        self.assertLessEqual(abs(grid.x_centers[np.argmax(rho)] - 200.0), 50.0)

    def test_from_marginal(self):
        """Test seeding the limit model from a full-model marginal"""
        full = initialize(FullGrid.two_velocity(4, 800.0, 20.0, ny=32), static_wave(), self.pathway)
        state = from_marginal(full.grid, marginal(full))
        self.assertAlmostEqual(state.mass(), 1.0, places=12)


class KernelFieldTest(SimpleTestCase):
    """Test cases for the tabulated tumbling kernel"""

    def setUp(self):
        self.pathway = PathwayParams()

    def test_wave_rider(self):
        """Test T = T(0) for cells moving with the wave"""
        grid = FullGrid(16, 800.0, [-20.0, 0.4, 20.0])
        state = initialize_limit(grid, SignalField(SignalSpec()))
        field = kernel_field(state, SignalField(SignalSpec()), self.pathway)
        self.assertTrue(np.allclose(field[:, 1], 1.39, rtol=1e-12))
        self.assertTrue(np.allclose(field[:, 2], limit_kernel_deterministic(
            SignalField(SignalSpec()).pathwise_derivative(grid.x_centers, 20.0, 0.0), self.pathway)))

    def test_noise_mode_with_flat_response(self):
        """Test a constant field when the motor response is negligible"""
        pathway = PathwayParams(tau=1e15)
        grid = FullGrid.two_velocity(16, 800.0, 20.0)
        solver = LimitKineticSolver(grid, static_wave(), pathway, kernel_mode=KernelMode.NOISE)
        self.assertTrue(np.allclose(solver.kernel_field(0.0), 0.14, rtol=1e-9))

    def test_noise_field_approaches_deterministic(self):
        """Test shrinking differences as the noise variance scale vanishes"""
        grid = FullGrid.two_velocity(32, 800.0, 20.0)
        signal = static_wave()
        deterministic = LimitKineticSolver(grid, signal, self.pathway).kernel_field(0.0)
        gaps = []
        for scale in (1.0, 0.1, 0.01):
            noisy = LimitKineticSolver(
                grid, signal, self.pathway, kernel_mode=KernelMode.NOISE, variance_scale=scale,
            ).kernel_field(0.0)
            gaps.append(np.max(np.abs(noisy - deterministic)))
        self.assertTrue(gaps[0] > gaps[1] > gaps[2])

    def test_unknown_mode(self):
        """Test kernel mode validation"""
        with self.assertRaises(ValidationError):
            LimitKineticSolver(FullGrid.two_velocity(4, 800.0, 20.0), static_wave(), self.pathway, kernel_mode='x')
