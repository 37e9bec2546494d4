import json
import math
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import skipUnless

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from agents.services.population import AgentPopulation, bin_population, run as run_agents
from analytics.services.diagnostics import density_flux, fit_gaussian_variance, l1_distance, phase_shift
from chemotaxis_lab.exceptions import SimulationError
from kinetics.services.full_solver import FullKineticSolver, InitialSpec, marginal, y_profile
from kinetics.services.grid import FullGrid
from kinetics.services.limit_solver import KernelMode, LimitKineticSolver
from signaling.services.pathway import PathwayParams
from signaling.services.signal_field import SignalField, SignalKind, SignalSpec
from .services.outputs import METADATA_FILE, RunOutput, read_profile, write_csv
from .services.run_config import RunConfig, apply_overrides, parse_config


class WorkspaceMixin:
    """Temporary directory with an INI writer"""

    def setUp(self):
        super().setUp()
        self.workspace = Path(tempfile.mkdtemp(prefix='chemotaxis-'))

    def tearDown(self):
        shutil.rmtree(self.workspace, ignore_errors=True)
        super().tearDown()

    def write_ini(self, text, name='run.ini'):
        path = self.workspace / name
        path.write_text(text)
        return path


class ParseConfigTest(WorkspaceMixin, SimpleTestCase):
    """Test cases for run configuration parsing"""

    def test_defaults(self):
        """Test an absent file yields the model parameter table"""
        config = parse_config()
        pathway = config.pathway_params()
        self.assertEqual((pathway.N, pathway.alpha, pathway.a0, pathway.H), (6, 1.7, 0.5, 10.0))
        self.assertEqual((pathway.z0, pathway.tau), (0.14, 0.8))
        self.assertAlmostEqual(pathway.G0, 5.1, places=12)
        signal = config.signal_field()
        self.assertEqual((signal.spec.S0, signal.spec.SA, signal.domain_length), (500.0, 100.0, 800.0))
        self.assertEqual((signal.params.K_I, signal.params.K_A, signal.params.m0), (18.2, 3000.0, 1.0))
        self.assertEqual(config.agents.n_cells, 20000)

    def test_empty_file(self):
        """Test an empty file equals the defaults"""
        self.assertEqual(parse_config(self.write_ini('')), RunConfig())

    def test_slow_wave(self):
        """Test a single key selecting the slow-wave scenario"""
        config = parse_config(self.write_ini('[signal]\nu_um_per_s = 0.4\n'))
        self.assertEqual(config.signal_field().wave_speed, 0.4)

    def test_documented_keys(self):
        """Test every documented key is accepted in its section"""
        config = parse_config(self.write_ini(
            '[pathway]\nN = 6\nalpha = 1.7\na0 = 0.5\nz0_per_s = 0.14\ntau_s = 0.8\nH = 4\n'
            'sigma = 1\nepsilon = 0.1\nnoise_enabled = true\n'
            '[grid]\nnx = 200\nny = 128\ny_halfwidth = 3\nv0_um_per_s = 20\n'
            '[solver]\ndt_s = 0.1\nt_end_s = 400\nkernel_mode = noise\n'
            '[agents]\nn_cells = 20000\nseed = 42\ndt_agent_s = 0.005\nsnapshot_every_s = 100\n'
        ))
        self.assertTrue(config.pathway_params().noise_enabled)
        self.assertEqual(config.pathway_params().H, 4.0)
        self.assertEqual(config.seed, 42)
        self.assertEqual(config.agents.dt_agent_s, 0.005)
        self.assertEqual(config.solver.kernel_mode, KernelMode.NOISE)
        self.assertEqual(config.full_grid().nx, 200)

    def test_unknown_key(self):
        """Test an unknown key lists the valid ones"""
        with self.assertRaises(ValidationError) as ctx:
            parse_config(self.write_ini('[signal]\nwavelength = 800\n'))
        message = ' '.join(ctx.exception.messages)
        self.assertIn('wavelength', message)
        self.assertIn('Valid keys', message)
        self.assertIn('ell_um', message)

    def test_unknown_section(self):
        """Test an unknown section is rejected"""
        with self.assertRaises(ValidationError):
            parse_config(self.write_ini('[motor]\nH = 4\n'))

    def test_bad_value(self):
        """Test a value that cannot be cast"""
        with self.assertRaises(ValidationError):
            parse_config(self.write_ini('[grid]\nnx = many\n'))

    def test_cfl_violation(self):
        """Test a time step above the upwind limit"""
        with self.assertRaises(ValidationError) as ctx:
            parse_config(self.write_ini('[grid]\nnx = 200\n[solver]\ndt_s = 1.0\n'))
        self.assertIn('CFL', ' '.join(ctx.exception.messages))

    def test_thinning_violation(self):
        """Test an agent step above the thinning bound"""
        with self.assertRaises(ValidationError) as ctx:
            parse_config(self.write_ini('[agents]\ndt_agent_s = 0.01\n'))
        self.assertIn('thinning', ' '.join(ctx.exception.messages))

    def test_coverage_violation(self):
        """Test a blow-up interval too narrow for the limit profile"""
        with self.assertRaises(ValidationError) as ctx:
            parse_config(self.write_ini('[grid]\ny_halfwidth = 1.0\n'))
        self.assertIn('half-width', ' '.join(ctx.exception.messages))

    def test_ramp_window(self):
        """Test an end time beyond the ramp window"""
        with self.assertRaises(ValidationError):
            parse_config(self.write_ini('[signal]\nkind = uniform-ramp\n[solver]\nt_end_s = 20\n'))

    def test_tabulated_signal(self):
        """Test a tabulated signal read from CSV"""
        table = self.workspace / 'signal.csv'
        pd.DataFrame({'x': [0.0, 400.0, 800.0], 'S': [400.0, 600.0, 400.0]}).to_csv(table, index=False)
        config = parse_config(self.write_ini(f'[signal]\nkind = tabulated\ntable_path = {table}\n'))
        self.assertEqual(config.signal_field().derivative_method, 'finite-difference')

    def test_round_trip(self):
        """Test emitted metadata reconstructs the configuration"""
        config = parse_config(self.write_ini(
            '[signal]\nu_um_per_s = 8\n[pathway]\nnoise_enabled = on\nepsilon = 0.05\n'
            '[study]\neps_list = 0.4, 0.2\n[agents]\nseed = 7\n'
        ))
        path = config.emit(self.workspace / 'config.json')
        self.assertEqual(parse_config(path), config)
        self.assertEqual(config.study.eps_list, [0.4, 0.2])
        self.assertTrue(config.pathway.noise_enabled)
        self.assertEqual(config.seed, 7)

    def test_overrides(self):
        """Test command-line overrides"""
        config = apply_overrides(RunConfig(), u=8.0, epsilon=0.2, noise='on', seed=3)
        self.assertEqual(config.signal.u_um_per_s, 8.0)
        self.assertEqual(config.pathway_params().epsilon, 0.2)
        self.assertTrue(config.pathway_params().noise_enabled)
        self.assertEqual(config.solver.kernel_mode, KernelMode.NOISE)
        self.assertEqual(config.seed, 3)


class OutputsTest(WorkspaceMixin, SimpleTestCase):
    """Test cases for output files"""

    def test_full_precision_csv(self):
        """Test 17 significant digits and newline endings"""
        path = write_csv(self.workspace / 'a.csv', pd.DataFrame({'x': [0.1], 'y': [1.0 / 3.0]}))
        self.assertEqual(path.read_bytes(), b'x,y\n0.10000000000000001,0.33333333333333331\n')

    def test_partial_outputs_removed(self):
        """Test a failing run leaves nothing behind"""
        directory = self.workspace / 'run'
        with self.assertRaises(SimulationError):
            with RunOutput(directory, 'test') as output:
                output.write_frame('partial.csv', pd.DataFrame({'x': [1.0]}))
                raise SimulationError('boom')
        self.assertFalse(directory.exists())

    def test_existing_directory_kept(self):
        """Test only written files are removed from an existing directory"""
        keep = self.workspace / 'keep.txt'
        keep.write_text('x')
        with self.assertRaises(SimulationError):
            with RunOutput(self.workspace, 'test') as output:
                output.write_frame('partial.csv', pd.DataFrame({'x': [1.0]}))
                raise SimulationError('boom')
        self.assertTrue(keep.exists())
        self.assertFalse((self.workspace / 'partial.csv').exists())


class CommandsTest(WorkspaceMixin, SimpleTestCase):
    """Test cases for the management commands"""

    def call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()

    def test_kernel(self):
        """Test the tabulated kernel reads T(0) = z0 + 1/tau"""
        directory = self.workspace / 'kernel'
        output = self.call('kernel', out=str(directory))
        self.assertIn('kernel finished', output)
        table = pd.read_csv(directory / 'kernel.csv')
        self.assertEqual(list(table.columns), ['u', 'T_deterministic', 'T_noise'])
        self.assertAlmostEqual(float(table.loc[table['u'] == 0.0, 'T_deterministic'].iloc[0]), 1.39, delta=1e-6)
        metadata = json.loads((directory / METADATA_FILE).read_text())
        self.assertAlmostEqual(metadata['pathway_bounds']['G0'], 5.1)
        self.assertEqual(metadata['config']['pathway']['H'], 10.0)

    def test_simulate_limit_uniform(self):
        """Test a uniform signal keeps the limit density flat"""
        ini = self.write_ini('[signal]\nkind = static\nSA_uM = 0\n[grid]\nnx = 20\n[solver]\nt_end_s = 10\n')
        directory = self.workspace / 'limit'
        self.call('simulate_limit', config=str(ini), out=str(directory))
        final = pd.read_csv(directory / 'profile_final.csv')
        self.assertLess(np.ptp(final['rho']), 1e-12 * final['rho'].mean())
        profile = read_profile(directory)
        self.assertEqual(profile.source, 'limit')
        self.assertAlmostEqual(profile.mass, 1.0)
        pbar = pd.read_csv(directory / 'pbar_0001.csv')
        self.assertEqual(list(pbar.columns), ['x', 'v', 'pbar'])
        self.assertEqual(len(pbar), 20 * 2)
        self.assertAlmostEqual(float(pbar['pbar'].sum()) * 800.0 / 20, 1.0, delta=1e-12)

    def test_simulate_full(self):
        """Test snapshot, concentration and y-profile files"""
        ini = self.write_ini('[grid]\nnx = 8\nny = 32\n[solver]\nt_end_s = 9\nsnapshot_every_s = 4.5\n')
        directory = self.workspace / 'full'
        self.call('simulate_full', config=str(ini), out=str(directory))
        profiles = pd.read_csv(directory / 'profiles.csv')
        self.assertEqual(sorted(profiles['t'].unique()), [4.5, 9.0])
        comoving = pd.read_csv(directory / 'profile_comoving.csv')
        self.assertEqual(list(comoving.columns), ['xi', 'rho', 'J'])
        concentration = pd.read_csv(directory / 'concentration.csv')
        self.assertEqual(len(concentration), 3)
        self.assertTrue(np.all(concentration['second_moment'] <= concentration['second_moment_bound'] * 1.01))
        metadata = json.loads((directory / METADATA_FILE).read_text())
        self.assertLess(metadata['mass_drift'], 1e-10)
        self.assertIn('g_minus', metadata['pathway_bounds'])

        grid = metadata['grid']
        self.assertLessEqual(
            metadata['marginal_growth_rate'], metadata['pathway_bounds']['lambda_plus'] * sum(grid['weights'])
        )
        weight = dict(zip(grid['velocities'], grid['weights']))
        self.assertEqual([s['t'] for s in metadata['snapshots']], [4.5, 9.0])
        self.assertEqual(metadata['snapshots'][-1]['files'], ['q_0002.csv', 'qbar_0002.csv'])
        q = pd.read_csv(directory / 'q_0002.csv')
        qbar = pd.read_csv(directory / 'qbar_0002.csv')
        self.assertEqual(list(q.columns), ['x', 'v', 'y', 'q'])
        self.assertEqual(list(qbar.columns), ['x', 'v', 'qbar'])
        self.assertEqual(len(q), 8 * 2 * 32)
        q_mass = float((q['q'] * q['v'].map(weight)).sum()) * grid['dx'] * grid['dy']
        qbar_mass = float((qbar['qbar'] * qbar['v'].map(weight)).sum()) * grid['dx']
        self.assertAlmostEqual(q_mass, 1.0, delta=1e-10)
        self.assertAlmostEqual(qbar_mass, 1.0, delta=1e-10)
        p = pd.read_csv(directory / 'p_final.csv')
        self.assertEqual(list(p.columns), ['x', 'v', 'm', 'p'])
        self.assertTrue(np.all(p['p'] >= 0))

    def test_simulate_agents_reproducible(self):
        """Test identical seeds give identical CSV bytes"""
        ini = self.write_ini(
            '[pathway]\nH = 4\n[grid]\nnx = 50\n[solver]\nt_end_s = 0.5\n'
            '[agents]\nn_cells = 200\nsnapshot_every_s = 0.25\ndump_agents = on\n'
        )
        first, second = self.workspace / 'a', self.workspace / 'b'
        self.call('simulate_agents', config=str(ini), out=str(first), seed=5)
        self.call('simulate_agents', config=str(ini), out=str(second), seed=5)
        for name in ('profiles.csv', 'profile_final.csv', 'agents.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())
        metadata = json.loads((first / METADATA_FILE).read_text())
        self.assertEqual(metadata['seed'], 5)
        self.assertEqual(metadata['config']['agents']['seed'], 5)

    def test_worker_count_does_not_change_bytes(self):
        """Test identical CSV bytes for one and four workers"""
        ini = self.write_ini(
            '[pathway]\nnoise_enabled = on\n[grid]\nnx = 8\nny = 32\n'
            '[solver]\nt_end_s = 4\nsnapshot_every_s = 2\ny_scheme = implicit\n[study]\neps_list = 0.4, 0.2\n'
        )
        outputs = {}
        for threads in (1, 4):
            with self.settings(RT_THREADS=threads):
                for command in ('simulate_full', 'convergence'):
                    directory = self.workspace / f'{command}-{threads}'
                    self.call(command, config=str(ini), out=str(directory))
                    outputs[command, threads] = {
                        path.name: path.read_bytes() for path in sorted(directory.glob('*.csv'))
                    }
        for command in ('simulate_full', 'convergence'):
            self.assertTrue(outputs[command, 1])
            self.assertEqual(outputs[command, 1], outputs[command, 4])

    def test_compare(self):
        """Test two identical runs compare at distance zero"""
        ini = self.write_ini('[grid]\nnx = 20\n[solver]\nt_end_s = 18\n')
        for name in ('a', 'b'):
            self.call('simulate_limit', config=str(ini), out=str(self.workspace / name))
        report_dir = self.workspace / 'report'
        self.call('compare', str(self.workspace / 'a'), str(self.workspace / 'b'), out=str(report_dir))
        report = json.loads((report_dir / 'compare.json').read_text())
        self.assertEqual(report['l1_rho'], 0.0)
        self.assertEqual(report['l1_J'], 0.0)

    def test_invalid_configuration(self):
        """Test a violated constraint exits with an error and no outputs"""
        ini = self.write_ini('[agents]\ndt_agent_s = 1.0\n')
        directory = self.workspace / 'agents'
        with self.assertRaises(CommandError):
            self.call('simulate_agents', config=str(ini), out=str(directory))
        self.assertFalse(directory.exists())

    def test_missing_config(self):
        """Test a missing configuration file"""
        with self.assertRaises(CommandError):
            self.call('kernel', config=str(self.workspace / 'absent.ini'), out=str(self.workspace / 'k'))


@tag('acceptance')
@skipUnless(settings.RUN_ACCEPTANCE, 'long scenario; set RUN_ACCEPTANCE=True')
class AcceptanceTest(WorkspaceMixin, SimpleTestCase):
    """Long scenarios checking the asymptotic claims"""

    def test_dirac_concentration(self):
        """Test the y-profile collapses at -c/G(0) under a uniform ramp"""
        signal = SignalField(SignalSpec(kind=SignalKind.UNIFORM_RAMP, ramp_rate=0.5))
        pathway = PathwayParams(epsilon=0.05)
        grid = FullGrid.two_velocity(4, 800.0, 20.0, ny=256)
        solver = FullKineticSolver(grid, signal, pathway)
        state = solver.run(solver.initialize(), t_end=1.0, dt=0.05)
        profile = y_profile(state)
        y = grid.y_centers
        mean = float((y * profile).sum() / profile.sum())
        variance = float(((y - mean) ** 2 * profile).sum() / profile.sum())
        self.assertLess(abs(mean + 0.5 / pathway.G0), grid.dy)
        self.assertLess(variance, 4 * grid.dy ** 2)
        self.assertLess(state.mass_drift(), 1e-10)

    def test_gaussian_concentration(self):
        """Test the noisy y-profile has variance 1/G(0)"""
        signal = SignalField(SignalSpec(kind=SignalKind.STATIC, SA=0.0))
        pathway = PathwayParams(epsilon=0.05, noise_enabled=True)
        grid = FullGrid.two_velocity(4, 800.0, 20.0, ny=256)
        solver = FullKineticSolver(grid, signal, pathway, y_scheme='implicit')
        state = solver.run(solver.initialize(InitialSpec(y_variance=0.05)), t_end=1.0, dt=0.05)
        variance = fit_gaussian_variance(grid.y_centers, y_profile(state))
        self.assertAlmostEqual(variance * pathway.G0, 1.0, delta=0.05)

    def test_convergence_slow_wave(self):
        """Test the epsilon sweep on the slow wave passes"""
        directory = self.workspace / 'convergence'
        call_command('convergence', out=str(directory), u=0.4, stdout=StringIO())
        verdict = json.loads((directory / 'verdict.json').read_text())
        self.assertEqual(verdict['verdict'], 'PASS')
        moments = pd.read_csv(directory / 'convergence.csv')['second_moment_max']
        self.assertLessEqual(moments.max(), 2 * moments.iloc[0])
        bounds = verdict['pathway_bounds']
        self.assertLessEqual(verdict['growth_rate_max'], bounds['lambda_plus'] * 2)
        self.assertLess(verdict['mass_drift_max'], 1e-10)

    def test_agents_match_full_model(self):
        """Test binned agents against the full model within 3 standard errors"""
        signal = SignalField(SignalSpec(wave_speed_u=0.4))
        pathway = PathwayParams(H=4.0, epsilon=0.1)
        grid = FullGrid.two_velocity(50, 800.0, 20.0, ny=128)
        t_end = 50.0

        solver = FullKineticSolver(grid, signal, pathway)
        state = solver.run(solver.initialize(), t_end)
        rho_full = marginal(state) @ grid.weights

        n_cells = 20000
        pop = AgentPopulation.create(n_cells, signal, pathway, grid.velocities, seed=17)
        run_agents(pop, signal, t_end)
        rho_agents, _ = bin_population(pop, grid)

        p = rho_full * grid.dx
        standard_error = np.sqrt(p * (1 - p) / n_cells) / grid.dx
        agreeing = int(np.sum(np.abs(rho_agents - rho_full) <= 3 * standard_error))
        self.assertGreaterEqual(agreeing, 47)
        self.assertTrue(math.isclose(rho_agents.sum() * grid.dx, 1.0))

    def traveling_wave_profiles(self, wave_speed, t_end=200.0, n_cells=20000):
        """Final limit-model and agent profiles on a 50-cell grid for one wave speed"""
        signal = SignalField(SignalSpec(wave_speed_u=wave_speed))
        pathway = PathwayParams(H=4.0, epsilon=0.1)
        grid = FullGrid.two_velocity(50, 800.0, 20.0)

        solver = LimitKineticSolver(grid, signal, pathway)
        limit = density_flux(solver.run(solver.initialize(), t_end))
        pop = AgentPopulation.create(n_cells, signal, pathway, grid.velocities, seed=29)
        agents = density_flux(run_agents(pop, signal, t_end), grid)
        return signal, grid, limit, agents

    def test_traveling_wave_agents_against_limit(self):
        """Test agents follow the limit model on the slow wave and depart from it on the fast one"""
        signal, grid, limit, agents = self.traveling_wave_profiles(0.4)
        slow_distance = l1_distance(limit, agents).rho
        slow_gap = phase_shift(agents.rho, signal, agents.t) - phase_shift(limit.rho, signal, limit.t)
        self.assertLess(slow_distance, 0.1)
        self.assertLess(abs(slow_gap), grid.dx)

        signal, grid, limit, agents = self.traveling_wave_profiles(8.0)
        fast_distance = l1_distance(limit, agents).rho
        fast_gap = phase_shift(agents.rho, signal, agents.t) - phase_shift(limit.rho, signal, limit.t)
        self.assertGreaterEqual(fast_distance, 3 * slow_distance)
        self.assertGreaterEqual(abs(fast_gap), 2 * grid.dx)
