import pandas as pd

from analytics.services.diagnostics import (
    concentration_record, density_flux, fit_gaussian_variance, marginal_growth_rate, second_moment_bound,
)
from kinetics.services.full_solver import FullKineticSolver, marginal, y_profile
from simulations.services.outputs import (
    internal_state_frame, methylation_frame, pathway_bounds, velocity_marginal_frame,
)
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Run the full kinetic model with internal state and write density/flux snapshots'

    def run(self, config, output, options):
        signal = config.signal_field()
        pathway = config.pathway_params()
        grid = config.full_grid()
        solver = FullKineticSolver(
            grid, signal, pathway, y_scheme=config.solver.y_scheme, truncation_tol=config.solver.truncation_tol,
        )
        dt = config.solver.dt_s or solver.default_dt()

        profiles, trail = [], []

        def record(state):
            profiles.append(density_flux(state))
            trail.append(concentration_record(state))
            output.write_snapshot(state.t, {
                'q': internal_state_frame(grid, state.q),
                'qbar': velocity_marginal_frame(grid, marginal(state), 'qbar'),
            })
            self.stdout.write(f'  t={state.t:.3f} s  mass drift {state.mass_drift():.2e}')

        state = solver.initialize()
        trail.append(concentration_record(state))
        state = solver.run(state, config.solver.t_end_s, dt=dt,
                           snapshot_every=config.solver.snapshot_every_s, on_snapshot=record)

        bounds = pathway_bounds(pathway, grid.y_max)
        u_max = signal.max_pathwise_derivative(grid.velocities)
        concentration = pd.DataFrame([r.to_dict() for r in trail])
        concentration['second_moment_bound'] = [
            second_moment_bound(trail[0].second_moment, u_max, bounds['g_minus'], state.total_mass_initial,
                                pathway.epsilon, r.t)
            for r in trail
        ]

        output.write_profiles(profiles, signal.wave_speed)
        output.write_frame('concentration.csv', concentration)
        density = y_profile(state)
        output.write_frame('y_profile.csv', pd.DataFrame({'y': grid.y_centers, 'density': density}))
        output.write_frame('p_final.csv', methylation_frame(state, signal))

        output.metadata.update({
            'grid': grid.describe(),
            'dt_s': dt,
            'steps': state.steps,
            'mass_drift': state.mass_drift(),
            'pathway_bounds': bounds,
            'max_pathwise_derivative': u_max,
            'marginal_growth_rate': marginal_growth_rate(trail),
            'derivative_method': signal.derivative_method,
            'y_scheme': config.solver.y_scheme,
        })
        if pathway.noise_enabled:
            output.metadata['fitted_y_variance'] = fit_gaussian_variance(grid.y_centers, density)
