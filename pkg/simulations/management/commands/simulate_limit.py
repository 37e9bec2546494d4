from analytics.services.diagnostics import density_flux
from kinetics.services.limit_solver import LimitKineticSolver
from simulations.services.outputs import pathway_bounds, velocity_marginal_frame
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Run the limit kinetic model with the path-wise tumbling kernel'

    def run(self, config, output, options):
        signal = config.signal_field()
        pathway = config.pathway_params()
        grid = config.full_grid()
        solver = LimitKineticSolver(
            grid, signal, pathway, kernel_mode=config.solver.kernel_mode,
            quadrature_order=config.pathway.quadrature_order,
        )
        dt = config.solver.dt_s or solver.default_dt()

        profiles = []

        def record(state):
            profiles.append(density_flux(state))
            output.write_snapshot(state.t, {'pbar': velocity_marginal_frame(grid, state.pbar, 'pbar')})
            self.stdout.write(f'  t={state.t:.3f} s  mass drift {state.mass_drift():.2e}')

        state = solver.run(solver.initialize(), config.solver.t_end_s, dt=dt,
                           snapshot_every=config.solver.snapshot_every_s, on_snapshot=record)

        output.write_profiles(profiles, signal.wave_speed)
        output.metadata.update({
            'grid': grid.describe(),
            'dt_s': dt,
            'steps': state.steps,
            'mass_drift': state.mass_drift(),
            'kernel_mode': str(config.solver.kernel_mode),
            'pathway_bounds': pathway_bounds(pathway, grid.y_max),
            'derivative_method': signal.derivative_method,
        })
