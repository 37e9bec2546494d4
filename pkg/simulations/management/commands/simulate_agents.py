import pandas as pd

from agents.services.population import AgentPopulation, max_stable_dt, run
from analytics.services.diagnostics import density_flux
from simulations.services.outputs import pathway_bounds
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Run the cell-level run-and-tumble simulation and bin density/flux snapshots'

    def run(self, config, output, options):
        signal = config.signal_field()
        pathway = config.pathway_params()
        grid = config.full_grid()
        dt = config.agents.dt_agent_s or max_stable_dt(pathway)
        if pathway.lambda_plus > 1000:
            self.stdout.write(self.style.WARNING(
                f'lambda_plus = {pathway.lambda_plus:.1f}/s forces dt = {dt:.2e} s; consider a lower H'
            ))

        population = AgentPopulation.create(
            config.agents.n_cells, signal, pathway, grid.velocities, grid.weights, seed=config.seed,
        )
        profiles, dumps = [], []

        def record(pop):
            profiles.append(density_flux(pop, grid))
            if config.agents.dump_agents:
                dumps.append(pop.to_frame().assign(t=pop.t))
            self.stdout.write(f'  t={pop.t:.3f} s  tumbles in last step {int(pop.tumbled.sum())}')

        population = run(population, signal, config.solver.t_end_s, dt=dt,
                         snapshot_every=config.agents.snapshot_every_s, on_snapshot=record)

        output.write_profiles(profiles, signal.wave_speed)
        if dumps:
            output.write_frame('agents.csv', pd.concat(dumps, ignore_index=True)[['t', 'x', 'v', 'm']])
        output.metadata.update({
            'grid': grid.describe(),
            'dt_s': dt,
            'steps': population.step_index,
            'n_cells': population.count,
            'seed': population.rng_seed,
            'mass_drift': 0.0,
            'pathway_bounds': pathway_bounds(pathway, grid.y_max),
        })
