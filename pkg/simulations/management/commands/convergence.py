from analytics.services.convergence import convergence_study
from simulations.services.outputs import pathway_bounds
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Run the epsilon-convergence study of the full model towards the limit model'

    def run(self, config, output, options):
        signal = config.signal_field()
        pathway = config.pathway_params()
        grid = config.full_grid()
        eps_list = config.study.eps_list
        self.stdout.write(f'Epsilon sweep {eps_list} to t={config.solver.t_end_s} s')

        study = convergence_study(
            signal, pathway, grid, eps_list, config.solver.t_end_s,
            dt=config.solver.dt_s or None,
            y_scheme=config.solver.y_scheme,
            snapshot_every=config.solver.snapshot_every_s,
            truncation_tol=config.solver.truncation_tol,
        )

        output.write_frame('convergence.csv', study.to_frame())
        verdict = study.verdict()
        verdict['pathway_bounds'] = pathway_bounds(pathway, grid.y_max)
        output.write_json('verdict.json', verdict)
        output.metadata.update({
            'grid': grid.describe(),
            'verdict': verdict['verdict'],
            'mass_drift': verdict['mass_drift_max'],
        })

        for row in study.rows:
            self.stdout.write(f'  epsilon={row.epsilon:<6g} l1_rho={row.l1_rho:.4e} l1_J={row.l1_J:.4e}')
        style = self.style.SUCCESS if study.passed else self.style.WARNING
        self.stdout.write(style(f'Verdict: {verdict["verdict"]}'))
