import numpy as np
import pandas as pd

from signaling.services.pathway import kernel_table
from simulations.services.outputs import pathway_bounds
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Tabulate the deterministic and noise-averaged tumbling kernels T(u)'

    def run(self, config, output, options):
        pathway = config.pathway_params()
        study = config.study
        u = np.linspace(study.kernel_u_min, study.kernel_u_max, study.kernel_points)
        if study.kernel_u_min < 0 < study.kernel_u_max and not np.any(u == 0.0):
            u = np.sort(np.append(u, 0.0))

        table = pd.DataFrame(kernel_table(u, pathway, config.pathway.quadrature_order))
        output.write_frame('kernel.csv', table)
        output.metadata.update({
            'points': int(u.size),
            'quadrature_order': config.pathway.quadrature_order,
            'pathway_bounds': pathway_bounds(pathway, config.grid.y_halfwidth),
        })
        if np.any(u == 0.0):
            self.stdout.write(f'  T(0) = {float(table.loc[table["u"] == 0.0, "T_deterministic"].iloc[0]):.6f} /s')
