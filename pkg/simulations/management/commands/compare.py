from pathlib import Path

from analytics.services.diagnostics import l1_distance, phase_shift
from chemotaxis_lab.exceptions import DegenerateInputError
from signaling.services.signal_field import SignalKind
from simulations.services.outputs import METADATA_FILE, read_profile
from ._common import SimulationCommand


class Command(SimulationCommand):
    help = 'Compare the final profiles of two run directories (relative L1 distance and phase shift)'

    def add_arguments(self, parser):
        parser.add_argument('first', type=str, help='Reference run directory')
        parser.add_argument('second', type=str, help='Run directory compared against the reference')
        super().add_arguments(parser)

    def load_config(self, options):
        # the signal of the reference run unless a configuration is given
        if not options.get('config'):
            options['config'] = str(Path(options['first']) / METADATA_FILE)
        return super().load_config(options)

    def run(self, config, output, options):
        first = read_profile(options['first'])
        second = read_profile(options['second'])
        distance = l1_distance(first, second)

        report = {
            'first': {'path': options['first'], 'source': first.source, 't': first.t},
            'second': {'path': options['second'], 'source': second.source, 't': second.t},
            'l1_rho': distance.rho,
            'l1_J': distance.J,
        }
        signal = config.signal_field()
        if signal.spec.kind in (SignalKind.TRAVELING_WAVE, SignalKind.STATIC):
            for key, profile in (('first', first), ('second', second)):
                try:
                    report[key]['phase_shift_um'] = phase_shift(profile.rho, signal, profile.t)
                except DegenerateInputError as e:
                    report[key]['phase_shift_um'] = None
                    report[key]['phase_shift_flag'] = str(e)
                    self.stdout.write(self.style.WARNING(f'  {key}: no phase shift ({e})'))
            shifts = [report[key].get('phase_shift_um') for key in ('first', 'second')]
            if None not in shifts:
                report['phase_shift_difference_um'] = shifts[1] - shifts[0]
                report['phase_shift_difference_cells'] = (shifts[1] - shifts[0]) / first.dx

        output.write_json('compare.json', report)
        output.metadata['comparison'] = {'first': options['first'], 'second': options['second']}
        self.stdout.write(f'  l1_rho={distance.rho:.4e}  l1_J={distance.J:.4e}')
