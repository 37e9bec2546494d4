"""
Shared plumbing of the simulation commands
"""
import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from chemotaxis_lab.exceptions import SimulationError
from simulations.services.outputs import RunOutput
from simulations.services.run_config import RunConfig, apply_overrides, parse_config

logger = logging.getLogger(__name__)


class SimulationCommand(BaseCommand):
    """
    Base for commands that load a run configuration and fill one output
    directory. Subclasses implement run(config, output).
    """

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            help='Run configuration (INI or metadata JSON); defaults from settings otherwise',
        )
        parser.add_argument(
            '--out',
            type=str,
            help='Output directory (default: <OUTPUT_DIR>/<command>)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Seed of the agent random stream',
        )
        parser.add_argument(
            '--u',
            type=float,
            help='Wave speed in um/s (0.4 slow wave, 8 fast wave)',
        )
        parser.add_argument(
            '--epsilon',
            type=float,
            help='Scale-separation parameter',
        )
        parser.add_argument(
            '--noise',
            choices=['on', 'off'],
            help='Internal methylation noise',
        )

    def load_config(self, options) -> RunConfig:
        config = parse_config(options.get('config'), validate=False)
        config = apply_overrides(
            config,
            u=options.get('u'),
            epsilon=options.get('epsilon'),
            noise=options.get('noise'),
            seed=options.get('seed'),
        )
        return config.validate()

    def output_directory(self, config: RunConfig, options) -> Path:
        return Path(options['out']) if options.get('out') else config.output_dir / self.command_name

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            directory = self.output_directory(config, options)
            self.stdout.write(f'{self.command_name}: writing to {directory}')
            with RunOutput(directory, self.command_name, config) as output:
                self.run(config, output, options)
        except ValidationError as e:
            raise CommandError('Invalid configuration:\n  - ' + '\n  - '.join(e.messages))
        except SimulationError as e:
            where = f' at epsilon={e.epsilon}' if hasattr(e, 'epsilon') else ''
            raise CommandError(f'{self.command_name} failed{where}: {e}')

        self.stdout.write(self.style.SUCCESS(f'{self.command_name} finished: {directory}'))

    def run(self, config: RunConfig, output: RunOutput, options) -> None:
        raise NotImplementedError
