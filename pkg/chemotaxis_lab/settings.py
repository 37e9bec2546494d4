"""
Django settings for chemotaxis_lab project.

Run-and-tumble model hierarchy laboratory: agent-based cells with
intracellular methylation, the kinetic-transport equation with internal
state, and the limiting kinetic equation with path-wise tumbling kernel.

The project never serves HTTP. Everything is reached through the service
layers of the apps and their management commands.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='chemotaxis-lab-local-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost,127.0.0.1', cast=lambda v: [s.strip() for s in v.split(',')])


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Local apps
    'signaling',
    'kinetics',
    'agents',
    'analytics',
    'simulations',
]

MIDDLEWARE = []

# Nothing is persisted; the database is only declared so `manage.py check` is happy.
DATABASES = {
    'default': {
        'ENGINE': config('DB_ENGINE', default='django.db.backends.sqlite3'),
        'NAME': config('DB_NAME', default=str(BASE_DIR / 'db.sqlite3')),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True


# Logging Configuration
LOG_LEVEL = config('LOG_LEVEL', default='INFO')
LOG_FILE = config('LOG_FILE', default='')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        }
        for app in ('chemotaxis_lab', 'signaling', 'kinetics', 'agents', 'analytics', 'simulations')
    },
}

if LOG_FILE:
    LOGGING['handlers']['file'] = {
        'level': LOG_LEVEL,
        'class': 'logging.FileHandler',
        'filename': LOG_FILE,
        'formatter': 'simple',
    }
    for logger_config in LOGGING['loggers'].values():
        logger_config['handlers'].append('file')


# ===== EXECUTION =====

# Worker cap for slice-parallel solver stages and the epsilon study runner
RT_THREADS = config('RT_THREADS', default=1, cast=int)

# Long acceptance scenarios are skipped unless explicitly requested
RUN_ACCEPTANCE = config('RUN_ACCEPTANCE', default=False, cast=bool)


# ===== MODEL DEFAULTS (parameter table of the biophysical model) =====

# Extracellular signal and log-sensing receptor
SIGNAL_CONFIG = {
    'KIND': config('SIGNAL_KIND', default='traveling-wave'),
    'S0_UM': config('SIGNAL_S0_UM', default=500.0, cast=float),
    'SA_UM': config('SIGNAL_SA_UM', default=100.0, cast=float),
    'ELL_UM': config('SIGNAL_ELL_UM', default=800.0, cast=float),
    'U_UM_PER_S': config('SIGNAL_U_UM_PER_S', default=0.4, cast=float),
    'RAMP_RATE_PER_S': config('SIGNAL_RAMP_RATE_PER_S', default=0.5, cast=float),
    'RAMP_WINDOW_S': config('SIGNAL_RAMP_WINDOW_S', default=10.0, cast=float),
    'M0': config('SIGNAL_M0', default=1.0, cast=float),
    'K_I_UM': config('SIGNAL_K_I_UM', default=18.2, cast=float),
    'K_A_UM': config('SIGNAL_K_A_UM', default=3000.0, cast=float),
}

# Intracellular pathway and tumbling response
PATHWAY_CONFIG = {
    'N': config('PATHWAY_N', default=6, cast=int),
    'ALPHA': config('PATHWAY_ALPHA', default=1.7, cast=float),
    'A0': config('PATHWAY_A0', default=0.5, cast=float),
    'Z0_PER_S': config('PATHWAY_Z0_PER_S', default=0.14, cast=float),
    'TAU_S': config('PATHWAY_TAU_S', default=0.8, cast=float),
    'H': config('PATHWAY_H', default=10.0, cast=float),
    'SIGMA': config('PATHWAY_SIGMA', default=1.0, cast=float),
    'EPSILON': config('PATHWAY_EPSILON', default=0.1, cast=float),
    'NOISE_ENABLED': config('PATHWAY_NOISE_ENABLED', default=False, cast=bool),
    'QUADRATURE_ORDER': config('PATHWAY_QUADRATURE_ORDER', default=64, cast=int),
}

# Phase-space grid shared by both PDE solvers
GRID_CONFIG = {
    'NX': config('GRID_NX', default=200, cast=int),
    'NY': config('GRID_NY', default=128, cast=int),
    'Y_HALFWIDTH': config('GRID_Y_HALFWIDTH', default=3.0, cast=float),
    'V0_UM_PER_S': config('GRID_V0_UM_PER_S', default=20.0, cast=float),
}

# Time stepping (dt_s of 0 means "largest stable step")
SOLVER_CONFIG = {
    'DT_S': config('SOLVER_DT_S', default=0.0, cast=float),
    'T_END_S': config('SOLVER_T_END_S', default=400.0, cast=float),
    'SNAPSHOT_EVERY_S': config('SOLVER_SNAPSHOT_EVERY_S', default=100.0, cast=float),
    'KERNEL_MODE': config('SOLVER_KERNEL_MODE', default='deterministic'),
    'Y_SCHEME': config('SOLVER_Y_SCHEME', default='explicit'),
}

# Agent-based (cell-level) simulation
AGENTS_CONFIG = {
    'N_CELLS': config('AGENTS_N_CELLS', default=20000, cast=int),
    'SEED': config('AGENTS_SEED', default=20240601, cast=int),
    'DT_AGENT_S': config('AGENTS_DT_AGENT_S', default=0.0, cast=float),
    'SNAPSHOT_EVERY_S': config('AGENTS_SNAPSHOT_EVERY_S', default=100.0, cast=float),
    'DUMP_AGENTS': config('AGENTS_DUMP_AGENTS', default=False, cast=bool),
}

# Epsilon-convergence study and kernel tabulation
STUDY_CONFIG = {
    'EPS_LIST': config('STUDY_EPS_LIST', default='0.4,0.2,0.1,0.05', cast=lambda v: [float(s) for s in v.split(',') if s.strip()]),
    'KERNEL_U_MIN': config('STUDY_KERNEL_U_MIN', default=-5.0, cast=float),
    'KERNEL_U_MAX': config('STUDY_KERNEL_U_MAX', default=5.0, cast=float),
    'KERNEL_POINTS': config('STUDY_KERNEL_POINTS', default=201, cast=int),
}

OUTPUT_DIR = config('OUTPUT_DIR', default=str(BASE_DIR / 'runs'))
