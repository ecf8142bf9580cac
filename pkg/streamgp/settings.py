"""
Django settings for the streamgp project.

The project has no web surface and no database: it is driven entirely through
management commands (``python manage.py fit ...``). Engine defaults live in
``STREAMGP`` and can be overridden from the environment or a ``.env`` file.
"""
import os
from pathlib import Path
from dotenv import load_dotenv
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing is signed or served.
SECRET_KEY = os.getenv('STREAMGP_SECRET_KEY', 'streamgp-local-only')

DEBUG = os.getenv('STREAMGP_DEBUG', 'false').lower() == 'true'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'mixture',
    'harness',
]

# No database: the engine persists to versioned JSON files instead.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

# Engine defaults. Precedence at run time:
# these values < --config key=value file < command-line flags.
STREAMGP = {
    'PARTICLES': int(os.getenv('STREAMGP_PARTICLES', '16')),
    'ALPHA': float(os.getenv('STREAMGP_ALPHA', '2.0')),
    'BLOCKS': int(os.getenv('STREAMGP_BLOCKS', '5')),
    'TEST_BLOCKS': int(os.getenv('STREAMGP_TEST_BLOCKS', '5')),
    'MINIBATCH': int(os.getenv('STREAMGP_MINIBATCH', '0')),
    'THREADS': int(os.getenv('STREAMGP_THREADS', '1')),
    'RESAMPLE_THRESHOLD': float(os.getenv('STREAMGP_RESAMPLE_THRESHOLD', '0.5')),
    'MAX_ITERS': int(os.getenv('STREAMGP_MAX_ITERS', '100')),
    'GRAD_TOL': float(os.getenv('STREAMGP_GRAD_TOL', '1e-4')),
    'SEED': int(os.getenv('STREAMGP_SEED', '0')),
}

LOG_LEVEL = os.getenv('STREAMGP_LOG_LEVEL', 'WARNING').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'mixture': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
        },
        'harness': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
        },
    },
}
