"""
Django settings for the Kemeny project.

The project has no web surface: it is driven through management commands
(`python manage.py gen|ingest|solve|bench|train`). Settings only carry the
defaults those commands resolve before calling into the library code.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('KEMENY_SECRET_KEY', 'kemeny-insecure-command-line-only')

DEBUG = os.environ.get('KEMENY_DEBUG', '0') == '1'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'core',
    'rankings',
    'solvers',
    'policy',
]

DATABASES = {}

KEMENY = {
    'DEFAULT_SEED': int(os.environ.get('KEMENY_SEED', 1234)),
    'WORKERS': int(os.environ.get('KEMENY_WORKERS', 1)),
    'EXACT_MAX_N': 20,
    'BRUTE_FORCE_MAX_N': 10,
    'MC4_TELEPORT': 0.05,
    'MC4_TOL': 1e-10,
    'MC4_MAX_ITERS': 10000,
    'OUTPUT_DIR': Path(os.environ.get('KEMENY_OUTPUT_DIR', BASE_DIR / 'output')),
}

LOG_LEVEL = os.environ.get('KEMENY_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
        'record': {
            'format': '%(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
        'progress': {
            'class': 'logging.StreamHandler',
            'formatter': 'record',
        },
    },
    'loggers': {
        'core': {'handlers': ['console'], 'level': LOG_LEVEL},
        'rankings': {'handlers': ['console'], 'level': LOG_LEVEL},
        'solvers': {'handlers': ['console'], 'level': LOG_LEVEL},
        'policy': {'handlers': ['console'], 'level': LOG_LEVEL},
        'kemeny.progress': {'handlers': ['progress'], 'level': 'INFO', 'propagate': False},
    },
}

# Internationalization
# https://docs.djangoproject.com/en/5.1/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True
