"""
Django settings for the trsestimate project.

Every TRS_* value can be overridden through an environment variable of the
same name, or through a .env file at the project root.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


def _env_int(name, default):
    return int(os.environ.get(name, default))


def _env_float(name, default):
    return float(os.environ.get(name, default))


def _env_bool(name, default):
    return os.environ.get(name, str(default)).strip().lower() in ('1', 'true', 'yes', 'on')


SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-trsestimate-local-only')

DEBUG = _env_bool('DJANGO_DEBUG', False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'capture_recapture',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('TRS_DATABASE', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Estimation defaults
TRS_GIBBS_ITERATIONS = _env_int('TRS_GIBBS_ITERATIONS', 200_000)
TRS_GIBBS_BURN_IN_FRACTION = _env_float('TRS_GIBBS_BURN_IN_FRACTION', 0.1)
TRS_GIBBS_THIN = _env_int('TRS_GIBBS_THIN', 10)
TRS_DEFAULT_SEED = _env_int('TRS_DEFAULT_SEED', 20240501)
TRS_BOOTSTRAP_REPLICATES = _env_int('TRS_BOOTSTRAP_REPLICATES', 1000)
TRS_SIMULATION_BOOTSTRAP_REPLICATES = _env_int('TRS_SIMULATION_BOOTSTRAP_REPLICATES', 200)
TRS_CI_LEVEL = _env_float('TRS_CI_LEVEL', 0.95)
TRS_WORKERS = _env_int('TRS_WORKERS', 1)
TRS_OUTPUT_DIR = Path(os.environ.get('TRS_OUTPUT_DIR', BASE_DIR / 'runs'))

# Long MCMC and Monte-Carlo checks in the test-suite
TRS_RUN_SLOW_TESTS = _env_bool('TRS_RUN_SLOW_TESTS', False)

TRS_LOG_LEVEL = os.environ.get('TRS_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'timestamped': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'timestamped',
        },
    },
    'loggers': {
        'capture_recapture': {
            'handlers': ['console'],
            'level': TRS_LOG_LEVEL,
            'propagate': False,
        },
    },
}
