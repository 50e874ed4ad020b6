"""
WSGI entry point for the odor_gat project (used by gunicorn).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "odor_gat.settings")

application = get_wsgi_application()
