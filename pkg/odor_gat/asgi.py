"""
ASGI entry point for the odor_gat project.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "odor_gat.settings")

application = get_asgi_application()
