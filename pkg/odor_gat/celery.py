"""
Celery application for background training and evaluation runs
"""
import os
from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'odor_gat.settings')

app = Celery('odor_gat')

# Celery settings are the CELERY_-prefixed keys of the Django settings.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Picks up odor.tasks
app.autodiscover_tasks()
