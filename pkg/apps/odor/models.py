from django.db import models
import uuid


class TrainingRun(models.Model):
    """One training job: its config, where it writes, and how it ended"""
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('success', 'Success'),
        ('failed', 'Failed'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    name = models.CharField(max_length=255)
    config = models.JSONField(default=dict, help_text="TrainConfig document")
    data_path = models.CharField(max_length=1024, help_text="smiles,labels CSV on the worker's filesystem")
    output_dir = models.CharField(max_length=1024, blank=True)
    status = models.CharField(max_length=50, choices=STATUS_CHOICES, default='pending')
    epochs_completed = models.IntegerField(default=0)
    metrics = models.JSONField(default=dict)  # MetricReport of the latest evaluation
    checkpoint_path = models.CharField(max_length=1024, blank=True)
    error_message = models.TextField(blank=True)
    metadata = models.JSONField(default=dict)  # celery task ids, split sizes
    created_at = models.DateTimeField(auto_now_add=True)
    started_at = models.DateTimeField(null=True, blank=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']
        db_table = 'training_runs'
        indexes = [
            models.Index(fields=['status', 'created_at'], name='training_runs_status_idx'),
        ]

    def __str__(self):
        return f"{self.name} - {self.status}"
