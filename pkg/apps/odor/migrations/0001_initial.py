from django.db import migrations, models
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="TrainingRun",
            fields=[
                ("id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("name", models.CharField(max_length=255)),
                ("config", models.JSONField(default=dict, help_text="TrainConfig document")),
                ("data_path", models.CharField(help_text="smiles,labels CSV on the worker's filesystem", max_length=1024)),
                ("output_dir", models.CharField(blank=True, max_length=1024)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Pending"),
                            ("running", "Running"),
                            ("success", "Success"),
                            ("failed", "Failed"),
                        ],
                        default="pending",
                        max_length=50,
                    ),
                ),
                ("epochs_completed", models.IntegerField(default=0)),
                ("metrics", models.JSONField(default=dict)),
                ("checkpoint_path", models.CharField(blank=True, max_length=1024)),
                ("error_message", models.TextField(blank=True)),
                ("metadata", models.JSONField(default=dict)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("started_at", models.DateTimeField(blank=True, null=True)),
                ("completed_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "db_table": "training_runs",
                "ordering": ["-created_at"],
                "indexes": [models.Index(fields=["status", "created_at"], name="training_runs_status_idx")],
            },
        ),
    ]
