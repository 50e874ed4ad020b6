from django.contrib import admin
from .models import TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ['name', 'status', 'epochs_completed', 'created_at', 'completed_at']
    list_filter = ['status', 'created_at', 'completed_at']
    search_fields = ['name', 'data_path', 'error_message']
    readonly_fields = ['id', 'created_at', 'started_at', 'completed_at', 'epochs_completed']

    fieldsets = (
        ('Run', {
            'fields': ('id', 'name', 'status', 'epochs_completed')
        }),
        ('Configuration', {
            'fields': ('config', 'data_path', 'output_dir')
        }),
        ('Results', {
            'fields': ('metrics', 'checkpoint_path', 'error_message')
        }),
        ('Metadata', {
            'fields': ('metadata', 'created_at', 'started_at', 'completed_at'),
            'classes': ('collapse',)
        }),
    )

    def has_add_permission(self, request):
        # Runs are created through the API or the train command
        return False
