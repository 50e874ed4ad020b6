from rest_framework import serializers
from .models import TrainingRun
from .services.exceptions import ConfigError
from .services.training_service import TrainConfig


class TrainingRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = TrainingRun
        fields = [
            'id', 'name', 'config', 'data_path', 'output_dir', 'status',
            'epochs_completed', 'metrics', 'checkpoint_path', 'error_message',
            'metadata', 'created_at', 'started_at', 'completed_at'
        ]
        read_only_fields = fields


class TrainingRunCreateSerializer(serializers.ModelSerializer):
    class Meta:
        model = TrainingRun
        fields = ['name', 'config', 'data_path', 'output_dir']

    def validate_config(self, value):
        try:
            return TrainConfig.from_dict(value).to_dict()
        except ConfigError as e:
            raise serializers.ValidationError(str(e))


class EvaluateRunSerializer(serializers.Serializer):
    data_path = serializers.CharField()


class PredictSerializer(serializers.Serializer):
    smiles = serializers.ListField(child=serializers.CharField(allow_blank=True), allow_empty=False)
    top_k = serializers.IntegerField(required=False, min_value=1)
