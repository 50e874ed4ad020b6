from rest_framework import mixins, viewsets, status
from rest_framework.decorators import action
from rest_framework.response import Response
from django.db import transaction
from celery.result import AsyncResult
import logging
from .models import TrainingRun
from .serializers import (
    TrainingRunSerializer,
    TrainingRunCreateSerializer,
    EvaluateRunSerializer,
    PredictSerializer,
)
from .services.exceptions import OdorError
from .services.training_service import predict as predict_labels
from .tasks import train_model_task, evaluate_checkpoint_task

logger = logging.getLogger(__name__)


class TrainingRunViewSet(mixins.CreateModelMixin,
                         mixins.ListModelMixin,
                         mixins.RetrieveModelMixin,
                         viewsets.GenericViewSet):
    queryset = TrainingRun.objects.all()

    def get_serializer_class(self):
        if self.action == 'create':
            return TrainingRunCreateSerializer
        return TrainingRunSerializer

    def create(self, request, *args, **kwargs):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        run = serializer.save(status='pending')

        # Queue after commit so the worker can see the row
        def queue_task():
            result = train_model_task.delay(str(run.id))
            TrainingRun.objects.filter(id=run.id).update(
                metadata={**run.metadata, 'celery_task_id': result.id}
            )

        transaction.on_commit(queue_task)

        return Response({
            'run_id': str(run.id),
            'status': 'queued',
            'message': 'Training run queued for background execution',
        }, status=status.HTTP_202_ACCEPTED)

    @action(detail=True, methods=['post'])
    def evaluate(self, request, pk=None):
        run = self.get_object()
        serializer = EvaluateRunSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)

        if not run.checkpoint_path:
            return Response(
                {'error': 'This run has no checkpoint yet'},
                status=status.HTTP_400_BAD_REQUEST
            )

        data_path = serializer.validated_data['data_path']
        result = evaluate_checkpoint_task.delay(str(run.id), data_path)
        return Response({
            'run_id': str(run.id),
            'task_id': result.id,
            'status': 'queued',
        }, status=status.HTTP_202_ACCEPTED)

    @action(detail=True, methods=['post'])
    def predict(self, request, pk=None):
        """Synchronous prediction with the run's best checkpoint"""
        run = self.get_object()
        serializer = PredictSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)

        if not run.checkpoint_path:
            return Response(
                {'error': 'This run has no checkpoint yet'},
                status=status.HTTP_400_BAD_REQUEST
            )

        try:
            predictions = predict_labels(
                run.checkpoint_path,
                serializer.validated_data['smiles'],
                top_k=serializer.validated_data.get('top_k'),
            )
        except OdorError as e:
            logger.error(f"Prediction failed for run {run.id}: {str(e)}", exc_info=True)
            return Response({'success': False, 'error': str(e)}, status=status.HTTP_400_BAD_REQUEST)

        return Response({
            'run_id': str(run.id),
            'predictions': [p.to_dict() for p in predictions],
        })

    @action(detail=False, methods=['get'])
    def task_status(self, request):
        """Check the status of a Celery task"""
        task_id = request.query_params.get('task_id')
        if not task_id:
            return Response(
                {'error': 'task_id parameter is required'},
                status=status.HTTP_400_BAD_REQUEST
            )

        result = AsyncResult(task_id)
        response_data = {
            'task_id': task_id,
            'status': result.status,
            'ready': result.ready(),
        }
        if result.ready():
            if result.successful():
                response_data['result'] = result.result
            else:
                response_data['error'] = str(result.info)

        return Response(response_data)
