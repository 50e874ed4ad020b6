"""
Celery tasks for background training and checkpoint evaluation
"""
from celery import shared_task
from django.conf import settings
from django.utils import timezone
import logging

logger = logging.getLogger(__name__)


@shared_task(name='odor.train_model')
def train_model_task(run_id):
    """
    Train the model described by a TrainingRun - runs in the Celery worker
    """
    from .models import TrainingRun
    from .services.training_service import TrainConfig, train

    run = None
    try:
        run = TrainingRun.objects.get(id=run_id)
        run.status = 'running'
        run.started_at = timezone.now()
        if not run.output_dir:
            run.output_dir = str(settings.ODOR_OUTPUT_DIR / str(run.id))
        run.save()

        logger.info(f"Starting training run {run.name} ({run.id})")
        config = TrainConfig.from_dict(run.config)

        def record_epoch(entry):
            # Progress only; the final save below writes the rest
            TrainingRun.objects.filter(id=run.id).update(epochs_completed=entry['epoch'])

        result = train(config, run.data_path, run.output_dir, on_epoch=record_epoch)

        run.refresh_from_db()
        run.status = 'success'
        run.epochs_completed = config.epochs
        run.metrics = result.test_report.to_dict()
        run.checkpoint_path = str(result.best_checkpoint)
        run.metadata = {
            **run.metadata,
            'final_checkpoint': str(result.final_checkpoint),
            'best_epoch': result.best_epoch,
            'num_train': result.num_train,
            'num_test': result.num_test,
        }
        run.completed_at = timezone.now()
        run.save()
        logger.info(f"Training run {run.name} finished, test mean AUROC {run.metrics.get('mean_auroc')}")

        return {
            'success': True,
            'run_id': str(run_id),
            'checkpoint': run.checkpoint_path,
            'metrics': run.metrics,
        }

    except TrainingRun.DoesNotExist:
        logger.error(f"TrainingRun with id {run_id} not found")
        return {'success': False, 'error': f'TrainingRun {run_id} not found'}
    except Exception as e:
        logger.error(f"Training run failed: {str(e)}", exc_info=True)
        if run:
            run.status = 'failed'
            run.error_message = str(e)
            run.completed_at = timezone.now()
            run.save()
        return {'success': False, 'error': str(e)}


@shared_task(name='odor.evaluate_checkpoint')
def evaluate_checkpoint_task(run_id, data_path):
    """
    Evaluate a finished run's checkpoint on another CSV and store the report
    """
    from .models import TrainingRun
    from .services.training_service import evaluate

    try:
        run = TrainingRun.objects.get(id=run_id)
        if not run.checkpoint_path:
            return {'success': False, 'error': f'TrainingRun {run_id} has no checkpoint'}

        report = evaluate(run.checkpoint_path, data_path).to_dict()
        evaluations = run.metadata.get('evaluations', [])
        evaluations.append({
            'data_path': data_path,
            'report': report,
            'evaluated_at': timezone.now().isoformat(),
        })
        run.metadata = {**run.metadata, 'evaluations': evaluations}
        run.save()
        logger.info(f"Evaluated run {run.name} on {data_path}: mean AUROC {report['mean_auroc']}")
        return {'success': True, 'run_id': str(run_id), 'report': report}

    except TrainingRun.DoesNotExist:
        logger.error(f"TrainingRun with id {run_id} not found")
        return {'success': False, 'error': f'TrainingRun {run_id} not found'}
    except Exception as e:
        logger.error(f"Checkpoint evaluation failed: {str(e)}", exc_info=True)
        return {'success': False, 'error': str(e)}
