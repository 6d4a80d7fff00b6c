from django.db import models
import uuid


class ExperimentRun(models.Model):
    """
    Model to track experiment runs started through the API and their status.
    """
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('processing', 'Processing'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    uuid = models.UUIDField(
        primary_key=True,
        default=uuid.uuid4,
        editable=False,
        help_text="Unique identifier for this experiment run"
    )
    name = models.CharField(
        max_length=255,
        blank=True,
        default='',
        help_text="Optional label for the run"
    )
    config = models.JSONField(
        help_text="Experiment configuration as submitted"
    )
    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='pending',
        help_text="Current status of the run"
    )
    output_dir = models.CharField(
        max_length=512,
        blank=True,
        default='',
        help_text="Directory holding the per-replication CSVs and summary.json"
    )
    summary = models.JSONField(
        blank=True,
        null=True,
        help_text="Summary of the final regrets once completed"
    )
    error_message = models.TextField(
        blank=True,
        null=True,
        help_text="Error message if the run failed"
    )
    created_at = models.DateTimeField(
        auto_now_add=True,
        help_text="When the run was requested"
    )
    updated_at = models.DateTimeField(
        auto_now=True,
        help_text="When the run was last updated"
    )

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Experiment run'
        verbose_name_plural = 'Experiment runs'

    def __str__(self):
        return f"ExperimentRun {self.uuid} - {self.status}"
