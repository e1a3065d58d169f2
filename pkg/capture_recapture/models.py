from django.db import models
from django.utils import timezone
import uuid


class EstimationRun(models.Model):
    """
    One invocation of a capture_recapture command, with everything needed
    to replay it: the command, its options, the input digest and the seed
    """
    # replay keeps no row of its own; the command it re-runs records one
    COMMAND_CHOICES = [
        ('fit', 'THBM posterior fit'),
        ('estimate', 'Classical estimators'),
        ('simulate', 'Simulation study'),
        ('report', 'Stratified surveillance report'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    command = models.CharField(max_length=20, choices=COMMAND_CHOICES, help_text="Command that produced the run")
    input_digest = models.CharField(max_length=64, blank=True, help_text="SHA-256 of the canonical input")
    seed = models.BigIntegerField(null=True, blank=True, help_text="Root random seed")
    config = models.JSONField(default=dict, help_text="Command options as given")
    tool_version = models.CharField(max_length=50, help_text="Version of the estimation code")
    output_dir = models.CharField(max_length=500, help_text="Directory holding the run outputs")
    output_digests = models.JSONField(default=dict, help_text="SHA-256 per output file")

    started_at = models.DateTimeField(default=timezone.now, help_text="When the run started")
    finished_at = models.DateTimeField(null=True, blank=True, help_text="When the run finished")
    success = models.BooleanField(default=False, help_text="Whether the run completed")
    error_message = models.TextField(blank=True, help_text="Failure reason, if any")

    class Meta:
        db_table = 'trs_estimation_run'
        verbose_name = 'Estimation Run'
        verbose_name_plural = 'Estimation Runs'
        ordering = ['-started_at']

    def __str__(self):
        status = 'ok' if self.success else 'failed'
        return f"{self.command} - {self.started_at:%Y-%m-%d %H:%M:%S} - {status}"

    @property
    def duration(self):
        """Wall-clock seconds, once finished"""
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()
