# Generated by Django 5.2.5 on 2026-10-19 09:00

import django.utils.timezone
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EstimationRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('command', models.CharField(choices=[('fit', 'THBM posterior fit'), ('estimate', 'Classical estimators'), ('simulate', 'Simulation study'), ('report', 'Stratified surveillance report')], help_text='Command that produced the run', max_length=20)),
                ('input_digest', models.CharField(blank=True, help_text='SHA-256 of the canonical input', max_length=64)),
                ('seed', models.BigIntegerField(blank=True, help_text='Root random seed', null=True)),
                ('config', models.JSONField(default=dict, help_text='Command options as given')),
                ('tool_version', models.CharField(help_text='Version of the estimation code', max_length=50)),
                ('output_dir', models.CharField(help_text='Directory holding the run outputs', max_length=500)),
                ('output_digests', models.JSONField(default=dict, help_text='SHA-256 per output file')),
                ('started_at', models.DateTimeField(default=django.utils.timezone.now, help_text='When the run started')),
                ('finished_at', models.DateTimeField(blank=True, help_text='When the run finished', null=True)),
                ('success', models.BooleanField(default=False, help_text='Whether the run completed')),
                ('error_message', models.TextField(blank=True, help_text='Failure reason, if any')),
            ],
            options={
                'verbose_name': 'Estimation Run',
                'verbose_name_plural': 'Estimation Runs',
                'db_table': 'trs_estimation_run',
                'ordering': ['-started_at'],
            },
        ),
    ]
