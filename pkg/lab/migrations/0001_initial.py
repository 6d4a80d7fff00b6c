# Generated by Django 4.2.7 on 2026-10-18 09:12

from django.db import migrations, models
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('uuid', models.UUIDField(default=uuid.uuid4, editable=False, help_text='Unique identifier for this experiment run', primary_key=True, serialize=False)),
                ('name', models.CharField(blank=True, default='', help_text='Optional label for the run', max_length=255)),
                ('config', models.JSONField(help_text='Experiment configuration as submitted')),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('processing', 'Processing'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', help_text='Current status of the run', max_length=20)),
                ('output_dir', models.CharField(blank=True, default='', help_text='Directory holding the per-replication CSVs and summary.json', max_length=512)),
                ('summary', models.JSONField(blank=True, help_text='Summary of the final regrets once completed', null=True)),
                ('error_message', models.TextField(blank=True, help_text='Error message if the run failed', null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True, help_text='When the run was requested')),
                ('updated_at', models.DateTimeField(auto_now=True, help_text='When the run was last updated')),
            ],
            options={
                'verbose_name': 'Experiment run',
                'verbose_name_plural': 'Experiment runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
