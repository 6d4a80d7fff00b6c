from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('uuid', 'name', 'status', 'created_at', 'updated_at')
    list_filter = ('status',)
    readonly_fields = ('uuid', 'created_at', 'updated_at')
