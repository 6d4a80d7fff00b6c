"""
URL configuration for the cbus_lab project.

The lab app owns every endpoint; the admin is kept for browsing
ExperimentRun records.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('', include('lab.urls')),
]
