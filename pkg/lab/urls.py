from django.urls import path
from . import views

urlpatterns = [
    path('experiments', views.create_experiment, name='create_experiment'),
    path('experiments/<uuid:uuid>', views.get_experiment_status, name='get_experiment_status'),
    # Instance endpoints
    path('instances/validate', views.validate_instance_view, name='validate_instance'),
    path('instances/oracle', views.oracle_view, name='oracle'),
    path('instances/generate', views.generate_instance_view, name='generate_instance'),
    path('health', views.health_check, name='health'),
]
