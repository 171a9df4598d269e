"""Controllers package initialization"""

from .transport_controller import get_transport_controller, TransportController
from .flow_controller import get_flow_controller, FlowController
from .checks_controller import get_checks_controller, ChecksController
from .suite_controller import get_suite_controller, SuiteController

__all__ = [
    'get_transport_controller',
    'TransportController',
    'get_flow_controller',
    'FlowController',
    'get_checks_controller',
    'ChecksController',
    'get_suite_controller',
    'SuiteController'
]
