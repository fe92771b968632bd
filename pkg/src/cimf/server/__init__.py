"""
CIMF server module.

The gateway service and the aiohttp REST application built on it.
"""

from .gateway import CimfGateway
from .main import create_app, run_server

__all__ = ['CimfGateway', 'create_app', 'run_server']
