"""
RMT Spectral Pruning Toolkit

Marchenko-Pastur fitting of weight spectra, data-free pruning of dense
networks, and the experiment labs built on them.
"""

from .config import get_config

__app_name__ = get_config().APP_NAME
__version__ = get_config().VERSION

__all__ = ['__app_name__', '__version__', 'get_config']
