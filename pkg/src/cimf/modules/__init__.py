"""
Bundled step executables for the flood workflow.
"""

from .bundled import BUNDLED, bootstrap, flood_template, module_spec

__all__ = ["BUNDLED", "bootstrap", "flood_template", "module_spec"]
