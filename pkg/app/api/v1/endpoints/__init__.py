# API endpoints package
from . import experiments, presets
