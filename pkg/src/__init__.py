# sketchlab: reinforcement-learned sketch abstraction
__version__ = '0.1.0'

from .config import Config, RunConfig, load_run_config
from .errors import SketchLabError
from .sketch import VectorSketch, build_segment_table, remove_segment
