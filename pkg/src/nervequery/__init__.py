"""Fuzzy spatial-relation queries for recognising nerve bundles in tractograms."""
from ._accel import backend, set_threads
from .binding import BindingError, BoundQuery, bind, stage_landscape
from .engine import BundleReport, EngineConfig, FiberVerdict, evaluate_fiber, evaluate_fibers, filter_tractogram
from .metrics import MetricsReport, ald, ascd, assd, dice, evaluate, precision
from .phantom import PhantomSpec, generate, preset
from .query import Query, QuerySyntaxError, format_query, load_queries, parse
from .relations import RelationParams, alpha_cut, landscape_for
from .tracts import Tractogram, centerline, read_tck, resample, voxelize, write_tck
from .volume import BinaryMask, FuzzyLandscape, Grid, LabelVolume

__version__ = "0.1.0"
