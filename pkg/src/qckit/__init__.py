"""Quadrature-based convolution on non-uniform meshes, with a small autoencoder toolkit."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractError,
    FormatError,
    InterpolationError,
    MeshGenerationError,
    MetricError,
    QCKitError,
    ShapeError,
    TrainingError,
    UnsupportedMeshError,
)
from .index_map import IndexMap, OpCounter, build_index_map, choose_alpha
from .mesh import Mesh, load_mesh, nonuniform_mesh, random_downsample, save_mesh, uniform_grid
from .quadconv import QuadConvLayer
from .quadrature import QuadratureWeights, newton_cotes_weights
