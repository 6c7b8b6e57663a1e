"""Geometric-relational classification of BIM objects from IFC files."""

from .dataset import BimObject, ClassLabel, DatasetSplit
from .model import GRModel
from .relations import RelationCountVector, build_vectors
from .step import StepModel, parse

__all__ = ["BimObject", "ClassLabel", "DatasetSplit", "GRModel", "RelationCountVector",
           "StepModel", "build_vectors", "parse"]
__version__ = "0.1.0"
