"""Shadow-pool construction and shadow-model based inference attacks."""

from .attacks import LiRA, RMIA, GaussianModel, ScoreTable, SharedModels, build_attack_dataset
from .cost import CostLedger, cost_compare
from .data import Dataset, MappingMatrix, RandomSource, build_mapping, gen_blobs, gen_property_tabular
from .pool import PoolArchitecture, ShadowPool, enumerate_pathways
from .shadow import MaskSpec, ShadowModel, augment_model

__all__ = [
    "CostLedger", "Dataset", "GaussianModel", "LiRA", "MappingMatrix", "MaskSpec",
    "PoolArchitecture", "RMIA", "RandomSource", "ScoreTable", "ShadowModel", "ShadowPool",
    "SharedModels", "augment_model", "build_attack_dataset", "build_mapping", "cost_compare",
    "enumerate_pathways", "gen_blobs", "gen_property_tabular",
]
__version__ = "0.1.0"
