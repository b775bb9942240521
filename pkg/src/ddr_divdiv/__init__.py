"""Discrete de Rham div-div complex on polygonal meshes, with serendipity reduction."""

from .mesh import Mesh, MeshError, build_mesh, family_mesh, shape_mesh
from .ddr_full import FullComplex, LocalDDR

__all__ = ["Mesh", "MeshError", "build_mesh", "family_mesh", "shape_mesh", "FullComplex", "LocalDDR"]
__version__ = "0.1.0"
