from .mesh import (TriangleMesh, clean_mesh, load_mesh, min_signed_distance, sample_surface,
                   signed_distance, unsigned_distance, winding_number, write_obj, write_ply,
                   write_stl)
from .pose import Pose

__all__ = [
    "Pose", "TriangleMesh", "clean_mesh", "load_mesh", "min_signed_distance", "sample_surface",
    "signed_distance", "unsigned_distance", "winding_number", "write_obj", "write_ply",
    "write_stl",
]
