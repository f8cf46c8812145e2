"""Grasp planning on superquadric decompositions of object meshes."""

__version__ = "0.1.0"
