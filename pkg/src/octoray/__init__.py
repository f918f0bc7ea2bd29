"""Occupancy-octree mapping with BVH-accelerated, parallel ray shooting."""

from octoray.geometry import Aabb, GridSpec, Label, Ray, VoxelKey
from octoray.octree import OccupancyOctree, OccupancyParams, classification_diff
from octoray.pipeline import PipelineStats, Scan, UpdateSet, insert_scan, insert_scan_baseline

__all__ = ["Aabb", "GridSpec", "Label", "Ray", "VoxelKey", "OccupancyOctree", "OccupancyParams",
           "classification_diff", "PipelineStats", "Scan", "UpdateSet", "insert_scan", "insert_scan_baseline"]
