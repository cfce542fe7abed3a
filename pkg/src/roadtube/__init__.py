"""Spatiotemporal agent detection toolkit: box geometry, low-light
enhancement, augmentation, toy fusion blocks, tube linking, ensembling and
video-mAP evaluation."""

from .datamodel import (AgentTube, Box, CategoryTable, Detection, ImageSize, TubeEntry,
                        ValidationError, VideoRecord)

__version__ = "0.1.0"

__all__ = ["AgentTube", "Box", "CategoryTable", "Detection", "ImageSize", "TubeEntry",
           "ValidationError", "VideoRecord"]
