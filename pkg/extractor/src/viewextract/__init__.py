"""Image-to-multi-view feature extraction for the ugd container format."""

from .extract import ExtractionPlan, corner_crops, extract, read_image_list

__all__ = ["ExtractionPlan", "corner_crops", "extract", "read_image_list"]
