"""Toolkit for finding AI-generated face images in profile-image corpora.

Submodules follow the processing stages: corpus ingestion, face-based
pre-filtering, CNN scoring, threshold calibration, labeling assistance
(alignment + generator inversion), duplicate detection, and account/tweet
analytics. The `pipeline` layer wires them together behind a CLI and a
small HTTP service for the labeling console.
"""

__version__ = "0.1.0"
