"""Neural radiance field pipeline for rover-style image corpora.

Stages: corpus fetch, quality filtering, calibration ingestion, hash-grid
radiance field training, novel-view rendering, and bootstrap uncertainty maps.
"""

__version__ = "0.1.0"
