"""Offline rendering of training curves and Gram heatmaps from CSV exports.

Pure file-to-file transformations over the trainer's fixed export schemas;
every render also writes a JSON sidecar describing what was plotted, so the
output is testable without image diffing.
"""

__version__ = "0.1.0"
