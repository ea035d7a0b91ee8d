"""Desk-scale video object segmentation lab.

Trains a compact memory-matching segmenter on procedurally generated
videos where only two frames per video carry labels, then closes the gap
to full supervision with pseudo-label banks built by bidirectional
inference.
"""

__version__ = "0.1.0"
