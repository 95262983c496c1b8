"""Measure how host-space perturbations of an attack move ML network intrusion detectors.

Pipeline: pcap -> bidirectional flows -> labeled, sanitized datasets ->
classifiers -> baseline / HsP / adversarial-retraining result tables, plus
feature-ratio and out-of-distribution analysis of attack variants.
"""

__version__ = "0.1.0"
