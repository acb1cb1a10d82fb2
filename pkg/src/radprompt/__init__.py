"""Radiomics-conditioned prompt learning for three-class lung nodule classification.

Pipeline: portable volume container -> 1 mm resampling, consensus mask and
crop -> fixed-bin-width discretization, filter bank and texture matrices ->
1312-feature radiomics vector -> MetaNet prompt head over frozen encoders ->
stratified cross-validation and metrics.
"""

__version__ = "0.1.0"
