"""Detection-head planning toolkit.

Given object-detection annotations and a target input resolution, this
package computes per-head scale ranges and object-matching ratios,
recommends head configurations, estimates parameter/MAC costs of detector
descriptors, and numerically verifies a lightweight dilated-convolution
module (gradients, receptive field, gridding coverage).
"""

__version__ = "0.1.0"
