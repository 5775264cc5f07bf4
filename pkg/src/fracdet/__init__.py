"""fracdet: a small-data two-stage lesion detector.

Anchor-based region proposals, a multi-task detection loss with exact
gradients, a tiny trainable CNN, greedy NMS, box-preserving augmentation
and VOC-style evaluation, wired together behind one CLI.
"""

__version__ = "0.1.0"
