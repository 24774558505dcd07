"""Pseudo-label refinement: CAMs, affinity from attention, random-walk propagation and PAR."""

from .affinity import (
    AffinityLabel,
    TransitionMatrix,
    affinity_loss,
    derive_affinity_label,
    propagate,
    transition_matrix,
)
from .attention import AttentionParams, AttentionStack, HeadCombiner, mhsa_forward, symmetrize_combine
from .cam import generate_cam, minmax_normalize, threshold_dual, threshold_single, top_k_pool
from .evaluation import ConfusionMatrix, accumulate, miou
from .losses import LossWeights, classification_loss, combine, segmentation_loss
from .par import ParConfig, build_kernel, build_neighbors, refine
from .tensor_io import LabelImage, RgbImage, Tensor, read_image, read_labels, read_tensor, write_labels, write_tensor

__version__ = "0.1.0"
