"""Rigid-motion equivariant point-cloud convolution with a coordinate-based
kernel, written against numpy with hand-derived gradients."""

from .autograd import Tape, Var
from .coset import DoubleCosetParams, encode_double_coset, encode_pairs, gaussian_embedding
from .geom import (NeighborList, PointCloud, RigidTransform, apply_transform, augment_cosets,
                   ball_query, farthest_point_sampling, knn, pca_least_eigenvector, random_se3)
from .kernel import (CoefficientNet, StorageCounters, coeff_forward, conv_backward,
                     conv_forward_explicit, conv_forward_implicit, counter_model, dominant_cost,
                     measure_costs)
from .nn import (AdamState, BlockConfig, adam_step, cosine_lr, eckconv_block, feature_propagation,
                 residual_block, scale_augment)

__version__ = "0.1.0"
