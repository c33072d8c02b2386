"""
Occupancy mask and masked scatter of neighbor encodings into the social grid.

An occupancy mask is a ``(channels, cells)`` uint8 array. A social encoding is a ``(channels, cells, d)`` array whose
rows at empty cells are exactly zero. Encodings are placed in row-major order of the set mask bits, which is also the
``(channel, cell)`` order of a sample's ``neighbor_histories``.
"""
import numpy as np

from trajectory_prediction.data_pipeline import GRID_CELLS, GRID_CHANNELS
from trajectory_prediction.exceptions import IntegrityError, ShapeError


def build_mask(sample, channels=GRID_CHANNELS, cells=GRID_CELLS):
    """
    Build the occupancy mask of a sample from its neighbor histories.

    Raises:
        IntegrityError on a duplicate cell or a neighbor listed in the target's own cell
    """
    target_cell = (channels // 2, cells // 2)
    mask = np.zeros((channels, cells), dtype=np.uint8)
    for neighbor in sample.neighbor_histories:
        position = (neighbor.channel, neighbor.cell)
        if position == target_cell:
            raise IntegrityError(
                f'Sample of vehicle {sample.vehicle_id} at frame {sample.anchor_frame} lists a neighbor in the '
                f'target cell {target_cell}.'
            )
        if mask[position]:
            raise IntegrityError(
                f'Sample of vehicle {sample.vehicle_id} at frame {sample.anchor_frame} lists cell {position} twice.'
            )
        mask[position] = 1
    return mask


def _check_popcount(mask, encodings):
    occupied = int(np.count_nonzero(mask))
    if encodings.ndim != 2 or encodings.shape[0] != occupied:
        raise ShapeError(
            f'Mask has {occupied} occupied cells but {encodings.shape[0] if encodings.ndim else 0} '
            f'neighbor encodings were given (shape {encodings.shape}).'
        )


def masked_scatter(mask, nbr_encodings):
    """
    Place neighbor encodings into their grid cells, zeros elsewhere.

    Args:
        mask: (..., channels, cells) binary mask; a leading batch dimension is allowed
        nbr_encodings: (N, d) encodings, N = number of set bits, in row-major order of the set bits

    Returns:
        (..., channels, cells, d) social encoding
    """
    mask = np.asarray(mask).astype(bool)
    nbr_encodings = np.asarray(nbr_encodings)
    _check_popcount(mask, nbr_encodings)
    social = np.zeros(mask.shape + (nbr_encodings.shape[1],), dtype=nbr_encodings.dtype)
    social[mask] = nbr_encodings
    return social


def masked_gather(mask, d_social):
    """
    Adjoint of masked_scatter: pick the gradient rows of the occupied cells, in scatter order.
    """
    return np.asarray(d_social)[np.asarray(mask).astype(bool)]


def flatten_social(soc):
    """
    Flatten a social encoding row-major over (channel, cell, feature).

    A leading batch dimension is kept: (B, C, G, d) -> (B, C*G*d).
    """
    soc = np.asarray(soc)
    if soc.ndim == 3:
        return soc.reshape(-1)
    return soc.reshape(soc.shape[0], -1)


def unflatten_social(vector, channels=GRID_CHANNELS, cells=GRID_CELLS, dim=None):
    """
    Inverse of flatten_social.
    """
    vector = np.asarray(vector)
    if dim is None:
        dim = vector.shape[-1] // (channels * cells)
    return vector.reshape(vector.shape[:-1] + (channels, cells, dim))
