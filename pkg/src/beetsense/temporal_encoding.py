"""Sinusoidal acquisition-date encodings and their injection into input tensors.

A day-of-year d in [1, 365] maps onto the annual cycle as

    e_s = sin(2*pi*d / 365),  e_c = cos(2*pi*d / 365)

and the pair is added element-wise to the input tensor before the forward
pass. Two injection modes exist: ``split`` adds e_s to the first half of the
channels and e_c to the second half (default, preserves both components);
``sum`` adds the scalar e_s + e_c to every channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DayOutOfRange, ShapeMismatch

ENCODING_MODES = ("split", "sum")


@dataclass(frozen=True)
class DayEncoding:
    day: int
    e_s: float
    e_c: float


def encode_day(day: int) -> DayEncoding:
    """Sinusoidal encoding of one day-of-year, evaluated in double precision."""
    if not 1 <= int(day) <= 365:
        raise DayOutOfRange(f"day {day} outside [1, 365]")
    day = int(day)
    angle = 2.0 * math.pi * day / 365.0
    return DayEncoding(day=day, e_s=math.sin(angle), e_c=math.cos(angle))


def encoding_offsets(dates, num_channels: int, mode: str = "split") -> np.ndarray:
    """Per-(timepoint, channel) additive offsets for a 7-date acquisition calendar.

    Returns an array of shape (len(dates), num_channels) that broadcasts
    against a (T, C, H, W) tensor after adding two trailing axes.
    """
    if mode not in ENCODING_MODES:
        raise ValueError(f"unknown encoding mode {mode!r}")
    enc = [encode_day(d) for d in dates]
    out = np.empty((len(enc), num_channels), dtype=np.float64)
    if mode == "split":
        half = (num_channels + 1) // 2
        for t, e in enumerate(enc):
            out[t, :half] = e.e_s
            out[t, half:] = e.e_c
    else:
        for t, e in enumerate(enc):
            out[t, :] = e.e_s + e.e_c
    return out


def apply_encoding(tensor: np.ndarray, dates, mode: str = "split") -> np.ndarray:
    """Return a new tensor with date encodings added to every pixel.

    ``tensor`` has shape (T, C, H, W); ``dates`` is one day-of-year per
    timepoint. The input is never mutated.
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 4:
        raise ShapeMismatch(f"expected a 4-D (T, C, H, W) tensor, got shape {tensor.shape}")
    if len(dates) != tensor.shape[0]:
        raise ShapeMismatch(
            f"{len(dates)} dates for {tensor.shape[0]} timepoints"
        )
    offsets = encoding_offsets(dates, tensor.shape[1], mode=mode)
    return tensor + offsets[:, :, None, None].astype(tensor.dtype, copy=False)
