"""Glucose data model: CGM grids, SMBG samples, positional encoding, network input."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from glyco.errors import DimensionError, ParameterError, ValidationError

DAYS = 14
SLOTS_PER_DAY = 288
PE_DIM = 16
GLUCOSE_SCALE = 400.0  # mg/dL mapped to 1.0
GLUCOSE_CEIL = 1.5
MAX_GLUCOSE = 600.0

ORIGINS = ("real", "random-selected", "hybrid-selected", "active-selected", "behavioral")


@dataclass(frozen=True)
class CgmGrid:
    """Dense D x T glucose window in mg/dL."""

    values: np.ndarray
    patient_id: str = "synthetic"
    window_start: int = 0  # first day index of the window

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"CGM grid must be 2D (days x slots), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("CGM grid contains non-finite values")
        if np.any(v <= 0) or np.any(v > MAX_GLUCOSE):
            raise ValidationError(f"CGM values must lie in (0, {MAX_GLUCOSE:g}] mg/dL")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def days(self) -> int:
        return self.values.shape[0]

    @property
    def slots(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SmbgSample:
    """Sparse observations ``m_s`` (0 where missing) and mask ``m_m`` (1 where missing)."""

    m_s: np.ndarray
    m_m: np.ndarray
    origin: str = "real"
    patient_id: str = "synthetic"
    window_start: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.m_s, dtype=np.float64)
        m = np.asarray(self.m_m, dtype=np.float64)
        if s.shape != m.shape or s.ndim != 2:
            raise DimensionError(f"m_s {s.shape} and m_m {m.shape} must be matching 2D arrays")
        if self.origin not in ORIGINS:
            raise ParameterError(f"unknown sample origin {self.origin!r}")
        if np.any(s < 0):
            raise ValidationError("SMBG values must be non-negative")
        if not np.array_equal(s > 0, m == 0) or not np.all((m == 0) | (m == 1)):
            raise ValidationError("mask/value complementarity violated: m_s > 0 must coincide with m_m == 0")
        s.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "m_s", s)
        object.__setattr__(self, "m_m", m)

    @classmethod
    def from_observations(cls, grid_values: np.ndarray, observed: np.ndarray, **kwargs) -> "SmbgSample":
        observed = np.asarray(observed, dtype=bool)
        m_s = np.where(observed, grid_values, 0.0)
        return cls(m_s=m_s, m_m=(~observed).astype(np.float64), **kwargs)

    @property
    def observed(self) -> np.ndarray:
        return self.m_m == 0

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def observed_values(self) -> np.ndarray:
        return self.m_s[self.observed]


@dataclass(frozen=True)
class PositionalEncoding:
    m_p: np.ndarray
    P: int


def sinusoid_table(n: int, P: int) -> np.ndarray:
    """Standard sinusoidal table of shape (n, P): sin on even, cos on odd columns."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 1.0 / 10000.0 ** (2.0 * np.arange(P // 2) / P)
    table = np.empty((n, P))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def build_positional_encoding(D: int = DAYS, T: int = SLOTS_PER_DAY, P: int = PE_DIM) -> PositionalEncoding:
    """Day and time-of-day sinusoids summed together and collapsed over the encoding axis."""
    if P <= 0 or P % 2:
        raise ParameterError(f"encoding dimension P must be a positive even number, got {P}")
    if D < 1 or T < 1:
        raise ParameterError(f"D and T must be >= 1, got D={D}, T={T}")
    day = sinusoid_table(D, P).sum(axis=1)
    time = sinusoid_table(T, P).sum(axis=1)
    m_p = day[:, None] + time[None, :]
    m_p.setflags(write=False)
    return PositionalEncoding(m_p=m_p, P=P)


def time_encoding(T: int = SLOTS_PER_DAY, P: int = PE_DIM) -> np.ndarray:
    """Collapsed time-of-day encoding for a single day (length T)."""
    if P <= 0 or P % 2:
        raise ParameterError(f"encoding dimension P must be a positive even number, got {P}")
    return sinusoid_table(T, P).sum(axis=1)


def normalize_glucose(value):
    """mg/dL -> unitless, ``value / 400`` with a 1.5 ceiling."""
    v = np.asarray(value, dtype=np.float64)
    if np.any(v < 0):
        raise ValidationError("glucose cannot be negative")
    out = np.minimum(v / GLUCOSE_SCALE, GLUCOSE_CEIL)
    return float(out) if out.ndim == 0 else out


def denormalize_glucose(value):
    out = np.asarray(value, dtype=np.float64) * GLUCOSE_SCALE
    return float(out) if out.ndim == 0 else out


def assemble_input(sample: SmbgSample, pe: PositionalEncoding) -> np.ndarray:
    """Stack (normalised values, missing mask, position) into a 3 x D x T array."""
    if sample.m_s.shape != pe.m_p.shape:
        raise DimensionError(f"sample shape {sample.m_s.shape} does not match encoding {pe.m_p.shape}")
    values = np.minimum(normalize_glucose(sample.m_s), 1.0)
    return np.stack([values, sample.m_m, pe.m_p])
