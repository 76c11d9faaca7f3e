"""Invertible bit <-> amplitude mappings: arithmetic DM and sphere shaping."""

from .adm import (
    AdmCorruptionError,
    AdmUnderflowError,
    QuantizedCdf,
    adm_decode,
    adm_encode,
    quantize_distribution,
    quantize_many,
)
from .ess import EssTrellis, ess_build, ess_decode, ess_encode, find_ess_operating_point

__all__ = [
    "AdmCorruptionError",
    "AdmUnderflowError",
    "EssTrellis",
    "adm_decode",
    "adm_encode",
    "ess_build",
    "ess_decode",
    "ess_encode",
    "find_ess_operating_point",
    "QuantizedCdf",
    "quantize_distribution",
    "quantize_many",
]
