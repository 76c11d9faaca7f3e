"""Single-span fiber link parameters and derived physical quantities."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import constants

C_KM_PER_PS = constants.c * 1e-15  # km / ps


@dataclass(frozen=True)
class LinkParams:
    span_km: float = 205.0
    alpha_db_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_w_km: float = 1.3
    symbol_rate_gbd: float = 50.0
    wavelength_nm: float = 1550.0
    nf_db: float = 5.0
    launch_dbm: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "gamma_w_km":  # zero gives a linear link
                if not v >= 0:
                    raise ValueError(f"gamma_w_km must be non-negative, got {v}")
            elif f.name != "launch_dbm" and not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")

    # derived quantities (ps, km, W)
    @property
    def alpha(self) -> float:
        """Power attenuation in 1/km."""
        return self.alpha_db_km / (10.0 * np.log10(np.e))

    @property
    def beta2(self) -> float:
        """Group-velocity dispersion in ps^2/km."""
        lam = self.wavelength_nm * 1e-12  # km
        d = self.dispersion_ps_nm_km * 1e12  # ps / km / km
        return -d * lam**2 / (2 * np.pi * C_KM_PER_PS)

    @property
    def l_eff(self) -> float:
        return (1.0 - np.exp(-self.alpha * self.span_km)) / self.alpha

    @property
    def symbol_period_ps(self) -> float:
        return 1e3 / self.symbol_rate_gbd

    @property
    def gain_db(self) -> float:
        return self.alpha_db_km * self.span_km

    @property
    def launch_w(self) -> float:
        return dbm_to_w(self.launch_dbm)

    @property
    def carrier_hz(self) -> float:
        return constants.c / (self.wavelength_nm * 1e-9)

    def ase_psd(self) -> float:
        """ASE power spectral density per polarization (W/Hz) of the post-span EDFA."""
        return ase_psd(self.gain_db, self.nf_db, self.carrier_hz)

    def ase_variance(self) -> float:
        """ASE power (W, one polarization) in a symbol-rate bandwidth."""
        return self.ase_psd() * self.symbol_rate_gbd * 1e9

    def ase_variance_normalized(self, launch_dbm: float | None = None) -> float:
        """ASE variance relative to the per-polarization signal power."""
        p = dbm_to_w(self.launch_dbm if launch_dbm is None else launch_dbm)
        return self.ase_variance() / p

    def with_launch(self, dbm: float) -> "LinkParams":
        return replace(self, launch_dbm=float(dbm))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown link parameters: {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "LinkParams":
        text = Path(path).read_text()
        d = json.loads(text)
        if isinstance(d, dict) and "preset" in d:
            base = PRESETS[d.pop("preset")]
            return replace(base, **{k: float(v) for k, v in d.items()})
        return cls.from_dict(d)


def dbm_to_w(dbm: float) -> float:
    return 1e-3 * 10.0 ** (np.asarray(dbm) / 10.0)


def ase_psd(gain_db: float, nf_db: float, carrier_hz: float) -> float:
    """Per-polarization ASE PSD (W/Hz): (G - 1) n_sp h nu."""
    g = 10.0 ** (gain_db / 10.0)
    nf = 10.0 ** (nf_db / 10.0)
    if g <= 1.0:
        return 0.0
    n_sp = (g * nf - 1.0) / (2.0 * (g - 1.0))
    return (g - 1.0) * n_sp * constants.h * carrier_hz


WDM_LINK = LinkParams()
# desk-scale default: one channel on a shorter span. The symbol rate stays at
# 50 GBd; at lower rates too little dispersion accrues within the effective
# length for the (m, n, m+n) kernel to track the waveform-level NLIN.
DESK_LINK = LinkParams(span_km=100.0, symbol_rate_gbd=50.0)
PRESETS = {"wdm-link": WDM_LINK, "desk-link": DESK_LINK}
