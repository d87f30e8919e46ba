"""Spectrum data model, binning, similarity and MSP text I/O."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Peak",
    "SpectrumMetadata",
    "Spectrum",
    "BinnedSpectrum",
    "BinningConfig",
    "MetadataScheme",
    "MSPFormatError",
    "MetadataError",
    "ZeroSpectrumWarning",
    "bin_spectrum",
    "cosine_distance",
    "cosine_similarity",
    "weighted_mean_mz",
    "encode_metadata",
    "read_msp",
    "write_msp",
]

logger = logging.getLogger(__name__)


class MSPFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, path=None):
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


class MetadataError(ValueError):
    pass


class ZeroSpectrumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Peak:
    mz: float
    intensity: float

    def __post_init__(self):
        if not self.mz > 0:
            raise ValueError(f"peak m/z must be positive, got {self.mz}")
        if not self.intensity >= 0:
            raise ValueError(f"peak intensity must be nonnegative, got {self.intensity}")


@dataclass(frozen=True)
class SpectrumMetadata:
    collision_energy: float
    adduct: str
    collision_type: str
    precursor_mz: float

    def __post_init__(self):
        if not self.collision_energy >= 0:
            raise ValueError("collision energy must be nonnegative")
        if not self.precursor_mz > 0:
            raise ValueError("precursor m/z must be positive")


@dataclass
class Spectrum:
    peaks: list[Peak]
    metadata: SpectrumMetadata
    compound_id: str
    name: str = ""
    smiles: str = ""

    def __post_init__(self):
        if not self.peaks:
            raise ValueError(f"spectrum {self.compound_id!r} has no peaks")

    @property
    def mz(self) -> np.ndarray:
        return np.array([p.mz for p in self.peaks])

    @property
    def intensity(self) -> np.ndarray:
        return np.array([p.intensity for p in self.peaks])


@dataclass(frozen=True)
class BinningConfig:
    bin_width: float = 1.0
    mz_min: float = 0.0
    n_bins: int = 1000

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")

    @property
    def mz_max(self) -> float:
        return self.mz_min + self.n_bins * self.bin_width


@dataclass
class BinnedSpectrum:
    bins: np.ndarray
    bin_width: float = 1.0
    mz_min: float = 0.0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 1:
            raise ValueError("bins must be a 1-d vector")
        if np.any(self.bins < 0):
            raise ValueError("binned intensities must be nonnegative")

    @property
    def m(self) -> int:
        return self.bins.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.mz_min + (np.arange(self.m) + 0.5) * self.bin_width

    def same_grid(self, other: "BinnedSpectrum") -> bool:
        return self.m == other.m and self.bin_width == other.bin_width and self.mz_min == other.mz_min


def bin_spectrum(
    spectrum: Spectrum | Sequence[Peak],
    bin_width: float = 1.0,
    mz_min: float = 0.0,
    m: int = 1000,
) -> BinnedSpectrum:
    """Sum peak intensities into ``m`` fixed-width bins and max-normalize.

    Peaks outside ``[mz_min, mz_min + m * bin_width)`` are dropped with a
    warning that reports how many were lost.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    peaks = spectrum.peaks if isinstance(spectrum, Spectrum) else spectrum
    bins = np.zeros(m, dtype=np.float64)
    dropped = 0
    for p in peaks:
        k = math.floor((p.mz - mz_min) / bin_width)
        if 0 <= k < m:
            bins[k] += p.intensity
        else:
            dropped += 1
    if dropped:
        warnings.warn(f"{dropped} peak(s) outside the binning range were dropped", stacklevel=2)
    top = bins.max()
    if top > 0:
        bins /= top
    return BinnedSpectrum(bins, bin_width, mz_min)


def _vec(y) -> np.ndarray:
    return np.asarray(y.bins if isinstance(y, BinnedSpectrum) else y, dtype=np.float64)


def cosine_distance(y, y_hat) -> float:
    """``1 - y.y_hat / (|y| |y_hat|)``; a zero vector gives 1 with a warning."""
    a, b = _vec(y), _vec(y_hat)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        warnings.warn("cosine distance of a zero vector is defined as 1", ZeroSpectrumWarning, stacklevel=2)
        return 1.0
    if np.array_equal(a, b):
        return 0.0
    return float(1.0 - np.dot(a / na, b / nb))


def cosine_similarity(y, y_hat) -> float:
    return 1.0 - cosine_distance(y, y_hat)


def weighted_mean_mz(binned: BinnedSpectrum) -> float:
    """Intensity-weighted mean of bin centers."""
    total = binned.bins.sum()
    if total <= 0:
        raise ValueError("weighted mean m/z is undefined for an all-zero spectrum")
    return float(np.dot(binned.centers, binned.bins) / total)


@dataclass(frozen=True)
class MetadataScheme:
    """Fixed-length metadata vector layout.

    ``[CE / ce_max, one-hot adduct, one-hot collision type, precursor / mz_max]``
    """

    adducts: tuple[str, ...] = ("[M+H]+", "[M+Na]+")
    collision_types: tuple[str, ...] = ("HCD", "CID")
    ce_max: float = 200.0
    precursor_mz_max: float = 1000.0

    @property
    def dim(self) -> int:
        return 2 + len(self.adducts) + len(self.collision_types)


def encode_metadata(metadata: SpectrumMetadata, scheme: MetadataScheme | None = None) -> np.ndarray:
    scheme = scheme or MetadataScheme()
    if metadata.adduct not in scheme.adducts:
        raise MetadataError(f"adduct {metadata.adduct!r} not in vocabulary {scheme.adducts}")
    if metadata.collision_type not in scheme.collision_types:
        raise MetadataError(
            f"collision type {metadata.collision_type!r} not in vocabulary {scheme.collision_types}"
        )
    vec = np.zeros(scheme.dim, dtype=np.float64)
    vec[0] = metadata.collision_energy / scheme.ce_max
    vec[1 + scheme.adducts.index(metadata.adduct)] = 1.0
    vec[1 + len(scheme.adducts) + scheme.collision_types.index(metadata.collision_type)] = 1.0
    vec[-1] = metadata.precursor_mz / scheme.precursor_mz_max
    return vec


# ---------------------------------------------------------------- MSP I/O

_REQUIRED = ("PRECURSORMZ", "ADDUCT", "COLLISIONTYPE", "COLLISIONENERGY", "NUMPEAKS")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_msp(path, spectra: Iterable[Spectrum]) -> None:
    """Write spectra as blank-line separated MSP records."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        first = True
        for s in spectra:
            if not first:
                fh.write("\n")
            first = False
            md = s.metadata
            fh.write(f"NAME: {s.name or s.compound_id}\n")
            fh.write(f"ID: {s.compound_id}\n")
            if s.smiles:
                fh.write(f"SMILES: {s.smiles}\n")
            fh.write(f"PRECURSORMZ: {_fmt(md.precursor_mz)}\n")
            fh.write(f"ADDUCT: {md.adduct}\n")
            fh.write(f"COLLISIONTYPE: {md.collision_type}\n")
            fh.write(f"COLLISIONENERGY: {_fmt(md.collision_energy)}\n")
            fh.write(f"NUMPEAKS: {len(s.peaks)}\n")
            for p in s.peaks:
                fh.write(f"{_fmt(p.mz)}\t{_fmt(p.intensity)}\n")


def _finish(headers: dict, peaks: list, start: int, path) -> Spectrum:
    for key in _REQUIRED:
        if key not in headers:
            raise MSPFormatError(f"record is missing required field {key}", start, path)
    if "ID" not in headers and "NAME" not in headers:
        raise MSPFormatError("record needs an ID or NAME field", start, path)
    try:
        npk = int(headers["NUMPEAKS"][0])
    except ValueError:
        raise MSPFormatError("NUMPEAKS is not an integer", headers["NUMPEAKS"][1], path) from None
    if npk != len(peaks):
        raise MSPFormatError(f"NUMPEAKS says {npk} but {len(peaks)} peaks follow", start, path)

    def num(key):
        value, lineno = headers[key]
        try:
            return float(value)
        except ValueError:
            raise MSPFormatError(f"{key} is not a number: {value!r}", lineno, path) from None

    try:
        md = SpectrumMetadata(
            collision_energy=num("COLLISIONENERGY"),
            adduct=headers["ADDUCT"][0],
            collision_type=headers["COLLISIONTYPE"][0],
            precursor_mz=num("PRECURSORMZ"),
        )
        return Spectrum(
            peaks=peaks,
            metadata=md,
            compound_id=headers.get("ID", headers.get("NAME"))[0],
            name=headers.get("NAME", ("", 0))[0],
            smiles=headers.get("SMILES", ("", 0))[0],
        )
    except ValueError as exc:
        raise MSPFormatError(str(exc), start, path) from None


def read_msp(path) -> list[Spectrum]:
    """Parse an MSP file written by :func:`write_msp` (or a compatible dialect)."""
    spectra: list[Spectrum] = []
    headers: dict[str, tuple[str, int]] = {}
    peaks: list[Peak] = []
    start = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                if start is not None:
                    spectra.append(_finish(headers, peaks, start, path))
                headers, peaks, start = {}, [], None
                continue
            if start is None:
                start = lineno
            if ":" in line and not peaks and not line[0].isdigit():
                key, _, value = line.partition(":")
                headers[key.strip().upper()] = (value.strip(), lineno)
                continue
            parts = line.split()
            if len(parts) < 2:
                raise MSPFormatError(f"cannot parse line {line!r}", lineno, path)
            try:
                peaks.append(Peak(float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise MSPFormatError(f"bad peak line {line!r}: {exc}", lineno, path) from None
        if start is not None:
            spectra.append(_finish(headers, peaks, start, path))
    return spectra
