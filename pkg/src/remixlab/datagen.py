"""Synthetic two-domain dataset generation, role-tagged dataset views, and a
small strict WAV reader/writer for optional real-data runs.

Item synthesis is keyed by (spec.seed, index) through a counter-based Philox
generator, so generation is stateless, order-independent and reproducible on
any platform running the same numpy version.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal_core import WaveBatch, rescale_noise_to_snr

__all__ = [
    "DomainSpec",
    "DatasetView",
    "DOMAIN_A",
    "DOMAIN_B",
    "builtin_domain",
    "load_domain_spec",
    "save_domain_spec",
    "gen_pair",
    "gen_batch",
    "gen_views",
    "speech_band",
    "noise_band",
    "band_energy_fraction",
    "bandpass",
    "WavFile",
    "WavError",
    "BadMagicError",
    "NonPcmError",
    "MultichannelError",
    "TruncatedChunkError",
    "read_wav",
    "write_wav",
    "write_manifest",
    "read_manifest",
]

_SPEECH_RMS = 0.1  # target RMS of the clean speech component


@dataclass(frozen=True)
class DomainSpec:
    """Everything needed to synthesize one acoustic domain.

    Speech items are amplitude-modulated harmonic stacks; noise items are
    band-shaped colored noise with a small broadband floor (``noise_floor``
    is the floor amplitude relative to the in-band plateau). The floor is
    what keeps oracle separation honest: a little noise energy always leaks
    outside the nominal passband.
    """

    name: str
    f0_range: tuple[float, float]
    harmonics: int
    am_range: tuple[float, float]
    noise_band: tuple[float, float]
    noise_color: float
    noise_floor: float
    snr_range_db: tuple[float, float]
    sample_rate: int = 8000
    clip_len: int = 4096
    seed: int = 0

    def __post_init__(self) -> None:
        nyquist = self.sample_rate / 2.0
        if not 0 < self.f0_range[0] <= self.f0_range[1]:
            raise ValueError(f"bad f0_range {self.f0_range}")
        if self.harmonics < 1:
            raise ValueError("harmonics must be >= 1")
        if self.f0_range[1] * self.harmonics >= nyquist:
            raise ValueError("speech harmonics exceed Nyquist")
        if not 0 < self.noise_band[0] < self.noise_band[1] < nyquist:
            raise ValueError(f"noise passband {self.noise_band} outside (0, Nyquist)")
        if not 0 <= self.am_range[0] <= self.am_range[1]:
            raise ValueError(f"bad am_range {self.am_range}")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError(f"snr_range_db lo > hi: {self.snr_range_db}")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be >= 0")
        if self.clip_len < 2 or self.sample_rate < 2:
            raise ValueError("clip_len and sample_rate must be >= 2")


DOMAIN_A = DomainSpec(
    name="DOMAIN_A",
    f0_range=(100.0, 200.0),
    harmonics=4,
    am_range=(2.0, 8.0),
    noise_band=(1500.0, 3500.0),
    noise_color=1.0,
    noise_floor=0.14,
    snr_range_db=(0.0, 10.0),
    seed=1001,
)

DOMAIN_B = DomainSpec(
    name="DOMAIN_B",
    f0_range=(120.0, 250.0),
    harmonics=5,
    am_range=(3.0, 10.0),
    noise_band=(400.0, 1200.0),
    noise_color=-1.0,
    noise_floor=0.45,
    snr_range_db=(0.0, 10.0),
    seed=2002,
)

_BUILTINS = {"DOMAIN_A": DOMAIN_A, "DOMAIN_B": DOMAIN_B}


def builtin_domain(name: str) -> DomainSpec:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown builtin domain {name!r}") from None


def speech_band(spec: DomainSpec) -> tuple[float, float]:
    """Frequency band holding (nearly all of) the speech energy."""
    lo = 0.9 * spec.f0_range[0]
    hi = spec.f0_range[1] * spec.harmonics + spec.am_range[1] + 10.0
    return lo, hi


def noise_band(spec: DomainSpec) -> tuple[float, float]:
    return spec.noise_band


def _item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def gen_pair(spec: DomainSpec, index: int) -> tuple[WaveBatch, WaveBatch, WaveBatch]:
    """Deterministically synthesize item ``index``: (speech, noise, mixture).

    Single-item [1, T] batches; mixture = speech + noise exactly, and the
    measured SNR equals the drawn target to float precision.
    """
    rng = _item_rng(spec.seed, index)
    T, fs = spec.clip_len, spec.sample_rate
    t = np.arange(T) / fs

    # --- speech: AM-modulated harmonic stack -------------------------------
    f0 = rng.uniform(*spec.f0_range)
    amp_jitter = rng.uniform(0.7, 1.3, size=spec.harmonics)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.harmonics)
    am_rate = rng.uniform(*spec.am_range)
    am_depth = rng.uniform(0.4, 0.9)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)

    s = np.zeros(T)
    for h in range(1, spec.harmonics + 1):
        s += (amp_jitter[h - 1] / h) * np.sin(2.0 * np.pi * h * f0 * t + phases[h - 1])
    s *= 1.0 + am_depth * np.sin(2.0 * np.pi * am_rate * t + am_phase)
    # raised-cosine edge fades keep the harmonic lines spectrally tight
    ramp = min(256, T // 4)
    if ramp > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        s[:ramp] *= fade
        s[-ramp:] *= fade[::-1]
    s *= _SPEECH_RMS / np.sqrt(np.mean(s**2))

    # --- noise: band-shaped colored spectrum plus broadband floor ----------
    n_bins = T // 2 + 1
    freqs = np.arange(n_bins) * fs / T
    re = rng.standard_normal(n_bins)
    im = rng.standard_normal(n_bins)
    shape = _noise_shape(spec, freqs)
    coef = shape * (re + 1j * im)
    coef[0] = 0.0
    if T % 2 == 0:
        coef[-1] = coef[-1].real
    n = np.fft.irfft(coef, n=T)

    target_snr = rng.uniform(*spec.snr_range_db)
    s_b = WaveBatch(s[None, :], fs)
    n_b = rescale_noise_to_snr(s_b, WaveBatch(n[None, :], fs), target_snr)
    m_b = WaveBatch(s_b.data + n_b.data, fs)
    return s_b, n_b, m_b


def _noise_shape(spec: DomainSpec, freqs: np.ndarray) -> np.ndarray:
    """Spectral amplitude profile: raised-cosine-edged passband with a
    power-law tilt inside it, plus a flat low-level floor everywhere above
    50 Hz."""
    lo, hi = spec.noise_band
    tw = 0.1 * (hi - lo)
    shape = np.zeros_like(freqs)
    rising = (freqs >= lo) & (freqs < lo + tw)
    flat = (freqs >= lo + tw) & (freqs <= hi - tw)
    falling = (freqs > hi - tw) & (freqs <= hi)
    shape[rising] = 0.5 - 0.5 * np.cos(np.pi * (freqs[rising] - lo) / tw)
    shape[flat] = 1.0
    shape[falling] = 0.5 - 0.5 * np.cos(np.pi * (hi - freqs[falling]) / tw)
    with np.errstate(divide="ignore"):
        tilt = np.where(freqs > 0, (np.maximum(freqs, 1e-9) / lo) ** (-spec.noise_color / 2.0), 0.0)
    shape *= tilt
    nyquist = spec.sample_rate / 2.0
    floor_zone = (freqs >= 50.0) & (freqs <= 0.98 * nyquist)
    shape[floor_zone] += spec.noise_floor
    return shape


def gen_batch(
    spec: DomainSpec, indices: np.ndarray | list[int]
) -> tuple[WaveBatch, WaveBatch, WaveBatch]:
    """Stack gen_pair over a list of indices into [B, T] batches."""
    triples = [gen_pair(spec, int(i)) for i in indices]
    stack = lambda sel: np.concatenate([sel(tr).data for tr in triples], axis=0)
    fs = spec.sample_rate
    return (
        WaveBatch(stack(lambda tr: tr[0]), fs),
        WaveBatch(stack(lambda tr: tr[1]), fs),
        WaveBatch(stack(lambda tr: tr[2]), fs),
    )


# --------------------------------------------------------------------------
# Dataset views
# --------------------------------------------------------------------------

_ROLES = ("paired", "mixtures_only", "noise_only")
_ROLES_FIELDS = ("speech", "noise", "mixtures")


@dataclass
class DatasetView:
    """A role-tagged slice of a dataset.

    The role controls which arrays exist: a mixtures_only view physically
    holds only the mixtures, so downstream code has no path to the clean
    components. ``reads`` counts batch accesses for the training audit.
    """

    role: str
    sample_rate: int
    indices: np.ndarray
    seed: int
    mixtures: np.ndarray | None = None
    speech: np.ndarray | None = None
    noise: np.ndarray | None = None
    reads: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown view role {self.role!r}")
        need = {
            "paired": ("speech", "noise", "mixtures"),
            "mixtures_only": ("mixtures",),
            "noise_only": ("noise",),
        }[self.role]
        for name in _ROLES_FIELDS:
            have = getattr(self, name) is not None
            if (name in need) != have:
                raise ValueError(f"view role {self.role!r} must define exactly {need}")

    def __len__(self) -> int:
        return len(self.indices)

    def take(self, positions: np.ndarray) -> tuple[WaveBatch, ...]:
        """Fetch a batch by positions within the view; bumps the audit
        counter. Returns (s, n, m) for paired, (m,) or (n,) otherwise."""
        self.reads += 1
        if self.role == "paired":
            return (
                WaveBatch(self.speech[positions], self.sample_rate),
                WaveBatch(self.noise[positions], self.sample_rate),
                WaveBatch(self.mixtures[positions], self.sample_rate),
            )
        if self.role == "mixtures_only":
            return (WaveBatch(self.mixtures[positions], self.sample_rate),)
        return (WaveBatch(self.noise[positions], self.sample_rate),)


def gen_views(
    spec: DomainSpec, count: int, split: dict[str, float], start_index: int = 0
) -> dict[str, DatasetView]:
    """Materialize ``count`` items and partition them into role views.

    Fractions must sum to 1; each view gets a contiguous, disjoint index
    range (floor allocation, remainder to the earlier roles).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not split:
        raise ValueError("split must name at least one role")
    for role in split:
        if role not in _ROLES:
            raise ValueError(f"unknown role {role!r} in split")
        if split[role] < 0:
            raise ValueError(f"negative fraction for role {role!r}")
    total = sum(split.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {total}")

    sizes = {role: int(np.floor(frac * count)) for role, frac in split.items()}
    leftover = count - sum(sizes.values())
    for role in split:
        if leftover == 0:
            break
        sizes[role] += 1
        leftover -= 1

    views: dict[str, DatasetView] = {}
    cursor = start_index
    for role, size in sizes.items():
        if size == 0:
            continue
        indices = np.arange(cursor, cursor + size)
        cursor += size
        s, n, m = gen_batch(spec, indices)
        kwargs: dict = {}
        if role == "paired":
            kwargs = {"speech": s.data, "noise": n.data, "mixtures": m.data}
        elif role == "mixtures_only":
            kwargs = {"mixtures": m.data}
        else:
            kwargs = {"noise": n.data}
        views[role] = DatasetView(
            role=role,
            sample_rate=spec.sample_rate,
            indices=indices,
            seed=spec.seed,
            **kwargs,
        )
    return views


# --------------------------------------------------------------------------
# Spectral helpers
# --------------------------------------------------------------------------


def band_energy_fraction(x: np.ndarray, fs: int, lo: float, hi: float) -> float:
    """Fraction of total spectral energy inside [lo, hi] Hz."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    spec = np.fft.rfft(x, axis=-1)
    power = np.abs(spec) ** 2
    if x.shape[-1] % 2 == 0:
        power[..., 1:-1] *= 2.0
    else:
        power[..., 1:] *= 2.0
    freqs = np.arange(power.shape[-1]) * fs / x.shape[-1]
    in_band = (freqs >= lo) & (freqs <= hi)
    total = power.sum()
    if total == 0.0:
        raise ValueError("zero-energy signal")
    return float(power[..., in_band].sum() / total)


def bandpass(x: np.ndarray, fs: int, lo: float, hi: float) -> np.ndarray:
    """Brickwall FFT bandpass over the full clip (used by oracles/tests)."""
    x = np.asarray(x, dtype=np.float64)
    spec = np.fft.rfft(x, axis=-1)
    freqs = np.arange(spec.shape[-1]) * fs / x.shape[-1]
    spec = np.where((freqs >= lo) & (freqs <= hi), spec, 0.0)
    return np.fft.irfft(spec, n=x.shape[-1], axis=-1)


# --------------------------------------------------------------------------
# Domain spec files (flat key = value text)
# --------------------------------------------------------------------------

_SPEC_KEYS = (
    "name", "f0_lo", "f0_hi", "harmonics", "am_lo", "am_hi",
    "noise_lo", "noise_hi", "noise_color", "noise_floor",
    "snr_lo", "snr_hi", "sample_rate", "clip_len", "seed",
)


def save_domain_spec(path, spec: DomainSpec) -> None:
    lines = [
        f"name = {spec.name}",
        f"f0_lo = {spec.f0_range[0]:g}",
        f"f0_hi = {spec.f0_range[1]:g}",
        f"harmonics = {spec.harmonics}",
        f"am_lo = {spec.am_range[0]:g}",
        f"am_hi = {spec.am_range[1]:g}",
        f"noise_lo = {spec.noise_band[0]:g}",
        f"noise_hi = {spec.noise_band[1]:g}",
        f"noise_color = {spec.noise_color:g}",
        f"noise_floor = {spec.noise_floor:g}",
        f"snr_lo = {spec.snr_range_db[0]:g}",
        f"snr_hi = {spec.snr_range_db[1]:g}",
        f"sample_rate = {spec.sample_rate}",
        f"clip_len = {spec.clip_len}",
        f"seed = {spec.seed}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_domain_spec(path_or_name: str | Path) -> DomainSpec:
    """Load a domain spec file, or resolve a builtin name like DOMAIN_A."""
    name = str(path_or_name)
    if name in _BUILTINS:
        return _BUILTINS[name]
    text = Path(path_or_name).read_text()
    kv = parse_kv_text(text)
    missing = [k for k in _SPEC_KEYS if k not in kv]
    if missing:
        raise ValueError(f"domain spec missing keys: {', '.join(missing)}")
    return DomainSpec(
        name=kv["name"],
        f0_range=(float(kv["f0_lo"]), float(kv["f0_hi"])),
        harmonics=int(kv["harmonics"]),
        am_range=(float(kv["am_lo"]), float(kv["am_hi"])),
        noise_band=(float(kv["noise_lo"]), float(kv["noise_hi"])),
        noise_color=float(kv["noise_color"]),
        noise_floor=float(kv["noise_floor"]),
        snr_range_db=(float(kv["snr_lo"]), float(kv["snr_hi"])),
        sample_rate=int(kv["sample_rate"]),
        clip_len=int(kv["clip_len"]),
        seed=int(kv["seed"]),
    )


# --------------------------------------------------------------------------
# WAV (RIFF PCM, mono, 16-bit)
# --------------------------------------------------------------------------


class WavError(ValueError):
    """Base class for WAV parsing problems."""


class BadMagicError(WavError):
    pass


class NonPcmError(WavError):
    pass


class MultichannelError(WavError):
    pass


class TruncatedChunkError(WavError):
    pass


@dataclass(frozen=True)
class WavFile:
    """Mono 16-bit PCM audio plus its sample rate."""

    sample_rate: int
    samples: np.ndarray  # int16

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.int16)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise WavError(f"bad sample rate {self.sample_rate}")

    def to_float(self) -> np.ndarray:
        """Sample values scaled to [-1, 1) by 1/32768."""
        return self.samples.astype(np.float64) / 32768.0

    @classmethod
    def from_float(cls, x: np.ndarray, sample_rate: int) -> "WavFile":
        """Quantize floats to int16 with round-half-away-from-zero."""
        x = np.asarray(x, dtype=np.float64).ravel()
        scaled = x * 32768.0
        rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
        clipped = np.clip(rounded, -32768, 32767)
        return cls(sample_rate, clipped.astype(np.int16))


def read_wav(path) -> WavFile:
    """Strict reader for RIFF/WAVE, PCM format 1, mono, 16-bit files."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise TruncatedChunkError(f"file too short for a RIFF header: {path}")
    if blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise BadMagicError(
            f"not a RIFF/WAVE file (magic {blob[0:4]!r}/{blob[8:12]!r}): {path}"
        )
    riff_size = struct.unpack("<I", blob[4:8])[0]
    if riff_size + 8 > len(blob):
        raise TruncatedChunkError(f"RIFF size {riff_size} exceeds file length: {path}")

    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        size = struct.unpack("<I", blob[pos + 4 : pos + 8])[0]
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise TruncatedChunkError(f"chunk {cid!r} truncated in {path}")
        if cid == b"fmt ":
            if size < 16:
                raise TruncatedChunkError(f"fmt chunk too small ({size} bytes) in {path}")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunk bodies are word-aligned

    if fmt is None or data is None:
        raise TruncatedChunkError(f"missing fmt/data chunk in {path}")
    format_code, channels, rate, byte_rate, block_align, bits = fmt
    if format_code != 1:
        raise NonPcmError(f"format code {format_code} is not PCM in {path}")
    if channels != 1:
        raise MultichannelError(f"{channels} channels; only mono supported: {path}")
    if bits != 16:
        raise NonPcmError(f"{bits}-bit samples; only 16-bit PCM supported: {path}")
    if block_align != 2 or byte_rate != rate * 2:
        raise WavError(f"inconsistent fmt fields (align {block_align}, rate {byte_rate})")
    if len(data) % 2 != 0:
        raise TruncatedChunkError(f"data chunk has odd byte length in {path}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.int16)
    return WavFile(rate, samples)


def write_wav(path, wav: WavFile) -> None:
    """Write the canonical minimal RIFF layout (fmt then data)."""
    payload = wav.samples.astype("<i2").tobytes()
    out = io.BytesIO()
    out.write(b"RIFF")
    out.write(struct.pack("<I", 36 + len(payload)))
    out.write(b"WAVE")
    out.write(b"fmt ")
    out.write(struct.pack("<IHHIIHH", 16, 1, 1, wav.sample_rate,
                          wav.sample_rate * 2, 2, 16))
    out.write(b"data")
    out.write(struct.pack("<I", len(payload)))
    out.write(payload)
    Path(path).write_bytes(out.getvalue())


# --------------------------------------------------------------------------
# Dataset manifests: index<TAB>role<TAB>path-or-"synthetic"
# --------------------------------------------------------------------------


def write_manifest(path, rows: list[tuple[int, str, str]]) -> None:
    lines = [f"{idx}\t{role}\t{loc}" for idx, role, loc in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[int, str, str]]:
    rows = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
        idx, role, loc = parts
        if role not in _ROLES:
            raise ValueError(f"{path}:{ln}: unknown role {role!r}")
        rows.append((int(idx), role, loc))
    return rows
