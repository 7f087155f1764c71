"""Run configuration: INI-style sections of key = value, all keys documented with units.

Unknown sections or keys are rejected; every value is validated before any
computation starts.
"""

import configparser
import hashlib
from dataclasses import dataclass, field

from ._util import ConfigError
from .atmosphere import Cn2Profile, OpticalConfig

# (section, key) -> (type, default, description with units)
SCHEMA = {
    "optics": {
        "wavelength": (float, 525e-9, "wavelength [m]"),
        "aperture": (float, 0.2034, "aperture diameter D [m]"),
        "distance": (float, 7000.0, "propagation distance L [m]"),
        "profile": (str, "constant", "Cn2 profile: constant | hufnagel_valley | slcd"),
        "cn2": (float, 1e-15, "Cn2 for the constant profile [m^-2/3]; 0 means no turbulence"),
        "wave": (str, "spherical", "wave model for r0: spherical | plane"),
        "grid": (int, 128, "split-step grid size N [samples], power of two"),
        "dx": (float, 0.0, "split-step grid spacing [m]; 0 selects λL/(4D)"),
    },
    "sim": {
        "seed": (int, 0, "top-level seed (unsigned 64-bit)"),
        "frames": (int, 4, "number of frames"),
        "mode": (str, "zernike", "simulator: zernike | splitstep"),
        "height": (int, 64, "scene height [pixels]"),
        "width": (int, 64, "scene width [pixels]"),
        "scene": (str, "natural", "natural | points | path to a PGM or TSIM image"),
        "screens": (int, 10, "split-step phase screens M"),
        "subharmonics": (int, 3, "subharmonic levels per screen"),
        "psf_stride": (int, 1, "split-step PSF grid stride [pixels]"),
        "kernel_size": (int, 33, "split-step PSF crop K [pixels], odd"),
        "beta_path": (str, "projection", "basis weights: projection | p2s"),
        "boundary": (str, "zero", "convolution boundary: zero | replicate"),
    },
    "basis": {
        "file": (str, "", "basis container to use (empty: <out>/basis.tsim)"),
        "count": (int, 2000, "PSF dataset size"),
        "dr0_min": (float, 0.0, "lower D/r0 of the dataset"),
        "dr0_max": (float, 5.0, "upper D/r0 of the dataset"),
        "modes": (int, 100, "basis size M"),
        "zernike_modes": (int, 36, "Zernike modes per pixel (Noll 1..n)"),
        "pupil": (int, 32, "pupil samples across D for PSF formation"),
        "kernel": (int, 0, "kernel size K [pixels], odd; 0 chooses from 99.9% energy"),
        "train_p2s": (bool, False, "also train the phase-to-space regressor"),
        "epochs": (int, 300, "P2S training epochs"),
    },
    "restore": {
        "input": (str, "", "frame stack container (empty: <out>/frames.tsim)"),
        "reference": (str, "nonlocal", "reference frame: nonlocal | temporal_mean"),
        "patch": (int, 16, "fusion patch size [pixels]"),
        "stride": (int, 8, "fusion patch stride [pixels]"),
        "deconvolve": (bool, True, "run blind deconvolution after fusion"),
        "lam": (float, 1e-4, "TV weight (per pixel, intensities in [0, 1])"),
        "gamma": (float, 1e-8, "kernel sparsity weight"),
        "outer": (int, 30, "outer deconvolution iterations"),
    },
    "verify": {
        "level": (str, "fast", "fast | full"),
        "inputs": (str, "", "comma-separated containers whose config hash must match"),
    },
    "output": {
        "dir": (str, "out", "output directory"),
    },
}

# sections that do not change simulated data and are left out of the hash
_UNHASHED = ("verify", "output")

CHOICES = {
    ("optics", "profile"): ("constant", "hufnagel_valley", "slcd"),
    ("optics", "wave"): ("spherical", "plane"),
    ("sim", "mode"): ("zernike", "splitstep"),
    ("sim", "beta_path"): ("projection", "p2s"),
    ("sim", "boundary"): ("zero", "replicate"),
    ("restore", "reference"): ("nonlocal", "temporal_mean"),
    ("verify", "level"): ("fast", "full"),
}


def _parse(typ, raw, where):
    try:
        if typ is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)     # section -> key -> value

    def __getitem__(self, item):
        sec, key = item
        return self.values[sec][key]

    def set(self, sec, key, value):
        self.values[sec][key] = value

    @property
    def optical(self):
        o = self.values["optics"]
        kind = o["profile"]
        prof = Cn2Profile.constant(o["cn2"]) if kind == "constant" else Cn2Profile(kind)
        return OpticalConfig(o["wavelength"], o["aperture"], o["distance"], prof,
                             o["wave"], o["grid"], o["dx"])

    def canonical(self, hashed_only=False):
        lines = []
        for sec in sorted(self.values):
            if hashed_only and sec in _UNHASHED:
                continue
            for key in sorted(self.values[sec]):
                lines.append(f"{sec}.{key}={self.values[sec][key]!r}")
        return "\n".join(lines)

    @property
    def hash(self):
        return hashlib.sha256(self.canonical(True).encode("utf-8")).hexdigest()[:16]

    def metadata(self):
        """Full resolved config plus its hash, as container metadata."""
        meta = {"config_hash": self.hash}
        for sec in sorted(self.values):
            for key in sorted(self.values[sec]):
                meta[f"config.{sec}.{key}"] = repr(self.values[sec][key])
        return meta

    def validate(self):
        v = self.values
        for (sec, key), allowed in CHOICES.items():
            if v[sec][key] not in allowed:
                raise ConfigError(f"{sec}.{key} must be one of {allowed}, got {v[sec][key]!r}")
        self.optical  # raises on invalid optics
        if v["optics"]["cn2"] < 0:
            raise ConfigError("optics.cn2 must be >= 0")
        if v["sim"]["seed"] < 0 or v["sim"]["seed"] >= 2 ** 64:
            raise ConfigError("sim.seed must be an unsigned 64-bit integer")
        for sec, key in (("sim", "frames"), ("sim", "height"), ("sim", "width"), ("sim", "screens"),
                         ("sim", "psf_stride"), ("basis", "count"), ("basis", "modes"),
                         ("basis", "pupil"), ("basis", "epochs"), ("restore", "patch"),
                         ("restore", "stride"), ("restore", "outer")):
            if v[sec][key] < 1:
                raise ConfigError(f"{sec}.{key} must be >= 1")
        if v["sim"]["kernel_size"] % 2 == 0:
            raise ConfigError("sim.kernel_size must be odd")
        if v["basis"]["kernel"] and v["basis"]["kernel"] % 2 == 0:
            raise ConfigError("basis.kernel must be odd (or 0)")
        if not 0 <= v["basis"]["dr0_min"] <= v["basis"]["dr0_max"]:
            raise ConfigError("basis.dr0_min/dr0_max must satisfy 0 <= min <= max")
        if v["basis"]["zernike_modes"] < 4:
            raise ConfigError("basis.zernike_modes must be >= 4")
        return self


def default_config():
    return RunConfig({sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()})


def load_config(path=None, text=None):
    """Defaults overlaid with an INI file (or text); unknown keys are errors."""
    cfg = default_config()
    if path is None and text is None:
        return cfg.validate()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        if text is not None:
            parser.read_string(text)
        else:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from None
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            cfg.set(sec, key, _parse(SCHEMA[sec][key][0], raw, f"{sec}.{key}"))
    return cfg.validate()


def describe():
    """Annotated default configuration text."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (typ, default, desc) in keys.items():
            val = str(default).lower() if typ is bool else default
            out.append(f"# {desc}")
            out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)
