"""File formats: the TSIM array container, 16-bit PGM images and CSV curves.

TSIM layout (all integers little-endian):

    b"TSIM" | u16 version | u8 dtype tag | u8 ndim | ndim × u64 dims |
    payload (prod(dims) × f64 LE) | u32 metadata length | metadata (UTF-8)

Metadata is "key=value" lines separated by "\\n". Only dtype tag 1 (float64)
is defined.
"""

import csv
import struct

import numpy as np

MAGIC = b"TSIM"
VERSION = 1
DTYPE_F64 = 1


class FormatError(IOError):
    """A file is truncated, has the wrong magic/version or a bad payload."""


def _check_meta(meta):
    out = []
    for k, v in meta.items():
        k, v = str(k), str(v)
        if not k or "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"metadata key/value not representable: {k!r}")
        out.append(f"{k}={v}")
    return "\n".join(out)


def encode(array, meta=None):
    a = np.asarray(array, dtype="<f8", order="C")     # ascontiguousarray would make 0-d 1-d
    head = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F64, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    m = _check_meta(meta or {}).encode("utf-8")
    return head + a.tobytes() + struct.pack("<I", len(m)) + m


def decode(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("not a TSIM container")
    version, tag, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported TSIM version {version}")
    if tag != DTYPE_F64:
        raise FormatError(f"unknown dtype tag {tag}")
    off = 8
    if len(buf) < off + 8 * ndim:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    n = int(np.prod(dims, dtype=np.int64)) * 8
    if len(buf) < off + n + 4:
        raise FormatError("payload shorter than product(dims) × 8")
    arr = np.frombuffer(buf, dtype="<f8", count=n // 8, offset=off).reshape(dims).copy()
    off += n
    (mlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    if len(buf) != off + mlen:
        raise FormatError("metadata length does not match the file size")
    meta = {}
    text = buf[off:off + mlen].decode("utf-8")
    for line in text.split("\n") if text else []:
        k, _, v = line.partition("=")
        meta[k] = v
    return arr, meta


def write_container(path, array, meta=None):
    with open(path, "wb") as f:
        f.write(encode(array, meta))


def read_container(path):
    with open(path, "rb") as f:
        return decode(f.read())


def pack(arrays):
    """Concatenate named arrays into one flat array plus a layout string."""
    parts, layout = [], []
    for name, a in arrays.items():
        a = np.asarray(a, float)
        parts.append(a.ravel())
        layout.append(f"{name}:{'x'.join(map(str, a.shape)) or 'scalar'}")
    flat = np.concatenate(parts) if parts else np.zeros(0)
    return flat, ";".join(layout)


def unpack(flat, layout):
    out, off = {}, 0
    for item in layout.split(";") if layout else []:
        name, _, shp = item.partition(":")
        shape = () if shp == "scalar" else tuple(int(s) for s in shp.split("x"))
        n = int(np.prod(shape, dtype=np.int64))
        if off + n > flat.size:
            raise FormatError(f"layout entry {name!r} runs past the payload")
        out[name] = flat[off:off + n].reshape(shape)
        off += n
    if off != flat.size:
        raise FormatError("layout does not cover the payload")
    return out


# ------------------------------------------------------------------- images

def to_u16(img, lo=None, hi=None):
    img = np.asarray(img, float)
    lo = float(np.min(img)) if lo is None else lo
    hi = float(np.max(img)) if hi is None else hi
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint16)
    return np.rint(np.clip((img - lo) / (hi - lo), 0, 1) * 65535).astype(np.uint16)


def write_pgm(path, img, lo=None, hi=None):
    """Binary 16-bit PGM (P5, maxval 65535, big-endian samples)."""
    u = to_u16(img, lo, hi)
    H, W = u.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n65535\n".encode("ascii"))
        f.write(u.astype(">u2").tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dt = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dt, count=W * H, offset=pos).reshape(H, W).astype(np.uint16)


# --------------------------------------------------------------------- curves

def write_csv(path, header, columns):
    """Columns of equal length as CSV with a header row; floats use repr precision."""
    cols = [np.asarray(c).ravel() for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ------------------------------------------------------- model persistence

def save_basis(path, basis, meta=None):
    flat, layout = pack({"kernels": basis.kernels, "mean": basis.mean,
                         "sigma": basis.sigma, "explained": basis.explained})
    c = basis.config
    m = {"kind": "psf_basis", "layout": layout, "n_modes": c.n_modes,
         "pupil_samples": c.pupil_samples, "oversample": c.oversample,
         "energy": repr(c.energy), "K": basis.K}
    m.update({f"prov.{k}": repr(v) for k, v in basis.provenance.items()})
    m.update(meta or {})
    write_container(path, flat, m)


def load_basis(path):
    from .psfbasis import BasisConfig, PsfBasis
    flat, m = read_container(path)
    if m.get("kind") != "psf_basis":
        raise FormatError(f"{path} does not hold a PSF basis")
    a = unpack(flat, m["layout"])
    cfg = BasisConfig(int(m["n_modes"]), int(m["pupil_samples"]), int(m["oversample"]),
                      float(m["energy"]), int(m["K"]))
    prov = {k[5:]: v for k, v in m.items() if k.startswith("prov.")}
    return PsfBasis(a["kernels"], a["mean"], a["sigma"], a["explained"], cfg, prov), m


def save_p2s(path, model, meta=None):
    arrays = {"x_mean": model.x_mean, "x_scale": model.x_scale,
              "y_mean": model.y_mean, "y_scale": model.y_scale}
    for n, (W, b) in enumerate(model.weights):
        arrays[f"W{n}"], arrays[f"b{n}"] = W, b
    flat, layout = pack(arrays)
    m = {"kind": "p2s_model", "layout": layout, "activation": model.activation,
         "layers": len(model.weights)}
    m.update({f"train.{k}": repr(v) for k, v in model.meta.items()})
    m.update(meta or {})
    write_container(path, flat, m)


def load_p2s(path):
    from .psfbasis import P2SModel
    flat, m = read_container(path)
    if m.get("kind") != "p2s_model":
        raise FormatError(f"{path} does not hold a P2S model")
    a = unpack(flat, m["layout"])
    weights = [(a[f"W{n}"], a[f"b{n}"]) for n in range(int(m["layers"]))]
    return P2SModel(weights, a["x_mean"], a["x_scale"], a["y_mean"], a["y_scale"],
                    m["activation"], {k[6:]: v for k, v in m.items() if k.startswith("train.")}), m
