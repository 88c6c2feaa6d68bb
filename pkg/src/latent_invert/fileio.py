"""Configuration files, binary PGM images and checkpoints.

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    b"LINV" | version | tensor count
    per tensor: name length | name (ASCII) | rank | dims... | float64 LE values
    config length | UTF-8 "key=value" lines
"""

from __future__ import annotations

import os
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ConfigError, MagicError, PGMError, TruncationError, VersionError
from .models import ParameterStore
from .training import TrainConfig

MAGIC = b"LINV"
VERSION = 1

ALIASES = {
    "lr": "learning_rate",
    "batch": "batch_size",
    "output_dir": "out_dir",
    "output": "out_dir",
    "lambda_rec": "lambda_recon",
}


# -- config --------------------------------------------------------------------

def _field_types():
    return {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key, raw, kind):
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def parse_config_text(text, overrides=None):
    """``key=value`` lines (``#`` comments) over the defaults, then
    ``overrides`` (a ``{key: raw string}`` map, e.g. from CLI flags)."""
    types = _field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = ALIASES.get(key, key)
        if name not in types:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if name in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})")
        values[name] = _coerce(key, raw, types[name])
    for key, raw in (overrides or {}).items():
        name = ALIASES.get(key, key)
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[name] = _coerce(key, str(raw), types[name])
    return TrainConfig(**values)


def parse_config(source=None, overrides=None):
    """Parse a config file path (or ``None`` for defaults)."""
    if source is None:
        return parse_config_text("", overrides)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config file not found: {source}")
    return parse_config_text(path.read_text(encoding="utf-8"), overrides)


def config_text(cfg, exclude=()):
    return "".join(f"{k}={v}\n" for k, v in cfg.as_items() if k not in exclude)


# -- PGM -------------------------------------------------------------------------

def pgm_bytes(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise PGMError(f"PGM needs a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise PGMError("pixel values must lie in [0, 1]")
    # round half up
    q = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def write_pgm(image, path):
    data = pgm_bytes(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _header_tokens(data):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte ends the header


def parse_pgm(data):
    tokens, offset = _header_tokens(data)
    if tokens[0] != b"P5":
        raise PGMError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PGMError("malformed PGM header") from None
    if w < 1 or h < 1 or maxval != 255:
        raise PGMError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    body = data[offset : offset + w * h]
    if len(body) < w * h:
        raise PGMError(f"truncated PGM data: expected {w * h} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) / 255.0


def read_pgm(path):
    return parse_pgm(Path(path).read_bytes())


def image_grid(rows, gap=1):
    """Tile a list of image batches: one batch per row, ``gap`` black pixels
    between tiles."""
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    n = max(len(r) for r in rows)
    h, w = rows[0].shape[1:]
    out = np.zeros((len(rows) * (h + gap) - gap, n * (w + gap) - gap))
    for i, batch in enumerate(rows):
        for j, img in enumerate(batch):
            out[i * (h + gap) : i * (h + gap) + h, j * (w + gap) : j * (w + gap) + w] = img
    return out


# -- checkpoints ---------------------------------------------------------------

def checkpoint_bytes(stores, cfg=None, version=VERSION):
    """Serialise ``{prefix: ParameterStore}``; tensor names become
    ``prefix/name``.  A bare ParameterStore is written without prefixes."""
    if isinstance(stores, ParameterStore):
        items = list(stores.items())
    else:
        items = [(f"{prefix}/{name}", t) for prefix, store in stores.items() for name, t in store.items()]
    parts = [MAGIC, struct.pack("<II", version, len(items))]
    for name, t in items:
        raw = name.encode("ascii")
        data = np.asarray(t.data if isinstance(t, nc.Tensor) else t, dtype="<f8")  # tobytes is C order
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    # out_dir is left out so identical runs in different directories match
    echo = (config_text(cfg, exclude=("out_dir",)) if cfg is not None else "").encode("utf-8")
    parts.append(struct.pack("<I", len(echo)) + echo)
    return b"".join(parts)


def save_checkpoint(stores, cfg, path):
    data = checkpoint_bytes(stores, cfg)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncationError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def parse_checkpoint(data):
    """Returns ``(tensors, config_echo)``: an ordered ``{name: ndarray}`` map
    and the raw ``key=value`` text."""
    r = _Reader(data)
    if len(data) < 4 or r.take(4, "magic") != MAGIC:
        raise MagicError("bad checkpoint magic (expected b'LINV')")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "name").decode("ascii")
        rank = r.u32("rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").astype(np.float64)
        tensors[name] = values.reshape(dims)
    echo = r.take(r.u32("config length"), "config").decode("utf-8")
    return tensors, echo


def load_checkpoint(path):
    """Returns ``({prefix: ParameterStore}, config_echo)``.  Unprefixed names
    land under the ``""`` key.  Stores carry no network spec."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors, echo = parse_checkpoint(p.read_bytes())
    stores = {}
    for full, arr in tensors.items():
        prefix, _, name = full.rpartition("/")
        stores.setdefault(prefix, ParameterStore()).add(name, arr)
    return stores, echo
