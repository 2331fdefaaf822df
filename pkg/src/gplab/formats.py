"""Binary and JSON file formats. Layouts are documented in FORMATS.md.

All integers and floats are little-endian; bit matrices are packed MSB-first,
row-major, each layer padded to a byte boundary.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, LengthMismatchError
from .graphon import StepGraphon
from .kernel import KernelMatrix
from .net import Mask, MaskedMlp, default_prunable

MASK_MAGIC = b"GPMK"
KERNEL_MAGIC = b"GPKM"
NET_MAGIC = b"GPNN"
VERSION = 1


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise LengthMismatchError(f"{self.what} truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self):
        if self.pos != len(self.data):
            raise LengthMismatchError(f"{self.what} has {len(self.data) - self.pos} trailing bytes")


def _read(src) -> bytes:
    if isinstance(src, (bytes, bytearray, memoryview)):
        return bytes(src)
    return Path(src).read_bytes()


# -- masks ------------------------------------------------------------------

def mask_to_bytes(mask: Mask) -> bytes:
    """GPMK blob. The per-layer target is the mask's target for prunable layers, 0 otherwise."""
    out = [MASK_MAGIC, struct.pack("<HH", VERSION, len(mask.layers))]
    for m, p in zip(mask.layers, mask.prunable):
        n_out, n_in = m.shape
        out.append(struct.pack("<IId", n_out, n_in, float(mask.target) if p else 0.0))
        out.append(np.packbits(m.astype(np.uint8), axis=None).tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def _unpack_mask(r: _Reader) -> tuple[Mask, int]:
    start = r.pos
    if r.take(4) != MASK_MAGIC:
        raise FormatError("not a mask file: bad magic")
    version, n_layers = r.unpack("<HH")
    if version != VERSION:
        raise FormatError(f"unsupported mask version {version}")
    layers, prunable, targets = [], [], []
    for _ in range(n_layers):
        n_out, n_in, target = r.unpack("<IId")
        nbits = n_out * n_in
        bits = np.unpackbits(np.frombuffer(r.take((nbits + 7) // 8), dtype=np.uint8))[:nbits]
        layers.append(bits.reshape(n_out, n_in).astype(bool))
        prunable.append(target > 0.0)
        targets.append(target)
    body = r.data[start:r.pos]
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(body):
        raise ChecksumError("mask file CRC mismatch")
    target = max(targets, default=0.0)
    if target == 0.0:
        # an unpruned mask carries no per-layer targets; fall back to the default roles
        prunable = default_prunable(n_layers)
    return Mask(layers, prunable, target), r.pos


def mask_from_bytes(data) -> Mask:
    r = _Reader(_read(data), "mask file")
    mask, _ = _unpack_mask(r)
    r.done()
    return mask


def write_mask(mask: Mask, path) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


read_mask = mask_from_bytes


# -- kernels ----------------------------------------------------------------

def kernel_to_bytes(kernel: KernelMatrix) -> bytes:
    b = kernel.size
    iu = np.triu_indices(b)
    return (KERNEL_MAGIC + struct.pack("<I", b)
            + kernel.values[iu].astype("<f8").tobytes() + bytes(kernel.fingerprint))


def kernel_from_bytes(data, kind: str = "empirical") -> KernelMatrix:
    r = _Reader(_read(data), "kernel file")
    if r.take(4) != KERNEL_MAGIC:
        raise FormatError("not a kernel file: bad magic")
    (b,) = r.unpack("<I")
    n = b * (b + 1) // 2
    tri = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64)
    fp = r.take(32)
    r.done()
    vals = np.empty((b, b))
    ia, ib = np.triu_indices(b)
    vals[ia, ib] = tri
    vals[ib, ia] = tri
    return KernelMatrix(vals, fp, kind)


def write_kernel(kernel: KernelMatrix, path) -> None:
    Path(path).write_bytes(kernel_to_bytes(kernel))


read_kernel = kernel_from_bytes


# -- networks ---------------------------------------------------------------

def net_to_bytes(net: MaskedMlp) -> bytes:
    out = [NET_MAGIC, struct.pack("<HH", VERSION, len(net.widths))]
    out.append(struct.pack(f"<{len(net.widths)}I", *net.widths))
    out.append(struct.pack("<d", net.sigma_w2))
    for w in net.weights:
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    out.append(mask_to_bytes(net.mask))
    return b"".join(out)


def net_from_bytes(data) -> MaskedMlp:
    r = _Reader(_read(data), "network file")
    if r.take(4) != NET_MAGIC:
        raise FormatError("not a network file: bad magic")
    version, n = r.unpack("<HH")
    if version != VERSION:
        raise FormatError(f"unsupported network version {version}")
    widths = list(r.unpack(f"<{n}I"))
    (sigma_w2,) = r.unpack("<d")
    weights = []
    for l in range(n - 1):
        cnt = widths[l + 1] * widths[l]
        weights.append(np.frombuffer(r.take(8 * cnt), dtype="<f8").astype(np.float64).reshape(widths[l + 1], widths[l]))
    mask, _ = _unpack_mask(r)
    r.done()
    if [m.shape for m in mask.layers] != [w.shape for w in weights]:
        raise FormatError("embedded mask does not match the weights")
    return MaskedMlp(widths, weights, mask, sigma_w2)


def write_net(net: MaskedMlp, path) -> None:
    Path(path).write_bytes(net_to_bytes(net))


read_net = net_from_bytes


# -- graphons ---------------------------------------------------------------

def graphon_to_json(g: StepGraphon) -> str:
    # json writes floats with repr, so the grid round-trips bit-exactly
    doc = {"k": g.k, "grid": [float(v) for v in g.grid.ravel()], "provenance": g.provenance}
    return json.dumps(doc, sort_keys=True) + "\n"


def graphon_from_json(text) -> StepGraphon:
    try:
        doc = json.loads(text)
        k, grid, prov = int(doc["k"]), np.asarray(doc["grid"], dtype=np.float64), str(doc["provenance"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed graphon JSON: {exc}") from exc
    if k < 1 or grid.shape != (k * k,):
        raise FormatError(f"graphon grid needs k*k = {k * k} values, got shape {grid.shape}")
    return StepGraphon(grid.reshape(k, k), prov)


def write_graphon(g: StepGraphon, path) -> None:
    Path(path).write_text(graphon_to_json(g))


def read_graphon(path) -> StepGraphon:
    return graphon_from_json(Path(path).read_text())
