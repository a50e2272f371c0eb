"""Binary and JSON containers for trees, plus PGM raster export.

Binary layout (little-endian)::

    b"PERC1" | u32 header length | JSON header (sorted keys)
    per level: u64 count | coords (count*d, <u4 or <u8) | survival bitset | replica ids (<u4)
    pruned only, per block level: u64 count | selection bitset
    u32 CRC32 of everything above

The bitset is present when the tree carries survival marks; replica ids are
present only for multi-replica trees.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .errors import FormatError, ParameterError
from .sampler import PercolationConfig, PercolationTree, tree_from_levels

MAGIC = b"PERC1"
VERSION = 1


def _header(tree: PercolationTree, kind: str, extra: dict | None = None) -> dict:
    side = tree.M**tree.depth
    head = {
        "version": VERSION,
        "kind": kind,
        "config": tree.config.to_dict(),
        "node_cap": tree.config.node_cap,
        "depth": tree.depth,
        "n_replicas": tree.n_replicas,
        "seeds": [int(s) for s in tree.seeds],
        "rejections": [int(r) for r in tree.rejections],
        "q": tree.q,
        "marked": tree.survives is not None,
        "coord_dtype": "<u4" if side <= 2**32 else "<u8",
    }
    if extra:
        head.update(extra)
    return head


def _write_tree_body(buf: io.BytesIO, tree: PercolationTree, head: dict) -> None:
    dt = np.dtype(head["coord_dtype"])
    for n in range(tree.depth + 1):
        c = tree.coords[n]
        buf.write(struct.pack("<Q", len(c)))
        buf.write(c.astype(dt).tobytes())
        if head["marked"]:
            buf.write(np.packbits(tree.survives[n].astype(np.uint8)).tobytes())
        if head["n_replicas"] > 1:
            buf.write(tree.replica[n].astype("<u4").tobytes())


def _finish(buf: io.BytesIO) -> bytes:
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def _start(head: dict) -> io.BytesIO:
    raw = json.dumps(head, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    return buf


def serialize(tree: PercolationTree) -> bytes:
    head = _header(tree, "tree")
    buf = _start(head)
    _write_tree_body(buf, tree, head)
    return _finish(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("truncated tree stream")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _open(data: bytes) -> tuple[dict, _Reader]:
    if len(data) < len(MAGIC) + 8:
        raise FormatError("truncated tree stream")
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("not a PERC1 stream (bad magic)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch: stream is truncated or corrupted")
    rd = _Reader(body)
    rd.take(len(MAGIC))
    hlen = struct.unpack("<I", rd.take(4))[0]
    try:
        head = json.loads(rd.take(hlen))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    if head.get("version") != VERSION:
        raise FormatError(f"unsupported format version {head.get('version')!r}")
    return head, rd


def _read_tree_body(head: dict, rd: _Reader) -> PercolationTree:
    cfg = PercolationConfig.from_dict(head["config"], node_cap=head["node_cap"])
    d = cfg.d
    dt = np.dtype(head["coord_dtype"])
    coords, reps, surv = [], [], []
    for _ in range(head["depth"] + 1):
        k = rd.u64()
        coords.append(np.frombuffer(rd.take(k * d * dt.itemsize), dtype=dt).astype(np.int64).reshape(k, d))
        if head["marked"]:
            bits = np.frombuffer(rd.take((k + 7) // 8), dtype=np.uint8)
            surv.append(np.unpackbits(bits)[:k].astype(bool))
        if head["n_replicas"] > 1:
            reps.append(np.frombuffer(rd.take(4 * k), dtype="<u4").astype(np.int64))
        else:
            reps.append(np.zeros(k, dtype=np.int64))
    seeds = np.array(head["seeds"], dtype=np.uint64)
    return tree_from_levels(cfg, coords, reps, seeds, surv if head["marked"] else None,
                            head["q"], np.array(head["rejections"], dtype=np.int64))


def deserialize(data: bytes) -> PercolationTree:
    head, rd = _open(data)
    if head["kind"] != "tree":
        raise FormatError(f"expected a tree stream, found {head['kind']!r}")
    tree = _read_tree_body(head, rd)
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after tree data")
    return tree


def serialize_pruned(pruned) -> bytes:
    head = _header(pruned.tree, "pruned", {"rule": pruned.rule.to_dict(), "notes": list(pruned.notes)})
    buf = _start(head)
    _write_tree_body(buf, pruned.tree, head)
    for mask in pruned.selected:
        buf.write(struct.pack("<Q", len(mask)))
        buf.write(np.packbits(mask.astype(np.uint8)).tobytes())
    return _finish(buf)


def deserialize_pruned(data: bytes):
    from .pruner import PruneRule, PrunedTree

    head, rd = _open(data)
    if head["kind"] != "pruned":
        raise FormatError(f"expected a pruned stream, found {head['kind']!r}")
    tree = _read_tree_body(head, rd)
    rule = PruneRule.from_dict(head["rule"])
    selected = []
    for _ in range(tree.depth // rule.N + 1):
        k = rd.u64()
        selected.append(np.unpackbits(np.frombuffer(rd.take((k + 7) // 8), dtype=np.uint8))[:k].astype(bool))
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after pruned data")
    return PrunedTree(tree, rule, selected, tuple(head.get("notes", ())))


def to_json(tree: PercolationTree) -> str:
    """Human-readable debug form."""
    levels = []
    for n in range(tree.depth + 1):
        lv = {"level": n, "coords": tree.coords[n].tolist()}
        if tree.survives is not None:
            lv["survives"] = tree.survives[n].astype(int).tolist()
        if tree.n_replicas > 1:
            lv["replica"] = tree.replica[n].tolist()
        levels.append(lv)
    head = _header(tree, "tree")
    head["levels"] = levels
    return json.dumps(head, sort_keys=True, indent=1)


def from_json(text: str) -> PercolationTree:
    try:
        head = json.loads(text)
        cfg = PercolationConfig.from_dict(head["config"], node_cap=head["node_cap"])
        lv = head["levels"]
        coords = [np.array(x["coords"], dtype=np.int64).reshape(-1, cfg.d) for x in lv]
        reps = [np.array(x.get("replica", [0] * len(x["coords"])), dtype=np.int64) for x in lv]
        surv = [np.array(x["survives"], dtype=bool) for x in lv] if head["marked"] else None
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed tree JSON: {exc}") from exc
    return tree_from_levels(cfg, coords, reps, np.array(head["seeds"], dtype=np.uint64), surv,
                            head["q"], np.array(head["rejections"], dtype=np.int64))


# ---------------------------------------------------------------- rasters


def _upsample(grid: np.ndarray, target: int) -> np.ndarray:
    f = max(1, target // grid.shape[0])
    return np.kron(grid, np.ones((f, f), dtype=grid.dtype)) if f > 1 else grid


def _pgm(img: np.ndarray) -> bytes:
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.astype(np.uint8).tobytes()


def occupancy_grid(cells: np.ndarray, level: int, M: int) -> np.ndarray:
    """Boolean image of level-``level`` cells; row 0 is the top (largest y)."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    side = M**level
    if side > 4096:
        raise ParameterError(f"level {level} is too fine to rasterize ({side} pixels per side)")
    grid = np.zeros((side, side), dtype=bool)
    grid[side - 1 - cells[:, 1], cells[:, 0]] = True
    return grid


def occupancy_pgm(cells: np.ndarray, level: int, M: int, target: int = 512) -> bytes:
    """Occupied cells black on white."""
    grid = occupancy_grid(cells, level, M)
    img = np.where(grid, 0, 255).astype(np.uint8)
    return _pgm(_upsample(img, target))


def heatmap_pgm(cells: np.ndarray, values: np.ndarray, level: int, M: int, vmax: float = 0.5,
                target: int = 512) -> bytes:
    """Gray levels from ``values``: 0 is light gray, ``vmax`` black, unoccupied cells white."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    side = M**level
    if side > 4096:
        raise ParameterError(f"level {level} is too fine to rasterize ({side} pixels per side)")
    img = np.full((side, side), 255, dtype=np.uint8)
    shade = 224 - np.rint(np.clip(np.asarray(values, dtype=float) / vmax, 0, 1) * 224)
    img[side - 1 - cells[:, 1], cells[:, 0]] = shade.astype(np.uint8)
    return _pgm(_upsample(img, target))
