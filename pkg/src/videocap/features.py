"""Feature bundles, the ``.vft`` tensor container, caption files and synthetic data.

``.vft`` layout (all little-endian)::

    b"VFT1"
    u32   tensor_count
    repeat tensor_count times:
        u16   name_length
        bytes name (UTF-8)
        u8    rank
        u32   dims[rank]
        f32   payload[prod(dims)]

A feature bundle stores the tensors ``object`` (T x N x d_o), ``object_mask``
(T x N, 0/1), ``action`` (T x d_m) and ``visual_text`` (T x d_c).  Values are
stored as float32 and widened to float64 on load.  The video id is the file
stem.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BadMagic,
    BadPattern,
    CorruptHeader,
    DataError,
    DimMismatch,
    MissingTensor,
    NonFiniteValue,
)

MAGIC = b"VFT1"
REQUIRED_TENSORS = ("object", "object_mask", "action", "visual_text")
PATTERNS = ("constant-action", "drift", "burst")

SUBJECTS = ("man", "woman", "dog", "cat", "tiger", "horse")
ACTIONS = ("walking", "running", "swimming", "dancing", "cooking", "riding")
EVENTS = ("jumps", "falls", "turns", "stops")
DEFAULT_DIMS = (16, 16, 24)


# -- tensor container ---------------------------------------------------------


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialise named arrays, in mapping order, to ``.vft`` bytes."""
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    """Parse ``.vft`` bytes into float64 arrays keyed by name."""
    if data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {bytes(data[:4])!r}")
    pos = 4

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CorruptHeader("file truncated inside a header")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (count,) = read("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = read("<H")
        if pos + nlen > len(data):
            raise CorruptHeader("file truncated inside a tensor name")
        try:
            name = bytes(data[pos : pos + nlen]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptHeader("tensor name is not valid UTF-8") from exc
        if not name or not name.isprintable():
            raise CorruptHeader(f"invalid tensor name {name!r}")
        if name in out:
            raise CorruptHeader(f"duplicate tensor {name!r}")
        pos += nlen
        (rank,) = read("<B")
        dims = read(f"<{rank}I")
        n = math.prod(dims)
        nbytes = 4 * n
        if pos + nbytes > len(data):
            raise CorruptHeader(
                f"tensor {name!r} declares shape {tuple(dims)} but the payload is truncated"
            )
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64)
        try:
            out[name] = arr.reshape(dims)
        except ValueError as exc:  # zero-size shapes with absurd extents
            raise CorruptHeader(f"tensor {name!r} declares an unusable shape {tuple(dims)}") from exc
        pos += nbytes
    if pos != len(data):
        raise CorruptHeader(f"{len(data) - pos} trailing bytes after the last tensor")
    return out


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"tensor {name!r} holds non-finite values")
    Path(path).write_bytes(encode_tensors(tensors))


def read_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())


# -- bundles ------------------------------------------------------------------


@dataclass(eq=False)
class FeatureBundle:
    """Per-video precomputed features.

    ``object_feats`` and ``action_feats`` may be ``None`` for bundles loaded
    for student-only inference.
    """

    video_id: str
    object_feats: np.ndarray | None
    object_mask: np.ndarray | None
    action_feats: np.ndarray | None
    visual_text_feats: np.ndarray

    @property
    def T(self) -> int:
        return self.visual_text_feats.shape[0]

    @property
    def N(self) -> int:
        return 0 if self.object_mask is None else self.object_mask.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        named = {
            "object": self.object_feats,
            "object_mask": None if self.object_mask is None else self.object_mask.astype(np.float64),
            "action": self.action_feats,
            "visual_text": self.visual_text_feats,
        }
        return {k: v for k, v in named.items() if v is not None}

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureBundle) or self.video_id != other.video_id:
            return False
        a, b = self.tensors(), other.tensors()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a
        )

    def validate(self) -> "FeatureBundle":
        validate_tensors(self.tensors(), required=tuple(self.tensors()))
        return self


@dataclass
class CaptionRecord:
    video_id: str
    captions: list[str] = field(default_factory=list)


def validate_tensors(tensors: Mapping[str, np.ndarray], required=REQUIRED_TENSORS) -> None:
    for name in required:
        if name not in tensors:
            raise MissingTensor(f"required tensor {name!r} is absent")
    shapes = {}
    for name, arr in tensors.items():
        if name not in REQUIRED_TENSORS:
            continue
        shapes[name] = arr.shape
    expected_rank = {"object": 3, "object_mask": 2, "action": 2, "visual_text": 2}
    for name, shape in shapes.items():
        if len(shape) != expected_rank[name]:
            raise DimMismatch(f"tensor {name!r} has rank {len(shape)}, expected {expected_rank[name]}")
        if shape[0] < 1 or any(d < 1 for d in shape):
            raise DimMismatch(f"tensor {name!r} has an empty axis: {shape}")
    frames = {shape[0] for shape in shapes.values()}
    if len(frames) > 1:
        raise DimMismatch(f"frame counts disagree across tensors: {shapes}")
    if "object" in shapes and "object_mask" in shapes:
        if shapes["object"][:2] != shapes["object_mask"]:
            raise DimMismatch(
                f"object {shapes['object']} and object_mask {shapes['object_mask']} disagree"
            )
    if "object_mask" in tensors:
        mask = tensors["object_mask"]
        if not np.all((mask == 0) | (mask == 1)):
            raise CorruptHeader("object_mask must hold only 0 and 1")
    for name in ("action", "visual_text"):
        if name in tensors and not np.all(np.isfinite(tensors[name])):
            raise NonFiniteValue(f"tensor {name!r} holds non-finite values")
    if "object" in tensors:
        obj = tensors["object"]
        present = tensors["object_mask"].astype(bool) if "object_mask" in tensors else np.ones(obj.shape[:2], bool)
        if not np.all(np.isfinite(obj[present])):
            raise NonFiniteValue("a present object vector holds non-finite values")


def bundle_from_tensors(video_id: str, tensors: Mapping[str, np.ndarray], required=REQUIRED_TENSORS) -> FeatureBundle:
    validate_tensors(tensors, required)
    mask = tensors.get("object_mask")
    return FeatureBundle(
        video_id=video_id,
        object_feats=tensors.get("object"),
        object_mask=None if mask is None else mask.astype(bool),
        action_feats=tensors.get("action"),
        visual_text_feats=tensors["visual_text"],
    )


def load_bundle(path, required=REQUIRED_TENSORS) -> FeatureBundle:
    """Read and validate a ``.vft`` feature bundle; the video id is the file stem."""
    path = Path(path)
    return bundle_from_tensors(path.stem, read_tensors(path), required)


def save_bundle(bundle: FeatureBundle, path) -> None:
    bundle.validate()
    write_tensors(path, bundle.tensors())


# -- caption files ------------------------------------------------------------


def write_captions(path, records: Iterable[CaptionRecord]) -> None:
    lines = [
        json.dumps({"video_id": r.video_id, "captions": list(r.captions)}, ensure_ascii=False)
        for r in records
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_captions(path) -> list[CaptionRecord]:
    """Read a captions ``.jsonl`` file, one ``{video_id, captions}`` object per line."""
    records: list[CaptionRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            vid, caps = obj["video_id"], obj["captions"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed caption record") from exc
        if isinstance(caps, str):
            caps = [caps]
        if not isinstance(vid, str) or not caps or not all(isinstance(c, str) for c in caps):
            raise DataError(f"{path}:{lineno}: need a string video_id and at least one caption")
        if vid in seen:
            raise DataError(f"{path}:{lineno}: duplicate video_id {vid!r}")
        seen.add(vid)
        records.append(CaptionRecord(vid, list(caps)))
    return records


# -- synthetic data -----------------------------------------------------------


def _codebooks(dims: tuple[int, int, int]) -> dict[str, np.ndarray]:
    d_o, d_m, d_c = dims
    rng = np.random.default_rng([d_o, d_m, d_c, 20240])

    def unit_rows(n, d):
        x = rng.standard_normal((n, d))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    n_codes = len(SUBJECTS) + len(ACTIONS) + len(PATTERNS) + len(EVENTS)
    return {
        "subject": unit_rows(len(SUBJECTS), d_o),
        "action": unit_rows(len(ACTIONS), d_m),
        "event": unit_rows(len(EVENTS), d_m),
        "text_proj": rng.standard_normal((n_codes, d_c)) / math.sqrt(d_c) * 2.0,
    }


def _f32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def synth_generate(
    seed: int,
    T: int = 8,
    N: int = 3,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    pattern: str = "drift",
    burst_width: int = 2,
    video_id: str | None = None,
    return_info: bool = False,
):
    """Generate one synthetic video with a planted action pattern.

    ``constant-action`` repeats one action vector; ``drift`` rotates it slowly
    across all frames; ``burst`` adds a short event over ``burst_width``
    consecutive frames on top of the drift.  The caption names the subject,
    the long-term action and, for bursts, the short event.

    Returns ``(bundle, record)``, plus an info dict when ``return_info``.
    """
    if pattern not in PATTERNS:
        raise BadPattern(f"unknown pattern {pattern!r}; choose from {PATTERNS}")
    if T < 1 or N < 1:
        raise DimMismatch("need T >= 1 and N >= 1")
    d_o, d_m, d_c = dims
    books = _codebooks(tuple(dims))
    rng = np.random.default_rng(seed)
    subj = int(rng.integers(len(SUBJECTS)))
    verb = int(rng.integers(len(ACTIONS)))
    event = int(rng.integers(len(EVENTS)))

    # objects: slot 0 is the subject, the rest are persistent distractors
    protos = np.vstack([books["subject"][subj], rng.standard_normal((N - 1, d_o))])
    obj = protos[None, :, :] + 0.05 * rng.standard_normal((T, N, d_o))
    mask = rng.random((T, N)) < 0.8
    mask[:, 0] = True
    obj = np.where(mask[..., None], obj, 0.0)

    # actions
    u = books["action"][verb]
    v = rng.standard_normal(d_m)
    v -= v.dot(u) * u
    v /= np.linalg.norm(v)
    if pattern == "constant-action":
        drift = np.tile(u, (T, 1))
    else:
        phi = (math.pi / 3) * np.arange(T) / max(T - 1, 1)
        drift = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
    action = drift.copy()
    burst = np.zeros(T, dtype=bool)
    if pattern == "burst":
        w = min(burst_width, T)
        k = int(rng.integers(1, T - w + 1)) if T - w >= 1 else 0
        burst[k : k + w] = True
        action[burst] += 1.5 * books["event"][event]

    # visual-text features: a fixed projection of the semantic codes
    codes = np.zeros((T, books["text_proj"].shape[0]))
    off = 0
    codes[:, off + subj] = 1.0
    off += len(SUBJECTS)
    codes[:, off + verb] = 1.0
    off += len(ACTIONS)
    codes[:, off + PATTERNS.index(pattern)] = 1.0
    off += len(PATTERNS)
    codes[burst, off + event] = 1.0
    text = codes @ books["text_proj"] + 0.05 * rng.standard_normal((T, d_c))

    words = ["a", SUBJECTS[subj], "is", ACTIONS[verb]]
    if pattern != "constant-action":
        words.append("around")
    if pattern == "burst":
        words += ["and", "then", EVENTS[event]]

    vid = video_id if video_id is not None else f"synth_{seed}"
    bundle = FeatureBundle(
        video_id=vid,
        object_feats=_f32(obj),
        object_mask=mask,
        action_feats=_f32(action),
        visual_text_feats=_f32(text),
    ).validate()
    record = CaptionRecord(vid, [" ".join(words)])
    if return_info:
        info = {
            "drift": _f32(drift),
            "burst_frames": np.flatnonzero(burst),
            "subject": SUBJECTS[subj],
            "action": ACTIONS[verb],
            "event": EVENTS[event] if pattern == "burst" else None,
        }
        return bundle, record, info
    return bundle, record


def synth_dataset(
    n_videos: int,
    seed: int = 0,
    T: int = 8,
    N: int = 3,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    pattern: str = "mixed",
) -> tuple[list[FeatureBundle], list[CaptionRecord]]:
    """``n_videos`` synthetic videos; ``pattern="mixed"`` cycles all patterns."""
    bundles, records = [], []
    for k in range(n_videos):
        pat = PATTERNS[k % len(PATTERNS)] if pattern == "mixed" else pattern
        b, r = synth_generate(seed * 100003 + k, T, N, dims, pat, video_id=f"vid{k:04d}")
        bundles.append(b)
        records.append(r)
    return bundles, records
