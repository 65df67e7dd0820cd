"""Bit-exact tensor files and feature-bundle manifests.

STF1 layout (all little-endian, independent of host byte order):

    bytes 0..3   magic "STF1"
    byte  4      dtype code: 0 = f32, 1 = i64, 2 = u8
    byte  5      ndim (>= 1)
    bytes 6..7   zero padding (aligns the dim table to 8 bytes)
    next ndim*8  dims as u64
    rest         raw row-major payload

The manifest is a JSON object mapping tensor roles to relative file paths
plus grid geometry and class names; see REQUIRED_MANIFEST_KEYS.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    GeometryMismatch,
    InconsistentClassCount,
    IoFailure,
    MissingRole,
    ShapeOverflow,
    TruncatedFile,
    UnknownDtype,
)

MAGIC = b"STF1"
_U64_MAX = 2**64 - 1

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_KIND_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.int64): 1, np.dtype(np.uint8): 2}

TENSOR_ROLES = (
    "image",
    "clip_layer_features",
    "clip_layer_attn",
    "clip_value_last",
    "dino_layer_features",
    "dino_attn_last",
    "text_embeddings",
)

REQUIRED_MANIFEST_KEYS = TENSOR_ROLES + (
    "grid_clip",
    "grid_dino",
    "has_class_token_clip",
    "has_class_token_dino",
    "class_names",
)


def write_tensor(path, array: np.ndarray) -> None:
    """Write `array` to `path` in STF1 form. Only f32/i64/u8 are storable."""
    arr = np.asarray(array)
    code = _KIND_TO_CODE.get(arr.dtype)
    if code is None:
        raise UnknownDtype(f"unsupported dtype {arr.dtype}; store f32, i64 or u8")
    if arr.ndim == 0:
        raise ValueError("scalar tensors are not storable; use shape (1,)")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"every dimension must be >= 1, got shape {arr.shape}")
    header = MAGIC + bytes([code, arr.ndim, 0, 0])
    dims = np.asarray(arr.shape, dtype="<u8").tobytes()
    payload = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(dims)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    """Read an STF1 file back into an array, byte for byte."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: {len(blob)} bytes, header incomplete")
    if blob[:4] != MAGIC:
        raise BadMagic(f"{path}: expected {MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 8:
        raise TruncatedFile(f"{path}: header incomplete")
    code, ndim = blob[4], blob[5]
    dtype = _CODE_TO_DTYPE.get(code)
    if dtype is None:
        raise UnknownDtype(f"{path}: dtype code {code}")
    if ndim == 0:
        raise TruncatedFile(f"{path}: empty shape is not valid")
    dims_end = 8 + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedFile(f"{path}: dim table incomplete")
    shape = tuple(int(d) for d in np.frombuffer(blob[8:dims_end], dtype="<u8"))
    count = 1
    for d in shape:
        if d < 1:
            raise ShapeOverflow(f"{path}: dimension {d} is not >= 1")
        count *= d
        if count > _U64_MAX:
            raise ShapeOverflow(f"{path}: element count exceeds u64")
    expected = count * dtype.itemsize
    actual = len(blob) - dims_end
    if actual < expected:
        raise TruncatedFile(f"{path}: payload has {actual} bytes, need {expected}")
    if actual > expected:
        raise TruncatedFile(f"{path}: {actual - expected} trailing bytes after payload")
    return np.frombuffer(blob[dims_end:], dtype=dtype).reshape(shape).copy()


@dataclass(frozen=True)
class FeatureBundle:
    """Everything exported for one image, cross-validated on load.

    Patch features are stored without a class token; attention and value
    tensors keep it (row/column 0) when the corresponding flag is set.
    """

    image: np.ndarray                 # u8, H x W x 3
    clip_layer_features: np.ndarray   # f32, L x P_c x D_c, intermediate layers
    clip_layer_attn: np.ndarray       # f32, L x heads x P_c' x P_c'
    clip_value_last: np.ndarray       # f32, P_c' x D_c
    dino_layer_features: np.ndarray   # f32, N_d x P_d x D_d, all layers
    dino_attn_last: np.ndarray        # f32, P_d' x P_d', head-averaged
    text_embeddings: np.ndarray       # f32, K x D_c
    grid_clip: tuple[int, int]
    grid_dino: tuple[int, int]
    has_class_token_clip: bool
    has_class_token_dino: bool
    class_names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


def _check_geometry(bundle: FeatureBundle) -> None:
    b = bundle
    if b.image.ndim != 3 or b.image.shape[2] != 3 or b.image.dtype != np.uint8:
        raise GeometryMismatch(f"image must be u8 HxWx3, got {b.image.dtype} {b.image.shape}")
    for name in ("clip_layer_features", "clip_layer_attn", "clip_value_last",
                 "dino_layer_features", "dino_attn_last", "text_embeddings"):
        if getattr(b, name).dtype != np.float32:
            raise GeometryMismatch(f"{name} must be f32")
    if b.clip_layer_features.ndim != 3:
        raise GeometryMismatch("clip_layer_features must be layers x patches x dim")
    if b.dino_layer_features.ndim != 3:
        raise GeometryMismatch("dino_layer_features must be layers x patches x dim")
    if b.clip_layer_attn.ndim != 4:
        raise GeometryMismatch("clip_layer_attn must be layers x heads x P' x P'")

    p_clip = b.clip_layer_features.shape[1]
    if b.grid_clip[0] * b.grid_clip[1] != p_clip:
        raise GeometryMismatch(
            f"grid_clip {b.grid_clip} product != clip patch count {p_clip}")
    p_clip_attn = p_clip + (1 if b.has_class_token_clip else 0)
    if b.clip_layer_attn.shape[2:] != (p_clip_attn, p_clip_attn):
        raise GeometryMismatch(
            f"clip_layer_attn spatial dims {b.clip_layer_attn.shape[2:]} "
            f"!= ({p_clip_attn}, {p_clip_attn})")
    if b.clip_layer_attn.shape[0] != b.clip_layer_features.shape[0]:
        raise GeometryMismatch(
            "clip_layer_attn and clip_layer_features must store the same layers")
    if b.clip_value_last.ndim != 2 or b.clip_value_last.shape[0] != p_clip_attn:
        raise GeometryMismatch(
            f"clip_value_last rows {b.clip_value_last.shape} != {p_clip_attn}")

    p_dino = b.dino_layer_features.shape[1]
    if b.grid_dino[0] * b.grid_dino[1] != p_dino:
        raise GeometryMismatch(
            f"grid_dino {b.grid_dino} product != dino patch count {p_dino}")
    p_dino_attn = p_dino + (1 if b.has_class_token_dino else 0)
    if b.dino_attn_last.shape != (p_dino_attn, p_dino_attn):
        raise GeometryMismatch(
            f"dino_attn_last shape {b.dino_attn_last.shape} != square {p_dino_attn}")

    if b.text_embeddings.ndim != 2 or b.text_embeddings.shape[0] != len(b.class_names):
        raise InconsistentClassCount(
            f"{b.text_embeddings.shape[0]} embedding rows for "
            f"{len(b.class_names)} class names")


def load_bundle(manifest_path) -> FeatureBundle:
    """Load and validate a feature bundle from its JSON manifest.

    Tensor paths are resolved relative to the manifest's directory. Any
    invariant violation raises; nothing is reshaped or coerced silently.
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {manifest_path}: {exc}") from exc
    for key in REQUIRED_MANIFEST_KEYS:
        if key not in manifest:
            raise MissingRole(f"manifest lacks required key '{key}'")
    base = os.path.dirname(os.path.abspath(manifest_path))
    tensors = {role: read_tensor(os.path.join(base, manifest[role]))
               for role in TENSOR_ROLES}
    bundle = FeatureBundle(
        image=tensors["image"],
        clip_layer_features=tensors["clip_layer_features"],
        clip_layer_attn=tensors["clip_layer_attn"],
        clip_value_last=tensors["clip_value_last"],
        dino_layer_features=tensors["dino_layer_features"],
        dino_attn_last=tensors["dino_attn_last"],
        text_embeddings=tensors["text_embeddings"],
        grid_clip=tuple(int(v) for v in manifest["grid_clip"]),
        grid_dino=tuple(int(v) for v in manifest["grid_dino"]),
        has_class_token_clip=bool(manifest["has_class_token_clip"]),
        has_class_token_dino=bool(manifest["has_class_token_dino"]),
        class_names=tuple(str(n) for n in manifest["class_names"]),
    )
    _check_geometry(bundle)
    return bundle


def write_bundle(out_dir, bundle: FeatureBundle, manifest_name="manifest.json") -> str:
    """Write a bundle as one STF1 file per role plus a manifest. Returns the
    manifest path. Mainly used by tests and the synthetic-bundle script."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {}
    for role in TENSOR_ROLES:
        fname = f"{role}.stf"
        write_tensor(os.path.join(out_dir, fname), getattr(bundle, role))
        manifest[role] = fname
    manifest["grid_clip"] = list(bundle.grid_clip)
    manifest["grid_dino"] = list(bundle.grid_dino)
    manifest["has_class_token_clip"] = bundle.has_class_token_clip
    manifest["has_class_token_dino"] = bundle.has_class_token_dino
    manifest["class_names"] = list(bundle.class_names)
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path
