"""Volume preprocessing: isotropic resampling, HU clipping, organ patches.

Arrays are indexed (z, y, x). +y points posterior, so "anterior" is -y.
A voxel's physical center is ``origin + index * spacing``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from bodyct.systems import check_system

TARGET_SPACING = (2.0, 2.0, 2.0)

PATCH_SIZES = {
    "lungs_pleura": (224, 160, 160),
    "liver_gallbladder": (96, 128, 128),
    "kidneys_ureters": (96, 128, 128),
}

# voxels above this are counted as body when locating the body's extent
BODY_THRESHOLD_HU = -500.0


class GeometryError(ValueError):
    pass


@dataclass
class VolumeGrid:
    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or 0 in self.voxels.shape:
            raise GeometryError(f"volume must be a non-empty 3-D array, got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise GeometryError(f"spacing must be three positive numbers, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)

    @property
    def extent(self) -> tuple[float, float, float]:
        """Physical size in mm, edge to edge."""
        return tuple(n * s for n, s in zip(self.shape, self.spacing))


@dataclass(frozen=True)
class IntensityPolicy:
    clip: dict = field(default_factory=lambda: {
        "lungs_pleura": (-1000.0, 800.0),
        "liver_gallbladder": (-200.0, 500.0),
        "kidneys_ureters": (-200.0, 500.0),
    })

    def range_for(self, system: str) -> tuple[float, float]:
        lo, hi = self.clip[check_system(system)]
        if not lo < hi:
            raise GeometryError(f"clip range for {system} must have min < max, got {(lo, hi)}")
        return float(lo), float(hi)


DEFAULT_POLICY = IntensityPolicy()


def resample(volume: VolumeGrid, target_spacing=TARGET_SPACING, spline_order: int = 3,
             mode: str = "nearest") -> VolumeGrid:
    """B-spline resampling onto a grid with ``target_spacing``.

    The output covers the input's physical extent (edge to edge) rounded to a
    whole number of target voxels; the first output voxel's lower edge
    coincides with the input's lower edge. Samples outside the input take the
    nearest edge value.
    """
    if spline_order not in (0, 1, 2, 3):
        raise GeometryError(f"spline order must be 0..3, got {spline_order}")
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or any(not np.isfinite(t) or t <= 0 for t in target):
        raise GeometryError(f"target spacing must be three positive numbers, got {target_spacing}")
    src = volume.spacing
    out_shape = tuple(max(1, int(round(n * s / t))) for n, s, t in zip(volume.shape, src, target))
    scale = np.array([t / s for s, t in zip(src, target)])
    # input index of output voxel k: k * t/s + (t - s) / (2 s)
    offset = np.array([(t - s) / (2.0 * s) for s, t in zip(src, target)])
    data = volume.voxels.astype(np.float64, copy=False)
    with warnings.catch_warnings():
        # a 1-D matrix selects scipy's separable diagonal path; the warning is informational
        warnings.simplefilter("ignore", UserWarning)
        out = ndimage.affine_transform(
            data, scale, offset=offset, output_shape=out_shape, order=spline_order, mode=mode, prefilter=True
        )
    origin = tuple(o - s / 2.0 + t / 2.0 for o, s, t in zip(volume.origin, src, target))
    return VolumeGrid(out, target, origin)


def resample_mask(mask: VolumeGrid, target_spacing=TARGET_SPACING) -> VolumeGrid:
    out = resample(VolumeGrid(mask.voxels.astype(np.float64), mask.spacing, mask.origin), target_spacing, 0)
    return VolumeGrid(out.voxels > 0.5, out.spacing, out.origin)


def clip_patch(patch, system: str, policy: IntensityPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Clamp to the system's HU window (float64 copy)."""
    lo, hi = policy.range_for(system)
    return np.clip(np.asarray(patch, dtype=np.float64), lo, hi)


def clip_normalize(patch, system: str, policy: IntensityPolicy = DEFAULT_POLICY) -> tuple[np.ndarray, bool]:
    """Clamp to the system's HU window, then scale to zero mean and unit SD.

    Returns the array and a degeneracy flag; a patch that is constant after
    clipping comes back as zeros with the flag set.
    """
    clipped = clip_patch(patch, system, policy)
    if clipped.size == 0:
        raise GeometryError("cannot normalize an empty patch")
    if np.ptp(clipped) == 0:
        return np.zeros_like(clipped), True
    centered = clipped - clipped.mean()
    return centered / centered.std(), False


@dataclass(frozen=True)
class PatchSpec:
    system: str
    size: tuple[int, int, int]
    center: tuple[int, int, int]  # after any offset
    start: tuple[int, int, int]  # may be negative or run past the volume: padding
    volume_shape: tuple[int, int, int]
    offset_rule: str = "centroid"
    offset_voxels: int = 0

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(a + n for a, n in zip(self.start, self.size))

    @property
    def needs_padding(self) -> tuple[bool, bool, bool]:
        return tuple(a < 0 or b > d for a, b, d in zip(self.start, self.stop, self.volume_shape))

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "size": list(self.size),
            "center": list(self.center),
            "start": list(self.start),
            "volume_shape": list(self.volume_shape),
            "offset_rule": self.offset_rule,
            "offset_voxels": self.offset_voxels,
        }


def mask_centroid(mask) -> np.ndarray:
    idx = np.argwhere(np.asarray(mask) > 0)
    if len(idx) == 0:
        raise GeometryError("empty mask: cannot place a patch")
    return idx.mean(axis=0)


def body_bounds(volume: VolumeGrid, threshold: float = BODY_THRESHOLD_HU) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive voxel bounding box of everything denser than ``threshold``."""
    idx = np.argwhere(volume.voxels > threshold)
    if len(idx) == 0:
        return np.zeros(3, dtype=int), np.array(volume.shape) - 1
    return idx.min(axis=0), idx.max(axis=0)


def _fit_axis(start: int, size: int, dim: int) -> int:
    """Translate [start, start+size) into [0, dim) without shrinking it.

    When the patch is longer than the axis it is moved as little as possible
    while still covering the whole axis.
    """
    if size <= dim:
        return min(max(start, 0), dim - size)
    return min(max(start, dim - size), 0)


def place_patch(mask, system: str, volume: VolumeGrid | None = None, kidney_offset="auto") -> PatchSpec:
    """Organ-centered patch box on the volume's (2 mm) grid.

    For kidneys the box is shifted anteriorly (-y). With ``kidney_offset="auto"``
    the shift is the smallest one that keeps the box's posterior face inside
    the body bounds (needs ``volume``); a number is a fixed shift in mm.
    """
    check_system(system)
    m = mask.voxels if isinstance(mask, VolumeGrid) else np.asarray(mask)
    shape = tuple(m.shape)
    if volume is not None and volume.shape != shape:
        raise GeometryError(f"mask shape {shape} differs from volume shape {volume.shape}")
    size = PATCH_SIZES[system]
    center = [int(np.floor(c + 0.5)) for c in mask_centroid(m)]
    start = [c - n // 2 for c, n in zip(center, size)]
    rule, shift = "centroid", 0
    if system == "kidneys_ureters" and kidney_offset not in (None, 0, "0", "none"):
        if kidney_offset == "auto":
            if volume is None:
                raise GeometryError("automatic kidney offset needs the volume to find body bounds")
            _, hi = body_bounds(volume)
            posterior_limit = int(hi[1]) + 1
            shift = max(0, start[1] + size[1] - posterior_limit)
            rule = "kidney_auto"
        else:
            spacing_y = mask.spacing[1] if isinstance(mask, VolumeGrid) else (
                volume.spacing[1] if volume is not None else TARGET_SPACING[1])
            shift = int(round(float(kidney_offset) / spacing_y))
            rule = f"kidney_fixed_{float(kidney_offset):g}mm"
        start[1] -= shift
        center[1] -= shift
    start = [_fit_axis(a, n, d) for a, n, d in zip(start, size, shape)]
    return PatchSpec(system, size, tuple(center), tuple(start), shape, rule, shift)


def extract_patch(volume: VolumeGrid, spec: PatchSpec, policy: IntensityPolicy = DEFAULT_POLICY,
                  normalize: bool = True) -> tuple[np.ndarray, bool]:
    """Copy the patch box, pad outside the volume with the clip minimum, normalize."""
    if volume.shape != spec.volume_shape:
        raise GeometryError(f"patch spec made for shape {spec.volume_shape}, volume is {volume.shape}")
    lo, _ = policy.range_for(spec.system)
    out = np.full(spec.size, lo, dtype=np.float64)
    src, dst = [], []
    for a, n, d in zip(spec.start, spec.size, volume.shape):
        s0, s1 = max(a, 0), min(a + n, d)
        if s1 <= s0:
            src = None
            break
        src.append(slice(s0, s1))
        dst.append(slice(s0 - a, s1 - a))
    if src is not None:
        out[tuple(dst)] = volume.voxels[tuple(src)]
    if not normalize:
        return out, False
    return clip_normalize(out, spec.system, policy)


def prepare(volume: VolumeGrid, mask: VolumeGrid, system: str, spline_order: int = 3,
            kidney_offset="auto", policy: IntensityPolicy = DEFAULT_POLICY):
    """Resample volume and mask to 2 mm, place the patch, extract it."""
    if volume.shape != mask.shape:
        raise GeometryError(f"mask shape {mask.shape} differs from volume shape {volume.shape}")
    vol2 = resample(volume, TARGET_SPACING, spline_order)
    mask2 = resample_mask(mask, TARGET_SPACING)
    spec = place_patch(mask2, system, vol2, kidney_offset)
    patch, degenerate = extract_patch(vol2, spec, policy)
    return patch, spec, degenerate, vol2


# -- raw + sidecar I/O ---------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json") if path.suffix != ".json" else path


def read_volume(path) -> VolumeGrid:
    """Read ``<name>.raw`` + ``<name>.raw.json``, or a NIfTI file via nibabel."""
    path = Path(path)
    if path.name.endswith((".nii", ".nii.gz")):
        return _read_nifti(path)
    meta_path = _sidecar(path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        dtype = np.dtype(meta.get("dtype", "float32")).newbyteorder("<")
        size = tuple(int(n) for n in meta["size"])
        data = np.fromfile(path, dtype=dtype)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise GeometryError(f"cannot read volume {path}: {exc}") from exc
    if data.size != int(np.prod(size)):
        raise GeometryError(f"{path}: {data.size} voxels on disk, sidecar says {size}")
    return VolumeGrid(data.reshape(size), tuple(meta.get("spacing", (1, 1, 1))),
                      tuple(meta.get("origin", (0, 0, 0))))


def write_volume(path, volume: VolumeGrid, dtype="float32", extra: dict | None = None) -> None:
    path = Path(path)
    dt = np.dtype(dtype).newbyteorder("<")
    volume.voxels.astype(dt).tofile(path)
    meta = {
        "size": list(volume.shape),
        "spacing": list(volume.spacing),
        "origin": list(volume.origin),
        "dtype": dt.str,
    }
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_nifti(path: Path) -> VolumeGrid:
    try:
        import nibabel as nib
    except ImportError as exc:
        raise GeometryError("reading NIfTI needs the optional 'nibabel' package") from exc
    img = nib.load(str(path))
    data = np.asarray(img.dataobj)
    if data.ndim != 3:
        raise GeometryError(f"{path}: expected a 3-D image, got {data.ndim}-D")
    zooms = img.header.get_zooms()[:3]
    origin = img.affine[:3, 3]
    # NIfTI stores (x, y, z); transpose to (z, y, x)
    return VolumeGrid(np.transpose(data, (2, 1, 0)), tuple(float(z) for z in zooms[::-1]),
                      tuple(float(o) for o in origin[::-1]))
