"""File formats: PFM float rasters, PNG masks, CSV tables, JSON configs, and
the on-disk dataset/result layout.

PFM files are written little-endian (scale -1.0), grayscale "Pf" for depth
and albedo, three-channel "PF" for normals. The writer/reader round-trip is
bit-exact for finite float32 data.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import DepthMap, PixelGrid
from .photometric import Lighting, ObservationSet, SceneSpec, detect_missing


def write_pfm(path, image, scale=-1.0):
    """Write a (H, W) or (H, W, 3) float raster as PFM.

    Negative scale marks little-endian data, the only variant produced here.
    Scanlines are stored bottom-to-top per the format.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        header = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("expected a (H, W) or (H, W, 3) raster")
    if scale >= 0:
        raise ValueError("only little-endian output (negative scale) is supported")
    data = image.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{image.shape[1]} {image.shape[0]}\n".encode("ascii"))
        fh.write(f"{scale:.1f}\n".encode("ascii"))
        fh.write(np.flipud(data).tobytes())


def _read_token(fh):
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("truncated PFM header")
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pfm(path):
    """Read a PFM raster to float32, shape (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        kind = _read_token(fh)
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"not a PFM file: {path}")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        scale = float(_read_token(fh))
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        data = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_mask_png(path, mask):
    """Object mask as an 8-bit PNG, 255 inside the object."""
    img = Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8))
    img.save(path, format="PNG")


def read_mask_png(path):
    """Boolean mask from a PNG: nonzero pixels are object pixels."""
    img = Image.open(path).convert("L")
    return np.asarray(img) != 0


def write_lights_csv(path, L):
    L = np.asarray(L, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lx", "ly", "lz"])
        for row in L:
            writer.writerow([repr(v) for v in row])


def read_lights_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["lx", "ly", "lz"]:
            raise ValueError(f"unexpected lights header in {path}: {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows, dtype=float)


def save_json(path, obj):
    """Canonical JSON dump: sorted keys, two-space indent, trailing newline,
    so identical content is byte-identical on disk."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


@dataclass
class Dataset:
    """In-memory view of a dataset directory."""

    spec: SceneSpec
    grid: PixelGrid
    M: np.ndarray
    W: np.ndarray
    lights: Lighting
    depth_gt: DepthMap
    normals_gt: np.ndarray
    albedo_gt: np.ndarray

    def observations(self):
        return ObservationSet(M=self.M, W=self.W, grid=self.grid)


def write_dataset(dirpath, surface, lights, obs, spec):
    """Persist a synthetic scene: one PFM per image, lights CSV, ground-truth
    depth/normals/albedo PFMs, mask PNG, and the resolved scene config."""
    out = Path(dirpath)
    (out / "images").mkdir(parents=True, exist_ok=True)
    grid = surface.grid
    for i in range(obs.M.shape[0]):
        write_pfm(out / "images" / f"image_{i:03d}.pfm",
                  grid.to_image(obs.M[i], fill=0.0))
    write_lights_csv(out / "lights.csv", lights.L)
    write_pfm(out / "depth_gt.pfm", surface.depth.to_image(fill=0.0))
    normal_img = np.stack(
        [grid.to_image(surface.normals[k], fill=0.0) for k in range(3)], axis=-1
    )
    write_pfm(out / "normals_gt.pfm", normal_img)
    write_pfm(out / "albedo_gt.pfm", grid.to_image(surface.albedo, fill=0.0))
    write_mask_png(out / "mask.png", grid.mask)
    save_json(out / "scene.json", spec.to_dict())


def load_dataset(dirpath):
    """Load a dataset directory written by write_dataset (or following the
    same layout with externally supplied ground truth)."""
    root = Path(dirpath)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    spec = SceneSpec.from_dict(load_json(root / "scene.json"))
    grid = PixelGrid(read_mask_png(root / "mask.png"))
    image_paths = sorted((root / "images").glob("image_*.pfm"))
    if not image_paths:
        raise FileNotFoundError(f"no images under {root / 'images'}")
    M = np.stack([grid.from_image(read_pfm(p).astype(float)) for p in image_paths])
    W = detect_missing(M)
    lights = Lighting(read_lights_csv(root / "lights.csv"))
    depth_img = read_pfm(root / "depth_gt.pfm").astype(float)
    depth = DepthMap(grid.from_image(depth_img), grid)
    normals_img = read_pfm(root / "normals_gt.pfm").astype(float)
    normals = np.stack([grid.from_image(normals_img[..., k]) for k in range(3)])
    albedo = grid.from_image(read_pfm(root / "albedo_gt.pfm").astype(float))
    return Dataset(spec=spec, grid=grid, M=M, W=W, lights=lights,
                   depth_gt=depth, normals_gt=normals, albedo_gt=albedo)
