"""Lambertian/Phong image formation, synthetic scene generation, and
missing-pixel detection."""

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import PixelGrid, DepthMap, build_derivative_operators

# normalized intensities outside this open interval count as missing
MISSING_LOW = 0.02
MISSING_HIGH = 0.98


@dataclass(frozen=True)
class Lighting:
    """Per-image light rows: direction times intensity, one row per image."""

    L: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 2 or L.shape[1] != 3:
            raise ValueError("lights must be an m x 3 matrix")
        if np.any(np.linalg.norm(L, axis=1) == 0):
            raise ValueError("every light row must have positive norm")
        object.__setattr__(self, "L", L)

    @property
    def m(self):
        return self.L.shape[0]


@dataclass
class Surface:
    """Depth, unnormalized geometric normals, and albedo on a pixel grid.

    Normal columns follow the (-z_x, -z_y, 1) convention: rows one and two
    are the negated discrete depth derivatives, row three is identically 1,
    so the normal field is curl-free by construction.
    """

    grid: PixelGrid
    depth: DepthMap
    normals: np.ndarray  # 3 x p
    albedo: np.ndarray  # p

    def __post_init__(self):
        rho = np.asarray(self.albedo, dtype=float)
        if rho.min() < 0 or rho.max() > 1:
            raise ValueError("albedo must lie in [0, 1]")
        self.albedo = rho

    @classmethod
    def from_depth(cls, grid, z, albedo, ops=None):
        """Build the normal field consistent with a depth vector."""
        if ops is None:
            ops = build_derivative_operators(grid)
        z = np.asarray(z, dtype=float)
        normals = np.vstack([-(ops.dx @ z), -(ops.dy @ z), np.ones_like(z)])
        depth = DepthMap(z - z.mean(), grid)
        return cls(grid=grid, depth=depth, normals=normals, albedo=albedo)

    def unit_normals(self):
        return self.normals / np.linalg.norm(self.normals, axis=0)


@dataclass(frozen=True)
class PhongParams:
    """Specular lobe parameters: weight, shininess, unit viewing direction."""

    k_s: float = 0.2
    alpha: float = 10.0
    view: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.k_s < 0:
            raise ValueError("k_s must be non-negative")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        v = np.asarray(self.view, dtype=float)
        if not np.isclose(np.linalg.norm(v), 1.0):
            raise ValueError("viewing direction must be a unit vector")


@dataclass
class ObservationSet:
    """Measurement matrix M (m x p), missing-data mask W, and the grid tying
    columns to pixel locations. W is True where M is observed."""

    M: np.ndarray
    W: np.ndarray
    grid: PixelGrid

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.W = np.asarray(self.W, dtype=bool)
        if self.M.shape != self.W.shape:
            raise ValueError("M and W must have the same shape")
        if self.M.shape[1] != self.grid.n_pixels:
            raise ValueError("M columns must match grid pixels")
        if not np.all(np.isfinite(self.M[self.W])):
            raise ValueError("M must be finite on observed entries")

    @property
    def m(self):
        return self.M.shape[0]


def render_lambertian(surface, lights, clamp=True):
    """Images M with M_ij = max(0, rho_j * l_i . nhat_j).

    clamp=False skips the attached-shadow clamp (the raw, possibly negative
    shading), which is what linear-model identities are stated on.
    """
    nhat = surface.unit_normals()
    shading = lights.L @ nhat * surface.albedo[None, :]
    if clamp:
        return np.maximum(shading, 0.0)
    return shading


def render_phong(surface, lights, phong, clip=True):
    """Lambertian shading plus a Phong specular lobe.

    The specular term is k_s * max(0, V . R)^alpha with R the reflection of
    the normalized light direction about the unit normal. Output is clipped
    to [0, 1], modelling sensor saturation of normalized intensities.
    """
    nhat = surface.unit_normals()
    lam = render_lambertian(surface, lights, clamp=True)
    lnorm = np.linalg.norm(lights.L, axis=1, keepdims=True)
    lhat = lights.L / lnorm
    v = np.asarray(phong.view, dtype=float)
    # V.R = 2 (nhat.lhat)(nhat.V) - lhat.V, per light row and pixel column
    ndotl = lhat @ nhat
    ndotv = v @ nhat
    vdotr = 2.0 * ndotl * ndotv[None, :] - (lhat @ v)[:, None]
    spec = phong.k_s * np.maximum(vdotr, 0.0) ** phong.alpha
    out = lam + spec
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def add_gaussian_noise(M, sigma_frac, seed):
    """Add iid zero-mean Gaussian noise with std sigma_frac * max(M),
    then clip to [0, 1]. Deterministic per seed."""
    if sigma_frac < 0:
        raise ValueError("sigma_frac must be non-negative")
    M = np.asarray(M, dtype=float)
    if sigma_frac == 0:
        return M.copy()
    rng = np.random.default_rng(seed)
    noisy = M + rng.normal(0.0, sigma_frac * M.max(), size=M.shape)
    return np.clip(noisy, 0.0, 1.0)


def detect_missing(M, low=MISSING_LOW, high=MISSING_HIGH):
    """Observation mask: False where the normalized intensity falls outside
    the open interval (low, high) — shadows and saturated pixels."""
    if not (0 <= low < high <= 1):
        raise ValueError("need 0 <= low < high <= 1")
    M = np.asarray(M, dtype=float)
    return (M > low) & (M < high)


@dataclass
class SceneSpec:
    """Description of a synthetic scene.

    shape is one of "gaussian" (smooth bump on a full-frame mask), "sphere"
    (spherical cap on a disk mask), or "raster" (externally supplied depth /
    albedo / mask files, see the fileio module for formats).
    """

    shape: str = "gaussian"
    height: int = 64
    width: int = 64
    m: int = 10
    noise: float = 0.0
    phong: bool = False
    k_s: float = 0.2
    alpha: float = 10.0
    seed: int = 0
    albedo: str = "uniform"
    mean_light_angle_deg: float = 30.0
    max_light_angle_deg: float = 80.0
    bump_amplitude: float = 0.0  # 0 means the size-derived default
    bump_sigma: float = 0.0
    cap_radius: float = 0.0
    sphere_radius: float = 0.0
    raster_depth: str = ""
    raster_albedo: str = ""
    raster_mask: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scene keys: {sorted(extra)}")
        return cls(**d)


def sample_lights(m, rng, mean_angle_deg=30.0, max_angle_deg=80.0):
    """Unit-intensity lights around the view axis.

    Inclinations are half-normal with the scale set so the mean inclination
    equals mean_angle_deg; draws past max_angle_deg are rejected and redrawn.
    Azimuths are uniform.
    """
    sigma = np.radians(mean_angle_deg) * np.sqrt(np.pi / 2.0)
    theta = np.abs(rng.normal(0.0, sigma, size=m))
    limit = np.radians(max_angle_deg)
    while np.any(theta >= limit):
        bad = theta >= limit
        theta[bad] = np.abs(rng.normal(0.0, sigma, size=int(bad.sum())))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
    L = np.column_stack([
        np.sin(theta) * np.cos(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
    ])
    return Lighting(L=L)


def _gaussian_bump(spec):
    # defaults give a max slope of ~35 degrees: steep enough that the
    # gradient rows carry real signal, shallow enough to stay shadow-free
    # under lights within 45 degrees of the view axis
    size = min(spec.height, spec.width)
    amp = spec.bump_amplitude or 0.25 * size
    sig = spec.bump_sigma or 0.22 * size
    grid = PixelGrid.full(spec.height, spec.width)
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    r2 = (grid.x - cx) ** 2 + (grid.y - cy) ** 2
    z = amp * np.exp(-r2 / (2.0 * sig**2))
    return grid, z


def _sphere_cap(spec):
    size = min(spec.height, spec.width)
    r_cap = spec.cap_radius or 0.38 * size
    radius = spec.sphere_radius or r_cap / 0.75
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    mask = r2 <= r_cap**2
    grid = PixelGrid(mask)
    z = np.sqrt(radius**2 - grid.from_image(r2.astype(float)))
    return grid, z


def _make_albedo(spec, grid, rng):
    if spec.albedo == "uniform":
        return np.full(grid.n_pixels, 0.8)
    if spec.albedo == "smooth":
        size = min(spec.height, spec.width)
        noise = rng.normal(size=(spec.height, spec.width))
        sm = gaussian_filter(noise, sigma=size / 8.0)
        sm = (sm - sm.min()) / max(sm.max() - sm.min(), 1e-12)
        return 0.55 + 0.35 * grid.from_image(sm)
    raise ValueError(f"unknown albedo pattern: {spec.albedo!r}")


def _load_raster_scene(spec):
    from . import fileio

    depth_img, mask = fileio.read_pfm(spec.raster_depth), None
    if spec.raster_mask:
        mask = fileio.read_mask_png(spec.raster_mask)
    else:
        mask = np.isfinite(depth_img)
    grid = PixelGrid(mask)
    z = grid.from_image(depth_img)
    if spec.raster_albedo:
        albedo = grid.from_image(fileio.read_pfm(spec.raster_albedo))
    else:
        albedo = np.full(grid.n_pixels, 0.8)
    return grid, z, albedo


def generate_scene(spec, seed=None):
    """Render a synthetic trial: ground-truth surface, sampled lights, and the
    corrupted observation set (requested corruption chain, then missing-pixel
    detection). Deterministic per seed."""
    if spec.m < 3:
        raise ValueError("need at least 3 images")
    if seed is None:
        seed = spec.seed
    light_ss, albedo_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)

    if spec.shape == "gaussian":
        grid, z = _gaussian_bump(spec)
        albedo = _make_albedo(spec, grid, np.random.default_rng(albedo_ss))
    elif spec.shape == "sphere":
        grid, z = _sphere_cap(spec)
        albedo = _make_albedo(spec, grid, np.random.default_rng(albedo_ss))
    elif spec.shape == "raster":
        grid, z, albedo = _load_raster_scene(spec)
    else:
        raise ValueError(f"unknown scene shape: {spec.shape!r}")

    surface = Surface.from_depth(grid, z, albedo)
    lights = sample_lights(
        spec.m,
        np.random.default_rng(light_ss),
        spec.mean_light_angle_deg,
        spec.max_light_angle_deg,
    )
    if spec.phong:
        phong = PhongParams(k_s=spec.k_s, alpha=spec.alpha)
        M = render_phong(surface, lights, phong)
    else:
        M = render_lambertian(surface, lights)
    if spec.noise > 0:
        M = add_gaussian_noise(M, spec.noise, noise_ss.generate_state(1)[0])
    W = detect_missing(M)
    return surface, lights, ObservationSet(M=M, W=W, grid=grid)
