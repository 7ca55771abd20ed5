"""Masked pixel grids, discrete derivative operators, and least-squares
surface integration.

Conventions used throughout the package: ``x`` runs along image columns
(width), ``y`` along rows (height). The ``p`` object pixels of a grid are
enumerated in row-major order of the mask; vectors of per-pixel values are
indexed by that enumeration.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu


class PixelGrid:
    """Rectangular pixel grid with a boolean object mask.

    Maintains the bijection between the (y, x) locations of the True mask
    cells and the column indices 0..p-1 used by every per-pixel vector.
    """

    def __init__(self, mask):
        mask = np.ascontiguousarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not mask.any():
            raise ValueError("mask has no object pixels")
        self.mask = mask
        self.height, self.width = mask.shape
        self.n_pixels = int(mask.sum())
        self.index_map = np.full(mask.shape, -1, dtype=np.int64)
        self.index_map[mask] = np.arange(self.n_pixels)
        self.rows, self.cols = np.nonzero(mask)
        self._component_labels = None

    @classmethod
    def full(cls, height, width):
        return cls(np.ones((height, width), dtype=bool))

    @property
    def x(self):
        """x coordinate (column) of each object pixel, as float."""
        return self.cols.astype(float)

    @property
    def y(self):
        """y coordinate (row) of each object pixel, as float."""
        return self.rows.astype(float)

    @property
    def component_labels(self):
        """4-connected component label of each object pixel."""
        if self._component_labels is None:
            adj = _adjacency(self)
            _, labels = csgraph.connected_components(adj, directed=False)
            self._component_labels = labels
        return self._component_labels

    @property
    def n_components(self):
        return int(self.component_labels.max()) + 1

    def shifted_index(self, dy, dx):
        """Column index of the (dy, dx)-neighbor of each pixel, -1 if it is
        outside the mask (or the image)."""
        out = np.full(self.n_pixels, -1, dtype=np.int64)
        ny = self.rows + dy
        nx = self.cols + dx
        ok = (ny >= 0) & (ny < self.height) & (nx >= 0) & (nx < self.width)
        out[ok] = self.index_map[ny[ok], nx[ok]]
        return out

    def quad_mask(self):
        """Pixels whose +x, +y and +x+y neighbors are all inside the mask.

        At these pixels every stencil involved in a mixed second difference
        is a plain forward difference, so discrete cross derivatives commute
        exactly.
        """
        return (
            (self.shifted_index(0, 1) >= 0)
            & (self.shifted_index(1, 0) >= 0)
            & (self.shifted_index(1, 1) >= 0)
        )

    def to_image(self, values, fill=np.nan):
        """Scatter a per-pixel vector back onto the H x W image plane."""
        values = np.asarray(values)
        img = np.full(self.mask.shape, fill, dtype=float)
        img[self.mask] = values
        return img

    def from_image(self, image):
        """Gather the object pixels of an H x W image into a p-vector."""
        image = np.asarray(image)
        if image.shape != self.mask.shape:
            raise ValueError("image shape does not match grid")
        return image[self.mask]

    def __repr__(self):
        return (f"PixelGrid({self.height}x{self.width}, "
                f"p={self.n_pixels})")


@dataclass(frozen=True)
class DerivativeOperators:
    """Sparse first-difference operators on the object pixels (units 1/pixel).

    Rows use the forward difference z(.+1) - z(.) where the + neighbor is
    inside the mask, fall back to the backward difference otherwise, and are
    all-zero when the pixel has no neighbor in that direction.
    """

    dx: sparse.csr_matrix
    dy: sparse.csr_matrix


@dataclass
class DepthMap:
    """Per-pixel depth values tied to a grid (arbitrary depth units)."""

    z: np.ndarray
    grid: PixelGrid
    n_components: int = 1

    def to_image(self, fill=np.nan):
        return self.grid.to_image(self.z, fill)

    def demeaned(self):
        return DepthMap(self.z - self.z.mean(), self.grid, self.n_components)


def _difference_rows(grid, fwd_neighbor, bwd_neighbor):
    """COO triplets for one direction: forward where possible, else backward."""
    p = grid.n_pixels
    idx = np.arange(p)
    rows, cols, vals = [], [], []

    fwd = fwd_neighbor >= 0
    rows.append(np.repeat(idx[fwd], 2))
    cols.append(np.stack([fwd_neighbor[fwd], idx[fwd]], axis=1).ravel())
    vals.append(np.tile([1.0, -1.0], fwd.sum()))

    bwd = ~fwd & (bwd_neighbor >= 0)
    rows.append(np.repeat(idx[bwd], 2))
    cols.append(np.stack([idx[bwd], bwd_neighbor[bwd]], axis=1).ravel())
    vals.append(np.tile([1.0, -1.0], bwd.sum()))

    data = np.concatenate(vals)
    mat = sparse.coo_matrix(
        (data, (np.concatenate(rows), np.concatenate(cols))), shape=(p, p)
    )
    return mat.tocsr()


def build_derivative_operators(grid):
    """First-order x/y difference operators for a masked grid.

    Constants are annihilated exactly by every row (forward, backward, or
    empty), so Dx @ 1 == Dy @ 1 == 0.
    """
    dx = _difference_rows(grid, grid.shifted_index(0, 1), grid.shifted_index(0, -1))
    dy = _difference_rows(grid, grid.shifted_index(1, 0), grid.shifted_index(-1, 0))
    return DerivativeOperators(dx=dx, dy=dy)


def _adjacency(grid):
    """4-neighbor adjacency of the object pixels as a sparse boolean matrix."""
    p = grid.n_pixels
    idx = np.arange(p)
    rows, cols = [], []
    for dy, dx in ((0, 1), (1, 0)):
        nb = grid.shifted_index(dy, dx)
        ok = nb >= 0
        rows.append(idx[ok])
        cols.append(nb[ok])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return sparse.coo_matrix((np.ones(r.size), (r, c)), shape=(p, p)).tocsr()


class GradientIntegrator:
    """Least-squares surface-from-gradients solver with a cached factorization.

    Solves argmin_z ||Dx z - p||^2 + ||Dy z - q||^2 via the normal equations.
    The normal matrix has a constant nullspace per connected region; each
    region is grounded at one pixel for the factorization and the solution is
    shifted to zero mean per region afterwards. Pixels untouched by any
    difference row get depth 0.

    ``pixel_mask`` restricts the data term to a subset of pixels: difference
    rows belonging to excluded pixels are dropped from both operators (the
    excluded pixels remain unknowns).
    """

    def __init__(self, grid, ops, pixel_mask=None):
        self.grid = grid
        p = grid.n_pixels
        if pixel_mask is None:
            dx, dy = ops.dx, ops.dy
        else:
            pixel_mask = np.asarray(pixel_mask, dtype=bool)
            if pixel_mask.shape != (p,):
                raise ValueError("pixel_mask must have one entry per pixel")
            keep = np.flatnonzero(pixel_mask)
            sel = sparse.csr_matrix(
                (np.ones(keep.size), (keep, keep)), shape=(p, p)
            )
            dx, dy = sel @ ops.dx, sel @ ops.dy
        self.dx, self.dy = dx, dy

        A = (dx.T @ dx + dy.T @ dy).tocsr()
        graph = A.copy()
        graph.setdiag(0)
        graph.eliminate_zeros()
        n_comp, labels = csgraph.connected_components(graph, directed=False)
        # pixels with no difference row at all stay at z = 0
        touched = np.asarray(A.diagonal() > 0)
        self.labels = labels
        self.touched = touched
        self.n_components = int(np.unique(labels[touched]).size) if touched.any() else 0

        ground = np.zeros(p, dtype=bool)
        self._members = []
        for comp in np.unique(labels[touched]):
            members = np.flatnonzero((labels == comp) & touched)
            ground[members[0]] = True
            self._members.append(members)
        self.free = np.flatnonzero(touched & ~ground)
        if self.free.size:
            A_red = A[self.free][:, self.free].tocsc()
            self._lu = splu(A_red)
        else:
            self._lu = None
        self._dxT = self.dx.T.tocsr()
        self._dyT = self.dy.T.tocsr()

    def solve(self, p_target, q_target):
        """Depth minimizing the gradient misfit, zero-mean per region."""
        p_target = np.asarray(p_target, dtype=float)
        q_target = np.asarray(q_target, dtype=float)
        b = self._dxT @ p_target + self._dyT @ q_target
        z = np.zeros(self.grid.n_pixels)
        if self._lu is not None:
            z[self.free] = self._lu.solve(b[self.free])
        for members in self._members:
            z[members] -= z[members].mean()
        return z


def integrate_gradients(grid, ops, p_target, q_target, pixel_mask=None):
    """One-shot least-squares integration of a target gradient field.

    Returns the DepthMap minimizing ||Dx z - p_target||^2 + ||Dy z - q_target||^2,
    gauge-fixed to zero mean (per connected region when the mask is
    disconnected; the region count is reported on the result and the labels
    are available as grid.component_labels).
    """
    p = grid.n_pixels
    p_target = np.asarray(p_target, dtype=float)
    q_target = np.asarray(q_target, dtype=float)
    if p_target.shape != (p,) or q_target.shape != (p,):
        raise ValueError("gradient targets must have one entry per pixel")
    integ = GradientIntegrator(grid, ops, pixel_mask=pixel_mask)
    z = integ.solve(p_target, q_target)
    return DepthMap(z=z, grid=grid, n_components=max(integ.n_components, 1))
