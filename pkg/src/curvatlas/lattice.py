"""Percolation fields on the square lattice delta*Z^2 and the events read off them.

Sites are indexed [ix, iy] with coordinates (ix*delta, iy*delta), delta = 1/n.
Bond arrays: ``horizontal[ix, iy]`` joins (ix, iy)-(ix+1, iy), ``vertical[ix, iy]``
joins (ix, iy)-(ix, iy+1). In the site model a bond is open when both ends are.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, maximum_flow

from curvatlas.curves import PolyCurve

if TYPE_CHECKING:
    from curvatlas.crossings import Cylinder, Shell

logger = logging.getLogger("curvatlas")

FIELD_HEADER = "field v1"
MODELS = ("bond", "site")

# Headings in counterclockwise order: E, N, W, S
_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True, eq=False)
class LatticeField:
    """An occupation field on an nx x ny block of sites at spacing 1/n."""

    n: int
    p: float
    seed: int
    model: str
    shape: tuple[int, int]
    horizontal: np.ndarray | None = None
    vertical: np.ndarray | None = None
    sites: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        nx, ny = self.shape
        if nx < 2 or ny < 2:
            raise ValueError(f"field needs at least 2 x 2 sites, got {self.shape}")
        if self.model == "bond":
            if self.horizontal is None or self.horizontal.shape != (nx - 1, ny):
                raise ValueError(f"horizontal bonds must have shape {(nx - 1, ny)}")
            if self.vertical is None or self.vertical.shape != (nx, ny - 1):
                raise ValueError(f"vertical bonds must have shape {(nx, ny - 1)}")
        elif self.sites is None or self.sites.shape != (nx, ny):
            raise ValueError(f"sites must have shape {(nx, ny)}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def n_sites(self) -> int:
        return self.shape[0] * self.shape[1]

    def bonds(self) -> tuple[np.ndarray, np.ndarray]:
        """Open horizontal and vertical bonds under either model."""
        if self.model == "bond":
            return self.horizontal, self.vertical
        s = self.sites
        return s[:-1, :] & s[1:, :], s[:, :-1] & s[:, 1:]

    def occupied_fraction(self) -> float:
        if self.model == "site":
            return float(self.sites.mean())
        h, v = self.bonds()
        return float((h.sum() + v.sum()) / (h.size + v.size))

    def site_coords(self) -> np.ndarray:
        """(nx, ny, 2) array of site positions."""
        nx, ny = self.shape
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return np.stack([ix, iy], axis=-1) * self.spacing

    def transposed(self) -> LatticeField:
        """The same field with the axes swapped."""
        nx, ny = self.shape
        if self.model == "site":
            return LatticeField(self.n, self.p, self.seed, "site", (ny, nx), sites=self.sites.T)
        return LatticeField(
            self.n,
            self.p,
            self.seed,
            "bond",
            (ny, nx),
            horizontal=self.vertical.T.copy(),
            vertical=self.horizontal.T.copy(),
        )


def gen_bond_percolation(
    n: int, p: float, seed: int, shape: tuple[int, int] | None = None
) -> LatticeField:
    """I.i.d. bond occupation with probability p on (n+1) x (n+1) sites spanning [0, 1]^2."""
    from curvatlas.generators import make_rng

    nx, ny = shape if shape is not None else (n + 1, n + 1)
    rng = make_rng(seed)
    horizontal = rng.random((nx - 1, ny)) < p
    vertical = rng.random((nx, ny - 1)) < p
    return LatticeField(n, p, seed, "bond", (nx, ny), horizontal=horizontal, vertical=vertical)


def gen_site_percolation(
    n: int, p: float, seed: int, shape: tuple[int, int] | None = None
) -> LatticeField:
    """I.i.d. site occupation with probability p."""
    from curvatlas.generators import make_rng

    nx, ny = shape if shape is not None else (n + 1, n + 1)
    rng = make_rng(seed)
    return LatticeField(n, p, seed, "site", (nx, ny), sites=rng.random((nx, ny)) < p)


# Graph views


def _site_ids(shape: tuple[int, int]) -> np.ndarray:
    nx, ny = shape
    return np.arange(nx * ny).reshape(nx, ny)


def open_edges(field: LatticeField, mask: np.ndarray | None = None) -> np.ndarray:
    """(m, 2) array of site-id pairs joined by open bonds, optionally restricted to a site mask."""
    ids = _site_ids(field.shape)
    h, v = field.bonds()
    if mask is not None:
        h = h & mask[:-1, :] & mask[1:, :]
        v = v & mask[:, :-1] & mask[:, 1:]
    horiz = np.stack([ids[:-1, :][h], ids[1:, :][h]], axis=1)
    vert = np.stack([ids[:, :-1][v], ids[:, 1:][v]], axis=1)
    return np.vstack([horiz, vert])


def adjacency(field: LatticeField, mask: np.ndarray | None = None) -> sparse.csr_matrix:
    edges = open_edges(field, mask)
    n = field.n_sites
    data = np.ones(len(edges), dtype=np.int8)
    return sparse.coo_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()


def cluster_labels(field: LatticeField, mask: np.ndarray | None = None) -> np.ndarray:
    """(nx, ny) cluster label per site over open bonds."""
    _, labels = connected_components(adjacency(field, mask), directed=False)
    return labels.reshape(field.shape)


def crossing_labels(field: LatticeField) -> np.ndarray:
    """Labels of clusters touching both the left and right columns."""
    labels = cluster_labels(field)
    return np.intersect1d(labels[0, :], labels[-1, :])


def has_crossing(field: LatticeField, direction: str = "lr") -> bool:
    """Whether an open path joins the two opposite sides."""
    if direction == "bt":
        field = field.transposed()
    elif direction != "lr":
        raise ValueError(f"direction must be 'lr' or 'bt', got {direction!r}")
    return crossing_labels(field).size > 0


def extract_crossing_path(field: LatticeField, direction: str = "lr") -> PolyCurve | None:
    """The lowest left-right open crossing, or None when no crossing exists.

    Depth-first exploration from the lowest left-column site of a crossing
    cluster, trying turns in the order right, straight, left, so the walk keeps
    closed dual bonds on its right. ``direction="bt"`` returns the leftmost
    bottom-top crossing.
    """
    if direction == "bt":
        path = extract_crossing_path(field.transposed(), "lr")
        return None if path is None else PolyCurve(path.vertices[:, ::-1].copy(), path.step)
    if direction != "lr":
        raise ValueError(f"direction must be 'lr' or 'bt', got {direction!r}")

    labels = cluster_labels(field)
    crossing = np.intersect1d(labels[0, :], labels[-1, :])
    if crossing.size == 0:
        return None
    nx, ny = field.shape
    h, v = field.bonds()
    y0 = int(np.flatnonzero(np.isin(labels[0, :], crossing))[0])

    def is_open(x: int, y: int, heading: int) -> bool:
        if heading == 0:
            return x + 1 < nx and bool(h[x, y])
        if heading == 1:
            return y + 1 < ny and bool(v[x, y])
        if heading == 2:
            return x > 0 and bool(h[x - 1, y])
        return y > 0 and bool(v[x, y - 1])

    visited = np.zeros((nx, ny), dtype=bool)
    visited[0, y0] = True
    # stack entries: x, y, arrival heading, number of turns tried
    stack = [[0, y0, 0, 0]]
    while stack:
        x, y, heading, tried = stack[-1]
        if x == nx - 1:
            break
        if tried == 3:
            stack.pop()
            continue
        stack[-1][3] += 1
        turn = (heading + (3, 0, 1)[tried]) % 4
        if not is_open(x, y, turn):
            continue
        dx, dy = _STEPS[turn]
        if visited[x + dx, y + dy]:
            continue
        visited[x + dx, y + dy] = True
        stack.append([x + dx, y + dy, turn, 0])
    else:
        raise RuntimeError("exploration ended without reaching the right side")

    sites = np.array([(x, y) for x, y, _, _ in stack], dtype=float)
    return PolyCurve(sites * field.spacing, field.spacing)


# Shell and cylinder events


def kcrossing_count(field: LatticeField, shell: Shell, method: str = "flow") -> int:
    """Number of disjoint inner-to-outer open crossings of the shell.

    ``flow`` counts vertex-disjoint open paths inside the annulus (maximum flow),
    which is the number of disjoint traversals available to self-avoiding open
    paths. ``clusters`` counts distinct annulus-restricted clusters touching both
    boundaries, a lower bound.
    """
    delta = field.spacing
    rho = np.linalg.norm(field.site_coords() - np.asarray(shell.center, dtype=float), axis=-1)
    in_shell = (rho >= shell.inner) & (rho <= shell.outer)
    if field.model == "site":
        in_shell &= field.sites
    inner = in_shell & (rho < shell.inner + delta)
    outer = in_shell & (rho > shell.outer - delta)
    if not inner.any() or not outer.any():
        return 0

    if method == "clusters":
        labels = cluster_labels(field, in_shell)
        return int(np.intersect1d(labels[inner], labels[outer]).size)
    if method != "flow":
        raise ValueError(f"method must be 'flow' or 'clusters', got {method!r}")

    # vertex splitting: site i -> nodes 2i (in) and 2i+1 (out); source and sink last
    edges = open_edges(field, in_shell)
    n = field.n_sites
    source, sink = 2 * n, 2 * n + 1
    members = np.flatnonzero(in_shell.ravel())
    rows = np.concatenate(
        [
            2 * members,
            2 * edges[:, 0] + 1,
            2 * edges[:, 1] + 1,
            np.full(int(inner.sum()), source),
            2 * np.flatnonzero(outer.ravel()) + 1,
        ]
    )
    cols = np.concatenate(
        [
            2 * members + 1,
            2 * edges[:, 1],
            2 * edges[:, 0],
            2 * np.flatnonzero(inner.ravel()),
            np.full(int(outer.sum()), sink),
        ]
    )
    caps = np.ones(rows.size, dtype=np.int32)
    graph = sparse.csr_matrix((caps, (rows, cols)), shape=(2 * n + 2, 2 * n + 2))
    graph.sum_duplicates()
    return int(maximum_flow(graph, source, sink).flow_value)


def cluster_kcrossing_event(
    field: LatticeField, shell: Shell, k: int, method: str = "flow"
) -> bool:
    """Whether the shell is crossed by >= k disjoint open paths."""
    if k < 1:
        return True
    return kcrossing_count(field, shell, method) >= k


def cylinder_crossing_event(field: LatticeField, cylinder: Cylinder) -> bool:
    """Whether an open path inside the cylinder joins its two faces (within one spacing)."""
    delta = field.spacing
    rel = field.site_coords() - cylinder.a
    u = rel @ cylinder.axis
    radial = np.linalg.norm(rel - u[..., None] * cylinder.axis, axis=-1)
    inside = (u >= 0) & (u <= cylinder.length) & (radial <= cylinder.radius)
    if field.model == "site":
        inside &= field.sites
    face_a = inside & (u <= delta)
    face_b = inside & (u >= cylinder.length - delta)
    if not face_a.any() or not face_b.any():
        return False
    labels = cluster_labels(field, inside)
    return bool(np.intersect1d(labels[face_a], labels[face_b]).size)


# Run-length encoded serialization


def _rle(bits: np.ndarray) -> list[int]:
    """Alternating run lengths of a flat bit array, starting with a (possibly empty) run of 0s."""
    flat = bits.ravel().astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0, *runs]
    return runs


def _unrle(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    values = np.arange(len(runs)) % 2
    flat = np.repeat(values, runs).astype(bool)
    if flat.size != math.prod(shape):
        raise ValueError(f"run lengths cover {flat.size} bits, expected {math.prod(shape)}")
    return flat.reshape(shape)


def dump_field(field: LatticeField) -> str:
    nx, ny = field.shape
    lines = [
        f"{FIELD_HEADER} n={field.n} p={field.p:.17g} seed={field.seed} "
        f"model={field.model} nx={nx} ny={ny}"
    ]
    if field.model == "bond":
        lines.append("h " + " ".join(map(str, _rle(field.horizontal))))
        lines.append("v " + " ".join(map(str, _rle(field.vertical))))
    else:
        lines.append("s " + " ".join(map(str, _rle(field.sites))))
    return "\n".join(lines) + "\n"


def parse_field(text: str) -> LatticeField:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(FIELD_HEADER):
        raise ValueError("missing field header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    n = int(fields["n"])
    nx, ny = int(fields.get("nx", n + 1)), int(fields.get("ny", n + 1))
    model = fields.get("model", "bond")
    arrays = {}
    for line in lines[1:]:
        tag, *runs = line.split()
        arrays[tag] = [int(r) for r in runs]
    common = dict(n=n, p=float(fields["p"]), seed=int(fields["seed"]), model=model, shape=(nx, ny))
    if model == "site":
        return LatticeField(**common, sites=_unrle(arrays["s"], (nx, ny)))
    return LatticeField(
        **common,
        horizontal=_unrle(arrays["h"], (nx - 1, ny)),
        vertical=_unrle(arrays["v"], (nx, ny - 1)),
    )
