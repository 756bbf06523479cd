"""Matrix-free spatial operator, batched directional solver, grid states.

The semi-discrete system keeps every grid node in one flat vector.  Nodes
with any zero component ("outer": the lower Dirichlet faces) are frozen
at their payoff values and have identically zero rows; all other nodes
("inner") carry second-order central differences with two modifications
on the upper faces j_i = M_i, where the homogeneous Neumann condition is
imposed: the second difference mirrors the lower neighbour,

    (2 Y[J-E_i] - 2 Y[J]) / h_i^2,

while first differences and cross differences are dropped there.

Implementation notes: the flat vector of a shape reshapes (C order) to an
ndarray whose *last* axis is direction 1, so all stencils are evaluated
with numpy slice arithmetic, and every PDE coefficient is a product of
one-axis factors that broadcast across the grid without materialising
full-size coefficient arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .indexing import GridShape
from .market import MarketData, PdeModel, ProductSpec, payoff


@dataclass
class StateVector:
    """Flat solution values over every node of one grid, outer faces included."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != (self.shape.total_points,):
            raise ValueError(
                f"state length {self.values.size} does not match grid "
                f"({self.shape.total_points} nodes)"
            )

    def view(self) -> np.ndarray:
        """ndarray view with direction 1 on the last axis."""
        return self.values.reshape(self.shape.reversed_points)

    def copy(self) -> "StateVector":
        return StateVector(self.shape, self.values.copy())


class _DirectionalFactor:
    """Frozen elimination data of one (I - w*A_i): either per-row sweep
    coefficients broadcast over the line batch, or LAPACK factorisations
    grouped by V slice."""

    def __init__(self, sweep=None, groups=None):
        self.sweep = sweep
        self.groups = groups

    def solve_inplace(self, rhs: np.ndarray) -> None:
        m = rhs.shape[0]
        if self.sweep is not None:
            low, cp, inv_den = self.sweep
            rhs[0] *= inv_den[0]
            for k in range(1, m):
                rhs[k] -= low[k] * rhs[k - 1]
                rhs[k] *= inv_den[k]
            for k in range(m - 2, -1, -1):
                rhs[k] -= cp[k] * rhs[k + 1]
            return
        if len(self.groups) == 1:
            flat = rhs.reshape(m, -1)
            x, info = lapack.dgttrs(*self.groups[0], flat)
            if info != 0:
                raise FloatingPointError(f"tridiagonal solve failed (info={info})")
            flat[:] = x
            return
        grouped = rhs.reshape(m, len(self.groups), -1)
        for col, factor in enumerate(self.groups):
            x, info = lapack.dgttrs(*factor, grouped[:, col, :])
            if info != 0:
                raise FloatingPointError(f"tridiagonal solve failed (info={info})")
            grouped[:, col, :] = x


class GridOperator:
    """Semi-discrete right-hand side F(Y) and its directional resolvents.

    ``apply`` evaluates the full operator, ``apply_diffusion(i, .)`` the
    direction-i second-difference part, and ``apply_coupling`` the rest
    (cross differences plus drift).  ``solve_directional(i, w, g)``
    returns K with (I - w*A_i) K = g by eliminating the tridiagonal lines
    of direction i; it requires the frozen rows of g to vanish, which
    holds for every stage right-hand side and is asserted when
    ``check_rhs`` is set.
    """

    def __init__(
        self,
        market: MarketData,
        product: ProductSpec,
        shape: GridShape,
        *,
        check_rhs: bool = False,
    ):
        if shape.ndim != product.dimension:
            raise ValueError(
                f"grid has {shape.ndim} directions, product needs {product.dimension}"
            )
        self.model = PdeModel(market, product)
        self.shape = shape
        self.n_directions = shape.ndim
        self.check_rhs = check_rhs
        self._rev = shape.reversed_points
        self._coords = [shape.axis_coordinates(i) for i in range(1, shape.ndim + 1)]
        self._outer_mask: np.ndarray | None = None
        self._factors: dict[tuple[int, float], _DirectionalFactor] = {}
        self._scratch: np.ndarray | None = None

    def _buffers(self, shape: tuple[int, ...], count: int) -> list[np.ndarray]:
        """Reusable stencil work arrays; spares the allocator on big grids.

        One operator instance must therefore not be shared by concurrent
        ``apply`` calls; component-grid solves each build their own.
        """
        need = math.prod(shape)
        if self._scratch is None or self._scratch.shape[1] < need:
            self._scratch = np.empty((2, self.shape.total_points))
        return [self._scratch[k, :need].reshape(shape) for k in range(count)]

    # -- full operator -------------------------------------------------

    def apply(self, y: np.ndarray) -> np.ndarray:
        n = self.n_directions
        v = self._as_view(y)
        out = np.zeros(self.shape.total_points)
        ov = out.reshape(self._rev)
        for i in range(1, n + 1):
            self._add_diffusion(i, v, ov)
        for i in range(1, n):
            for k in range(i + 1, n + 1):
                self._add_mixed(i, k, v, ov)
        for i in range(2, n):
            self._add_advection(i, v, ov)
        return out

    def apply_diffusion(self, i: int, y: np.ndarray) -> np.ndarray:
        """Only the direction-i diffusion block A_i applied to y."""
        v = self._as_view(y)
        out = np.zeros(self.shape.total_points)
        self._add_diffusion(i, v, out.reshape(self._rev))
        return out

    def apply_coupling(self, y: np.ndarray) -> np.ndarray:
        """Cross-derivative and drift terms: apply(y) minus every diffusion block."""
        n = self.n_directions
        v = self._as_view(y)
        out = np.zeros(self.shape.total_points)
        ov = out.reshape(self._rev)
        for i in range(1, n):
            for k in range(i + 1, n + 1):
                self._add_mixed(i, k, v, ov)
        for i in range(2, n):
            self._add_advection(i, v, ov)
        return out

    # -- directional resolvent -----------------------------------------

    def solve_directional(self, i: int, w: float, g: np.ndarray) -> np.ndarray:
        """Solve (I - w*A_i) K = g, one tridiagonal system per line.

        Frozen rows are identities, so K = g there.  Every line system is
        strictly diagonally dominant for w >= 0 (dominance margin exactly
        1), hence elimination without pivoting is safe.  The elimination
        coefficients depend only on (i, w) and are cached across calls;
        grids with few long lines go through LAPACK's tridiagonal solver
        instead of the batched sweep, whose per-row cost would dominate.
        """
        ax = self.shape.axis_of(i)
        if w < 0.0:
            raise ValueError("directional solve needs a nonnegative shift")
        if self.check_rhs:
            self._assert_frozen_rows_zero(g)
        out = np.asarray(g, dtype=float).copy()
        if w == 0.0 or not self._diffusion_active(i):
            return out
        sub = out.reshape(self._rev)[self._box()]
        work = np.moveaxis(sub, ax, 0)
        rhs = np.ascontiguousarray(work)
        factor = self._factors.get((i, w))
        if factor is None:
            factor = self._build_factor(i, w)
            self._factors[(i, w)] = factor
        factor.solve_inplace(rhs)
        work[:] = rhs
        return out

    def lines_in_direction(self, i: int) -> int:
        return self.shape.line_count(i)

    def _line_deltas(self, i: int) -> np.ndarray:
        """d_i/h_i^2 along a line: rows vary with j_i, columns with the V index.

        Shape (M_i, M_N) for forward directions; (M_i, 1) for the V
        direction, whose coefficient varies along the line itself.
        """
        n = self.n_directions
        h2 = self.shape.spacings[i - 1] ** 2
        if i == n:
            vals = self.model.diffusion(n, None, self._coords[n - 1][1:]) / h2
            return np.asarray(vals).reshape(-1, 1)
        dvals = self.model.diffusion(i, self._coords[i - 1][1:], 1.0) / h2
        v2 = self._coords[n - 1][1:] ** 2
        return np.outer(dvals, v2)

    def _build_factor(self, i: int, w: float) -> "_DirectionalFactor":
        n = self.n_directions
        m = self.shape.interior_counts[i - 1]
        wd = w * self._line_deltas(i)
        # wide line batches amortise a python-level sweep; otherwise the
        # sequential row loop dominates and LAPACK takes over, one
        # factorisation per V slice (the matrix is constant within one)
        use_sweep = m == 1 or self.shape.line_count(i) >= m
        if i == n:
            bshape = (m,) + (1,) * (n - 1)
        else:
            bshape = (m, wd.shape[1]) + (1,) * (n - 2)
        if use_sweep:
            low = -wd.copy()
            low[-1] *= 2.0
            diag = 1.0 + 2.0 * wd
            cp = np.empty_like(wd)
            inv_den = np.empty_like(wd)
            inv_den[0] = 1.0 / diag[0]
            cp[0] = -wd[0] * inv_den[0]
            for k in range(1, m):
                den = diag[k] - low[k] * cp[k - 1]
                if not np.all(den > 0.0):
                    raise FloatingPointError("lost diagonal dominance in tridiagonal factor")
                inv_den[k] = 1.0 / den
                cp[k] = -wd[k] * inv_den[k]
            return _DirectionalFactor(
                sweep=(
                    low.reshape(bshape),
                    cp.reshape(bshape),
                    inv_den.reshape(bshape),
                )
            )
        groups = []
        for col in range(wd.shape[1]):
            wcol = wd[:, col]
            d = 1.0 + 2.0 * wcol
            du = -wcol[:-1]
            dl = -wcol[1:].copy()
            dl[-1] *= 2.0
            dl_f, d_f, du_f, du2, ipiv, info = lapack.dgttrf(dl, d, du)
            if info != 0:
                raise FloatingPointError(f"tridiagonal factorisation failed (info={info})")
            groups.append((dl_f, d_f, du_f, du2, ipiv))
        return _DirectionalFactor(groups=groups)

    # -- stencil pieces --------------------------------------------------

    def _add_diffusion(self, i: int, v: np.ndarray, out: np.ndarray) -> None:
        if not self._diffusion_active(i):
            return
        m = self.shape.interior_counts[i - 1]
        h2 = self.shape.spacings[i - 1] ** 2
        if m >= 2:
            c = self._box({i: slice(1, m)})
            up = self._box({i: slice(2, m + 1)})
            dn = self._box({i: slice(0, m - 1)})
            coef = self._diffusion_factor(i, slice(1, m)) / h2
            (buf,) = self._buffers(out[c].shape, 1)
            np.add(v[up], v[dn], out=buf)
            np.subtract(buf, v[c], out=buf)
            np.subtract(buf, v[c], out=buf)
            buf *= coef
            out[c] += buf
        top = self._box({i: slice(m, m + 1)})
        below = self._box({i: slice(m - 1, m)})
        coef = self._diffusion_factor(i, slice(m, m + 1)) * (2.0 / h2)
        out[top] += coef * (v[below] - v[top])

    def _add_mixed(self, i: int, k: int, v: np.ndarray, out: np.ndarray) -> None:
        model = self.model
        n = self.n_directions
        if model.alpha(i) == 0.0:
            return
        if k == n:
            if model.market.sigma == 0.0 or model.phi(i) == 0.0:
                return
        elif model.alpha(k) == 0.0:
            return
        mi = self.shape.interior_counts[i - 1]
        mk = self.shape.interior_counts[k - 1]
        if mi < 2 or mk < 2:
            return
        c = self._box({i: slice(1, mi), k: slice(1, mk)})
        pp = self._box({i: slice(2, mi + 1), k: slice(2, mk + 1)})
        mm = self._box({i: slice(0, mi - 1), k: slice(0, mk - 1)})
        pm = self._box({i: slice(2, mi + 1), k: slice(0, mk - 1)})
        mp = self._box({i: slice(0, mi - 1), k: slice(2, mk + 1)})
        fi = self._axf(i, self._coords[i - 1][1:mi])
        if k == n:
            coef = model.mixed(i, k, fi, None, self._axf(n, self._coords[n - 1][1:mk]))
        else:
            fk = self._axf(k, self._coords[k - 1][1:mk])
            coef = model.mixed(i, k, fi, fk, self._axf(n, self._coords[n - 1][1:]))
        coef = coef / (4.0 * self.shape.spacings[i - 1] * self.shape.spacings[k - 1])
        buf, buf2 = self._buffers(out[c].shape, 2)
        np.add(v[pp], v[mm], out=buf)
        np.add(v[pm], v[mp], out=buf2)
        np.subtract(buf, buf2, out=buf)
        buf *= coef
        out[c] += buf

    def _add_advection(self, i: int, v: np.ndarray, out: np.ndarray) -> None:
        model = self.model
        n = self.n_directions
        if model.alpha(i) == 0.0:
            return
        if all(model.alpha(j) == 0.0 for j in range(2, i + 1)):
            return
        mi = self.shape.interior_counts[i - 1]
        if mi < 2:
            return
        c = self._box({i: slice(1, mi)})
        up = self._box({i: slice(2, mi + 1)})
        dn = self._box({i: slice(0, mi - 1)})
        forwards = []
        for j in range(2, i + 1):
            stop = mi if j == i else self.shape.interior_counts[j - 1] + 1
            forwards.append(self._axf(j, self._coords[j - 1][1:stop]))
        coef = model.advection(i, forwards, self._axf(n, self._coords[n - 1][1:]))
        coef = coef / (2.0 * self.shape.spacings[i - 1])
        (buf,) = self._buffers(out[c].shape, 1)
        np.subtract(v[up], v[dn], out=buf)
        buf *= coef
        out[c] += buf

    # -- plumbing --------------------------------------------------------

    def _as_view(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.shape.total_points,):
            raise ValueError(
                f"vector length {y.size} does not match grid ({self.shape.total_points} nodes)"
            )
        return y.reshape(self._rev)

    def _box(self, overrides: dict[int, slice] | None = None) -> tuple[slice, ...]:
        """Axis slices covering the active nodes, selectively overridden per direction."""
        sl: list[slice] = [slice(None)] * self.n_directions
        for r in range(1, self.n_directions + 1):
            default = slice(1, self.shape.interior_counts[r - 1] + 1)
            sl[self.shape.axis_of(r)] = (overrides or {}).get(r, default)
        return tuple(sl)

    def _axf(self, direction: int, values: np.ndarray) -> np.ndarray:
        """Reshape a per-direction factor so it broadcasts along its own axis."""
        shp = [1] * self.n_directions
        shp[self.shape.axis_of(direction)] = np.size(values)
        return np.asarray(values, dtype=float).reshape(shp)

    def _diffusion_factor(self, i: int, rows: slice) -> np.ndarray:
        n = self.n_directions
        if i == n:
            return self.model.diffusion(n, None, self._axf(n, self._coords[n - 1][rows]))
        xi = self._axf(i, self._coords[i - 1][rows])
        vv = self._axf(n, self._coords[n - 1][1:])
        return self.model.diffusion(i, xi, vv)

    def _diffusion_active(self, i: int) -> bool:
        if i == self.n_directions:
            return self.model.market.sigma != 0.0
        return self.model.alpha(i) != 0.0

    def _assert_frozen_rows_zero(self, g: np.ndarray) -> None:
        if self._outer_mask is None:
            self._outer_mask = ~self.shape.inner_mask()
        bad = np.flatnonzero(np.asarray(g)[self._outer_mask])
        if bad.size:
            raise ValueError("right-hand side must vanish on frozen (outer) rows")


def initial_state(market: MarketData, product: ProductSpec, shape: GridShape) -> StateVector:
    """Payoff values at every node; this is the PDE initial condition.

    The payoff depends on the forward coordinates only, so values are
    constant along the volatility axis, and the zero faces automatically
    hold the payoff as their frozen boundary values.
    """
    if shape.ndim != product.dimension:
        raise ValueError(
            f"grid has {shape.ndim} directions, product needs {product.dimension}"
        )
    n = shape.ndim
    forwards = []
    for loc in range(1, n):
        vals = shape.axis_coordinates(loc)
        shp = [1] * n
        shp[shape.axis_of(loc)] = vals.size
        forwards.append(vals.reshape(shp))
    g = np.asarray(payoff(market, product, forwards), dtype=float)
    full = np.broadcast_to(g, shape.reversed_points)
    return StateVector(shape, np.ascontiguousarray(full).reshape(-1))


def interpolate(state: StateVector, point) -> float:
    """Multilinear interpolation of a grid state at an interior point.

    Exact on grid nodes and on any function that is affine per direction.
    """
    shape = state.shape
    if len(point) != shape.ndim:
        raise ValueError(f"point needs {shape.ndim} coordinates")
    cells: list[int] = []
    weights: list[float] = []
    for r in range(1, shape.ndim + 1):
        x = float(point[r - 1])
        bound = shape.bounds[r - 1]
        if not 0.0 <= x <= bound:
            raise ValueError(f"coordinate {x} outside [0, {bound}]")
        t = x / shape.spacings[r - 1]
        cell = min(int(math.floor(t)), shape.interior_counts[r - 1] - 1)
        cells.append(cell)
        weights.append(t - cell)
    offsets = shape.offsets
    value = 0.0
    for corner in itertools.product((0, 1), repeat=shape.ndim):
        wgt = 1.0
        for bit, w in zip(corner, weights):
            wgt *= w if bit else 1.0 - w
        if wgt == 0.0:
            continue
        flat = sum((c + bit) * e for c, bit, e in zip(cells, corner, offsets))
        value += wgt * float(state.values[flat])
    return value


def dump_state(state: StateVector, path) -> None:
    """Write a state as CSV lines ``index,x_1,...,x_N,value`` for inspection."""
    shape = state.shape
    header = "index," + ",".join(f"x_{r}" for r in range(1, shape.ndim + 1)) + ",value"
    node_map = shape.node_map
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for flat in range(shape.total_points):
            coords = shape.coordinate(node_map.decode(flat))
            coord_txt = ",".join(f"{c:.17g}" for c in coords)
            fh.write(f"{flat},{coord_txt},{state.values[flat]:.17g}\n")
