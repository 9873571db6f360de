"""Feed-forward ReLU networks with exact rational weight bookkeeping.

A network is a list of affine layers ``W_i(x) = A_i x + b_i``; the ReLU is
applied between consecutive layers but not after the last one.  Layers may
carry an exact rational copy of their weights (stored sparsely as nonzero
entries) next to the float64 arrays used for evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral, Rational
from typing import Iterable, Sequence

import numpy as np

FORMAT_TAG = "rectiflow-net-v1"


class DimensionError(ValueError):
    """Input or layer shapes do not chain."""


class NetworkFormatError(ValueError):
    """Serialized network could not be parsed.

    ``offset`` is the character position of the problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


def as_fraction(value) -> Fraction | None:
    """Exact rational for ints, Fractions and 'p/q' strings; None for floats."""
    if isinstance(value, bool):
        return None
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (Integral, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        return Fraction(value)
    return None


@dataclass(frozen=True, eq=False)
class AffineLayer:
    """x -> matrix @ x + offset.

    ``exact`` holds ``(entries, offsets)``: dicts of the nonzero rational
    weights keyed by ``(row, col)`` and ``row``.  It is None for float layers.
    """

    matrix: np.ndarray
    offset: np.ndarray
    exact: tuple[dict, dict] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        if m.ndim != 2:
            raise DimensionError(f"layer matrix must be 2-D, got shape {m.shape}")
        if m.shape[0] != b.shape[0]:
            raise DimensionError(
                f"matrix has {m.shape[0]} rows but offset has {b.shape[0]} entries"
            )
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", b)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    @classmethod
    def from_sparse(cls, rows: int, cols: int, entries: dict, offsets: dict | None = None):
        """Exact layer from nonzero rational entries."""
        offsets = offsets or {}
        ent = {}
        for (i, j), v in entries.items():
            f = as_fraction(v)
            if f is None:
                raise TypeError(f"exact layer entry {(i, j)} is not rational: {v!r}")
            if not (0 <= i < rows and 0 <= j < cols):
                raise DimensionError(f"entry {(i, j)} outside a {rows}x{cols} matrix")
            if f != 0:
                ent[(i, j)] = f
        off = {}
        for i, v in offsets.items():
            f = as_fraction(v)
            if f is None:
                raise TypeError(f"exact offset entry {i} is not rational: {v!r}")
            if not 0 <= i < rows:
                raise DimensionError(f"offset index {i} outside {rows} rows")
            if f != 0:
                off[i] = f
        m = np.zeros((rows, cols))
        for (i, j), f in ent.items():
            m[i, j] = float(f)
        b = np.zeros(rows)
        for i, f in off.items():
            b[i] = float(f)
        return cls(m, b, (ent, off))

    @classmethod
    def from_dense(cls, matrix, offset):
        """Layer from nested sequences; exact when every entry is rational."""
        rows = [list(r) for r in matrix]
        off = list(offset)
        flat = [v for r in rows for v in r] + off
        exacts = [as_fraction(v) for v in flat]
        if flat and all(f is not None for f in exacts) or (not flat):
            ncols = len(rows[0]) if rows else 0
            ent = {
                (i, j): as_fraction(v)
                for i, r in enumerate(rows)
                for j, v in enumerate(r)
            }
            return cls.from_sparse(len(rows), ncols, ent, {i: as_fraction(v) for i, v in enumerate(off)})
        return cls(np.array(rows, dtype=np.float64), np.array(off, dtype=np.float64))

    def exact_dense(self) -> tuple[list[list[Fraction]], list[Fraction]]:
        if self.exact is None:
            raise ValueError("layer has no exact representation")
        ent, off = self.exact
        m = [[Fraction(0)] * self.in_dim for _ in range(self.out_dim)]
        for (i, j), f in ent.items():
            m[i][j] = f
        b = [off.get(i, Fraction(0)) for i in range(self.out_dim)]
        return m, b

    def __eq__(self, other):
        if not isinstance(other, AffineLayer):
            return NotImplemented
        if self.matrix.shape != other.matrix.shape:
            return False
        if (self.exact is None) != (other.exact is None):
            return False
        if self.exact is not None:
            return self.exact == other.exact
        return bool(
            np.array_equal(self.matrix, other.matrix) and np.array_equal(self.offset, other.offset)
        )


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Phi = W_L o rho o W_{L-1} o ... o rho o W_1."""

    layers: tuple[AffineLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise DimensionError(
                    f"layer {k} expects {layers[k].in_dim} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].out_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [l.out_dim for l in self.layers]

    @property
    def is_exact(self) -> bool:
        return all(l.is_exact for l in self.layers)

    def __call__(self, x):
        return evaluate(self, x)

    def __eq__(self, other):
        if not isinstance(other, ReluNetwork):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a == b for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class NetworkMetrics:
    depth: int
    connectivity: int
    width: int
    weight_set: frozenset
    magnitude: Fraction | float


def evaluate(net: ReluNetwork, x) -> np.ndarray:
    """Evaluate on one point (shape (m,)) or a batch (shape (k, m))."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise DimensionError(
            f"network expects input dimension {net.input_dim}, got array of shape {x.shape}"
        )
    for layer in net.layers[:-1]:
        h = np.maximum(h @ layer.matrix.T + layer.offset, 0.0)
    last = net.layers[-1]
    h = h @ last.matrix.T + last.offset
    return h[0] if single else h


def evaluate_exact(net: ReluNetwork, x: Sequence) -> list[Fraction]:
    """Evaluate with rational arithmetic at a single rational point."""
    if not net.is_exact:
        raise ValueError("exact evaluation needs every layer to be exact")
    h = [as_fraction(v) if as_fraction(v) is not None else Fraction(v) for v in x]
    if len(h) != net.input_dim:
        raise DimensionError(f"network expects input dimension {net.input_dim}, got {len(h)}")
    for k, layer in enumerate(net.layers):
        ent, off = layer.exact
        out = [off.get(i, Fraction(0)) for i in range(layer.out_dim)]
        for (i, j), w in ent.items():
            if h[j]:
                out[i] += w * h[j]
        if k < net.depth - 1:
            out = [v if v > 0 else Fraction(0) for v in out]
        h = out
    return h


def metrics(net: ReluNetwork) -> NetworkMetrics:
    """Depth, connectivity (nonzero weights), width, weight set and magnitude.

    The weight set contains every entry of every A_i and b_i, zeros included.
    It is rational when all layers are exact and float otherwise.
    """
    conn = 0
    exact = net.is_exact
    weights: set = set()
    for layer in net.layers:
        size = layer.out_dim * (layer.in_dim + 1)
        if exact:
            ent, off = layer.exact
            nnz = len(ent) + len(off)
            weights.update(ent.values())
            weights.update(off.values())
            if nnz < size:
                weights.add(Fraction(0))
        else:
            vals = np.concatenate([layer.matrix.ravel(), layer.offset])
            nnz = int(np.count_nonzero(vals))
            weights.update(float(v) for v in np.unique(vals))
        conn += nnz
    if exact:
        mag = max((abs(w) for w in weights), default=Fraction(0))
    else:
        mag = max((abs(w) for w in weights), default=0.0)
    return NetworkMetrics(
        depth=net.depth,
        connectivity=conn,
        width=max(net.widths),
        weight_set=frozenset(weights),
        magnitude=mag,
    )


def affine_network(matrix, offset=None) -> ReluNetwork:
    """Depth-one network from dense (possibly rational) entries."""
    matrix = [list(r) for r in matrix]
    if offset is None:
        offset = [0] * len(matrix)
    return ReluNetwork((AffineLayer.from_dense(matrix, offset),))


def identity_net(m: int) -> ReluNetwork:
    """Depth-two network with i_m(x) = rho(x) - rho(-x) = x."""
    if m < 1:
        raise ValueError("dimension must be positive")
    w1 = {(i, i): 1 for i in range(m)} | {(m + i, i): -1 for i in range(m)}
    w2 = {(i, i): 1 for i in range(m)} | {(i, m + i): -1 for i in range(m)}
    return ReluNetwork(
        (AffineLayer.from_sparse(2 * m, m, w1), AffineLayer.from_sparse(m, 2 * m, w2))
    )


def _stack_layers(layers: Sequence[AffineLayer], shared_input: bool) -> AffineLayer:
    rows = sum(l.out_dim for l in layers)
    cols = layers[0].in_dim if shared_input else sum(l.in_dim for l in layers)
    exact = all(l.is_exact for l in layers)
    m = np.zeros((rows, cols))
    r0 = c0 = 0
    ent: dict = {}
    off: dict = {}
    for l in layers:
        m[r0 : r0 + l.out_dim, c0 : c0 + l.in_dim] = l.matrix
        if exact:
            e, o = l.exact
            ent.update({(i + r0, j + c0): v for (i, j), v in e.items()})
            off.update({i + r0: v for i, v in o.items()})
        r0 += l.out_dim
        if not shared_input:
            c0 += l.in_dim
    b = np.concatenate([l.offset for l in layers])
    return AffineLayer(m, b, (ent, off) if exact else None)


def parallelize(nets: Sequence[ReluNetwork], shared_input: bool = False) -> ReluNetwork:
    """Block-diagonal combination of equal-depth networks.

    With ``shared_input`` every block reads the same input vector; the first
    layers are stacked vertically instead of block-diagonally, which leaves
    connectivity unchanged.
    """
    nets = list(nets)
    if not nets:
        raise ValueError("nothing to parallelize")
    depths = {n.depth for n in nets}
    if len(depths) != 1:
        raise ValueError(f"parallelize needs equal depths, got {sorted(depths)}")
    if shared_input and len({n.input_dim for n in nets}) != 1:
        raise DimensionError("shared input requires equal input dimensions")
    if len(nets) == 1:
        return nets[0]
    layers = []
    for k in range(nets[0].depth):
        layers.append(_stack_layers([n.layers[k] for n in nets], shared_input and k == 0))
    return ReluNetwork(tuple(layers))


def compose_with_relu(outer: ReluNetwork, inner: ReluNetwork) -> ReluNetwork:
    """outer o rho o inner, realized by concatenating the layer lists."""
    if inner.output_dim != outer.input_dim:
        raise DimensionError(
            f"inner output dimension {inner.output_dim} does not match outer input "
            f"dimension {outer.input_dim}"
        )
    return ReluNetwork(inner.layers + outer.layers)


def _eye_layer(n: int) -> AffineLayer:
    return AffineLayer.from_sparse(n, n, {(i, i): 1 for i in range(n)})


def _negate_stack(layer: AffineLayer) -> AffineLayer:
    """Layer producing (y, -y) where y is the original output."""
    n = layer.out_dim
    m = np.vstack([layer.matrix, -layer.matrix])
    b = np.concatenate([layer.offset, -layer.offset])
    if not layer.is_exact:
        return AffineLayer(m, b)
    e, o = layer.exact
    ent = dict(e) | {(i + n, j): -v for (i, j), v in e.items()}
    off = dict(o) | {i + n: -v for i, v in o.items()}
    return AffineLayer(m, b, (ent, off))


def pad_depth(net: ReluNetwork, target_depth: int, nonnegative: bool = False) -> ReluNetwork:
    """Extend to ``target_depth`` without changing the realized function.

    With ``nonnegative`` the output is known to be >= 0 and identity layers
    are appended (rho is the identity there).  Otherwise the last layer is
    doubled to (y, -y), passed through identity layers and recombined, using
    y = rho(y) - rho(-y).
    """
    extra = target_depth - net.depth
    if extra < 0:
        raise ValueError(f"cannot pad depth {net.depth} down to {target_depth}")
    if extra == 0:
        return net
    n = net.output_dim
    if nonnegative:
        return ReluNetwork(net.layers + tuple(_eye_layer(n) for _ in range(extra)))
    layers = list(net.layers[:-1]) + [_negate_stack(net.layers[-1])]
    layers += [_eye_layer(2 * n) for _ in range(extra - 1)]
    recombine = {(i, i): 1 for i in range(n)} | {(i, n + i): -1 for i in range(n)}
    layers.append(AffineLayer.from_sparse(n, 2 * n, recombine))
    return ReluNetwork(tuple(layers))


def sum_outputs(net: ReluNetwork, groups: Sequence[Iterable[int]] | None = None) -> ReluNetwork:
    """Append rho then an all-ones layer summing the given output groups.

    Only use on networks whose outputs are nonnegative or when the extra rho
    is intended.
    """
    if groups is None:
        groups = [range(net.output_dim)]
    ent = {(g, i): 1 for g, idx in enumerate(groups) for i in idx}
    return ReluNetwork(net.layers + (AffineLayer.from_sparse(len(groups), net.output_dim, ent),))


# ---------------------------------------------------------------- 1-D analysis


def pieces_1d(net: ReluNetwork, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints of a scalar-input network on [lo, hi] and outputs there.

    The network is affine between consecutive returned points.  Breakpoints
    are located layer by layer as the zero crossings of each pre-activation,
    which is affine between the points found so far.
    """
    if net.input_dim != 1:
        raise DimensionError("pieces_1d needs a network with scalar input")
    if not hi > lo:
        raise ValueError("empty interval")
    t = np.array([lo, hi], dtype=np.float64)
    for k in range(net.depth - 1):
        h = t[:, None]
        for layer in net.layers[:k]:
            h = np.maximum(h @ layer.matrix.T + layer.offset, 0.0)
        z = h @ net.layers[k].matrix.T + net.layers[k].offset
        zl, zr = z[:-1], z[1:]
        cross = (zl * zr) < 0
        if not cross.any():
            continue
        ii, jj = np.nonzero(cross)
        frac = zl[ii, jj] / (zl[ii, jj] - zr[ii, jj])
        new = t[ii] + (t[ii + 1] - t[ii]) * frac
        t = np.unique(np.concatenate([t, new]))
    return t, evaluate(net, t[:, None])


def _serialize_number(v, exact: bool):
    if exact:
        if v.denominator == 1:
            return int(v.numerator)
        return f"{v.numerator}/{v.denominator}"
    return float(v)


def to_json(net: ReluNetwork) -> str:
    """Deterministic JSON text; exact layers keep their rationals."""
    layers = []
    for layer in net.layers:
        if layer.is_exact:
            m, b = layer.exact_dense()
            layers.append(
                {
                    "matrix": [[_serialize_number(v, True) for v in r] for r in m],
                    "offset": [_serialize_number(v, True) for v in b],
                }
            )
        else:
            layers.append(
                {
                    "matrix": [[float(v) for v in r] for r in layer.matrix],
                    "offset": [float(v) for v in layer.offset],
                }
            )
    doc = {"format": FORMAT_TAG, "input_dim": net.input_dim, "layers": layers}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _parse_entry(v, where: str):
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise NetworkFormatError(f"{where}: expected a number or 'p/q' string, got {v!r}")
    if isinstance(v, str):
        try:
            return Fraction(v)
        except (ValueError, ZeroDivisionError):
            raise NetworkFormatError(f"{where}: bad rational literal {v!r}") from None
    return v


def from_json(text: str) -> ReluNetwork:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"malformed JSON: {e.msg}", e.pos) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise NetworkFormatError(f"missing or wrong format tag, expected {FORMAT_TAG!r}", 0)
    input_dim = doc.get("input_dim")
    raw_layers = doc.get("layers")
    if not isinstance(input_dim, int) or isinstance(input_dim, bool) or input_dim < 1:
        raise NetworkFormatError("input_dim must be a positive integer")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise NetworkFormatError("layers must be a nonempty list")
    layers = []
    for k, raw in enumerate(raw_layers):
        if not isinstance(raw, dict) or "matrix" not in raw or "offset" not in raw:
            raise NetworkFormatError(f"layers[{k}] needs 'matrix' and 'offset'")
        mat, off = raw["matrix"], raw["offset"]
        if not isinstance(mat, list) or not all(isinstance(r, list) for r in mat):
            raise NetworkFormatError(f"layers[{k}].matrix must be a list of rows")
        if not isinstance(off, list) or len(off) != len(mat):
            raise NetworkFormatError(f"layers[{k}].offset length must equal the row count")
        if len({len(r) for r in mat}) > 1:
            raise NetworkFormatError(f"layers[{k}].matrix rows have unequal lengths")
        mat = [[_parse_entry(v, f"layers[{k}].matrix") for v in r] for r in mat]
        off = [_parse_entry(v, f"layers[{k}].offset") for v in off]
        flat = [v for r in mat for v in r] + off
        if all(isinstance(v, (int, Fraction)) for v in flat):
            ncols = len(mat[0]) if mat else 0
            ent = {(i, j): v for i, r in enumerate(mat) for j, v in enumerate(r)}
            layers.append(AffineLayer.from_sparse(len(mat), ncols, ent, dict(enumerate(off))))
        else:
            layers.append(
                AffineLayer(np.array(mat, dtype=np.float64).reshape(len(mat), -1),
                            np.array([float(v) for v in off]))
            )
    try:
        net = ReluNetwork(tuple(layers))
    except DimensionError as e:
        raise NetworkFormatError(str(e)) from None
    if net.input_dim != input_dim:
        raise NetworkFormatError(f"input_dim {input_dim} does not match first layer ({net.input_dim})")
    return net


def save_network(net: ReluNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(net))


def load_network(path) -> ReluNetwork:
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())
