"""Rooted phylogenetic trees as weighted sets of clades.

A tree on ``n`` labelled leaves plus a distinguished root is stored as the set
of its internal edges.  Each internal edge is named by the clade it cuts off
(the side of the split that does not contain the root), and carries a positive
length.  The intrinsic dimension of the space of such trees is ``m = n - 2``.

Internally clades are bitmasks over the sorted leaf labels; the public surface
speaks in :class:`Split` objects.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "LeafSet",
    "Split",
    "Tree",
    "CanonicalOrder",
    "TreeError",
    "LeafSetMismatch",
    "NewickError",
    "StratumError",
    "are_compatible",
    "count_edge_types",
    "double_factorial",
    "enumerate_binary_topologies",
    "binary_resolutions",
    "random_topology",
    "random_tree",
    "parse_newick",
    "parse_newick_many",
    "to_newick",
    "read_csv",
    "write_csv",
]

MAX_ENUMERATION_M = 5


class TreeError(ValueError):
    """Invalid leaf set, split or tree."""


class LeafSetMismatch(TreeError):
    """Two objects that must share a leaf set do not."""


class StratumError(TreeError):
    """A tree lies in a stratum the requested operation does not support."""


class NewickError(TreeError):
    """Malformed Newick text.  ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line else ""
        super().__init__(message + where)


def _popcount(x: int) -> int:
    return bin(x).count("1")


def masks_compatible(a: int, b: int) -> bool:
    c = a & b
    return c == 0 or c == a or c == b


@dataclass(frozen=True)
class LeafSet:
    """Sorted leaf labels plus the root label.

    ``labels`` may be given in any order; it is stored sorted.
    """

    labels: tuple[str, ...]
    root_label: str = "root"
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False, hash=False)
    _keys: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        labels = tuple(sorted(self.labels))
        if len(labels) < 3:
            raise TreeError(f"need at least 3 leaves, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise TreeError("duplicate leaf labels")
        if self.root_label in labels:
            raise TreeError(f"root label {self.root_label!r} is also a leaf label")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {x: i for i, x in enumerate(labels)})
        object.__setattr__(self, "_keys", {})

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def m(self) -> int:
        return len(self.labels) - 2

    @property
    def full_mask(self) -> int:
        return (1 << len(self.labels)) - 1

    def mask(self, split: "Split") -> int:
        try:
            bits = 0
            for x in split.clade:
                bits |= 1 << self._index[x]
        except KeyError as exc:
            raise LeafSetMismatch(f"label {exc.args[0]!r} not in leaf set") from None
        if not 2 <= _popcount(bits) <= self.n - 1:
            raise TreeError(f"clade of size {_popcount(bits)} is not an internal edge")
        return bits

    def split(self, mask: int) -> "Split":
        return Split(frozenset(x for i, x in enumerate(self.labels) if mask >> i & 1))

    def mask_key(self, mask: int) -> tuple[int, ...]:
        """Canonical sort key of a clade mask (sorted leaf indices)."""
        key = self._keys.get(mask)
        if key is None:
            key = self._keys[mask] = tuple(i for i in range(self.n) if mask >> i & 1)
        return key

    def valid_mask(self, mask: int) -> bool:
        return 0 < mask <= self.full_mask and 2 <= _popcount(mask) <= self.n - 1


@dataclass(frozen=True)
class Split:
    """An edge type, named by its clade (the side of the split without the root)."""

    clade: frozenset[str]

    @classmethod
    def of(cls, *labels: str) -> "Split":
        return cls(frozenset(labels))

    @property
    def sort_key(self) -> tuple[str, ...]:
        return tuple(sorted(self.clade))

    def __lt__(self, other: "Split") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return "|".join(self.sort_key)

    @classmethod
    def parse(cls, text: str) -> "Split":
        return cls(frozenset(text.split("|")))


def are_compatible(s1: Split, s2: Split, leafset: LeafSet | None = None) -> bool:
    """Rooted-clade compatibility: nested or disjoint.

    With ``leafset`` given, both splits are validated against it first.
    """
    if leafset is not None:
        return masks_compatible(leafset.mask(s1), leafset.mask(s2))
    a, b = s1.clade, s2.clade
    return a <= b or b <= a or not (a & b)


class Tree:
    """A point of tree space: pairwise-compatible splits with positive lengths.

    Construct from a mapping ``{Split: length}``.  Splits are held in canonical
    order; ``lengths`` is a read-only array aligned with ``splits``.
    """

    __slots__ = ("leafset", "masks", "lengths", "_splits", "_hash")

    def __init__(self, leafset: LeafSet, edges: Mapping[Split, float] | None = None):
        edges = dict(edges or {})
        pairs = []
        for s, x in edges.items():
            x = float(x)
            if not x > 0 or not math.isfinite(x):
                raise TreeError(f"edge {s} has non-positive or non-finite length {x!r}")
            pairs.append((leafset.mask(s), x))
        masks = [p[0] for p in pairs]
        if len(set(masks)) != len(masks):
            raise TreeError("duplicate split")
        if len(masks) > leafset.m:
            raise TreeError(f"{len(masks)} splits exceed dimension m={leafset.m}")
        for a, b in combinations(masks, 2):
            if not masks_compatible(a, b):
                raise TreeError(f"incompatible splits {leafset.split(a)} and {leafset.split(b)}")
        pairs.sort(key=lambda p: leafset.mask_key(p[0]))
        self._init(leafset, tuple(p[0] for p in pairs), np.array([p[1] for p in pairs], dtype=float))

    def _init(self, leafset, masks, lengths):
        self.leafset = leafset
        self.masks = masks
        lengths.flags.writeable = False
        self.lengths = lengths
        self._splits = None
        self._hash = None

    @classmethod
    def _from_masks(cls, leafset: LeafSet, masks: Sequence[int], lengths) -> "Tree":
        """Unchecked constructor.  Drops non-positive lengths, sorts canonically."""
        keep = [(k, float(x)) for k, x in zip(masks, lengths) if x > 0]
        keep.sort(key=lambda p: leafset.mask_key(p[0]))
        t = cls.__new__(cls)
        t._init(leafset, tuple(p[0] for p in keep), np.array([p[1] for p in keep], dtype=float))
        return t

    @classmethod
    def star(cls, leafset: LeafSet) -> "Tree":
        return cls._from_masks(leafset, (), ())

    @property
    def splits(self) -> tuple[Split, ...]:
        if self._splits is None:
            self._splits = tuple(self.leafset.split(k) for k in self.masks)
        return self._splits

    @property
    def edges(self) -> dict[Split, float]:
        return dict(zip(self.splits, self.lengths.tolist()))

    @property
    def n_edges(self) -> int:
        return len(self.masks)

    @property
    def codim(self) -> int:
        return self.leafset.m - len(self.masks)

    @property
    def is_binary(self) -> bool:
        return len(self.masks) == self.leafset.m

    def length(self, split: Split) -> float:
        """Length of ``split`` in this tree, 0.0 if absent."""
        k = self.leafset.mask(split)
        try:
            return float(self.lengths[self.masks.index(k)])
        except ValueError:
            return 0.0

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.lengths, self.lengths)))

    def with_lengths(self, lengths) -> "Tree":
        return Tree._from_masks(self.leafset, self.masks, lengths)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return (
            self.leafset == other.leafset
            and self.masks == other.masks
            and np.array_equal(self.lengths, other.lengths)
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.leafset, self.masks, self.lengths.tobytes()))
        return self._hash

    def __repr__(self):
        inner = ", ".join(f"{s}: {x:.6g}" for s, x in zip(self.splits, self.lengths))
        return f"Tree({{{inner}}})"

    def same_leafset(self, other: "Tree") -> None:
        if self.leafset != other.leafset:
            raise LeafSetMismatch("trees have different leaf sets")


@dataclass(frozen=True)
class CanonicalOrder:
    """All ``M = 2^(m+2) - m - 4`` splits of a leaf set, in canonical order."""

    leafset: LeafSet
    all_splits: tuple[Split, ...] = field(init=False)
    masks: tuple[int, ...] = field(init=False, repr=False)
    index: Mapping[Split, int] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.leafset.n
        masks = [
            sum(1 << i for i in c)
            for size in range(2, n)
            for c in combinations(range(n), size)
        ]
        masks.sort(key=self.leafset.mask_key)
        splits = tuple(self.leafset.split(k) for k in masks)
        object.__setattr__(self, "masks", tuple(masks))
        object.__setattr__(self, "all_splits", splits)
        object.__setattr__(self, "index", {s: i for i, s in enumerate(splits)})

    def __len__(self):
        return len(self.all_splits)

    def vector(self, tree: Tree) -> np.ndarray:
        """Embedding of ``tree`` in R^M."""
        if tree.leafset != self.leafset:
            raise LeafSetMismatch("leaf set mismatch")
        out = np.zeros(len(self.all_splits))
        pos = {k: i for i, k in enumerate(self.masks)}
        for k, x in zip(tree.masks, tree.lengths):
            out[pos[k]] = x
        return out


def count_edge_types(m: int) -> int:
    if m < 1:
        raise ValueError("m must be >= 1")
    return 2 ** (m + 2) - m - 4


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def _rooted_binaries(units: Sequence[int]) -> list[set[int]]:
    """Clade sets of every rooted binary tree whose leaves are ``units``.

    Each clade set holds the units, the full union, and the internal unions.
    """
    units = list(units)
    trees = [{units[0], units[1], units[0] | units[1]}] if len(units) > 1 else [{units[0]}]
    for u in units[2:]:
        grown = []
        for clades in trees:
            for c in clades:
                new = {d | u if d & c == c and d != c else d for d in clades}
                new.add(c | u)
                new.add(u)
                grown.append(new)
        trees = grown
    return trees


def enumerate_binary_topologies(leafset: LeafSet) -> list[frozenset[Split]]:
    """All binary rooted topologies on ``leafset``, as split sets.

    Built by stepwise leaf insertion; there are ``(2m+1)!!`` of them.
    """
    if leafset.m > MAX_ENUMERATION_M:
        raise ValueError(f"refusing to enumerate topologies for m={leafset.m} > {MAX_ENUMERATION_M}")
    full = leafset.full_mask
    out = []
    for clades in _rooted_binaries([1 << i for i in range(leafset.n)]):
        internal = sorted((k for k in clades if k != full and _popcount(k) >= 2), key=leafset.mask_key)
        out.append(frozenset(leafset.split(k) for k in internal))
    return out


def children_of(leafset: LeafSet, masks: Iterable[int], node: int) -> list[int]:
    """Child clades of ``node`` in the tree with clades ``masks`` (leaves as single bits)."""
    below = [k for k in masks if k != node and k & node == k]
    maximal = [k for k in below if not any(k != j and k & j == k for j in below)]
    covered = 0
    for k in maximal:
        covered |= k
    return maximal + [1 << i for i in range(leafset.n) if (node & ~covered) >> i & 1]


def binary_resolutions(leafset: LeafSet, masks: Iterable[int]) -> list[tuple[int, ...]]:
    """All binary topologies (canonical mask tuples) containing the clades ``masks``."""
    base = set(masks)
    results = [set(base)]
    for node in base | {leafset.full_mask}:
        kids = children_of(leafset, base, node)
        if len(kids) <= 2:
            continue
        extra = [{c for c in cl if c not in kids and c != node} for cl in _rooted_binaries(kids)]
        results = [r | e for r in results for e in extra]
    return [tuple(sorted(r, key=leafset.mask_key)) for r in results]


def random_topology(leafset: LeafSet, rng: np.random.Generator) -> tuple[int, ...]:
    """A uniformly random binary topology, as a canonical mask tuple."""
    order = rng.permutation(leafset.n)
    units = [1 << int(i) for i in order]
    clades = [units[0], units[1], units[0] | units[1]]
    for u in units[2:]:
        c = clades[int(rng.integers(len(clades)))]
        clades = [d | u if d & c == c and d != c else d for d in clades]
        clades += [c | u, u]
    full = leafset.full_mask
    internal = {k for k in clades if k != full and _popcount(k) >= 2}
    return tuple(sorted(internal, key=leafset.mask_key))


def random_tree(
    leafset: LeafSet,
    rng: np.random.Generator,
    n_edges: int | None = None,
    scale: float = 1.0,
) -> Tree:
    """Random tree with exponential edge lengths.

    ``n_edges`` below ``m`` contracts a random subset of a random binary topology.
    """
    masks = list(random_topology(leafset, rng))
    if n_edges is not None and n_edges < len(masks):
        keep = rng.choice(len(masks), size=n_edges, replace=False)
        masks = [masks[i] for i in sorted(keep)]
    lengths = rng.exponential(scale, size=len(masks)) + 1e-3 * scale
    return Tree._from_masks(leafset, masks, lengths)


# --------------------------------------------------------------------------- #
# Newick                                                                      #
# --------------------------------------------------------------------------- #

_NEWICK_STOP = set("(),:;[]")


class _NewickReader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def where(self, pos=None):
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def fail(self, msg, pos=None):
        raise NewickError(msg, *self.where(pos))

    def skip(self):
        t = self.text
        while self.pos < len(t):
            c = t[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "[":
                end = t.find("]", self.pos)
                if end < 0:
                    self.fail("unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, c):
        if self.peek() != c:
            got = self.peek() or "end of input"
            self.fail(f"expected {c!r}, got {got!r}")
        self.pos += 1

    def label(self):
        self.skip()
        t = self.text
        if self.pos < len(t) and t[self.pos] == "'":
            end = t.find("'", self.pos + 1)
            if end < 0:
                self.fail("unterminated quoted label")
            s = t[self.pos + 1 : end]
            self.pos = end + 1
            return s
        start = self.pos
        while self.pos < len(t) and t[self.pos] not in _NEWICK_STOP and not t[self.pos].isspace():
            self.pos += 1
        return t[start : self.pos]

    def length(self):
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        raw = self.label()
        try:
            x = float(raw)
        except ValueError:
            self.fail(f"bad branch length {raw!r}", start)
        if x < 0 or not math.isfinite(x):
            self.fail(f"negative or non-finite branch length {raw!r}", start)
        return x

    def node(self):
        """Returns (name, length, children, position)."""
        pos = self.pos
        children = []
        if self.peek() == "(":
            self.pos += 1
            children.append(self.node())
            while self.peek() == ",":
                self.pos += 1
                children.append(self.node())
            self.expect(")")
        name = self.label()
        if not children and not name:
            self.fail("leaf without a name", pos)
        return name, self.length(), children, pos


def parse_newick(text: str, root_label: str | None = None) -> Tree:
    """Parse one rooted Newick tree.

    The outermost node is the vertex adjacent to the root; its label, if any,
    names the root.  Pendant edge lengths are read and discarded, internal
    edges of length zero are contracted, and unary nodes are merged with their
    child edge.
    """
    trees = parse_newick_many(text, root_label)
    if len(trees) != 1:
        raise NewickError(f"expected one tree, found {len(trees)}")
    return trees[0]


def parse_newick_many(text: str, root_label: str | None = None) -> list[Tree]:
    """Parse a sequence of ``;``-terminated Newick trees sharing one leaf set."""
    r = _NewickReader(text)
    out = []
    while r.peek():
        out.append(_read_one(r, root_label))
    if not out:
        raise NewickError("no tree found", 1, 1)
    for t in out[1:]:
        if t.leafset != out[0].leafset:
            raise LeafSetMismatch("trees in one input have different leaf sets")
    return out


def _read_one(r: _NewickReader, root_label):
    start = r.pos
    if r.peek() != "(":
        r.fail("tree must start with '('")
    name, _, children, _ = r.node()
    r.expect(";")
    root = root_label if root_label is not None else (name or "root")
    if root_label is not None and name and name != root_label:
        r.fail(f"root is labelled {name!r}, expected {root_label!r}", start)

    leaves: list[str] = []
    found: dict[frozenset, float] = {}

    def walk(node, is_top):
        nm, length, kids, pos = node
        if not kids:
            leaves.append(nm)
            return frozenset([nm])
        clade = frozenset().union(*(walk(k, False) for k in kids))
        if not is_top:
            if length is None:
                r.fail("internal edge without a length", pos)
            if len(clade) >= 2 and length > 0:
                found[clade] = found.get(clade, 0.0) + length
        return clade

    walk((name, None, children, start), True)
    if len(set(leaves)) != len(leaves):
        dup = sorted({x for x in leaves if leaves.count(x) > 1})
        r.fail(f"duplicate leaf names {dup}", start)
    if root in leaves:
        r.fail(f"root label {root!r} used as a leaf", start)
    if len(leaves) < 3:
        r.fail(f"need at least 3 leaves, got {len(leaves)}", start)
    leafset = LeafSet(tuple(leaves), root)
    n = len(leaves)
    edges = {Split(c): x for c, x in found.items() if len(c) <= n - 1}
    try:
        return Tree(leafset, edges)
    except TreeError as exc:
        r.fail(str(exc), start)


def to_newick(tree: Tree) -> str:
    """Serialize with full-precision internal lengths; leaves carry no length."""
    ls = tree.leafset
    clades = sorted(tree.masks, key=_popcount)
    length = dict(zip(tree.masks, tree.lengths.tolist()))

    def render(node):
        parts = []
        for k in children_of(ls, clades, node):
            if k in length:
                parts.append((ls.mask_key(k), render(k) + f":{length[k]!r}"))
            else:
                parts.append((ls.mask_key(k), _quote(ls.labels[k.bit_length() - 1])))
        parts.sort()
        return "(" + ",".join(p[1] for p in parts) + ")"

    return render(ls.full_mask) + _quote(ls.root_label) + ";"


def _quote(label: str) -> str:
    if any(c in _NEWICK_STOP or c.isspace() or c == "'" for c in label):
        return "'" + label + "'"
    return label


# --------------------------------------------------------------------------- #
# CSV sidecar                                                                 #
# --------------------------------------------------------------------------- #


def write_csv(trees: Sequence[Tree], weights: Sequence[float] | None = None) -> str:
    """One row per tree; one column per canonical split (``a|b``), 0 if absent."""
    if not trees:
        raise TreeError("no trees")
    order = CanonicalOrder(trees[0].leafset)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [str(s) for s in order.all_splits]
    if weights is not None:
        header.append("weight")
    w.writerow(header)
    for i, t in enumerate(trees):
        row = [format(x, ".17g") for x in order.vector(t)]
        if weights is not None:
            row.append(format(float(weights[i]), ".17g"))
        w.writerow(row)
    return buf.getvalue()


def read_csv(text: str, root_label: str = "root") -> tuple[list[Tree], list[float] | None]:
    """Inverse of :func:`write_csv`.  The leaf set is the union of header labels."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise TreeError("empty CSV")
    header = rows[0]
    has_w = header and header[-1] == "weight"
    cols = header[:-1] if has_w else header
    splits = [Split.parse(c) for c in cols]
    labels = sorted(set().union(*(s.clade for s in splits))) if splits else []
    leafset = LeafSet(tuple(labels), root_label)
    trees, weights = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TreeError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError as exc:
            raise TreeError(f"row {lineno}: {exc}") from None
        if has_w:
            weights.append(vals.pop())
        if any(v < 0 for v in vals):
            raise TreeError(f"row {lineno}: negative length")
        trees.append(Tree(leafset, {s: v for s, v in zip(splits, vals) if v > 0}))
    return trees, (weights if has_w else None)
