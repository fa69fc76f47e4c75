"""Power network graph, limits, and the JSON case format.

Buses are numbered ``1..N`` in files and in everything user facing, with
generators first (``1..n_gen``) and loads after.  Arrays inside the package
are 0-based, so generator ``i`` lives at row ``i - 1``.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CaseError, DimensionError

DEFAULT_SPLIT_SUSCEPTANCE = 1e6


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PowerNetwork:
    """Connected graph with generator buses first and positive susceptances.

    Parameters
    ----------
    n_gen, n_load : int
    edges : sequence of (from_bus, to_bus, susceptance)
        Bus numbers are 1-based. Edge order fixes the orientation of the
        incidence matrix and therefore the sign of every branch flow.
    labels : sequence, optional
        Original bus identifiers, e.g. from before composite-bus splitting.
    """

    n_gen: int
    n_load: int
    edges: tuple
    labels: tuple = None
    frm: np.ndarray = field(init=False, repr=False)
    to: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = tuple((int(u), int(v), float(w)) for u, v, w in self.edges)
        object.__setattr__(self, "edges", edges)
        n = self.n_gen + self.n_load
        if self.n_gen < 1:
            raise CaseError("at least one generator is required", "generators")
        if self.n_load < 0:
            raise CaseError("load count must be nonnegative", "loads")
        labels = tuple(range(1, n + 1)) if self.labels is None else tuple(self.labels)
        if len(labels) != n:
            raise DimensionError(f"expected {n} labels, got {len(labels)}", "labels")
        object.__setattr__(self, "labels", labels)
        for k, (u, v, w) in enumerate(edges):
            if not (1 <= u <= n and 1 <= v <= n):
                raise CaseError(f"endpoint outside 1..{n}", f"edges[{k}]")
            if u == v:
                raise CaseError("self-loop", f"edges[{k}]")
            if not (w > 0 and np.isfinite(w)):
                raise CaseError("susceptance must be positive", f"edges[{k}].b")
        object.__setattr__(self, "frm", _frozen([e[0] - 1 for e in edges], int))
        object.__setattr__(self, "to", _frozen([e[1] - 1 for e in edges], int))
        object.__setattr__(self, "b", _frozen([e[2] for e in edges]))
        if not _connected(n, self.frm, self.to):
            raise CaseError("network is disconnected", "edges")

    @property
    def n_bus(self):
        return self.n_gen + self.n_load

    @property
    def n_edge(self):
        return len(self.edges)

    def edge_name(self, e):
        u, v, _ = self.edges[e]
        return f"({self.labels[u - 1]},{self.labels[v - 1]})"

    def with_susceptance(self, b):
        b = np.broadcast_to(np.asarray(b, dtype=float), (self.n_edge,))
        edges = [(u, v, float(w)) for (u, v, _), w in zip(self.edges, b)]
        return PowerNetwork(self.n_gen, self.n_load, edges, self.labels)

    def __eq__(self, other):
        if not isinstance(other, PowerNetwork):
            return NotImplemented
        return (self.n_gen, self.n_load, self.edges, self.labels) == (
            other.n_gen, other.n_load, other.edges, other.labels)

    def __hash__(self):
        return hash((self.n_gen, self.n_load, self.edges))


def _connected(n, frm, to):
    if n == 1:
        return True
    adj = [[] for _ in range(n)]
    for u, v in zip(frm, to):
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    queue = deque([0])
    while queue:
        for w in adj[queue.popleft()]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == n


@dataclass(frozen=True, eq=False)
class CapacityLimits:
    """Generator and branch limits, the vector (sg_max, sg_min, p_max, p_min)."""

    sg_max: np.ndarray
    sg_min: np.ndarray
    p_max: np.ndarray
    p_min: np.ndarray

    def __post_init__(self):
        for name in ("sg_max", "sg_min", "p_max", "p_min"):
            a = _frozen(np.atleast_1d(getattr(self, name)))
            if not np.all(np.isfinite(a)):
                raise CaseError("limits must be finite", name)
            object.__setattr__(self, name, a)
        if self.sg_max.shape != self.sg_min.shape:
            raise DimensionError("sg_max and sg_min lengths differ", "sg_min")
        if self.p_max.shape != self.p_min.shape:
            raise DimensionError("p_max and p_min lengths differ", "p_min")
        if np.any(self.sg_min < 0):
            raise CaseError("generator lower limits must be nonnegative", "sg_min")
        if np.any(self.sg_max <= self.sg_min):
            raise CaseError("need sg_max > sg_min elementwise", "sg_max")
        if np.any(self.p_max <= self.p_min):
            raise CaseError("need p_max > p_min elementwise", "p_max")

    @property
    def xi(self):
        """Limits stacked in the order (sg_max, sg_min, p_max, p_min)."""
        return np.concatenate([self.sg_max, self.sg_min, self.p_max, self.p_min])

    @classmethod
    def from_xi(cls, xi, n_gen):
        xi = np.asarray(xi, dtype=float)
        n_edge = (len(xi) - 2 * n_gen) // 2
        g, e = n_gen, n_edge
        return cls(xi[:g], xi[g:2 * g], xi[2 * g:2 * g + e], xi[2 * g + e:])

    def replace(self, **kw):
        d = dict(sg_max=self.sg_max, sg_min=self.sg_min, p_max=self.p_max, p_min=self.p_min)
        d.update(kw)
        return CapacityLimits(**d)

    def check_dims(self, net):
        if len(self.sg_max) != net.n_gen:
            raise DimensionError(
                f"expected {net.n_gen} generator limits, got {len(self.sg_max)}", "sg_max")
        if len(self.p_max) != net.n_edge:
            raise DimensionError(
                f"expected {net.n_edge} branch limits, got {len(self.p_max)}", "p_max")

    def __eq__(self, other):
        if not isinstance(other, CapacityLimits):
            return NotImplemented
        return np.array_equal(self.xi, other.xi)


def check_cost(f, n_gen):
    f = np.asarray(f, dtype=float)
    if f.shape != (n_gen,):
        raise DimensionError(f"cost must have length {n_gen}, got {f.size}", "cost")
    if not np.all(np.isfinite(f)) or np.any(f < 0):
        raise CaseError("cost entries must be finite and nonnegative", "cost")
    return f


def check_load(sl, n_load):
    sl = np.asarray(sl, dtype=float)
    if sl.shape != (n_load,):
        raise DimensionError(f"load must have length {n_load}, got {sl.size}", "load")
    if not np.all(np.isfinite(sl)) or np.any(sl <= 0):
        raise CaseError("load must be positive", "load")
    return sl


@dataclass(frozen=True, eq=False)
class CaseFile:
    network: PowerNetwork
    cost: np.ndarray
    limits: CapacityLimits
    load: np.ndarray
    name: str = "case"
    base_mva: float = 100.0

    def __post_init__(self):
        net = self.network
        object.__setattr__(self, "cost", _frozen(check_cost(self.cost, net.n_gen)))
        self.limits.check_dims(net)
        object.__setattr__(self, "load", _frozen(check_load(self.load, net.n_load)))

    @property
    def ctx(self):
        """The (network, cost, limits) triple the operator is parameterised by."""
        return self.network, self.cost, self.limits

    def load_buses(self):
        """1-based bus numbers of the loads, in load-vector order."""
        g = self.network.n_gen
        return list(range(g + 1, g + self.network.n_load + 1))

    def load_with(self, overrides):
        """Copy of the base load with ``{bus_number: value}`` overrides applied."""
        sl = np.array(self.load)
        g = self.network.n_gen
        for bus, value in overrides.items():
            k = int(bus) - g - 1
            if not 0 <= k < self.network.n_load:
                raise CaseError(f"bus {bus} is not a load bus", "load")
            sl[k] = value
        return check_load(sl, self.network.n_load)

    def __eq__(self, other):
        if not isinstance(other, CaseFile):
            return NotImplemented
        return (self.network == other.network and self.limits == other.limits
                and np.array_equal(self.cost, other.cost)
                and np.array_equal(self.load, other.load)
                and (self.name, self.base_mva) == (other.name, other.base_mva))


def incidence_matrix(net):
    """N x E incidence matrix; column e is +1 at from-bus and -1 at to-bus."""
    C = np.zeros((net.n_bus, net.n_edge))
    cols = np.arange(net.n_edge)
    C[net.frm, cols] = 1.0
    C[net.to, cols] = -1.0
    return C


def laplacian(net):
    """Weighted graph Laplacian C diag(b) C^T."""
    C = incidence_matrix(net)
    return (C * net.b) @ C.T


def flow_matrix(net):
    """B C^T, mapping bus angles to branch flows."""
    return net.b[:, None] * incidence_matrix(net).T


# --- JSON case format -------------------------------------------------------

_ARRAY_FIELDS = ("cost", "sg_max", "sg_min", "p_max", "p_min", "load")


def case_from_dict(d):
    if not isinstance(d, dict):
        raise CaseError("case must be a JSON object")
    for key in ("generators", "loads", "edges") + _ARRAY_FIELDS:
        if key not in d:
            raise CaseError("missing field", key)
    for key in ("generators", "loads"):
        if not isinstance(d[key], int) or isinstance(d[key], bool):
            raise CaseError("must be an integer", key)
    if not isinstance(d["edges"], list):
        raise CaseError("must be a list", "edges")
    edges = []
    for k, e in enumerate(d["edges"]):
        if not isinstance(e, dict):
            raise CaseError("must be an object", f"edges[{k}]")
        for key, kind in (("from", int), ("to", int), ("b", (int, float))):
            if key not in e:
                raise CaseError("missing field", f"edges[{k}].{key}")
            if not isinstance(e[key], kind) or isinstance(e[key], bool):
                raise CaseError("wrong type", f"edges[{k}].{key}")
        edges.append((e["from"], e["to"], e["b"]))
    arrays = {}
    for key in _ARRAY_FIELDS:
        v = d[key]
        if not isinstance(v, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise CaseError("must be a list of numbers", key)
        arrays[key] = np.array(v, dtype=float)
    g, n_l = d["generators"], d["loads"]
    if len(edges) == 0 and g + n_l > 1:
        raise CaseError("network is disconnected", "edges")
    for key, n in (("cost", g), ("sg_max", g), ("sg_min", g),
                   ("p_max", len(edges)), ("p_min", len(edges)), ("load", n_l)):
        if len(arrays[key]) != n:
            raise DimensionError(f"expected length {n}, got {len(arrays[key])}", key)
    net = PowerNetwork(g, n_l, edges, d.get("labels"))
    limits = CapacityLimits(arrays["sg_max"], arrays["sg_min"], arrays["p_max"], arrays["p_min"])
    return CaseFile(net, arrays["cost"], limits, arrays["load"],
                    name=str(d.get("name", "case")), base_mva=float(d.get("base_mva", 100.0)))


def case_to_dict(case):
    net = case.network
    d = {
        "name": case.name,
        "generators": net.n_gen,
        "loads": net.n_load,
        "edges": [{"from": u, "to": v, "b": w} for u, v, w in net.edges],
        "cost": case.cost.tolist(),
        "sg_max": case.limits.sg_max.tolist(),
        "sg_min": case.limits.sg_min.tolist(),
        "p_max": case.limits.p_max.tolist(),
        "p_min": case.limits.p_min.tolist(),
        "load": case.load.tolist(),
        "base_mva": case.base_mva,
    }
    if net.labels != tuple(range(1, net.n_bus + 1)):
        d["labels"] = list(net.labels)
    return d


def load_case(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CaseError(f"invalid JSON: {exc}") from exc
    return case_from_dict(d)


def save_case(case, path):
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + "\n", encoding="utf-8")


def bundled_case(name="case9"):
    """Load a case shipped with the package (currently only ``case9``)."""
    return load_case(Path(__file__).parent / "data" / f"{name}.json")


# --- composite buses ----------------------------------------------------------

@dataclass
class RawBus:
    """A bus before splitting; may carry a generator, a load, or both."""

    id: object
    cost: float = None
    sg_max: float = None
    sg_min: float = None
    load: float = None

    @property
    def has_gen(self):
        return self.sg_max is not None

    @property
    def has_load(self):
        return self.load is not None


@dataclass
class RawCase:
    buses: list
    edges: list  # (from_id, to_id, b, p_max, p_min)
    name: str = "raw"
    base_mva: float = 100.0

    @classmethod
    def from_dict(cls, d):
        buses = []
        for k, b in enumerate(d["buses"]):
            gen = b.get("gen") or {}
            if gen and not {"cost", "sg_max", "sg_min"} <= set(gen):
                raise CaseError("gen needs cost, sg_max, sg_min", f"buses[{k}].gen")
            buses.append(RawBus(b["id"], gen.get("cost"), gen.get("sg_max"),
                                gen.get("sg_min"), b.get("load")))
        edges = [(e["from"], e["to"], e["b"], e["p_max"], e["p_min"]) for e in d["edges"]]
        return cls(buses, edges, d.get("name", "raw"), d.get("base_mva", 100.0))


def split_composite_buses(raw, split_b=DEFAULT_SPLIT_SUSCEPTANCE):
    """Turn a raw case into one where no bus is both generator and load.

    Each composite bus becomes a generator bus joined by a single edge of
    susceptance ``split_b`` to a new load bus, and the original neighbours
    attach to the load bus.  Buses are then renumbered generators first,
    keeping the original ids in ``network.labels`` (split load halves get the
    label ``"<id>L"``).  A bus with neither generator nor load is treated as a
    load bus carrying a vanishing load.
    """
    ids = [b.id for b in raw.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids", "buses")
    index = {b: k for k, b in enumerate(ids)}
    n_raw = len(ids)
    frm = []
    to = []
    for k, (u, v, *_rest) in enumerate(raw.edges):
        if u not in index or v not in index:
            raise CaseError("unknown bus id", f"edges[{k}]")
        frm.append(index[u])
        to.append(index[v])
    if not _connected(n_raw, np.array(frm, dtype=int), np.array(to, dtype=int)):
        raise CaseError("raw case is disconnected", "edges")

    gens = []   # (label, raw bus)
    loads = []  # (label, load value)
    where = {}  # raw bus id -> ("gen"|"load", position); edges attach to the load side
    split_edges = []
    for bus in raw.buses:
        if bus.has_gen and bus.has_load:
            gens.append((bus.id, bus))
            loads.append((f"{bus.id}L", bus.load))
            where[bus.id] = ("load", len(loads) - 1)
            split_edges.append((len(gens) - 1, len(loads) - 1, bus))
        elif bus.has_gen:
            gens.append((bus.id, bus))
            where[bus.id] = ("gen", len(gens) - 1)
        else:
            loads.append((bus.id, bus.load if bus.has_load else 1e-10))
            where[bus.id] = ("load", len(loads) - 1)

    g = len(gens)

    def number(kind, pos):
        return pos + 1 if kind == "gen" else g + pos + 1

    edges, p_max, p_min = [], [], []
    for u, v, b, pmax, pmin in raw.edges:
        edges.append((number(*where[u]), number(*where[v]), b))
        p_max.append(pmax)
        p_min.append(pmin)
    total = sum(bus.sg_max for _, bus in gens) + sum(x for _, x in loads) + 1.0
    for gi, li, _bus in split_edges:
        edges.append((gi + 1, g + li + 1, split_b))
        p_max.append(total)
        p_min.append(-total)

    labels = [lab for lab, _ in gens] + [lab for lab, _ in loads]
    net = PowerNetwork(g, len(loads), edges, labels)
    limits = CapacityLimits([bus.sg_max for _, bus in gens], [bus.sg_min for _, bus in gens],
                            p_max, p_min)
    return CaseFile(net, [bus.cost for _, bus in gens], limits, [x for _, x in loads],
                    name=raw.name, base_mva=raw.base_mva)
