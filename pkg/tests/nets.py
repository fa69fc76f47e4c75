"""Small networks and random instances shared by the tests."""
import numpy as np

from opfgrad.network import CapacityLimits, CaseFile, PowerNetwork


def two_bus(b=1.0, sg_max=10.0, sg_min=0.0, p=10.0, load=0.5, cost=1.0):
    net = PowerNetwork(1, 1, [(1, 2, b)])
    lim = CapacityLimits([sg_max], [sg_min], [p], [-p])
    return CaseFile(net, [cost], lim, [load])


def three_bus_path():
    """Gens at buses 1 and 2, load at 3: 1 - 2 - 3."""
    net = PowerNetwork(2, 1, [(1, 2, 1.0), (2, 3, 1.0)])
    lim = CapacityLimits([5.0, 5.0], [0.0, 0.0], [5.0, 5.0], [-5.0, -5.0])
    return CaseFile(net, [1.0, 2.0], lim, [1.0])


def four_bus():
    """Two generators, two loads, meshed."""
    net = PowerNetwork(2, 2, [(1, 3, 4.0), (1, 4, 2.0), (2, 3, 3.0), (2, 4, 5.0), (3, 4, 1.5)])
    lim = CapacityLimits([2.0, 2.0], [0.0, 0.0], [1.0] * 5, [-1.0] * 5)
    return CaseFile(net, [1.0, 1.3], lim, [0.7, 0.8])


def parallel_gens(costs=(1.0, 1.0)):
    """Two generators feeding one load through identical lines."""
    net = PowerNetwork(2, 1, [(1, 3, 1.0), (2, 3, 1.0)])
    lim = CapacityLimits([2.0, 2.0], [0.0, 0.0], [5.0, 5.0], [-5.0, -5.0])
    return CaseFile(net, list(costs), lim, [1.0])


def leaf_gen_net():
    """Three generators; generator 3 hangs off bus 5 by a single edge."""
    net = PowerNetwork(3, 3, [(1, 4, 2.0), (2, 5, 3.0), (4, 5, 1.0), (4, 6, 2.5),
                              (5, 6, 1.2), (3, 6, 4.0)])
    lim = CapacityLimits([2.0] * 3, [0.0] * 3, [3.0] * 6, [-3.0] * 6)
    return CaseFile(net, [1.0, 1.5, 2.0], lim, [0.5, 0.6, 0.7])


def random_network(rng, n_gen, n_load, extra_edges=None):
    """Random spanning tree plus a few chords, generators first."""
    n = n_gen + n_load
    order = rng.permutation(n)
    edges = []
    for k in range(1, n):
        u = order[k]
        v = order[rng.integers(0, k)]
        edges.append((int(u) + 1, int(v) + 1, float(rng.uniform(0.5, 20.0))))
    have = {frozenset(e[:2]) for e in edges}
    n_extra = rng.integers(0, n) if extra_edges is None else extra_edges
    for _ in range(n_extra):
        u, v = rng.choice(n, 2, replace=False) + 1
        if frozenset((u, v)) not in have:
            have.add(frozenset((u, v)))
            edges.append((int(u), int(v), float(rng.uniform(0.5, 20.0))))
    return PowerNetwork(n_gen, n_load, edges)


def random_instance(rng, max_bus=12):
    """Random (net, cost, limits, load) with nontrivial limits."""
    n = int(rng.integers(2, max_bus + 1))
    g = int(rng.integers(1, min(4, n - 1) + 1))
    net = random_network(rng, g, n - g)
    sg_min = rng.uniform(0.0, 0.3, g)
    sg_max = sg_min + rng.uniform(0.5, 3.0, g)
    pmax = rng.uniform(0.3, 3.0, net.n_edge)
    pmin = -rng.uniform(0.3, 3.0, net.n_edge)
    lim = CapacityLimits(sg_max, sg_min, pmax, pmin)
    load = rng.uniform(0.05, 1.0, n - g)
    load *= rng.uniform(0.3, 0.9) * sg_max.sum() / load.sum()
    f = rng.uniform(0.1, 2.0, g)
    return net, f, lim, load


# 9-bus branch (2,8) limit points: the red one is regular, the black one
# puts the branch limit exactly at generator 2's capacity.
RED = (-2.5490, 2.5695)
BLACK = (-3.0758, 3.0758)
EDGE_2_8 = 6


def with_branch_limits(case, e, lo, hi):
    lim = case.limits
    pmax, pmin = lim.p_max.copy(), lim.p_min.copy()
    pmax[e], pmin[e] = hi, lo
    return case.network, case.cost, lim.replace(p_max=pmax, p_min=pmin)
