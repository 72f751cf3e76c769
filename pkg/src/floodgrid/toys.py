"""Small hand-checkable cases and a seeded random-instance generator."""
from __future__ import annotations

import numpy as np

from .grid import (Branch, Bus, FloodScenario, Generator, GridCase, Load, ScenarioSet,
                   Substation)


def toy_case(lossless: bool = True, reactive: float = 0.0) -> GridCase:
    """Generator substation k1 feeding a 0.5 pu load at k2 over one line.

    ``reactive`` gives the generator a symmetric reactive range ``[-reactive, reactive]``.
    """
    return GridCase(
        substations=(Substation("k1", ("n1",)), Substation("k2", ("n2",))),
        buses=(Bus("n1", "k1", is_reference=True), Bus("n2", "k2")),
        branches=(Branch("l1", "n1", "n2", b=-10.0, g=0.0 if lossless else 1.0),),
        generators=(Generator("g1", "n1", p_min=0.1, p_max=1.0, q_min=-reactive, q_max=reactive),),
        loads=(Load("d1", "n2", p_load=0.5),),
    )


def toy_scenarios() -> ScenarioSet:
    return ScenarioSet((
        FloodScenario("w1", 0.5, {"k1": 0.3, "k2": 0.6}),
        FloodScenario("w2", 0.5, {"k1": 0.5, "k2": 0.0}),
    ))


def symmetric_case(asymmetric: bool = False) -> GridCase:
    """One generator hub and two identical load sites; ``asymmetric`` makes site B heavier."""
    load_b = 0.4 if asymmetric else 0.3
    return GridCase(
        substations=(Substation("hub", ("h",)), Substation("sa", ("a",)),
                     Substation("sb", ("b",))),
        buses=(Bus("h", "hub", is_reference=True), Bus("a", "sa"), Bus("b", "sb")),
        branches=(Branch("ha", "h", "a", b=-10.0), Branch("hb", "h", "b", b=-10.0)),
        generators=(Generator("g", "h", p_min=0.0, p_max=1.0),),
        loads=(Load("da", "a", p_load=0.3), Load("db", "b", p_load=load_b)),
    )


def symmetric_scenarios() -> ScenarioSet:
    return ScenarioSet((FloodScenario("w", 1.0, {"hub": 0.0, "sa": 0.3, "sb": 0.3}),))


def random_instance(seed: int, max_substations: int = 4, max_scenarios: int = 3,
                    lpac: bool = False) -> tuple[GridCase, ScenarioSet]:
    """A connected random grid with one or two buses per substation and 1..3 floods."""
    rng = np.random.default_rng(seed)
    n_sub = int(rng.integers(2, max_substations + 1))
    classes = ("small", "medium", "large")
    subs, buses = [], []
    for k in range(n_sub):
        n_bus = 1 + int(rng.random() < 0.25)
        ids = tuple(f"n{k}_{j}" for j in range(n_bus))
        subs.append(Substation(f"k{k}", ids, classes[int(rng.integers(0, 3))]))
        for j, b in enumerate(ids):
            v = float(rng.uniform(0.97, 1.03)) if lpac else 1.0
            buses.append(Bus(b, f"k{k}", v_target=v, v_min=0.9, v_max=1.1,
                             is_reference=(k == 0 and j == 0)))
    bus_ids = [b.id for b in buses]
    branches = []
    for i in range(1, len(bus_ids)):  # random spanning tree
        j = int(rng.integers(0, i))
        branches.append((bus_ids[j], bus_ids[i]))
    for _ in range(int(rng.integers(0, 3))):
        a, b = rng.choice(len(bus_ids), 2, replace=False)
        branches.append((bus_ids[a], bus_ids[b]))
    br = tuple(
        Branch(f"l{i}", a, b, b=-float(rng.uniform(2, 20)),
               g=float(rng.uniform(0, 2)) if lpac else 0.0,
               s_max=float(rng.choice([0.3, 0.6, 1.0, 2.0])))
        for i, (a, b) in enumerate(branches))
    n_gen = int(rng.integers(1, 3))
    gens = []
    for i in range(n_gen):
        pmax = float(rng.uniform(0.5, 2.0))
        q = 0.5 if lpac else 0.0
        gens.append(Generator(f"g{i}", str(rng.choice(bus_ids)),
                              p_min=float(rng.choice([0.0, 0.1 * pmax])), p_max=pmax,
                              q_min=-q, q_max=q))
    loads = tuple(
        Load(f"d{i}", str(rng.choice(bus_ids)), p_load=float(rng.uniform(0.1, 1.0)),
             q_load=float(rng.uniform(0, 0.2)) if lpac else 0.0)
        for i in range(int(rng.integers(1, 4))))
    case = GridCase(tuple(subs), tuple(buses), br, tuple(gens), loads)

    n_sc = int(rng.integers(1, max_scenarios + 1))
    depth_choices = np.array([0.0, 0.2, 0.4, 0.7, 0.9, 1.3])
    probs = rng.dirichlet(np.ones(n_sc)) if rng.random() < 0.5 else np.full(n_sc, 1.0 / n_sc)
    probs = probs / probs.sum()
    probs[-1] = 1.0 - probs[:-1].sum()
    scen = tuple(
        FloodScenario(f"w{w}", float(probs[w]),
                      {s.id: float(rng.choice(depth_choices)) for s in subs})
        for w in range(n_sc))
    return case, ScenarioSet(scen)


def equiprobable(sset: ScenarioSet) -> ScenarioSet:
    n = len(sset.scenarios)
    return ScenarioSet(tuple(FloodScenario(s.id, 1.0 / n, s.depths) for s in sset.scenarios),
                       sset.level_thresholds)
