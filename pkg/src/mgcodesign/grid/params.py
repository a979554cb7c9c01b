"""Microgrid data model: DG, line and load parameters plus the full system.

Nominal component values follow the 4-DG islanded benchmark (48 V bus,
120 V sources, 800/700/700/900 W ratings).  Heterogeneous instances are
produced by seeded multiplicative +/-20% draws on every component value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .topology import PhysicalTopology, topology_from_edges

#: nominal benchmark component values (48 V bus; see README on lines)
TABLE1 = {
    "R_t": 0.05,      # ohm
    "L_t": 0.01,      # H
    "C_t": 2.2e-3,    # F
    "Y_L": 0.2,       # S   (R_L = 5 ohm)
    "I_L_bar": 3.0,   # A
    "R_l": 4.0,       # ohm
    "L_l": 0.01,      # H
    "V_r": 48.0,      # V
    "V_nom": 120.0,   # V
    "P_n_cycle": (800.0, 700.0, 700.0, 900.0),  # W
    "sigma2": 0.5,
}


@dataclass(frozen=True)
class DgParams:
    R_t: float            # internal resistance (ohm)
    L_t: float            # internal inductance (H)
    C_t: float            # filter capacitance (F)
    Y_L: float            # constant-impedance load conductance (S)
    I_L_bar: float        # constant-current load (A)
    P_n: float            # power rating (W)
    V_r: float            # reference voltage (V)
    sigma_v2: float = 0.0  # voltage-channel disturbance variance
    sigma_c2: float = 0.0  # current-channel disturbance variance

    def __post_init__(self):
        for name in ("R_t", "L_t", "C_t", "P_n"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DgParams.{name} must be positive")
        if self.Y_L < 0 or self.V_r <= 0:
            raise ValueError("DgParams needs Y_L >= 0 and V_r > 0")
        if self.sigma_v2 < 0 or self.sigma_c2 < 0:
            raise ValueError("disturbance variances must be nonnegative")


@dataclass(frozen=True)
class LineParams:
    R_l: float            # line resistance (ohm)
    L_l: float            # line inductance (H)
    endpoints: tuple[int, int]   # (tail DG index, head DG index)
    sigma_l2: float = 0.0

    def __post_init__(self):
        if self.R_l <= 0 or self.L_l <= 0:
            raise ValueError("LineParams needs R_l, L_l > 0")
        if self.endpoints[0] == self.endpoints[1]:
            raise ValueError("line endpoints must differ")
        if self.sigma_l2 < 0:
            raise ValueError("disturbance variance must be nonnegative")


@dataclass(frozen=True)
class MicrogridSpec:
    dgs: tuple[DgParams, ...]
    lines: tuple[LineParams, ...]
    topology: PhysicalTopology
    V_nom: float = TABLE1["V_nom"]
    V_base: float = TABLE1["V_r"]

    def __post_init__(self):
        if len(self.dgs) != self.topology.n_dgs:
            raise ValueError("number of DGs inconsistent with topology")
        if len(self.lines) != self.topology.n_lines:
            raise ValueError("number of lines inconsistent with topology")
        for lp, ep in zip(self.lines, self.topology.lines):
            if lp.endpoints != ep:
                raise ValueError("line endpoints inconsistent with topology")
        if self.V_nom < max(d.V_r for d in self.dgs):
            raise ValueError("V_nom must be at least the largest reference voltage")

    # -- convenience vectors -------------------------------------------
    @property
    def n_dgs(self) -> int:
        return len(self.dgs)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def B(self) -> np.ndarray:
        return self.topology.bi_adjacency

    def vec(self, attr: str) -> np.ndarray:
        return np.array([getattr(d, attr) for d in self.dgs])

    def line_vec(self, attr: str) -> np.ndarray:
        return np.array([getattr(l, attr) for l in self.lines])

    @property
    def V_r(self) -> np.ndarray:
        return self.vec("V_r")

    @property
    def I_n(self) -> np.ndarray:
        """Rated currents P_n / V_base used for per-unit current sharing."""
        return self.vec("P_n") / self.V_base

    def with_dg_updates(self, index: int, **changes) -> "MicrogridSpec":
        dgs = list(self.dgs)
        dgs[index] = replace(dgs[index], **changes)
        return replace(self, dgs=tuple(dgs))


def heterogeneous_values(nominal: float, n: int, rng: np.random.Generator,
                         spread: float) -> np.ndarray:
    return nominal * rng.uniform(1.0 - spread, 1.0 + spread, n)


def benchmark_microgrid(n_dgs: int = 4, topology: PhysicalTopology | None = None,
                        seed: int | None = None, spread: float = 0.2,
                        connectivity: float = 0.6,
                        topology_seed: int | None = None,
                        sigma2: float | None = None) -> MicrogridSpec:
    """Benchmark microgrid at nominal values, optionally with seeded +/-20% draws.

    ``seed=None`` gives the exact nominal system; otherwise every component
    parameter receives an independent multiplicative uniform draw.
    """
    from .topology import random_geometric_topology

    if topology is None:
        if n_dgs == 1:
            topology = topology_from_edges(1, [])
        else:
            topology = random_geometric_topology(
                n_dgs, connectivity,
                seed=topology_seed if topology_seed is not None else (seed or 0))
    n = topology.n_dgs
    L = topology.n_lines
    s2 = TABLE1["sigma2"] if sigma2 is None else sigma2

    if seed is None:
        draw = lambda nom, k: np.full(k, nom)
    else:
        rng = np.random.default_rng(seed)
        draw = lambda nom, k: heterogeneous_values(nom, k, rng, spread)

    P_n = [TABLE1["P_n_cycle"][i % len(TABLE1["P_n_cycle"])] for i in range(n)]
    R_t = draw(TABLE1["R_t"], n); L_t = draw(TABLE1["L_t"], n)
    C_t = draw(TABLE1["C_t"], n); Y_L = draw(TABLE1["Y_L"], n)
    I_L = draw(TABLE1["I_L_bar"], n)
    R_l = draw(TABLE1["R_l"], L); L_l = draw(TABLE1["L_l"], L)

    dgs = tuple(DgParams(R_t[i], L_t[i], C_t[i], Y_L[i], I_L[i], P_n[i],
                         TABLE1["V_r"], s2, s2) for i in range(n))
    lines = tuple(LineParams(R_l[k], L_l[k], topology.lines[k], s2)
                  for k in range(L))
    return MicrogridSpec(dgs, lines, topology)


# -- config (de)serialization ------------------------------------------

def microgrid_to_dict(mg: MicrogridSpec) -> dict:
    return {
        "V_nom": mg.V_nom,
        "V_base": mg.V_base,
        "dgs": [vars_of(d) for d in mg.dgs],
        "lines": [{"R_l": l.R_l, "L_l": l.L_l, "sigma_l2": l.sigma_l2,
                   "endpoints": list(l.endpoints)} for l in mg.lines],
    }


def vars_of(d: DgParams) -> dict:
    return {k: getattr(d, k) for k in
            ("R_t", "L_t", "C_t", "Y_L", "I_L_bar", "P_n", "V_r",
             "sigma_v2", "sigma_c2")}


def microgrid_from_dict(cfg: dict) -> MicrogridSpec:
    """Build a spec from a config mapping.

    Either an explicit {dgs, lines} listing or a generator stanza
    {n_dgs, connectivity, seed} plus optional heterogeneity spread.
    """
    if "dgs" in cfg:
        dgs = tuple(DgParams(**d) for d in cfg["dgs"])
        lines = tuple(LineParams(R_l=l["R_l"], L_l=l["L_l"],
                                 endpoints=tuple(l["endpoints"]),
                                 sigma_l2=l.get("sigma_l2", 0.0))
                      for l in cfg["lines"])
        topo = topology_from_edges(len(dgs), [l.endpoints for l in lines])
        return MicrogridSpec(dgs, lines, topo,
                             V_nom=cfg.get("V_nom", TABLE1["V_nom"]),
                             V_base=cfg.get("V_base", TABLE1["V_r"]))
    return benchmark_microgrid(
        n_dgs=cfg.get("n_dgs", 4),
        seed=cfg.get("seed"),
        spread=cfg.get("spread", 0.2),
        connectivity=cfg.get("connectivity", 0.6),
        topology_seed=cfg.get("topology_seed"),
        sigma2=cfg.get("sigma2"))
