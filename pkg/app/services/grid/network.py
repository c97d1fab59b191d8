from dataclasses import dataclass
from typing import Iterable, Tuple

import networkx as nx

from app.core.exceptions import InvalidCaseError
from .case import GridCase


def topology(case: GridCase) -> nx.Graph:
    """Undirected graph of buses and connected lines."""
    graph = nx.Graph()
    graph.add_nodes_from(case.bus_ids)
    graph.add_edges_from((line.from_bus, line.to_bus) for line in case.lines if line.connected)
    return graph


@dataclass(frozen=True)
class ReducedNetwork:
    graph: nx.Graph
    sensors: Tuple[int, ...]  # rows of the parent case

    @property
    def edges(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(sorted(tuple(sorted(edge)) for edge in self.graph.edges))


def reduced_network(case: GridCase, observed: Iterable) -> ReducedNetwork:
    """Edge {i,j} is kept iff a flow sensor on it, or an injection at i or j, is observed."""
    rows = tuple(case.sensor_indices(observed))
    if not rows:
        raise InvalidCaseError("Reduced network needs at least one observed sensor")
    injection_buses = {case.sensors[r].bus for r in rows if case.sensors[r].is_injection}
    flow_lines = {frozenset(case.sensors[r].buses) for r in rows if not case.sensors[r].is_injection}

    graph = nx.Graph()
    for line in case.lines:
        if not line.connected:
            continue
        if line.key in flow_lines or line.from_bus in injection_buses or line.to_bus in injection_buses:
            graph.add_edge(line.from_bus, line.to_bus)
    return ReducedNetwork(graph, rows)
