"""Algebraic and graph-theoretic observability.

Rank tests on measurement matrices answer the questions directly; the graph
tests answer the same questions from topology and sensor placement alone and
return a witness (spanning tree plus sensor assignment) that can be checked
independently.
"""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import networkx as nx
import numpy as np

from app.core.config import settings
from app.core.exceptions import InvalidCaseError
from app.services.grid import GridCase, MeasurementMatrix, SensorSpec, dc_jacobian, reduced_network, topology
from app.services.linalg import has_full_column_rank, null_basis, numeric_rank

logger = logging.getLogger(__name__)

Matrix = Union[MeasurementMatrix, np.ndarray]
Edge = Tuple[int, int]


class SensorRole(str, Enum):
    ADVERSARY = "adversary"
    OBSERVED = "observed"
    CRITICAL = "critical"
    FRAMED = "framed"


@dataclass(frozen=True)
class SensorSet:
    """Ordered subset of a case's sensors; the role is metadata only."""
    rows: Tuple[int, ...]
    labels: Tuple[str, ...]
    role: SensorRole = SensorRole.OBSERVED

    @classmethod
    def from_items(cls, case: GridCase, items: Iterable, role: SensorRole = SensorRole.OBSERVED) -> "SensorSet":
        rows = tuple(case.sensor_indices(items))
        if len(set(rows)) != len(rows):
            raise InvalidCaseError(f"{role.value} set lists a sensor twice")
        return cls(rows, tuple(case.sensors[r].label for r in rows), role)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    rank: Optional[int] = None
    affected_states: Tuple[int, ...] = ()
    tree_edges: Tuple[Edge, ...] = ()
    assignment: Tuple[Tuple[Edge, str], ...] = ()  # (tree edge, sensor label)


@dataclass(frozen=True)
class Cut:
    side: FrozenSet[int]
    other: FrozenSet[int]
    crossing: Tuple[Edge, ...]


def _entries(H: Matrix) -> np.ndarray:
    return H.entries if isinstance(H, MeasurementMatrix) else np.asarray(H, dtype=float)


def _rows(rows: Iterable) -> List[int]:
    return sorted({int(r) for r in rows})


def _without(H: np.ndarray, rows: Iterable[int]) -> np.ndarray:
    return np.delete(H, _rows(rows), axis=0)


# Rank tests

def is_observable(H: Matrix) -> bool:
    return has_full_column_rank(_entries(H))


def attack_feasible(H: Matrix, adversary: Iterable[int]) -> bool:
    """True iff removing the adversary rows leaves H column-rank deficient."""
    H = _entries(H)
    return not has_full_column_rank(_without(H, adversary))


def is_critical_set(H: Matrix, candidate: Iterable[int]) -> bool:
    """Removing the set breaks rank and removing any one-smaller subset does not.

    Row deletion can only lower rank, so leave-one-out covers every strict subset.
    """
    H = _entries(H)
    candidate = _rows(candidate)
    if not candidate or not attack_feasible(H, candidate):
        return False
    return all(not attack_feasible(H, [c for c in candidate if c != drop]) for drop in candidate)


def affected_states(H_o: Matrix, tol: Optional[float] = None) -> Tuple[int, ...]:
    """Columns of H_o with an entry above tol in magnitude."""
    tol = settings.SUPPORT_TOL if tol is None else tol
    H_o = _entries(H_o)
    if H_o.size == 0:
        return ()
    return tuple(int(k) for k in np.flatnonzero(np.max(np.abs(H_o), axis=0) > tol))


def partial_observable(H_o: Matrix, X_o: Optional[Sequence[int]] = None) -> bool:
    """Every null vector of H_s (H_o on the X_o columns) vanishes on X_o."""
    H_o = _entries(H_o)
    X_o = affected_states(H_o) if X_o is None else list(X_o)
    if len(X_o) == 0:
        return False
    return null_basis(H_o[:, list(X_o)]).shape[1] == 0


def is_critical_wrt(H_o: Matrix, X_o: Sequence[int], candidate: Iterable[int]) -> bool:
    """Criticality of candidate rows of H_o with respect to the state set X_o."""
    H_o = _entries(H_o)
    candidate = _rows(candidate)
    if not candidate:
        return False
    if not partial_observable(_without(H_o, candidate), X_o):
        return all(
            partial_observable(_without(H_o, [c for c in candidate if c != drop]), X_o)
            for drop in candidate
        )
    return False


def rank_report(H: Matrix) -> ObservabilityReport:
    H = _entries(H)
    rank = numeric_rank(H)
    return ObservabilityReport(observable=rank == H.shape[1], rank=rank,
                               affected_states=affected_states(H))


def check_partial_conditions(case: GridCase, observed: Iterable, critical: Iterable,
                             H: Optional[Matrix] = None) -> bool:
    """Partial observability of X_o, criticality of C w.r.t. (S_o, X_o), and C breaking full observability."""
    H = _entries(dc_jacobian(case) if H is None else H)
    observed_rows = list(case.sensor_indices(observed))
    critical_rows = list(case.sensor_indices(critical))
    if not critical_rows:
        return False
    if not set(critical_rows) <= set(observed_rows):
        raise InvalidCaseError("Critical candidate must be a subset of the observed set")

    H_o = H[observed_rows]
    X_o = affected_states(H_o)
    local = [observed_rows.index(r) for r in critical_rows]
    checks = (
        ("partially observable", lambda: partial_observable(H_o, X_o)),
        ("critical w.r.t. observed set", lambda: is_critical_wrt(H_o, X_o, local)),
        ("breaks full observability", lambda: attack_feasible(H, critical_rows)),
    )
    for name, check in checks:
        if not check():
            logger.debug(f"Partial-observation condition failed: {name}")
            return False
    return True


# Graph tests

def _edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


def _coverable_edges(sensor: SensorSpec, graph: nx.Graph) -> List[Edge]:
    if sensor.is_injection:
        if sensor.bus not in graph:
            return []
        return sorted(_edge(sensor.bus, k) for k in graph.neighbors(sensor.bus))
    i, j = sensor.buses
    return [_edge(i, j)] if graph.has_edge(i, j) else []


class _TreeCoverSearch:
    """Maximum common independent set of the graphic matroid of a graph and
    the transversal matroid of sensor-to-edge coverage.

    A set of edges is transversal-independent when its edges can be matched to
    distinct sensors. The maximum is a spanning tree exactly when some spanning
    tree has a distinct covering sensor on every edge.
    """

    def __init__(self, graph: nx.Graph, sensors: Sequence[SensorSpec]):
        self.graph = graph
        self.sensors = list(sensors)
        self.edges = sorted(_edge(*e) for e in graph.edges)
        self.covers: Dict[Edge, List[int]] = {e: [] for e in self.edges}
        for k, sensor in enumerate(self.sensors):
            for e in _coverable_edges(sensor, graph):
                self.covers[e].append(k)
        self.chosen: List[Edge] = []
        self.matching: Dict[Edge, int] = {}

    # transversal side

    def _rematch(self):
        bipartite = nx.Graph()
        left = [("e", e) for e in self.chosen]
        bipartite.add_nodes_from(left)
        for e in self.chosen:
            bipartite.add_edges_from((("e", e), ("s", k)) for k in self.covers[e])
        matched = nx.bipartite.hopcroft_karp_matching(bipartite, top_nodes=left)
        self.matching = {e: matched[("e", e)][1] for e in self.chosen if ("e", e) in matched}
        if len(self.matching) != len(self.chosen):
            raise RuntimeError("Common independent set lost its sensor matching")

    def _alternating_reach(self, start: Edge) -> Tuple[set, bool]:
        """Chosen edges whose sensor an alternating path from start reaches, and
        whether a free sensor is reachable."""
        owner = {k: e for e, k in self.matching.items()}
        seen_sensors = set()
        reached = set()
        free = False
        queue = deque([start])
        while queue:
            e = queue.popleft()
            for k in self.covers[e]:
                if k in seen_sensors:
                    continue
                seen_sensors.add(k)
                holder = owner.get(k)
                if holder is None:
                    free = True
                elif holder not in reached:
                    reached.add(holder)
                    queue.append(holder)
        return reached, free

    # graphic side

    def _forest(self) -> nx.Graph:
        forest = nx.Graph()
        forest.add_nodes_from(self.graph.nodes)
        forest.add_edges_from(self.chosen)
        return forest

    def _augment(self) -> bool:
        forest = self._forest()
        chosen = set(self.chosen)
        outside = [e for e in self.edges if e not in chosen]
        sources, sinks = set(), set()
        arcs: Dict[Tuple[str, Edge], List[Tuple[str, Edge]]] = {}

        for y in outside:
            node_y = ("out", y)
            if nx.has_path(forest, *y):
                for a, b in nx.utils.pairwise(nx.shortest_path(forest, *y)):
                    arcs.setdefault(("in", _edge(a, b)), []).append(node_y)
            else:
                sources.add(node_y)
            reached, free = self._alternating_reach(y)
            if free:
                sinks.add(node_y)
            for x in reached:
                arcs.setdefault(node_y, []).append(("in", x))

        # shortest path from sources to sinks
        parent = {s: None for s in sorted(sources)}
        queue = deque(sorted(sources))
        target = None
        while queue:
            node = queue.popleft()
            if node in sinks:
                target = node
                break
            for nxt in arcs.get(node, ()):
                if nxt not in parent:
                    parent[nxt] = node
                    queue.append(nxt)
        if target is None:
            return False

        node = target
        while node is not None:
            side, e = node
            if side == "out":
                chosen.add(e)
            else:
                chosen.discard(e)
            node = parent[node]
        self.chosen = sorted(chosen)
        self._rematch()
        return True

    def run(self) -> "_TreeCoverSearch":
        while self._augment():
            pass
        return self


def spanning_tree_observable(case: GridCase, sensors: Optional[Iterable] = None,
                             graph: Optional[nx.Graph] = None) -> ObservabilityReport:
    """Spanning tree of the graph with a distinct covering sensor on each edge.

    A flow sensor covers its own line; an injection covers any one line
    incident to its bus. `graph` defaults to the case topology.
    """
    graph = topology(case) if graph is None else graph
    rows = range(case.n_sensors) if sensors is None else case.sensor_indices(sensors)
    specs = [case.sensors[r] for r in rows]
    if graph.number_of_nodes() == 0:
        return ObservabilityReport(observable=False)

    search = _TreeCoverSearch(graph, specs).run()
    observable = len(search.chosen) == graph.number_of_nodes() - 1
    if not observable:
        return ObservabilityReport(observable=False, rank=len(search.chosen))
    assignment = tuple((e, specs[search.matching[e]].label) for e in search.chosen)
    return ObservabilityReport(
        observable=True,
        rank=len(search.chosen),
        tree_edges=tuple(search.chosen),
        assignment=assignment,
    )


def validate_witness(report: ObservabilityReport, graph: nx.Graph, sensors: Iterable[SensorSpec]) -> bool:
    """Independent re-check of a positive spanning-tree report."""
    if not report.observable:
        return False
    tree = nx.Graph()
    tree.add_nodes_from(graph.nodes)
    tree.add_edges_from(report.tree_edges)
    if not nx.is_tree(tree) or not all(graph.has_edge(*e) for e in report.tree_edges):
        return False
    allowed = {sensor.label: sensor for sensor in sensors}
    used = [label for _, label in report.assignment]
    if len(set(used)) != len(used) or {e for e, _ in report.assignment} != set(report.tree_edges):
        return False
    for e, label in report.assignment:
        sensor = allowed.get(label)
        if sensor is None or e not in _coverable_edges(sensor, graph):
            return False
    return True


def _line_sensors(case: GridCase, i: int, j: int) -> List[SensorSpec]:
    return [s for s in case.sensors if set(s.buses) == {i, j} or (s.is_injection and s.bus in (i, j))]


def find_cut(case: GridCase, critical: Iterable, max_components: Optional[int] = None) -> Optional[Cut]:
    """A cut of the topology whose line sensors and endpoint injections are exactly the set.

    Every flow sensor of the set must sit on a crossing line and every
    injection at an endpoint of one.
    """
    max_components = settings.MAX_CUT_COMPONENTS if max_components is None else max_components
    members = {case.sensors[r] for r in case.sensor_indices(critical)}
    if not members:
        return None
    graph = topology(case)

    candidates = [
        _edge(*e) for e in graph.edges
        if all(s in members for s in _line_sensors(case, *e))
    ]
    remainder = graph.copy()
    remainder.remove_edges_from(candidates)
    components = [frozenset(c) for c in sorted(nx.connected_components(remainder), key=min)]
    if len(components) < 2:
        return None
    if len(components) > max_components:
        logger.warning(f"Cut search skipped: {len(components)} components exceed {max_components}")
        return None

    flows = [s for s in members if not s.is_injection]
    injections = [s for s in members if s.is_injection]
    for colors in product((0, 1), repeat=len(components) - 1):
        if not any(colors):
            continue
        side = frozenset().union(*(c for c, k in zip(components[1:], colors) if k))
        crossing = sorted(e for e in candidates if (e[0] in side) != (e[1] in side))
        if not crossing:
            continue
        crossing_set = set(crossing)
        endpoints = {b for e in crossing for b in e}
        if all(_edge(*s.buses) in crossing_set for s in flows) and all(s.bus in endpoints for s in injections):
            other = frozenset(graph.nodes) - side
            return Cut(side=side, other=other, crossing=tuple(crossing))
    return None


def check_graph_conditions(case: GridCase, observed: Iterable, critical: Iterable) -> bool:
    """Cut condition on the critical set, plus a covered spanning tree of the
    reduced network for (S_o minus C) with each single member of C put back."""
    observed_rows = list(case.sensor_indices(observed))
    critical_rows = list(case.sensor_indices(critical))
    if not critical_rows:
        return False
    if not set(critical_rows) <= set(observed_rows):
        raise InvalidCaseError("Critical candidate must be a subset of the observed set")

    if find_cut(case, critical_rows) is None:
        logger.debug("Graph condition failed: no matching cut")
        return False
    reduced = reduced_network(case, observed_rows)
    if case.reference not in reduced.graph:
        logger.debug(f"Graph condition failed: reference bus {case.reference} outside reduced network")
        return False
    rest = [r for r in observed_rows if r not in set(critical_rows)]
    for r in critical_rows:
        report = spanning_tree_observable(case, rest + [r], graph=reduced.graph)
        if not report.observable:
            logger.debug(f"Graph condition failed for {case.sensors[r].label}")
            return False
    return True


@dataclass
class FeasibilityReport:
    """Verdicts for a set of adversary/observed/critical sensor sets on one case."""
    case: str
    full: ObservabilityReport
    adversary: Optional[SensorSet] = None
    attack_feasible: Optional[bool] = None
    critical_set: Optional[bool] = None
    observed: Optional[SensorSet] = None
    critical: Optional[SensorSet] = None
    partial_conditions: Optional[bool] = None
    graph_conditions: Optional[bool] = None
    cut: Optional[Cut] = None
    notes: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        verdicts = [v for v in (self.attack_feasible, self.partial_conditions) if v is not None]
        return bool(verdicts) and all(verdicts)


def assess_sets(case: GridCase, adversary: Optional[Iterable] = None, observed: Optional[Iterable] = None,
                critical: Optional[Iterable] = None) -> FeasibilityReport:
    H = dc_jacobian(case)
    full = spanning_tree_observable(case)
    rank = rank_report(H)
    report = FeasibilityReport(case=case.name, full=ObservabilityReport(
        observable=rank.observable, rank=rank.rank, tree_edges=full.tree_edges, assignment=full.assignment,
    ))
    if full.observable != rank.observable:
        report.notes.append("graph and rank verdicts disagree (non-generic line parameters)")

    if adversary is not None:
        report.adversary = SensorSet.from_items(case, adversary, SensorRole.ADVERSARY)
        report.attack_feasible = attack_feasible(H, report.adversary)
        report.critical_set = is_critical_set(H, report.adversary)
    if observed is not None and critical is not None:
        report.observed = SensorSet.from_items(case, observed, SensorRole.OBSERVED)
        report.critical = SensorSet.from_items(case, critical, SensorRole.CRITICAL)
        report.partial_conditions = check_partial_conditions(case, report.observed, report.critical, H)
        report.graph_conditions = check_graph_conditions(case, report.observed, report.critical)
        report.cut = find_cut(case, report.critical)
    elif (observed is None) != (critical is None):
        raise InvalidCaseError("Observed and critical sets must be given together")
    return report


def _yes_no(flag: Optional[bool]) -> str:
    return "yes" if flag else "no"


def format_report(report: Union[ObservabilityReport, FeasibilityReport]) -> str:
    """Text export: verdicts, ranks and the witness."""
    if isinstance(report, ObservabilityReport):
        out = [f"observable={_yes_no(report.observable)}"]
        if report.rank is not None:
            out.append(f"rank={report.rank}")
        for (i, j), label in report.assignment:
            out.append(f"tree_edge={i}-{j} sensor={label}")
        return "\n".join(out) + "\n"

    out = [f"case={report.case or '-'}", f"observable={_yes_no(report.full.observable)}",
           f"rank={report.full.rank}"]
    if report.adversary is not None:
        out.append(f"adversary={','.join(report.adversary.labels)}")
        out.append(f"attack_feasible={_yes_no(report.attack_feasible)}")
        out.append(f"critical_set={_yes_no(report.critical_set)}")
    if report.observed is not None:
        out.append(f"observed={','.join(report.observed.labels)}")
        out.append(f"critical={','.join(report.critical.labels)}")
        out.append(f"partial_conditions={_yes_no(report.partial_conditions)}")
        out.append(f"graph_conditions={_yes_no(report.graph_conditions)}")
        if report.cut is not None:
            out.append("cut=" + ",".join(f"{i}-{j}" for i, j in report.cut.crossing))
    out.extend(f"note={note}" for note in report.notes)
    out.append(f"verdict={'feasible' if report.feasible else 'infeasible'}")
    return "\n".join(out) + "\n"
