"""Converter from the IEEE test systems bundled with PYPOWER to GridCase.

Only what the real-power model needs is kept: operating magnitudes and angles,
series impedances and branch status. Taps, shunts and line charging are
dropped. Parallel branches are merged into one line carrying the summed
admittance, which reproduces their total flow exactly under the series model.
"""
from collections import OrderedDict
from functools import lru_cache
import importlib
import logging

import numpy as np

from app.core.exceptions import InvalidCaseError
from .case import Bus, GridCase, Line, fully_measured

logger = logging.getLogger(__name__)

# pypower.idx_bus / idx_brch column positions
BUS_I, BUS_TYPE, VM, VA = 0, 1, 7, 8
F_BUS, T_BUS, BR_R, BR_X, BR_STATUS = 0, 1, 2, 3, 10
REF = 3


def _load_ppc(name: str) -> dict:
    try:
        module = importlib.import_module(f"pypower.{name}")
    except ImportError as e:
        logger.error(f"pypower case {name} is unavailable: {str(e)}")
        raise InvalidCaseError(f"pypower case {name!r} is unavailable: {str(e)}")
    return getattr(module, name)()


def convert_ppc(ppc: dict, name: str = "") -> GridCase:
    bus_data = np.asarray(ppc["bus"], dtype=float)
    branch_data = np.asarray(ppc["branch"], dtype=float)

    buses = tuple(
        Bus(int(row[BUS_I]), float(row[VM]), float(np.deg2rad(row[VA]))) for row in bus_data
    )
    references = [int(row[BUS_I]) for row in bus_data if int(row[BUS_TYPE]) == REF]
    if len(references) != 1:
        raise InvalidCaseError(f"Expected one reference bus, found {len(references)}")

    merged = OrderedDict()
    for row in branch_data:
        i, j = int(row[F_BUS]), int(row[T_BUS])
        key = frozenset((i, j))
        in_service = row[BR_STATUS] > 0
        admittance = 1.0 / complex(row[BR_R], row[BR_X])
        if key not in merged:
            merged[key] = [i, j, 0j, False, complex(row[BR_R], row[BR_X])]
        entry = merged[key]
        if in_service:
            entry[2] += admittance
            entry[3] = True

    lines = []
    parallel = len(branch_data) - len(merged)
    for i, j, admittance, connected, first_impedance in merged.values():
        impedance = 1.0 / admittance if connected else first_impedance
        lines.append(Line(i, j, float(impedance.real), float(impedance.imag), connected))
    if parallel:
        logger.info(f"Merged {parallel} parallel branches in {name or 'case'}")

    return GridCase(
        buses=buses,
        lines=tuple(lines),
        reference=references[0],
        sensors=fully_measured(buses, lines),
        name=name,
    )


@lru_cache(maxsize=4)
def from_pypower(name: str) -> GridCase:
    """Fully measured GridCase for a PYPOWER case name such as `case118`."""
    logger.info(f"Converting pypower case {name}")
    return convert_ppc(_load_ppc(name), name=name)
