"""Grid domain types and ingestion of case files and measurement series"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
import pandas as pd
import scipy.linalg as sla
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import CaseError, MeasurementError
from .utils import load_json, readonly, save_json

logger = logging.getLogger(__name__)

DEFAULT_NOMINAL_FREQUENCY_HZ = 60.0
BASE_MVA = 100.0
DC_MISMATCH_TOL_MW = 1e-6
UNIFORM_STEP_RTOL = 1e-9
MEASUREMENT_COLUMNS = ['time_s', 'bus', 'angle_rad']


class BranchStatus(str, Enum):
    IN_SERVICE = 'in_service'
    OUTAGED = 'outaged'

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).strip().lower().replace('-', '_'))
        except ValueError:
            raise CaseError(f"Invalid branch status: {value!r} (expected in_service or outaged)")


# --- Case file schema ---

class BusRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    label: str
    is_generator: bool = False
    is_wind: bool = False
    p_mw: Optional[float] = None


class BranchRecord(BaseModel):
    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    from_bus: str = Field(alias='from')
    to_bus: str = Field(alias='to')
    r_pu: float = Field(ge=0.0)
    x_pu: float
    p_from_mw: Optional[float] = None
    p_to_mw: Optional[float] = None
    status: str = BranchStatus.IN_SERVICE.value


class CaseFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    nominal_frequency_hz: float = Field(default=DEFAULT_NOMINAL_FREQUENCY_HZ, gt=0.0)
    buses: List[BusRecord] = Field(min_length=1)
    branches: List[BranchRecord] = Field(default_factory=list)


# --- Domain types ---

@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    p_from_mw: Optional[float] = None
    p_to_mw: Optional[float] = None
    status: BranchStatus = BranchStatus.IN_SERVICE

    @property
    def in_service(self):
        return self.status is BranchStatus.IN_SERVICE

    @property
    def pair(self):
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))

    @property
    def impedance(self):
        return math.hypot(self.r_pu, self.x_pu)


@dataclass(frozen=True)
class BusGraph:
    """Immutable grid topology indexed by dense bus index 0..N-1"""

    labels: Tuple[str, ...]
    branches: Tuple[Branch, ...] = ()
    generator_buses: frozenset = frozenset()
    wind_buses: frozenset = frozenset()
    nominal_frequency_hz: float = DEFAULT_NOMINAL_FREQUENCY_HZ
    injections_mw: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'labels', tuple(str(l) for l in self.labels))
        object.__setattr__(self, 'branches', tuple(self.branches))
        object.__setattr__(self, 'generator_buses', frozenset(self.generator_buses))
        object.__setattr__(self, 'wind_buses', frozenset(self.wind_buses))
        n = len(self.labels)
        if n < 1:
            raise CaseError("A grid needs at least one bus")
        if len(set(self.labels)) != n:
            raise CaseError("Duplicate bus label")
        seen = set()
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < n:
                    raise CaseError(f"Branch endpoint {end} outside 0..{n - 1}")
            if br.from_bus == br.to_bus:
                raise CaseError(f"Self-loop at bus {self.labels[br.from_bus]!r}")
            if br.pair in seen:
                raise CaseError(f"More than one branch between {self.labels[br.pair[0]]!r} and {self.labels[br.pair[1]]!r}")
            seen.add(br.pair)
            if br.r_pu < 0:
                raise CaseError(f"Negative resistance on branch {self.branch_name(br)}")
            if br.in_service and br.r_pu == 0 and br.x_pu == 0:
                raise CaseError(f"Zero impedance (R, X) = (0, 0) on branch {self.branch_name(br)}")
        for bus in self.generator_buses | self.wind_buses:
            if not 0 <= bus < n:
                raise CaseError(f"Generator bus index {bus} outside 0..{n - 1}")
        if self.injections_mw is not None:
            object.__setattr__(self, 'injections_mw', tuple(float(p) for p in self.injections_mw))
            if len(self.injections_mw) != n:
                raise CaseError(f"Expected {n} bus injections, got {len(self.injections_mw)}")

    @property
    def n_buses(self):
        return len(self.labels)

    @property
    def omega0(self):
        """Nominal angular frequency in rad/s"""
        return 2.0 * math.pi * self.nominal_frequency_hz

    def index_of(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise CaseError(f"Unknown bus {label!r}")

    def branch_name(self, branch):
        return f"({self.labels[branch.from_bus]},{self.labels[branch.to_bus]})"

    def in_service_branches(self):
        return [br for br in self.branches if br.in_service]

    def find_branch(self, i, j):
        pair = (min(i, j), max(i, j))
        for br in self.branches:
            if br.pair == pair:
                return br
        return None

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(self.n_buses))
        g.add_edges_from(br.pair for br in self.in_service_branches())
        return g

    def component_count(self):
        return nx.number_connected_components(self.to_networkx())

    def to_case_dict(self):
        return {
            'nominal_frequency_hz': self.nominal_frequency_hz,
            'buses': [
                {
                    'label': label,
                    'is_generator': i in self.generator_buses,
                    'is_wind': i in self.wind_buses,
                    'p_mw': self.injections_mw[i] if self.injections_mw is not None else None,
                }
                for i, label in enumerate(self.labels)
            ],
            'branches': [
                {
                    'from': self.labels[br.from_bus],
                    'to': self.labels[br.to_bus],
                    'r_pu': br.r_pu,
                    'x_pu': br.x_pu,
                    'p_from_mw': br.p_from_mw,
                    'p_to_mw': br.p_to_mw,
                    'status': br.status.value,
                }
                for br in self.branches
            ],
        }


@dataclass(frozen=True)
class FrequencySeries:
    """Voltage phase angle samples of one bus on a uniform time grid"""

    bus: int
    timestamps: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        t = readonly(self.timestamps)
        phi = readonly(self.angles)
        object.__setattr__(self, 'timestamps', t)
        object.__setattr__(self, 'angles', phi)
        if t.ndim != 1 or phi.shape != t.shape:
            raise MeasurementError(f"Bus {self.bus}: timestamps and angles must be equal-length vectors")
        if t.size < 2:
            raise MeasurementError(f"Bus {self.bus}: fewer than 2 samples")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise MeasurementError(f"Bus {self.bus}: timestamps not strictly increasing")
        dt = steps[0]
        if np.any(np.abs(steps - dt) > UNIFORM_STEP_RTOL * dt):
            raise MeasurementError(f"Bus {self.bus}: non-uniform timestep")

    @property
    def dt(self):
        return float(self.timestamps[1] - self.timestamps[0])

    def __len__(self):
        return int(self.timestamps.size)


# --- Ingestion ---

def _combine_parallel(group, pair):
    """Merge branches sharing one unordered bus pair into a single equivalent branch"""
    live = [br for br in group if br.in_service]
    if live and len(live) < len(group):
        logger.warning("Dropping outaged branch parallel to in-service branch", extra={'pair': list(pair)})
    if not live:
        # outaged pairs carry no weight
        return group[0]
    members = live
    if len(members) == 1:
        return members[0]

    admittance = sum(1.0 / complex(br.r_pu, br.x_pu) for br in members)
    if admittance == 0:
        raise CaseError(f"Parallel branches between buses {pair[0]} and {pair[1]} cancel to zero admittance")
    z = 1.0 / admittance
    p_from, p_to = 0.0, 0.0
    flows_known = True
    for br in members:
        if br.p_from_mw is None or br.p_to_mw is None:
            flows_known = False
            continue
        # orient flows on the first member's direction
        if br.from_bus == members[0].from_bus:
            p_from += br.p_from_mw
            p_to += br.p_to_mw
        else:
            p_from += br.p_to_mw
            p_to += br.p_from_mw
    first = members[0]
    return Branch(
        from_bus=first.from_bus,
        to_bus=first.to_bus,
        r_pu=z.real if z.real > 0 else 0.0,
        x_pu=z.imag,
        p_from_mw=p_from if flows_known else None,
        p_to_mw=p_to if flows_known else None,
        status=first.status,
    )


def graph_from_case_dict(data):
    """Validate a case dictionary and build the BusGraph"""
    try:
        case = CaseFile.model_validate(data)
    except ValidationError as e:
        raise CaseError(f"Case file schema violation: {e}")

    labels = [b.label for b in case.buses]
    if len(set(labels)) != len(labels):
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        raise CaseError(f"Duplicate bus label: {', '.join(dupes)}")
    index = {label: i for i, label in enumerate(labels)}

    raw = []
    for rec in case.branches:
        for end in (rec.from_bus, rec.to_bus):
            if end not in index:
                raise CaseError(f"Branch references unknown bus {end!r}")
        i, j = index[rec.from_bus], index[rec.to_bus]
        if i == j:
            raise CaseError(f"Self-loop branch at bus {rec.from_bus!r}")
        status = BranchStatus.parse(rec.status)
        if status is BranchStatus.IN_SERVICE and rec.r_pu == 0 and rec.x_pu == 0:
            raise CaseError(f"Zero impedance (R, X) = (0, 0) on branch ({rec.from_bus},{rec.to_bus})")
        raw.append(Branch(i, j, rec.r_pu, rec.x_pu, rec.p_from_mw, rec.p_to_mw, status))

    groups: Dict[Tuple[int, int], List[Branch]] = {}
    for br in raw:
        groups.setdefault(br.pair, []).append(br)
    branches = [_combine_parallel(group, (labels[pair[0]], labels[pair[1]])) for pair, group in groups.items()]
    merged = len(raw) - len(branches)
    if merged:
        logger.info("Merged parallel branches", extra={'merged': merged})

    given = [b.p_mw is not None for b in case.buses]
    if any(given) and not all(given):
        raise CaseError("p_mw must be given for every bus or for none")

    graph = BusGraph(
        labels=tuple(labels),
        branches=tuple(branches),
        generator_buses=frozenset(i for i, b in enumerate(case.buses) if b.is_generator),
        wind_buses=frozenset(i for i, b in enumerate(case.buses) if b.is_wind),
        nominal_frequency_hz=case.nominal_frequency_hz,
        injections_mw=tuple(b.p_mw for b in case.buses) if all(given) else None,
    )
    unknown_flows = [br for br in graph.in_service_branches() if br.p_from_mw is None or br.p_to_mw is None]
    if graph.injections_mw is not None and unknown_flows:
        logger.info("Deriving branch flows from a DC power flow", extra={'branches': len(unknown_flows)})
        graph = dc_power_flow(graph)
    return graph


def dc_power_flow(graph):
    """Lossless DC power flow: theta = pinv(B) P with B weighted by 1/x.

    Every in-service branch gets p_from = (theta_i - theta_j) / x in MW and
    p_to = -p_from. A component whose injections do not sum to zero has the
    mismatch spread evenly over its buses.
    """
    if graph.injections_mw is None:
        raise CaseError("A DC power flow needs p_mw on every bus")
    n = graph.n_buses
    b = np.zeros((n, n))
    for br in graph.in_service_branches():
        if br.x_pu == 0:
            raise CaseError(f"DC power flow needs a nonzero reactance on branch {graph.branch_name(br)}")
        y = 1.0 / br.x_pu
        i, j = br.from_bus, br.to_bus
        b[i, i] += y
        b[j, j] += y
        b[i, j] -= y
        b[j, i] -= y

    p = np.asarray(graph.injections_mw, dtype=float)
    for component in nx.connected_components(graph.to_networkx()):
        mismatch = float(p[sorted(component)].sum())
        if abs(mismatch) > DC_MISMATCH_TOL_MW:
            logger.warning("Unbalanced injections in DC power flow",
                           extra={'buses': sorted(graph.labels[i] for i in component), 'mismatch_mw': mismatch})

    theta = sla.pinvh(b) @ (p / BASE_MVA)
    branches = []
    for br in graph.branches:
        if br.in_service:
            flow = float((theta[br.from_bus] - theta[br.to_bus]) / br.x_pu * BASE_MVA)
            br = dataclasses.replace(br, p_from_mw=flow, p_to_mw=-flow)
        branches.append(br)
    return dataclasses.replace(graph, branches=tuple(branches))


def load_case(path):
    try:
        data = load_json(path)
    except FileNotFoundError:
        raise CaseError(f"Case file does not exist: {path}")
    except ValueError as e:
        raise CaseError(f"Case file is not valid JSON: {path} ({e})")
    graph = graph_from_case_dict(data)
    logger.info("Loaded case", extra={'path': str(path), 'buses': graph.n_buses, 'branches': len(graph.branches)})
    return graph


def save_case(graph, path):
    save_json(str(path), graph.to_case_dict())


def load_measurements(path, graph):
    """Read a ``time_s,bus,angle_rad`` CSV into one FrequencySeries per bus"""
    try:
        frame = pd.read_csv(path, dtype={'bus': str})
    except FileNotFoundError:
        raise MeasurementError(f"Measurement file does not exist: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MeasurementError(f"Cannot parse measurement file {path}: {e}")

    if list(frame.columns) != MEASUREMENT_COLUMNS:
        raise MeasurementError(f"Measurement header must be {','.join(MEASUREMENT_COLUMNS)}, got {','.join(map(str, frame.columns))}")
    if frame[MEASUREMENT_COLUMNS].isna().any().any():
        raise MeasurementError("Measurement file contains empty values")

    unknown = sorted(set(frame['bus']) - set(graph.labels))
    if unknown:
        raise MeasurementError(f"Measurement file references unknown bus: {', '.join(unknown)}")

    series = {}
    reference = None
    for label, rows in frame.groupby('bus', sort=False):
        bus = graph.index_of(label)
        s = FrequencySeries(bus, rows['time_s'].to_numpy(float), rows['angle_rad'].to_numpy(float))
        if reference is None:
            reference = s.timestamps
        elif s.timestamps.shape != reference.shape or not np.allclose(s.timestamps, reference, rtol=0, atol=UNIFORM_STEP_RTOL * s.dt):
            raise MeasurementError(f"Bus {label!r} does not cover the same time window as the other series")
        series[bus] = s

    missing = [graph.labels[i] for i in range(graph.n_buses) if i not in series]
    if missing:
        logger.warning("Buses absent from measurement file", extra={'missing': missing})
    return dict(sorted(series.items()))


def missing_buses(series, graph):
    return [graph.labels[i] for i in range(graph.n_buses) if i not in series]


def window_series(series, start=None, end=None):
    """Keep samples with start <= t <= end for every series"""
    out = {}
    for bus, s in series.items():
        keep = np.ones(len(s), dtype=bool)
        if start is not None:
            keep &= s.timestamps >= start - 1e-12
        if end is not None:
            keep &= s.timestamps <= end + 1e-12
        if keep.sum() < 2:
            raise MeasurementError(f"Window [{start}, {end}] leaves fewer than 2 samples for bus {bus}")
        out[bus] = FrequencySeries(bus, s.timestamps[keep], s.angles[keep])
    return out


def _resolve_pair(graph, pair):
    if len(pair) != 2:
        raise CaseError(f"Outage must name two buses, got {pair!r}")
    a, b = pair
    if str(a) == str(b):
        raise CaseError(f"Outage ({a},{b}) is a self-loop and never a branch")
    return graph.index_of(a), graph.index_of(b)


def apply_outage(graph, lines):
    """Mark the named branches outaged; ``lines`` holds pairs of bus labels"""
    lines = list(lines)
    if not lines:
        return graph
    targets = set()
    for pair in lines:
        i, j = _resolve_pair(graph, pair)
        br = graph.find_branch(i, j)
        if br is None or not br.in_service:
            raise CaseError(f"Outage ({pair[0]},{pair[1]}) does not match any in-service branch")
        targets.add(br.pair)
    branches = tuple(
        dataclasses.replace(br, status=BranchStatus.OUTAGED) if br.pair in targets else br
        for br in graph.branches
    )
    logger.info("Applied outage", extra={'lines': [list(map(str, p)) for p in lines]})
    return dataclasses.replace(graph, branches=branches)


def parse_pair(text):
    """Parse ``"7,5"`` into a label pair"""
    parts = [p.strip() for p in str(text).split(',')]
    if len(parts) != 2 or not all(parts):
        raise CaseError(f"Expected a bus pair like '7,5', got {text!r}")
    return parts[0], parts[1]
