"""Linearized swing dynamics producing synthetic post-disturbance angle series.

    M_i theta_i'' + D_i theta_i' = P_i - sum_j B_ij (theta_i - theta_j)

B is the admittance layer; the configured outage zeroes its entries at the
event time. Integration is fixed-step classical Runge-Kutta.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as sla

from .errors import ConfigError, SimulationError
from .grid_model import BASE_MVA, MEASUREMENT_COLUMNS, FrequencySeries, apply_outage
from .layers import admittance_layer
from .spectral_core import laplacian
from .utils import readonly

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 20.0
DEFAULT_EVENT_TIME = 2.0
# the rigid-body mode of an undamped grid is a defective zero eigenvalue; eig resolves it only to ~sqrt(eps)
STABILITY_TOL = 1e-6

# (inertia, damping); wind values are a low-inertia stand-in, not a converter model
GENERATOR_PARAMS = (0.1, 0.05)
WIND_PARAMS = (0.005, 0.02)
LOAD_PARAMS = (0.02, 0.05)


@dataclass(frozen=True, eq=False)
class SwingConfig:
    inertia: np.ndarray
    damping: np.ndarray
    injections: np.ndarray
    dt: float = DEFAULT_DT
    horizon: float = DEFAULT_HORIZON
    event_time: float = DEFAULT_EVENT_TIME
    outages: Tuple[Tuple[str, str], ...] = ()
    initial_angles: Optional[np.ndarray] = None
    initial_velocities: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ('inertia', 'damping', 'injections'):
            object.__setattr__(self, name, readonly(getattr(self, name)))
        for name in ('initial_angles', 'initial_velocities'):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, readonly(getattr(self, name)))
        object.__setattr__(self, 'outages', tuple(tuple(str(x) for x in p) for p in self.outages))

        n = self.inertia.size
        for name in ('damping', 'injections', 'initial_angles', 'initial_velocities'):
            value = getattr(self, name)
            if value is not None and value.shape != (n,):
                raise ConfigError(f"{name} has shape {value.shape}, expected ({n},)")
        if np.any(self.inertia <= 0):
            raise ConfigError("Inertia must be > 0 at every bus")
        if np.any(self.damping < 0):
            raise ConfigError("Damping must be >= 0 at every bus")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.horizon < self.dt:
            raise ConfigError(f"Horizon {self.horizon} s is shorter than one step of {self.dt} s")
        if not 0 <= self.event_time <= self.horizon:
            raise ConfigError(f"Event time {self.event_time} s lies outside the {self.horizon} s horizon")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    @classmethod
    def for_graph(cls, graph, dt=DEFAULT_DT, horizon=DEFAULT_HORIZON, event_time=DEFAULT_EVENT_TIME,
                  outages: Sequence = (), balanced=True, wind_buses=()):
        """Default per-bus parameters with injections taken from the case's branch flows"""
        n = graph.n_buses
        wind = set(graph.wind_buses) | {graph.index_of(b) for b in wind_buses}
        inertia = np.empty(n)
        damping = np.empty(n)
        for i in range(n):
            if i in wind:
                inertia[i], damping[i] = WIND_PARAMS
            elif i in graph.generator_buses:
                inertia[i], damping[i] = GENERATOR_PARAMS
            else:
                inertia[i], damping[i] = LOAD_PARAMS
        return cls(inertia, damping, injections_from_flows(graph, balanced), dt, horizon, event_time, tuple(outages))


def injections_from_flows(graph, balanced=True):
    """Net MW leaving each bus over in-service branches, per unit of BASE_MVA"""
    p = np.zeros(graph.n_buses)
    skipped = []
    for br in graph.in_service_branches():
        if br.p_from_mw is None or br.p_to_mw is None:
            skipped.append(graph.branch_name(br))
            continue
        p[br.from_bus] += br.p_from_mw
        p[br.to_bus] += br.p_to_mw
    if skipped:
        logger.warning("Branches without flows contribute no injection", extra={'branches': skipped})
    p = p / BASE_MVA
    if balanced:
        p = p - p.mean()
    return p


def state_matrix(coupling, inertia, damping):
    """[[0, I], [-M^-1 L, -M^-1 D]] for the state (theta, theta')"""
    n = inertia.size
    inv_m = 1.0 / inertia
    top = np.hstack([np.zeros((n, n)), np.eye(n)])
    bottom = np.hstack([-inv_m[:, None] * coupling, -np.diag(inv_m * damping)])
    return np.vstack([top, bottom])


def rk4_amplification(z):
    return 1.0 + z + z ** 2 / 2.0 + z ** 3 / 6.0 + z ** 4 / 24.0


def check_stability(coupling, inertia, damping, dt):
    """Largest |R(dt * lambda)| over the state matrix spectrum; raise if it exceeds 1"""
    eigenvalues = sla.eigvals(state_matrix(coupling, inertia, damping))
    worst = float(np.max(np.abs(rk4_amplification(dt * eigenvalues))))
    if worst > 1.0 + STABILITY_TOL:
        raise SimulationError(
            f"Step dt={dt} s lies outside the integrator's stability region (amplification {worst:.6g}); "
            f"reduce dt")
    return worst


def simulate(graph, cfg):
    """Integrate the swing model; one FrequencySeries per bus with a sample at every step"""
    n = graph.n_buses
    if cfg.inertia.size != n:
        raise ConfigError(f"Swing parameters cover {cfg.inertia.size} buses, graph has {n}")

    l_pre = laplacian(admittance_layer(graph), normalized=False).matrix
    l_post = laplacian(admittance_layer(apply_outage(graph, cfg.outages)), normalized=False).matrix if cfg.outages else l_pre
    m, d, p = cfg.inertia, cfg.damping, cfg.injections
    for coupling in (l_pre, l_post):
        check_stability(coupling, m, d, cfg.dt)
    if not np.allclose(p.sum(), 0.0) and np.any(d == 0):
        logger.warning("Unbalanced injections on undamped buses; angles will drift")

    theta = np.array(cfg.initial_angles) if cfg.initial_angles is not None else sla.pinvh(l_pre) @ p
    omega = np.array(cfg.initial_velocities) if cfg.initial_velocities is not None else np.zeros(n)

    steps = cfg.n_steps
    event_step = int(round(cfg.event_time / cfg.dt))
    times = cfg.dt * np.arange(steps + 1)
    angles = np.empty((steps + 1, n))
    angles[0] = theta
    h = cfg.dt

    def accel(coupling, th, om):
        return (p - coupling @ th - d * om) / m

    for step in range(steps):
        coupling = l_post if cfg.outages and step >= event_step else l_pre
        k1t, k1w = omega, accel(coupling, theta, omega)
        k2t, k2w = omega + 0.5 * h * k1w, accel(coupling, theta + 0.5 * h * k1t, omega + 0.5 * h * k1w)
        k3t, k3w = omega + 0.5 * h * k2w, accel(coupling, theta + 0.5 * h * k2t, omega + 0.5 * h * k2w)
        k4t, k4w = omega + h * k3w, accel(coupling, theta + h * k3t, omega + h * k3w)
        theta = theta + h / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
        omega = omega + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
            raise SimulationError(f"State became non-finite at t={times[step + 1]:.6g} s")
        angles[step + 1] = theta

    logger.info("Simulation finished", extra={'buses': n, 'steps': steps, 'outages': [list(o) for o in cfg.outages]})
    return {bus: FrequencySeries(bus, times, angles[:, bus]) for bus in range(n)}


def measurement_frame(series, graph, sample_every=1):
    if sample_every < 1:
        raise ConfigError(f"sample_every must be >= 1, got {sample_every}")
    buses = sorted(series)
    times = series[buses[0]].timestamps[::sample_every]
    angles = np.column_stack([series[b].angles[::sample_every] for b in buses])
    return pd.DataFrame({
        'time_s': np.repeat(times, len(buses)),
        'bus': np.tile([graph.labels[b] for b in buses], times.size),
        'angle_rad': angles.ravel(),
    })[MEASUREMENT_COLUMNS]


def write_measurements(series, graph, path, sample_every=1):
    """Write ``time_s,bus,angle_rad`` rows ordered by time then bus"""
    measurement_frame(series, graph, sample_every).to_csv(path, index=False, float_format='%.15g', lineterminator='\n')
