"""Partition quality: volume, boundary, conductance, k-way expansion and Cheeger bounds"""
import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from .errors import QualityError
from .spectral_core import eigendecompose, laplacian

logger = logging.getLogger(__name__)

BRUTEFORCE_MAX_BUSES = 12
DEFAULT_DELTA = 0.25
CHEEGER_TOL = 1e-9
_BATCH = 4096
_TAIL_WIDTH = 7
REPORT_WIDTH = 100


class ConductanceMode(str, Enum):
    PAPER_LITERAL = 'paper_literal'
    STANDARD = 'standard'


@dataclass(frozen=True)
class IslandQuality:
    members: Tuple[int, ...]
    volume: float
    boundary: float
    conductance: float


@dataclass(frozen=True)
class PartitionQuality:
    layer: str
    mode: ConductanceMode
    islands: Tuple[IslandQuality, ...]
    eigenvalue_k: Optional[float] = None
    delta: float = DEFAULT_DELTA

    @property
    def worst_conductance(self):
        return max(q.conductance for q in self.islands)

    @property
    def cheeger_lower(self):
        if self.eigenvalue_k is None:
            return None
        return self.eigenvalue_k / 2.0

    @property
    def cheeger_upper_indep(self):
        if self.eigenvalue_k is None:
            return None
        return math.sqrt(max(self.eigenvalue_k, 0.0) / self.delta ** 3)


@dataclass(frozen=True)
class CheegerReport:
    k: int
    eigenvalue: float
    rho: float
    lower_bound: float
    holds: bool
    sqrt_eigenvalue: float
    upper_indep: float
    delta: float = field(default=DEFAULT_DELTA)


def _members(layer, island):
    n = layer.n_buses
    members = sorted({int(i) for i in island})
    if not members:
        raise QualityError("Island is empty")
    if members[0] < 0 or members[-1] >= n:
        raise QualityError(f"Island references bus outside 0..{n - 1}")
    mask = np.zeros(n, dtype=bool)
    mask[members] = True
    return tuple(members), mask


def _phi(boundary, denominator):
    if boundary == 0:
        return 0.0
    if denominator == 0:
        return math.inf
    return float(boundary / denominator)


def island_quality(layer, island, mode=ConductanceMode.PAPER_LITERAL):
    """(volume, boundary, conductance) of one island on one layer.

    paper_literal: vol counts ordered intra-island pairs, Phi = b / vol.
    standard: vol is the degree sum, Phi = b / min(vol(A), vol(rest)).
    """
    mode = ConductanceMode(mode)
    members, mask = _members(layer, island)
    w = layer.matrix
    boundary = float(w[mask][:, ~mask].sum())
    if mode is ConductanceMode.PAPER_LITERAL:
        volume = float(w[mask][:, mask].sum())
        phi = _phi(boundary, volume)
    else:
        degrees = layer.degrees
        volume = float(degrees[mask].sum())
        rest = float(degrees[~mask].sum())
        phi = _phi(boundary, min(volume, rest))
    return IslandQuality(members, volume, boundary, phi)


def conductance(layer, island, mode=ConductanceMode.PAPER_LITERAL):
    return island_quality(layer, island, mode).conductance


def _extend(rows, top, width, k, tail):
    """Append ``width`` label columns to every row, dropping rows that cannot reach k labels with ``tail`` more"""
    for c in range(width):
        reps = np.minimum(top + 1, k)
        idx = np.repeat(np.arange(rows.shape[0]), reps)
        labels = np.arange(idx.size) - np.repeat(np.cumsum(reps) - reps, reps)
        rows = np.hstack([rows[idx], labels[:, None]])
        top = np.maximum(top[idx], labels + 1)
        keep = top + (width - c - 1) + tail >= k
        rows, top = rows[keep], top[keep]
    return rows, top


def _growth_strings(n, k, batch=_BATCH):
    """Yield the restricted growth strings of length n with exactly k labels, at most ``batch`` rows at a time"""
    if n < 1 or not 1 <= k <= n:
        return
    width = min(n - 1, _TAIL_WIDTH)
    head = n - width
    start = (np.zeros((1, 1), dtype=np.intp), np.ones(1, dtype=np.intp))
    prefixes, used = _extend(*start, head - 1, k, width)
    tails = {}
    for prefix, u in zip(prefixes, used.tolist()):
        if u not in tails:
            suffix, top = _extend(np.zeros((1, 0), dtype=np.intp), np.full(1, u, dtype=np.intp), width, k, 0)
            tails[u] = suffix[top == k]
        suffix = tails[u]
        for lo in range(0, suffix.shape[0], batch):
            chunk = suffix[lo:lo + batch]
            yield np.hstack([np.broadcast_to(prefix, (chunk.shape[0], head)), chunk])


def k_way_expansion_bruteforce(layer, k, mode=ConductanceMode.STANDARD):
    """rho(k): exact min over k-way partitions of the worst island conductance"""
    mode = ConductanceMode(mode)
    n = layer.n_buses
    if n > BRUTEFORCE_MAX_BUSES:
        raise QualityError(f"Brute-force k-way expansion limited to {BRUTEFORCE_MAX_BUSES} buses, got {n}")
    if not 1 <= k <= n:
        raise QualityError(f"k={k} outside 1..{n}")
    if k == 1:
        return 0.0

    w = np.asarray(layer.matrix, dtype=float)
    total = w.sum()
    eye = np.eye(k)
    best = math.inf
    count = 0
    for strings in _growth_strings(n, k):
        h = eye[strings]
        blocks = np.swapaxes(h, 1, 2) @ (w @ h)
        intra = np.einsum('ckk->ck', blocks)
        vol_std = blocks.sum(axis=2)
        boundary = vol_std - intra
        if mode is ConductanceMode.STANDARD:
            denom = np.minimum(vol_std, total - vol_std)
        else:
            denom = intra
        with np.errstate(divide='ignore', invalid='ignore'):
            phi = np.where(boundary <= 0, 0.0, np.where(denom > 0, boundary / np.where(denom > 0, denom, 1.0), np.inf))
        best = min(best, float(phi.max(axis=1).min()))
        count += strings.shape[0]
        if best == 0.0:
            break
    logger.debug("k-way expansion enumerated", extra={'n': n, 'k': k, 'partitions': count})
    return best


def cheeger_check(spectrum, layer, k, delta=DEFAULT_DELTA):
    """Verify lambda_k / 2 <= rho(k); report sqrt(lambda_k) and sqrt(lambda_k / delta^3)"""
    if not 0 < delta < 1.0 / 3.0:
        raise QualityError(f"delta must lie in (0, 1/3), got {delta}")
    if not 1 <= k <= spectrum.eigenvalues.size:
        raise QualityError(f"k={k} outside 1..{spectrum.eigenvalues.size}")
    rho = k_way_expansion_bruteforce(layer, k, ConductanceMode.STANDARD)
    lam = float(spectrum.eigenvalues[k - 1])
    lam_pos = max(lam, 0.0)
    return CheegerReport(
        k=k,
        eigenvalue=lam,
        rho=rho,
        lower_bound=lam / 2.0,
        holds=lam / 2.0 <= rho + CHEEGER_TOL,
        sqrt_eigenvalue=math.sqrt(lam_pos),
        upper_indep=math.sqrt(lam_pos / delta ** 3),
        delta=delta,
    )


def score_plan(plan, layers, mode=ConductanceMode.PAPER_LITERAL, delta=DEFAULT_DELTA):
    """Per-layer island conductance table for a plan"""
    mode = ConductanceMode(mode)
    results = []
    for layer in layers:
        if layer.n_buses != len(plan.assignment):
            raise QualityError(f"Plan covers {len(plan.assignment)} buses, layer {layer.kind.value} has {layer.n_buses}")
        spectrum = eigendecompose(laplacian(layer, normalized=True))
        islands = tuple(island_quality(layer, island, mode) for island in plan.islands)
        results.append(PartitionQuality(
            layer=layer.kind.value,
            mode=mode,
            islands=islands,
            eigenvalue_k=float(spectrum.eigenvalues[plan.k - 1]),
            delta=delta,
        ))
    return results


def _fmt(value):
    if value is None:
        return '-'
    if math.isinf(value):
        return 'inf'
    return f"{value:.6g}"


def render_quality_report(qualities, plan):
    """Aligned plain-text report, identical across runs"""
    buffer = io.StringIO()
    console = Console(file=buffer, width=REPORT_WIDTH, color_system=None, force_terminal=False,
                      no_color=True, highlight=False, emoji=False)
    labels = plan.labels
    console.print(f"Islands: {plan.k}    Lines to open: {len(plan.lines_to_open)}")
    for quality in qualities:
        table = Table(title=f"{quality.layer} ({quality.mode.value})", box=box.ASCII, title_justify='left')
        table.add_column('island', justify='right')
        table.add_column('buses')
        table.add_column('volume', justify='right')
        table.add_column('boundary', justify='right')
        table.add_column('conductance', justify='right')
        for idx, q in enumerate(quality.islands):
            table.add_row(str(idx), ' '.join(labels[i] for i in q.members),
                          _fmt(q.volume), _fmt(q.boundary), _fmt(q.conductance))
        console.print(table)
        console.print(f"worst conductance: {_fmt(quality.worst_conductance)}")
        console.print(f"lambda_k / 2: {_fmt(quality.cheeger_lower)}    "
                      f"sqrt(lambda_k / delta^3): {_fmt(quality.cheeger_upper_indep)} (delta={quality.delta:g})")
        console.print()
    return buffer.getvalue()


def qualities_to_dict(qualities, labels):
    return [
        {
            'layer': q.layer,
            'mode': q.mode.value,
            'worst_conductance': q.worst_conductance,
            'cheeger_lower': q.cheeger_lower,
            'cheeger_upper_indep': q.cheeger_upper_indep,
            'delta': q.delta,
            'islands': [
                {
                    'buses': [labels[i] for i in iq.members],
                    'volume': iq.volume,
                    'boundary': iq.boundary,
                    'conductance': iq.conductance,
                }
                for iq in q.islands
            ],
        }
        for q in qualities
    ]
