"""Representation properties measured over a fixed probe of transitions.

Raw values are computed per representation (pass 1); ``normalize_reports`` applies the
population normalizers once every raw value is known (pass 2).
"""
import logging
from dataclasses import replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from envs.gridworld import NUM_ACTIONS, reset, step
from models.maze import EnvConfig, MazeMap
from models.records import METRIC_NAMES, PropertyReport, ProbeSet
from utils.errors import UsageError

logger = logging.getLogger(__name__)

SLOPE_EPS = 1e-8
DIVERSITY_EPS = 1e-2
SPARSITY_TOL = 1e-10
MIN_SYNC_EVENTS = 10


def collect_probe(maze: MazeMap, cfg: EnvConfig, rng: np.random.Generator, n: int = 1000,
                  seed: int = 0) -> ProbeSet:
    """Random-policy transitions, truncated ones dropped, subsampled to ``n``"""
    stored = []
    while len(stored) < n:
        state = reset(maze, cfg, rng)
        while True:
            action = int(rng.integers(NUM_ACTIONS))
            transition, state = step(state, action)
            if transition.truncated:
                break
            stored.append(transition)
            if transition.terminal:
                break
    keep = np.sort(rng.choice(len(stored), size=n, replace=False))
    chosen = [stored[i] for i in keep]
    probe = ProbeSet(
        obs=np.stack([t.s for t in chosen]),
        actions=np.array([t.a for t in chosen], dtype=np.int64),
        next_obs=np.stack([t.s_next for t in chosen]),
        rewards=np.array([t.r for t in chosen], dtype=np.float64),
        discounts=np.array([t.discount for t in chosen], dtype=np.float64),
        positions=np.array([t.position for t in chosen], dtype=np.int64),
        next_positions=np.array([t.next_position for t in chosen], dtype=np.int64),
        seed=seed,
        pairing=rng.integers(0, n, size=n),
    )
    logger.info(f"Collected {probe!r} from {len(stored)} random-policy transitions")
    return probe


QFunction = Callable[[np.ndarray], np.ndarray]


def embed_probe(probe: ProbeSet, features: QFunction, q_values: Callable[[np.ndarray], np.ndarray]) -> ProbeSet:
    """Cache phi, phi' and max_a Q(phi, a) on the probe, evaluating each distinct image once"""
    unique, inv_s, inv_next = probe.unique_observations()
    phi_unique = np.asarray(features(unique), dtype=np.float64)
    values_unique = np.asarray(q_values(phi_unique), dtype=np.float64).max(axis=1)
    return probe.cache(phi_unique[inv_s], phi_unique[inv_next], values_unique[inv_s])


def complexity_raw(phi: np.ndarray, values: np.ndarray) -> float:
    """Mean over unordered pairs of |V_i - V_j| / (||phi_i - phi_j|| + 1e-8)"""
    if len(phi) < 2:
        raise UsageError("Complexity needs at least two probe samples")
    d_s = pdist(np.asarray(phi, dtype=np.float64).reshape(len(phi), -1), 'euclidean')
    d_v = pdist(np.asarray(values, dtype=np.float64).reshape(-1, 1), 'cityblock')
    return float(np.mean(d_v / (d_s + SLOPE_EPS)))


def complexity_reduction(l_rep: float, l_max: float) -> float:
    if l_max <= 0:
        return 1.0
    return float(np.clip(1.0 - l_rep / l_max, 0.0, 1.0))


def dynamics_awareness(phi: np.ndarray, phi_next: np.ndarray, pairing: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=np.float64)
    to_random = np.linalg.norm(phi - phi[pairing], axis=1).sum()
    if to_random == 0:
        return 0.0
    to_successor = np.linalg.norm(phi - np.asarray(phi_next, dtype=np.float64), axis=1).sum()
    return float((to_random - to_successor) / to_random)


def diversity_from_distances(d_v: np.ndarray, d_s: np.ndarray) -> float:
    """1 - mean over all N^2 ordered pairs of min(d_v / (d_s + 1e-2), 1), distances pre-normalized"""
    ratio = np.minimum(d_v / (d_s + DIVERSITY_EPS), 1.0)
    return float(1.0 - ratio.mean())


def diversity(phi: np.ndarray, values: np.ndarray) -> float:
    d_s = squareform(pdist(np.asarray(phi, dtype=np.float64).reshape(len(phi), -1), 'euclidean'))
    d_v = squareform(pdist(np.asarray(values, dtype=np.float64).reshape(-1, 1), 'cityblock'))
    max_v, max_s = d_v.max(), d_s.max()
    d_v = d_v / max_v if max_v > 0 else np.zeros_like(d_v)
    d_s = d_s / max_s if max_s > 0 else np.zeros_like(d_s)
    return diversity_from_distances(d_v, d_s)


def orthogonality(phi: np.ndarray) -> float:
    """1 - mean |cos| over unordered pairs of non-zero rows"""
    phi = np.asarray(phi, dtype=np.float64)
    nonzero = phi[np.linalg.norm(phi, axis=1) > 0]
    if len(nonzero) < 2:
        logger.warning(f"Orthogonality undefined with {len(nonzero)} non-zero feature rows; reporting 0")
        return 0.0
    cosine = 1.0 - pdist(nonzero, 'cosine')
    return float(1.0 - np.mean(np.abs(cosine)))


def sparsity(phi: np.ndarray) -> float:
    return float(np.mean(np.abs(phi) <= SPARSITY_TOL))


def td_squared_errors(q_sa: np.ndarray, rewards: np.ndarray, discounts: np.ndarray,
                      max_q_next: np.ndarray) -> np.ndarray:
    return np.square(rewards + discounts * max_q_next - q_sa)


def update_interference(err_after: np.ndarray, err_before: np.ndarray) -> float:
    """Mean change in per-sample squared TD error across one update window"""
    return float(np.mean(np.asarray(err_after, dtype=np.float64) - np.asarray(err_before, dtype=np.float64)))


def interference_summary(values: Sequence[float], percentile: float = 0.9) -> Tuple[Optional[float], bool]:
    """(mean of the values at or above their percentile, low_confidence)"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return None, True
    if values.size < MIN_SYNC_EVENTS:
        return float(values.mean()), True
    threshold = np.quantile(values, percentile)
    return float(values[values >= threshold].mean()), False


def non_interference(interference: Optional[float], max_interference: float) -> Optional[float]:
    if interference is None:
        return None
    if max_interference <= 0:
        return 1.0
    return float(np.clip(1.0 - max(interference, 0.0) / max_interference, 0.0, 1.0))


class InterferenceTracker:
    """Update interference on the probe at each target sync

    Keeps the target network's action values on the probe from the previous sync so
    each measurement costs one forward pass of the online network.
    """

    def __init__(self, probe: ProbeSet, q_fn: QFunction):
        self.probe = probe
        self.q_fn = q_fn
        self.unique, self.inv_s, self.inv_next = probe.unique_observations()
        self.rows = np.arange(len(probe))
        self._target_q = self._evaluate()

    def _evaluate(self) -> np.ndarray:
        return np.asarray(self.q_fn(self.unique), dtype=np.float64)

    def measure(self) -> float:
        """Call right before the target copy; the current online values become the new reference"""
        online_q = self._evaluate()
        bootstrap_next = self._target_q[self.inv_next].max(axis=1)
        actions = self.probe.actions
        err_before = td_squared_errors(self._target_q[self.inv_s][self.rows, actions],
                                       self.probe.rewards, self.probe.discounts, bootstrap_next)
        err_after = td_squared_errors(online_q[self.inv_s][self.rows, actions],
                                      self.probe.rewards, self.probe.discounts, bootstrap_next)
        self._target_q = online_q
        return update_interference(err_after, err_before)


def measure_representation(probe: ProbeSet, features: QFunction, q_values: QFunction, representation_id: str,
                           time_step: int, interference_values: Optional[Sequence[float]] = None,
                           percentile: float = 0.9, frozen: bool = False) -> PropertyReport:
    """Raw values of all six properties; interference is empty when no trace is given"""
    embed_probe(probe, features, q_values)
    raw: Dict[str, Optional[float]] = {
        'L_rep': complexity_raw(probe.phi, probe.values),
        'dynamics_awareness': dynamics_awareness(probe.phi, probe.phi_next, probe.pairing),
        'diversity': diversity(probe.phi, probe.values),
        'orthogonality': orthogonality(probe.phi),
        'sparsity': sparsity(probe.phi),
        'interference': None,
    }
    low_confidence = False
    if interference_values:
        raw['interference'], low_confidence = interference_summary(interference_values, percentile)
        if low_confidence:
            logger.warning(
                f"{representation_id}: interference from {len(interference_values)} sync events "
                f"(< {MIN_SYNC_EVENTS}); flagged low-confidence"
            )
    logger.debug(f"Measured {representation_id} at step {time_step}: {raw}")
    return PropertyReport(representation_id=representation_id, time_step=time_step, raw=raw,
                          frozen=frozen, low_confidence=low_confidence)


def normalize_reports(reports: Iterable[PropertyReport]) -> List[PropertyReport]:
    """Second pass: complexity reduction and non-interference against the population maxima"""
    reports = list(reports)
    l_values = [r.raw['L_rep'] for r in reports if r.raw.get('L_rep') is not None]
    interference = [max(r.raw['interference'], 0.0) for r in reports if r.raw.get('interference') is not None]
    l_max = max(l_values, default=0.0)
    max_interference = max(interference, default=0.0)
    if l_max == 0:
        logger.warning("Degenerate population: L_max is 0, every complexity reduction is 1")

    out = []
    for report in reports:
        l_rep = report.raw.get('L_rep')
        normalized = {
            'complexity_reduction': None if l_rep is None else complexity_reduction(l_rep, l_max),
            'non_interference': non_interference(report.raw.get('interference'), max_interference),
        }
        out.append(replace(report, normalized=normalized))
    return out


def report_from_rows(rows: Iterable[Dict[str, str]]) -> List[PropertyReport]:
    """Rebuild raw reports from PROPERTIES_RAW rows"""
    grouped: Dict[Tuple[str, int, bool], PropertyReport] = {}
    for row in rows:
        key = (row['representation_id'], int(row['time_step']), bool(int(row['frozen'])))
        report = grouped.setdefault(key, PropertyReport(representation_id=key[0], time_step=key[1], frozen=key[2]))
        report.raw[row['metric']] = None if row['value'] == '' else float(row['value'])
    for report in grouped.values():
        for name in METRIC_NAMES:
            report.raw.setdefault(name, None)
    return [grouped[key] for key in sorted(grouped)]


# Algebraic identities between sample-wise and feature-wise views of the representation matrix

def gram_identity(phi: np.ndarray, rtol: float = 1e-6) -> Tuple[float, float, bool]:
    """sum_ij (phi_i . phi_j)^2 against sum_kl (psi_k . psi_l)^2 where psi are the columns"""
    phi = np.asarray(phi, dtype=np.float64)
    samples = float(np.sum(np.square(phi @ phi.T)))
    features = float(np.sum(np.square(phi.T @ phi)))
    return samples, features, bool(np.isclose(samples, features, rtol=rtol, atol=0.0))


def linear_update_change(phi_updated: np.ndarray, phi_other: np.ndarray, w: np.ndarray, alpha: float,
                         delta: float) -> float:
    """Change of phi_other . w after the semi-gradient step w += alpha * delta * phi_updated"""
    before = float(phi_other @ w)
    after = float(phi_other @ (w + alpha * delta * phi_updated))
    return after - before


def centered_feature_sums(phi: np.ndarray) -> Tuple[float, float]:
    """(correlation-style sum over centered columns, orthogonality-style sum over raw columns)"""
    phi = np.asarray(phi, dtype=np.float64)
    centered = phi - phi.mean(axis=0)
    return float(np.sum(np.square(centered.T @ centered))), float(np.sum(np.square(phi.T @ phi)))


def feature_identity_check(phi: np.ndarray) -> bool:
    return gram_identity(phi)[2]


def run_identity_checks(phi: np.ndarray, rng: np.random.Generator) -> Dict[str, bool]:
    """The identity checks reported by ``measure --appendix-checks``"""
    phi = np.asarray(phi, dtype=np.float64)
    results = {'gram_identity': feature_identity_check(phi)}

    d = phi.shape[1]
    if d >= 2:
        e1, e2 = np.eye(d)[0], np.eye(d)[1]
        change = linear_update_change(e1, e2, rng.normal(size=d), 0.1, float(rng.normal()))
        results['orthogonal_update_no_interference'] = change == 0.0
    else:
        results['orthogonal_update_no_interference'] = True

    half = np.rint(phi[: len(phi) // 2] * 1024.0)
    symmetric = np.concatenate([half, -half])
    corr, orth = centered_feature_sums(symmetric)
    results['centered_features_match'] = corr == orth
    return results
