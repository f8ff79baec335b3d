"""
Network churn between consecutive consensuses.

alpha_new  = |C_t \\ C_t-1| / |C_t|
alpha_left = |C_t-1 \\ C_t| / |C_t-1|

Series are smoothed with a trailing simple moving average and compared
against a fixed threshold. The new-fingerprint counter reproduces the
long-standing "50 unseen fingerprints" alert.
"""
import logging
import math
from datetime import timedelta
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from document_storage import iso
from errors import EmptyConsensus, InvalidWindow
from models import ChurnAlert, ChurnPoint, ChurnSeries, Consensus, FilterSpec, Flag, FingerprintHistory

logger = logging.getLogger(__name__)

NEW = "new"
LEFT = "left"
GAP = "GAP"
HOUR = timedelta(seconds=Config.EXPECTED_SPACING_SECONDS)


def _ratio(numerator: int, divisor: int) -> Optional[float]:
    return numerator / divisor if divisor else None


def churn_pair(prev: Consensus, cur: Consensus, flag: Optional[Flag] = None) -> Tuple[float, float]:
    """(alpha_new, alpha_left) between two consensuses, by fingerprint membership"""
    before, after = prev.fingerprints(flag), cur.fingerprints(flag)
    label = flag.value if flag else "any"
    if not after:
        raise EmptyConsensus(f"no relays with flag {label} at {cur.valid_after.isoformat()}")
    if not before:
        raise EmptyConsensus(f"no relays with flag {label} at {prev.valid_after.isoformat()}")
    return len(after - before) / len(after), len(before - after) / len(before)


def churn_series(consensuses: Sequence[Consensus], flags: Iterable[Optional[Flag]] = (None,),
                 spacing: timedelta = HOUR) -> Dict[Optional[Flag], ChurnSeries]:
    """One ChurnSeries per requested flag (None = flag-agnostic)"""
    flags = list(dict.fromkeys(flags))
    points: Dict[Optional[Flag], List[ChurnPoint]] = {flag: [] for flag in flags}
    gaps: List[Tuple] = []
    previous_sets: Optional[Dict[Optional[Flag], FrozenSet[str]]] = None
    previous: Optional[Consensus] = None

    for current in consensuses:
        current_sets = {flag: current.fingerprints(flag) for flag in flags}
        if previous is not None:
            delta = current.valid_after - previous.valid_after
            if delta <= timedelta(0):
                raise ValueError(f"consensus stream not strictly increasing at {current.valid_after.isoformat()}")
            if delta > spacing:
                gaps.append((previous.valid_after, current.valid_after))
                logger.debug("gap between %s and %s", previous.valid_after, current.valid_after)
            else:
                for flag in flags:
                    before, after = previous_sets[flag], current_sets[flag]
                    points[flag].append(ChurnPoint(
                        timestamp=current.valid_after,
                        alpha_new=_ratio(len(after - before), len(after)),
                        alpha_left=_ratio(len(before - after), len(before)),
                        flag=flag,
                    ))
        previous, previous_sets = current, current_sets

    return {flag: ChurnSeries(flag=flag, points=points[flag], gaps=list(gaps)) for flag in flags}


def smooth(series: Sequence[float], w: int) -> List[float]:
    """Trailing moving average over up to w values; NaN entries are skipped"""
    if w < 1:
        raise InvalidWindow(f"window must be >= 1, got {w}")
    if len(series) == 0:
        return []
    values = pd.Series(series, dtype=float)
    if w == 1:
        return values.tolist()
    smoothed = values.rolling(window=w, min_periods=1).mean()
    if values.notna().any():
        smoothed = smoothed.clip(values.min(), values.max())
    return smoothed.tolist()


def _directions(series: ChurnSeries) -> Tuple[List[float], List[float]]:
    nan = float("nan")
    new = [nan if p.alpha_new is None else p.alpha_new for p in series.points]
    left = [nan if p.alpha_left is None else p.alpha_left for p in series.points]
    return new, left


def _smoothed_pair(series: ChurnSeries, w: int) -> Tuple[np.ndarray, np.ndarray]:
    new, left = _directions(series)
    return np.asarray(smooth(new, w), dtype=float), np.asarray(smooth(left, w), dtype=float)


def alerts(series: ChurnSeries, threshold: float, w: int) -> List[ChurnAlert]:
    """Points whose smoothed alpha_new or alpha_left strictly exceeds the threshold"""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    smoothed_new, smoothed_left = _smoothed_pair(series, w)
    raised = []
    for point, value_new, value_left in zip(series.points, smoothed_new, smoothed_left):
        # NaN comparisons are False, so undefined points never alert
        if value_new > threshold:
            raised.append(ChurnAlert(timestamp=point.timestamp, direction=NEW, value=float(value_new), flag=series.flag))
        if value_left > threshold:
            raised.append(ChurnAlert(timestamp=point.timestamp, direction=LEFT, value=float(value_left), flag=series.flag))
    return raised


def sweep_alerts(series: ChurnSeries, thresholds: Sequence[float], windows: Sequence[int]) -> pd.DataFrame:
    """Alert counts for every (window, threshold) combination"""
    if not thresholds or not windows:
        raise ValueError("sweep needs at least one threshold and one window")
    rows = []
    for w in windows:
        smoothed_new, smoothed_left = _smoothed_pair(series, w)
        for threshold in thresholds:
            count = int(np.sum(smoothed_new > threshold) + np.sum(smoothed_left > threshold))
            rows.append({"window": int(w), "threshold": float(threshold), "count": count})
    return pd.DataFrame(rows, columns=["window", "threshold", "count"])


def new_fingerprint_alert(history: FingerprintHistory, cur: Consensus,
                          threshold: int = Config.NEW_FINGERPRINT_THRESHOLD) -> Tuple[int, bool]:
    """Count never-seen fingerprints in cur and fold them into the history"""
    fresh = cur.fingerprints() - history.seen
    history.seen.update(fresh)
    history.new_counts.append((cur.valid_after, len(fresh)))
    return len(fresh), len(fresh) >= threshold


def median_new_fingerprints(history: FingerprintHistory) -> float:
    if not history.new_counts:
        return 0.0
    return float(np.median([count for _, count in history.new_counts]))


def churn_frame(series_map: Dict[Optional[Flag], ChurnSeries], threshold: float, w: int) -> pd.DataFrame:
    """Per-point CSV rows, with GAP rows placed where the stream skipped hours"""
    rows = []
    for flag, series in series_map.items():
        label = flag.value if flag else ""
        smoothed_new, smoothed_left = _smoothed_pair(series, w)
        keyed = []
        for point, value_new, value_left in zip(series.points, smoothed_new, smoothed_left):
            keyed.append(((point.timestamp, 1), {
                "timestamp": iso(point.timestamp),
                "flag": label,
                "alpha_new": "" if point.alpha_new is None else point.alpha_new,
                "alpha_left": "" if point.alpha_left is None else point.alpha_left,
                "smoothed_new": "" if math.isnan(value_new) else float(value_new),
                "smoothed_left": "" if math.isnan(value_left) else float(value_left),
                "alert": int(value_new > threshold or value_left > threshold),
            }))
        for start, end in series.gaps:
            keyed.append(((end, 0), {
                "timestamp": f"{iso(start)}/{iso(end)}",
                "flag": label,
                "alpha_new": GAP,
                "alpha_left": GAP,
                "smoothed_new": "",
                "smoothed_left": "",
                "alert": 0,
            }))
        rows.extend(row for _, row in sorted(keyed, key=lambda item: item[0]))
    columns = ["timestamp", "flag", "alpha_new", "alpha_left", "smoothed_new", "smoothed_left", "alert"]
    return pd.DataFrame(rows, columns=columns)


def alerts_frame(raised: Iterable[ChurnAlert]) -> pd.DataFrame:
    rows = [{
        "timestamp": iso(alert.timestamp),
        "flag": alert.flag.value if alert.flag else "",
        "direction": alert.direction,
        "value": alert.value,
    } for alert in raised]
    return pd.DataFrame(rows, columns=["timestamp", "flag", "direction", "value"])


def churn_summary(series_map: Dict[Optional[Flag], ChurnSeries]) -> pd.DataFrame:
    """Distribution of joining and leaving values concatenated, per flag"""
    rows = []
    for flag, series in series_map.items():
        new, left = _directions(series)
        values = pd.Series(new + left, dtype=float).dropna()
        if values.empty:
            stats = dict.fromkeys(["min", "q1", "median", "q3", "max"], "")
        else:
            stats = {
                "min": float(values.min()),
                "q1": float(values.quantile(0.25)),
                "median": float(values.median()),
                "q3": float(values.quantile(0.75)),
                "max": float(values.max()),
            }
        rows.append({"flag": flag.value if flag else "", "count": int(values.size), **stats})
    return pd.DataFrame(rows, columns=["flag", "count", "min", "q1", "median", "q3", "max"])


def group_counts(consensuses: Iterable[Consensus], predicate: FilterSpec, daily: bool = False) -> pd.DataFrame:
    """Number of relays matching the predicate per consensus (or first consensus of each day)"""
    rows = []
    last_day = None
    for consensus in consensuses:
        day = consensus.valid_after.date()
        if daily and day == last_day:
            continue
        last_day = day
        count = sum(1 for status in consensus.relays() if predicate.matches(status))
        rows.append({"timestamp": iso(consensus.valid_after), "count": count})
    return pd.DataFrame(rows, columns=["timestamp", "count"])
