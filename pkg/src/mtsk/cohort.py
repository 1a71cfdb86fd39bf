"""Incomplete multivariate time series cohorts.

A cohort is a set of patients, each described by a V x T grid of values
(one row per attribute, one column per day) together with a binary
observation mask.  Missing cells are represented by mask = 0; whatever
value is stored underneath a masked cell must never influence any
computation.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

# Samples with fewer observed cells than this are excluded from cohorts.
MIN_OBSERVED_CELLS = 2

CSV_HEADER = ["patient_id", "label", "day", "attribute", "value"]


class CohortFormatError(ValueError):
    """Raised when a cohort CSV file does not conform to the long format."""


@dataclass
class MTSample:
    """One patient: a V x T value grid, its observation mask and an optional label."""

    id: str
    values: np.ndarray
    mask: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=float)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError(
                f"sample {self.id!r}: values {self.values.shape} and mask "
                f"{self.mask.shape} must be identical V x T grids"
            )
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError(f"sample {self.id!r}: mask entries must be 0 or 1")
        if not np.isfinite(self.values).all():
            raise ValueError(f"sample {self.id!r}: values must be finite")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"sample {self.id!r}: label must be 0, 1 or None")
        self.values.flags.writeable = False
        self.mask.flags.writeable = False

    @property
    def n_attributes(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())


@dataclass
class Cohort:
    """A set of samples sharing attribute names and window length."""

    samples: list[MTSample]
    attribute_names: list[str]
    window_length: int

    def __post_init__(self):
        V = len(self.attribute_names)
        seen = set()
        for s in self.samples:
            if s.values.shape != (V, self.window_length):
                raise ValueError(
                    f"sample {s.id!r} has shape {s.values.shape}, cohort expects "
                    f"({V}, {self.window_length})"
                )
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.n_observed < MIN_OBSERVED_CELLS:
                raise ValueError(
                    f"sample {s.id!r} has {s.n_observed} observed cells, "
                    f"minimum is {MIN_OBSERVED_CELLS}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_names)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def labels(self) -> list[int | None]:
        return [s.label for s in self.samples]

    def values_array(self) -> np.ndarray:
        """All values stacked to (N, V, T)."""
        if not self.samples:
            return np.zeros((0, self.n_attributes, self.window_length))
        return np.stack([s.values for s in self.samples])

    def mask_array(self) -> np.ndarray:
        """All masks stacked to (N, V, T), float 0/1."""
        if not self.samples:
            return np.zeros((0, self.n_attributes, self.window_length))
        return np.stack([s.mask for s in self.samples])

    @property
    def is_complete(self) -> bool:
        return all(s.is_complete for s in self.samples)

    def missing_fraction(self) -> float:
        m = self.mask_array()
        return float(1.0 - m.mean()) if m.size else 0.0


class Missingness(str, Enum):
    MCAR = "mcar"
    MAR = "mar"
    MNAR = "mnar"


@dataclass(frozen=True)
class MissingnessSpec:
    """Which cells to hide: mechanism, marginal rate and seed."""

    mechanism: Missingness
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")


# ---------------------------------------------------------------------------
# File ingestion


def _parse_label(text: str, lineno: int) -> int | None:
    if text in ("NA", ""):
        return None
    if text in ("0", "1"):
        return int(text)
    raise CohortFormatError(f"line {lineno}: label must be 0, 1 or NA, got {text!r}")


def load_cohort(
    path,
    window_length: int | None = None,
    attributes: list[str] | None = None,
) -> Cohort:
    """Read a long-format CSV (one row per observation) into a Cohort.

    Cells without a row are missing.  ``window_length`` defaults to the
    largest day in the file; ``attributes`` restricts/orders the attribute
    set, otherwise it is inferred and sorted.  Patients with fewer than
    two observations are excluded (a warning reports how many).
    """
    rows = []  # (patient_id, label, day, attribute, value, lineno)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return Cohort([], list(attributes or []), window_length or 0)
        if [h.strip() for h in header] != CSV_HEADER:
            raise CohortFormatError(
                f"line 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}"
            )
        for lineno, raw in enumerate(reader, start=2):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != 5:
                raise CohortFormatError(f"line {lineno}: expected 5 fields, got {len(raw)}")
            pid, label_txt, day_txt, attr, val_txt = (f.strip() for f in raw)
            if not pid:
                raise CohortFormatError(f"line {lineno}: empty patient_id")
            label = _parse_label(label_txt, lineno)
            try:
                day = int(day_txt)
            except ValueError:
                raise CohortFormatError(f"line {lineno}: day must be an integer, got {day_txt!r}")
            try:
                value = float(val_txt)
            except ValueError:
                raise CohortFormatError(f"line {lineno}: value must be a number, got {val_txt!r}")
            if not np.isfinite(value):
                raise CohortFormatError(f"line {lineno}: value must be finite, got {val_txt!r}")
            rows.append((pid, label, day, attr, value, lineno))

    if not rows:
        return Cohort([], list(attributes or []), window_length or 0)

    max_day = max(r[2] for r in rows)
    T = window_length if window_length is not None else max_day
    if attributes is not None:
        attr_names = list(attributes)
        known = set(attr_names)
    else:
        attr_names = sorted({r[3] for r in rows})
        known = set(attr_names)
    attr_index = {a: i for i, a in enumerate(attr_names)}

    # Group by patient, preserving first-appearance order.
    order: list[str] = []
    per_patient: dict[str, list] = {}
    labels: dict[str, int | None] = {}
    seen_cells: set[tuple[str, int, str]] = set()
    for pid, label, day, attr, value, lineno in rows:
        if attr not in known:
            raise CohortFormatError(f"line {lineno}: unknown attribute {attr!r}")
        if not 1 <= day <= T:
            raise CohortFormatError(f"line {lineno}: day {day} outside [1, {T}]")
        key = (pid, day, attr)
        if key in seen_cells:
            raise CohortFormatError(
                f"line {lineno}: duplicate observation for ({pid}, day {day}, {attr})"
            )
        seen_cells.add(key)
        if pid not in per_patient:
            per_patient[pid] = []
            order.append(pid)
            labels[pid] = label
        elif labels[pid] != label:
            raise CohortFormatError(f"line {lineno}: inconsistent label for patient {pid!r}")
        per_patient[pid].append((day, attr, value))

    V = len(attr_names)
    samples = []
    n_excluded = 0
    for pid in order:
        values = np.zeros((V, T))
        mask = np.zeros((V, T))
        for day, attr, value in per_patient[pid]:
            v = attr_index[attr]
            values[v, day - 1] = value
            mask[v, day - 1] = 1.0
        if mask.sum() < MIN_OBSERVED_CELLS:
            n_excluded += 1
            continue
        samples.append(MTSample(id=pid, values=values, mask=mask, label=labels[pid]))
    if n_excluded:
        logger.warning(
            "excluded %d patient(s) with fewer than %d observations",
            n_excluded, MIN_OBSERVED_CELLS,
        )
    return Cohort(samples, attr_names, T)


def write_cohort(cohort: Cohort, path) -> None:
    """Write a cohort as a long CSV; masked cells produce no row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in cohort.samples:
            label = "NA" if s.label is None else str(s.label)
            vs, ts = np.nonzero(s.mask)
            for v, t in zip(vs.tolist(), ts.tolist()):
                writer.writerow(
                    [s.id, label, t + 1, cohort.attribute_names[v], repr(float(s.values[v, t]))]
                )


# ---------------------------------------------------------------------------
# Synthetic cohorts

# Plateau amplitude of the case bump, in units of effect_size * attribute std.
_BUMP_SCALE = 0.7
_RAMP_DAYS = 3


def generate_synthetic_cohort(
    n_cases: int,
    n_controls: int,
    n_attributes: int,
    n_days: int,
    effect_size: float,
    seed: int,
    signal_fraction: float = 0.5,
) -> Cohort:
    """Generate a fully observed cohort of controls plus cases carrying a bump.

    Controls are stationary Gaussian noise around attribute-specific
    baselines.  Cases are identical except that a subset of attributes
    (``signal_fraction`` of them) gains an additive response: zero before a
    random onset day in [3, T/2], a 3-day linear ramp, then a plateau whose
    height is ``effect_size`` scaled by the attribute's standard deviation.
    Deterministic for a fixed seed.
    """
    if n_cases < 1 or n_controls < 1 or n_attributes < 1 or n_days < 1:
        raise ValueError("all counts must be positive")
    if effect_size < 0:
        raise ValueError("effect_size must be >= 0")
    rng = np.random.default_rng([7, seed])
    V, T = n_attributes, n_days

    base_mean = rng.uniform(6.0, 14.0, size=V)
    base_std = rng.uniform(0.8, 1.6, size=V)
    n_signal = max(1, int(np.ceil(signal_fraction * V)))
    signal_attrs = np.sort(rng.choice(V, size=n_signal, replace=False))

    onset_lo = min(3, T)
    onset_hi = max(onset_lo, T // 2)

    width = max(2, len(str(V)))
    attr_names = [f"attr{v + 1:0{width}d}" for v in range(V)]
    pad = len(str(max(n_cases, n_controls)))

    samples = []
    for i in range(n_cases):
        values = base_mean[:, None] + base_std[:, None] * rng.standard_normal((V, T))
        onset = int(rng.integers(onset_lo, onset_hi + 1))
        # Ramp factors over days: 0 before onset, 1/3, 2/3 then plateau at 1.
        day = np.arange(1, T + 1)
        ramp = np.clip((day - onset + 1) / _RAMP_DAYS, 0.0, 1.0)
        amp = effect_size * _BUMP_SCALE * base_std[signal_attrs]
        values[signal_attrs, :] += amp[:, None] * ramp[None, :]
        samples.append(
            MTSample(id=f"case{i + 1:0{pad}d}", values=values, mask=np.ones((V, T)), label=1)
        )
    for i in range(n_controls):
        values = base_mean[:, None] + base_std[:, None] * rng.standard_normal((V, T))
        samples.append(
            MTSample(id=f"ctrl{i + 1:0{pad}d}", values=values, mask=np.ones((V, T)), label=0)
        )
    return Cohort(samples, attr_names, T)


# ---------------------------------------------------------------------------
# Missingness mechanisms


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_CALIBRATION_CELLS = 100_000


def _calibrate_intercept(scores: np.ndarray, rate: float, rng) -> float:
    """Bisect the logistic intercept a so that mean(sigmoid(a - s)) == rate.

    Uses at most ~1e5 cells; with more, a seeded subsample estimates the
    marginal rate.
    """
    s = scores.ravel()
    if s.size > _CALIBRATION_CELLS:
        s = rng.choice(s, size=_CALIBRATION_CELLS, replace=False)
    lo, hi = -40.0, 40.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid - s).mean() < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def apply_missingness(cohort: Cohort, spec: MissingnessSpec) -> Cohort:
    """Hide cells of a fully observed cohort per the missingness spec.

    MCAR masks each cell independently.  MAR masks a cell with probability
    logistic in the mean z-score of the *other* attributes on the same day
    (healthier-looking days are measured less).  MNAR uses the cell's own
    z-score, so low values are more likely to go missing.  The MAR/MNAR
    intercept is calibrated so the marginal missing rate matches ``rate``.
    Samples left with fewer than two observed cells are dropped.
    """
    if spec.rate >= 1.0:
        raise ValueError("rate = 1 would produce a degenerate, fully masked cohort")
    if not cohort.is_complete:
        raise ValueError("apply_missingness expects a fully observed cohort")
    if len(cohort) == 0 or spec.rate == 0.0:
        return cohort

    X = cohort.values_array()  # (N, V, T)
    N, V, T = X.shape
    rng = np.random.default_rng([11, spec.seed])

    if spec.mechanism == Missingness.MCAR:
        prob = np.full((N, V, T), spec.rate)
    else:
        mean_v = X.mean(axis=(0, 2))
        std_v = X.std(axis=(0, 2))
        std_v[std_v == 0] = 1.0
        z = (X - mean_v[None, :, None]) / std_v[None, :, None]
        if spec.mechanism == Missingness.MNAR:
            score = z
        else:  # MAR
            if V < 2:
                raise ValueError("MAR requires at least 2 attributes")
            score = (z.sum(axis=1, keepdims=True) - z) / (V - 1)
        a = _calibrate_intercept(score, spec.rate, rng)
        prob = _sigmoid(a - score)

    hide = rng.random((N, V, T)) < prob
    new_samples = []
    n_dropped = 0
    for i, s in enumerate(cohort.samples):
        mask = np.where(hide[i], 0.0, 1.0)
        if mask.sum() < MIN_OBSERVED_CELLS:
            n_dropped += 1
            continue
        new_samples.append(MTSample(id=s.id, values=s.values.copy(), mask=mask, label=s.label))
    if n_dropped:
        logger.warning(
            "dropped %d sample(s) reduced below %d observations by masking",
            n_dropped, MIN_OBSERVED_CELLS,
        )
    return Cohort(new_samples, list(cohort.attribute_names), cohort.window_length)


# ---------------------------------------------------------------------------
# Splitting and windowing


def train_test_split(
    cohort: Cohort,
    train_fraction: float,
    seed: int,
    stratify: bool = False,
) -> tuple[Cohort, Cohort]:
    """Seeded shuffle split into (train, test) with |train| = round(fraction * N).

    Unstratified by default; ``stratify=True`` splits each label group
    proportionally instead.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    N = len(cohort)
    rng = np.random.default_rng([23, seed])
    if stratify:
        if any(lab is None for lab in cohort.labels()):
            raise ValueError("stratified split requires labels on every sample")
        train_idx = []
        test_idx = []
        labels = np.array([s.label for s in cohort.samples])
        for lab in sorted(set(labels.tolist())):
            members = np.flatnonzero(labels == lab)
            perm = members[rng.permutation(members.size)]
            n_tr = int(np.floor(train_fraction * members.size + 0.5))
            train_idx.extend(perm[:n_tr].tolist())
            test_idx.extend(perm[n_tr:].tolist())
    else:
        perm = rng.permutation(N)
        n_tr = int(np.floor(train_fraction * N + 0.5))
        train_idx = perm[:n_tr].tolist()
        test_idx = perm[n_tr:].tolist()
    if not train_idx or not test_idx:
        raise ValueError(f"split of {N} samples at fraction {train_fraction} leaves a side empty")
    names = list(cohort.attribute_names)
    train = Cohort([cohort.samples[i] for i in train_idx], names, cohort.window_length)
    test = Cohort([cohort.samples[i] for i in test_idx], names, cohort.window_length)
    return train, test


def truncate_window(cohort: Cohort, days: int) -> Cohort:
    """Keep only the first ``days`` columns; drop samples left under-observed."""
    if not 1 <= days <= cohort.window_length:
        raise ValueError(f"days must be in [1, {cohort.window_length}], got {days}")
    samples = []
    n_dropped = 0
    for s in cohort.samples:
        mask = s.mask[:, :days].copy()
        if mask.sum() < MIN_OBSERVED_CELLS:
            n_dropped += 1
            continue
        samples.append(
            MTSample(id=s.id, values=s.values[:, :days].copy(), mask=mask, label=s.label)
        )
    if n_dropped:
        logger.warning(
            "truncation to %d day(s) dropped %d sample(s) below %d observations",
            days, n_dropped, MIN_OBSERVED_CELLS,
        )
    return Cohort(samples, list(cohort.attribute_names), days)
