"""Single imputation schemes for incomplete cohorts.

Three base methods (attribute mean, last observation carried forward,
zero) and a bias-corrected variant of each that stacks the observation
mask as extra attributes, giving the six complete datasets used by the
imputation-dependent kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cohort import Cohort, MTSample

BC_SUFFIX = "_obs"


class ImputationMethod(str, Enum):
    MEAN = "mean"
    LOCF = "locf"
    ZERO = "zero"


@dataclass
class ImputationSpec:
    """A fitted imputer: method, bias-correction flag and train attribute means."""

    method: ImputationMethod
    bias_correct: bool
    attribute_names: list[str]
    train_attribute_means: np.ndarray

    @property
    def scheme(self) -> str:
        return scheme_name(self.method, self.bias_correct)


def scheme_name(method: ImputationMethod, bias_correct: bool) -> str:
    return method.value + ("+bc" if bias_correct else "")


def parse_scheme(scheme: str) -> tuple[ImputationMethod, bool]:
    """Parse names like ``locf+bc`` into (method, bias_correct)."""
    base, plus, tail = scheme.partition("+")
    if plus and tail != "bc":
        raise ValueError(f"unknown imputation scheme {scheme!r}")
    try:
        return ImputationMethod(base), bool(plus)
    except ValueError:
        raise ValueError(f"unknown imputation scheme {scheme!r}") from None


ALL_SCHEMES = [scheme_name(m, bc) for m in ImputationMethod for bc in (False, True)]


def fit_imputer(
    train: Cohort, method: ImputationMethod, bias_correct: bool = False
) -> ImputationSpec:
    """Fit per-attribute means on the training set's observed cells only.

    The zero method never uses the means, so it tolerates attributes with
    no observations; mean and LOCF raise for them.
    """
    method = ImputationMethod(method)
    V = train.n_attributes
    if len(train) == 0:
        raise ValueError("cannot fit an imputer on an empty cohort")
    X = train.values_array()
    R = train.mask_array()
    counts = R.sum(axis=(0, 2))  # per attribute
    sums = (X * R).sum(axis=(0, 2))
    if method != ImputationMethod.ZERO:
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            names = ", ".join(train.attribute_names[v] for v in empty)
            raise ValueError(f"attribute(s) with zero training observations: {names}")
    means = np.divide(sums, counts, out=np.zeros(V), where=counts > 0)
    return ImputationSpec(method, bool(bias_correct), list(train.attribute_names), means)


def _fill_mean(values: np.ndarray, mask: np.ndarray, means: np.ndarray) -> np.ndarray:
    return np.where(mask > 0, values, means[:, None])


def _fill_locf(values: np.ndarray, mask: np.ndarray, means: np.ndarray) -> np.ndarray:
    V, T = values.shape
    # Index of the most recent observed column, -1 while none seen yet.
    pos = np.where(mask > 0, np.arange(T)[None, :], -1)
    last = np.maximum.accumulate(pos, axis=1)
    rows = np.arange(V)[:, None]
    carried = values[rows, np.maximum(last, 0)]
    return np.where(last >= 0, carried, means[:, None])


def impute(spec: ImputationSpec, cohort: Cohort) -> Cohort:
    """Produce a complete cohort; observed cells are never modified.

    With ``bias_correct`` the output doubles the attribute count by
    appending the original observation mask as a second block of
    time series (1 = observed, 0 = imputed).
    """
    if list(cohort.attribute_names) != spec.attribute_names:
        raise ValueError(
            "cohort attributes do not match the fitted imputer "
            f"({cohort.attribute_names} vs {spec.attribute_names}); "
            "bias-corrected output must not be imputed again"
        )
    out_names = list(spec.attribute_names)
    if spec.bias_correct:
        out_names += [name + BC_SUFFIX for name in spec.attribute_names]

    samples = []
    for s in cohort.samples:
        if spec.method == ImputationMethod.MEAN:
            filled = _fill_mean(s.values, s.mask, spec.train_attribute_means)
        elif spec.method == ImputationMethod.LOCF:
            filled = _fill_locf(s.values, s.mask, spec.train_attribute_means)
        else:
            filled = np.where(s.mask > 0, s.values, 0.0)
        if spec.bias_correct:
            filled = np.vstack([filled, s.mask])
        samples.append(
            MTSample(id=s.id, values=filled, mask=np.ones_like(filled), label=s.label)
        )
    return Cohort(samples, out_names, cohort.window_length)
