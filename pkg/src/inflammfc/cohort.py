"""Named virtual patients, random cohorts and their JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .patient import PatientParameters, PatientState, load_reference_rates, reference_parameters

# Parameter variability ranges (low, high).
PARAMETER_RANGES = {
    "k_pg": (0.3, 0.6),
    "k_cn": (0.03, 0.05),
    "k_nd": (0.015, 0.025),
    "k_np": (0.075, 0.125),
    "k_cnd": (36.0, 60.0),
    "k_nn": (0.0075, 0.0125),
}
INITIAL_RANGES = {
    "P0": (0.0, 1.0),
    "Ca0": (0.0938, 0.1563),
}

_NAMED = {
    "patient1": dict(
        initial=PatientState(P=0.47360, N=0.0660, D=0.0477, Ca=0.1635),
        rates=dict(k_pg=0.47846, k_cn=0.0409, k_nd=0.0242, k_np=0.1211, k_cnd=49.1243, k_nn=0.012),
    ),
    "patient2": dict(
        initial=PatientState(P=1.0017, N=0.0711, D=0.0732, Ca=0.1314),
        rates=dict(k_pg=0.4746, k_cn=0.0386, k_nd=0.0223, k_np=0.1116, k_cnd=46.3367, k_nn=0.0112),
    ),
}
NAMED_IDS = ("patient1", "patient2", "reference", "healthy-eq")


def named_patient(name):
    """Return a named patient.

    ``"patient1"`` and ``"patient2"`` are the two treated case patients;
    ``"reference"`` generates the reference trajectories and ``"healthy-eq"``
    sits at the healthy equilibrium.
    """
    key = name.lower().replace("_", "-")
    if key in _NAMED:
        spec = _NAMED[key]
        return PatientParameters(**{**load_reference_rates(), **spec["rates"]},
                                 initial_state=spec["initial"], label=key)
    if key == "reference":
        from .reference import reference_patient
        return reference_patient()
    if key == "healthy-eq":
        return reference_parameters(PatientState(0.0, 0.0, 0.0, 0.125), label="healthy-eq")
    raise KeyError(f"unknown patient {name!r}; expected one of {', '.join(NAMED_IDS)}")


@dataclass(frozen=True)
class CohortSpec:
    count: int = 100
    seed: int = 0
    ranges: dict = field(default_factory=lambda: dict(PARAMETER_RANGES))
    initial_ranges: dict = field(default_factory=lambda: dict(INITIAL_RANGES))

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError("count must be >= 1")
        unknown = sorted(set(self.ranges) - set(PARAMETER_RANGES))
        if unknown:
            raise KeyError(f"unknown range key {unknown[0]!r}")
        unknown = sorted(set(self.initial_ranges) - set(INITIAL_RANGES))
        if unknown:
            raise KeyError(f"unknown range key {unknown[0]!r}")
        for name, (lo, hi) in {**self.ranges, **self.initial_ranges}.items():
            if not lo <= hi:
                raise ValueError(f"range {name!r} is empty: [{lo}, {hi}]")
            if lo < 0:
                raise ValueError(f"range {name!r} has a negative bound")

    def to_dict(self):
        return {
            "count": int(self.count),
            "seed": int(self.seed),
            "ranges": {k: list(v) for k, v in self.ranges.items()},
            "initial_ranges": {k: list(v) for k, v in self.initial_ranges.items()},
            "sampler": "numpy.random.default_rng(seed).uniform, draws per patient in the order "
                       + ", ".join([*PARAMETER_RANGES, *INITIAL_RANGES]),
        }

    @classmethod
    def from_dict(cls, data):
        ranges = {k: tuple(map(float, v)) for k, v in data.get("ranges", PARAMETER_RANGES).items()}
        initial = {k: tuple(map(float, v))
                   for k, v in data.get("initial_ranges", INITIAL_RANGES).items()}
        return cls(count=int(data.get("count", 100)), seed=int(data.get("seed", 0)),
                   ranges=ranges, initial_ranges=initial)


def sample_cohort(spec):
    """Draw ``spec.count`` patients, each varied quantity uniform on its range.

    Quantities without a range in ``spec`` keep their reference values.
    ``N(0)`` and ``D(0)`` are zero. The draw order is fixed (see
    :data:`PARAMETER_RANGES` then :data:`INITIAL_RANGES`), one patient at a
    time, so a seed identifies the cohort.
    """
    rng = np.random.default_rng(int(spec.seed))
    base = load_reference_rates()
    ranges = {**PARAMETER_RANGES, **spec.ranges}
    initial_ranges = {**INITIAL_RANGES, **spec.initial_ranges}
    patients = []
    width = max(4, len(str(spec.count - 1)))
    for i in range(int(spec.count)):
        rates = dict(base)
        for name in PARAMETER_RANGES:
            rates[name] = float(rng.uniform(*ranges[name]))
        P0 = float(rng.uniform(*initial_ranges["P0"]))
        Ca0 = float(rng.uniform(*initial_ranges["Ca0"]))
        patients.append(PatientParameters(**rates, initial_state=PatientState(P0, 0.0, 0.0, Ca0),
                                          label=f"cohort-{i:0{width}d}"))
    return patients


def in_ranges(params, ranges=None):
    ranges = ranges or PARAMETER_RANGES
    return all(lo <= getattr(params, name) <= hi for name, (lo, hi) in ranges.items())


def save_patient(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)


def load_patient(path):
    with open(path) as fh:
        return PatientParameters.from_dict(json.load(fh))


def save_cohort(patients, path, spec=None):
    data = {"spec": spec.to_dict() if spec is not None else None,
            "seed": int(spec.seed) if spec is not None else None,
            "patients": [p.to_dict() for p in patients]}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def load_cohort(path):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, list):
        entries = data
    else:
        if "patients" not in data:
            raise KeyError("cohort file is missing key 'patients'")
        entries = data["patients"]
    return [PatientParameters.from_dict(entry) for entry in entries]
