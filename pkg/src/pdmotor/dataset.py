"""Patient-level dataset model: records, folds, subsets, corpus statistics.

Ships the reference 30-patient clinical distribution (per-patient minutes
in each motor state, and per-patient top-confidence window counts) as CSV
fixtures for report-shape tests.
"""

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InsufficientDataError, NoEligibleModelsError
from .preprocess import SensorWindow
from .states import DYS, OFF, ON, UNLABELED


@dataclass
class PatientRecord:
    """A patient's ordered labeled windows plus identity."""

    patient_id: str
    windows: list[SensorWindow] = field(default_factory=list)

    def __post_init__(self):
        self.windows = sorted(self.windows, key=lambda w: w.minute_index)

    @property
    def state_minutes(self) -> dict[int, int]:
        counts = {OFF: 0, ON: 0, DYS: 0}
        for w in self.windows:
            if w.label != UNLABELED:
                counts[w.label] += 1
        return counts

    def labeled_windows(self) -> list[SensorWindow]:
        return [w for w in self.windows if w.label != UNLABELED]


@dataclass
class FoldPlan:
    """One train/test split. kind is 'loso', 'kfold', or 'patient_subset'."""

    kind: str
    train_patients: tuple = ()
    test_patients: tuple = ()
    train_indices: tuple = ()
    test_indices: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if set(self.train_patients) & set(self.test_patients):
            raise ValueError("train and test patients overlap")
        if set(self.train_indices) & set(self.test_indices):
            raise ValueError("train and test indices overlap")


def loso_folds(patients: list[str]) -> list[FoldPlan]:
    """Leave-one-subject-out: one fold per patient."""
    if len(patients) < 2:
        raise InsufficientDataError("leave-one-subject-out needs at least 2 patients")
    return [
        FoldPlan(
            kind="loso",
            train_patients=tuple(p for p in patients if p != test),
            test_patients=(test,),
        )
        for test in patients
    ]


def kfold_windows(n_windows: int, k: int, seed: int = 0) -> list[FoldPlan]:
    """Window-level shuffled partition into k near-equal folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n_windows:
        raise InsufficientDataError(f"k={k} exceeds window count {n_windows}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_windows)
    parts = np.array_split(perm, k)
    folds = []
    for i, test_idx in enumerate(parts):
        test = tuple(int(j) for j in np.sort(test_idx))
        train = tuple(int(j) for j in np.sort(np.concatenate([p for l, p in enumerate(parts) if l != i])))
        folds.append(FoldPlan(kind="kfold", train_indices=train, test_indices=test, seed=seed))
    return folds


def sample_patient_subsets(
    patients: list[str], subset_size: int = 15, count: int = 100, seed: int = 0
) -> list[tuple]:
    """Draw `count` uniform subsets of `subset_size` distinct patients.

    Draws are independent, so the same subset may appear more than once.
    """
    if subset_size > len(patients):
        raise InsufficientDataError(
            f"subset size {subset_size} exceeds patient count {len(patients)}"
        )
    rng = np.random.default_rng(seed)
    pats = np.asarray(patients, dtype=object)
    return [tuple(rng.choice(pats, size=subset_size, replace=False)) for _ in range(count)]


def eligible_models(subsets: list[tuple], test_patient: str) -> list[int]:
    """Indices of subsets that do not contain the test patient."""
    idx = [i for i, s in enumerate(subsets) if test_patient not in s]
    if not idx:
        raise NoEligibleModelsError(
            f"every training subset contains patient {test_patient!r}; fold cannot be evaluated"
        )
    return idx


def class_distribution(records) -> dict[int, int]:
    """Total labeled minutes per state across records.

    Accepts PatientRecords or plain {state: minutes} mappings (as loaded
    from the fixture CSV).
    """
    totals = {OFF: 0, ON: 0, DYS: 0}
    for rec in records:
        counts = rec.state_minutes if isinstance(rec, PatientRecord) else rec
        for state in totals:
            totals[state] += counts.get(state, 0)
    return totals


def consecutive_agreement(record, run_length: int = 3) -> float:
    """Fraction of sliding runs of `run_length` consecutive minutes whose
    labels all agree.

    Accepts a PatientRecord (runs must span consecutive minute indices;
    runs crossing an index gap are skipped) or a plain label sequence.
    """
    if isinstance(record, PatientRecord):
        pairs = [(w.minute_index, w.label) for w in record.windows]
    else:
        pairs = list(enumerate(record))
    if len(pairs) < run_length:
        raise InsufficientDataError(
            f"need at least {run_length} windows, got {len(pairs)}"
        )
    runs = agree = 0
    for i in range(len(pairs) - run_length + 1):
        chunk = pairs[i : i + run_length]
        if chunk[-1][0] - chunk[0][0] != run_length - 1:
            continue  # index gap: not consecutive minutes
        runs += 1
        if all(label == chunk[0][1] for _, label in chunk):
            agree += 1
    if runs == 0:
        raise InsufficientDataError("no gap-free runs of consecutive minutes")
    return agree / runs


# ---------------------------------------------------------------------------
# Clinical reference fixtures (30-patient study distribution).
# ---------------------------------------------------------------------------

def _fixture_path(name: str):
    return resources.files("pdmotor") / "fixtures" / name


def load_state_minutes_fixture() -> list[dict[int, int]]:
    """Per-patient labeled minutes in each state, 30 patients."""
    rows = []
    with (_fixture_path("clinical_state_minutes.csv")).open() as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "patient": row["patient"],
                    OFF: int(row["off_min"]),
                    ON: int(row["on_min"]),
                    DYS: int(row["dys_min"]),
                }
            )
    return rows


def load_confidence_counts_fixture() -> list[dict]:
    """Per-patient evaluated window counts and top-20%-confidence counts."""
    rows = []
    with (_fixture_path("clinical_confidence_counts.csv")).open() as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "patient": row["patient"],
                    "windows": int(row["windows"]),
                    "top_confidence": int(row["top_confidence"]),
                }
            )
    return rows
