"""Domain types, dataset validation and per-equation design matrices.

A dataset is stored column-wise: students are sorted by school ordinal and
then by student id, so each school occupies one contiguous slice of every
array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

RESPONSES = ("attainment", "log_absences", "exclusions")

PRIOR_COVARIATES = ("prior_attainment", "prior_absences", "prior_excluded")
BACKGROUND_COVARIATES = (
    "summer_born",
    "female",
    "black",
    "asian",
    "mixed",
    "other",
    "eal",
    "sen",
    "fsm",
)
STUDENT_COVARIATES = PRIOR_COVARIATES + BACKGROUND_COVARIATES
SCHOOL_COVARIATES = (
    "academy",
    "sponsored",
    "studio_utc",
    "grammar",
    "secondary_modern",
    "boys",
    "girls",
    "religious",
)
# one-hot groups; an all-zero row is the reference category
SCHOOL_DUMMY_GROUPS = {
    "school_type": ("academy", "sponsored", "studio_utc"),
    "admissions": ("grammar", "secondary_modern"),
    "school_gender": ("boys", "girls"),
    "religious": ("religious",),
}
ETHNICITY_DUMMIES = ("black", "asian", "mixed", "other")

PRESETS = {
    "null": (),
    "va": PRIOR_COVARIATES,
    "cva": STUDENT_COVARIATES,
    "cva_school": STUDENT_COVARIATES + SCHOOL_COVARIATES,
}


class DatasetError(ValueError):
    pass


class DesignError(ValueError):
    pass


def id_sort_key(ids: Iterable[str]):
    """Sort key for identifiers: numeric order when every id is an integer."""
    ids = list(ids)
    try:
        for i in ids:
            int(i)
    except ValueError:
        return lambda s: (0, s)
    return lambda s: (int(s), s)


@dataclass(frozen=True)
class SchoolRecord:
    school_id: str
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        for group, names in SCHOOL_DUMMY_GROUPS.items():
            vals = [self.covariates.get(n, 0.0) for n in names]
            if any(v not in (0.0, 1.0) for v in vals) or sum(vals) > 1:
                raise DatasetError(
                    f"school {self.school_id}: dummies for {group} are not one-hot"
                )


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    school_id: str
    y1: float
    y2: float
    y3: int
    covariates: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Students and schools in column form.

    ``y2`` holds the raw absence count until ``transformed`` is set, after
    which it is the log-transformed response.
    """

    student_ids: np.ndarray
    school_of: np.ndarray  # school_id per student
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    covariates: np.ndarray  # N x K student-level covariates
    covariate_names: tuple
    schools: dict  # school_id -> SchoolRecord
    transformed: bool = False
    # filled in by validate_dataset
    school_ids: tuple = ()
    school_index: np.ndarray | None = None
    n_j: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.student_ids)

    @property
    def J(self) -> int:
        return len(self.school_ids)

    @property
    def validated(self) -> bool:
        return self.school_index is not None

    @property
    def school_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_j)[:-1]]).astype(np.int64)

    @property
    def students(self) -> list[StudentRecord]:
        return list(self.records())

    def records(self):
        for i in range(self.N):
            yield StudentRecord(
                student_id=str(self.student_ids[i]),
                school_id=str(self.school_of[i]),
                y1=float(self.y1[i]),
                y2=float(self.y2[i]),
                y3=int(self.y3[i]),
                covariates=dict(zip(self.covariate_names, self.covariates[i].tolist())),
            )

    def covariate(self, name: str) -> np.ndarray:
        return self.covariates[:, self.covariate_names.index(name)]

    @classmethod
    def from_records(
        cls,
        students: Sequence[StudentRecord],
        schools: Iterable[SchoolRecord],
        covariate_names: Sequence[str] | None = None,
    ) -> "Dataset":
        if covariate_names is None:
            covariate_names = tuple(students[0].covariates) if students else ()
        covariate_names = tuple(covariate_names)
        cov = np.empty((len(students), len(covariate_names)))
        for i, s in enumerate(students):
            if tuple(s.covariates) != covariate_names:
                raise DatasetError(
                    f"student {s.student_id}: covariate ordering differs from the dataset"
                )
            cov[i] = [s.covariates[n] for n in covariate_names]
        return cls(
            student_ids=np.array([s.student_id for s in students], dtype=object),
            school_of=np.array([s.school_id for s in students], dtype=object),
            y1=np.array([s.y1 for s in students], dtype=float),
            y2=np.array([s.y2 for s in students], dtype=float),
            y3=np.array([s.y3 for s in students], dtype=np.int64),
            covariates=cov,
            covariate_names=covariate_names,
            schools={sc.school_id: sc for sc in schools},
        )


def validate_dataset(raw: Dataset) -> Dataset:
    """Check the dataset invariants, sort students and index schools.

    Schools that no student attends are dropped from the index.
    """
    N = len(raw.student_ids)
    ids = [str(s) for s in raw.student_ids]
    if len(set(ids)) != N:
        seen = set()
        dup = next(s for s in ids if s in seen or seen.add(s))
        raise DatasetError(f"duplicate student id {dup!r}")
    missing = sorted({str(s) for s in raw.school_of} - set(raw.schools))
    if missing:
        raise DatasetError(f"student references unknown school {missing[0]!r}")
    used = sorted({str(s) for s in raw.school_of}, key=id_sort_key(raw.schools))
    if len(used) < 2:
        raise DatasetError(f"J < 2 (found {len(used)} schools with students)")
    for name, y in (("y1", raw.y1), ("y2", raw.y2)):
        if not np.all(np.isfinite(y)):
            raise DatasetError(f"non-finite outcome {name}")
    if not np.all(np.isin(raw.y3, (0, 1))):
        raise DatasetError("y3 must be 0 or 1")
    if raw.covariates.shape != (N, len(raw.covariate_names)):
        raise DatasetError("covariate matrix has the wrong shape")
    if not np.all(np.isfinite(raw.covariates)):
        raise DatasetError("missing or non-finite covariate value")

    ordinal = {sid: j for j, sid in enumerate(used)}
    school_index = np.array([ordinal[str(s)] for s in raw.school_of], dtype=np.int64)
    skey = id_sort_key(ids)
    order = sorted(range(N), key=lambda i: (school_index[i], skey(ids[i])))
    order = np.array(order, dtype=np.int64)
    n_j = np.bincount(school_index, minlength=len(used)).astype(np.int64)
    return Dataset(
        student_ids=np.array(ids, dtype=object)[order],
        school_of=np.array([str(s) for s in raw.school_of], dtype=object)[order],
        y1=np.asarray(raw.y1, dtype=float)[order],
        y2=np.asarray(raw.y2, dtype=float)[order],
        y3=np.asarray(raw.y3, dtype=np.int64)[order],
        covariates=np.asarray(raw.covariates, dtype=float)[order],
        covariate_names=tuple(raw.covariate_names),
        schools={sid: raw.schools[sid] for sid in used},
        transformed=raw.transformed,
        school_ids=tuple(used),
        school_index=school_index[order],
        n_j=n_j,
    )


@dataclass(frozen=True)
class ModelSpec:
    preset: str
    covariates: tuple  # three per-equation tuples of covariate names

    @classmethod
    def from_preset(cls, preset: str) -> "ModelSpec":
        if preset not in PRESETS:
            raise DesignError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        names = tuple(PRESETS[preset])
        return cls(preset=preset, covariates=(names, names, names))

    @classmethod
    def custom(cls, eq1: Sequence[str], eq2: Sequence[str], eq3: Sequence[str]) -> "ModelSpec":
        return cls(preset="custom", covariates=(tuple(eq1), tuple(eq2), tuple(eq3)))


@dataclass(frozen=True, eq=False)
class DesignBlocks:
    X: tuple  # three N x p_r arrays
    names: tuple  # three column-name tuples, "intercept" first

    @property
    def p(self) -> tuple:
        return tuple(x.shape[1] for x in self.X)


def covariate_column(data: Dataset, name: str) -> np.ndarray:
    """Student-level column, or a school-level covariate broadcast to students."""
    if name in data.covariate_names:
        return data.covariate(name)
    if name in SCHOOL_COVARIATES:
        per_school = np.array(
            [float(data.schools[sid].covariates.get(name, 0.0)) for sid in data.school_ids]
        )
        return per_school[data.school_index]
    raise DesignError(f"unknown covariate {name!r}")


def build_design(data: Dataset, spec: ModelSpec) -> DesignBlocks:
    if not data.validated:
        raise DesignError("dataset must be validated before building a design")
    cache: dict[str, np.ndarray] = {}
    X, names = [], []
    for eq in spec.covariates:
        if len(set(eq)) != len(eq):
            raise DesignError(f"duplicate covariate in {eq}")
        cols = [np.ones(data.N)]
        for name in eq:
            if name not in cache:
                cache[name] = covariate_column(data, name)
            col = cache[name]
            if np.ptp(col) == 0.0:
                raise DesignError(f"covariate {name!r} is constant in this sample")
            cols.append(col)
        X.append(np.column_stack(cols))
        names.append(("intercept",) + tuple(eq))
    return DesignBlocks(X=tuple(X), names=tuple(names))
