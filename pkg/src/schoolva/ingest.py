"""Read the student and school CSV files and prepare the model responses."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ETHNICITY_DUMMIES,
    STUDENT_COVARIATES,
    Dataset,
    DatasetError,
    SchoolRecord,
    validate_dataset,
)

STUDENT_HEADER = (
    "student_id",
    "school_id",
    "attainment8",
    "total_absences",
    "excluded",
    "ks2_score",
    "prior_absences",
    "prior_excluded",
    "summer_born",
    "female",
    "ethnicity",
    "eal",
    "sen",
    "fsm",
)
SCHOOL_HEADER = ("school_id", "school_type", "admissions", "school_gender", "religious")

ETHNICITIES = ("white",) + ETHNICITY_DUMMIES
SCHOOL_CATEGORIES = {
    "school_type": {
        "community": (),
        "academy": ("academy",),
        "sponsored": ("sponsored",),
        "studio_utc": ("studio_utc",),
    },
    "admissions": {
        "comprehensive": (),
        "grammar": ("grammar",),
        "secondary_modern": ("secondary_modern",),
    },
    "school_gender": {"mixed": (), "boys": ("boys",), "girls": ("girls",)},
    "religious": {"0": (), "1": ("religious",)},
}
BINARY_FIELDS = ("excluded", "prior_excluded", "summer_born", "female", "eal", "sen", "fsm")


class IngestError(ValueError):
    def __init__(self, path, line, field, message):
        self.path, self.line, self.field = path, line, field
        super().__init__(f"{path}:{line}: field {field!r}: {message}")


@dataclass(frozen=True)
class TransformConfig:
    log_offset: float = 1.0
    standardize_prior_attainment: bool = True


def _count(value, path, line, name):
    try:
        x = float(value)
    except ValueError:
        raise IngestError(path, line, name, f"not a number: {value!r}") from None
    if not math.isfinite(x) or x < 0 or x != int(x):
        raise IngestError(path, line, name, f"expected a non-negative integer count, got {value!r}")
    return x


def _real(value, path, line, name):
    try:
        x = float(value)
    except ValueError:
        raise IngestError(path, line, name, f"not a number: {value!r}") from None
    if not math.isfinite(x):
        raise IngestError(path, line, name, f"non-finite value {value!r}")
    return x


def _binary(value, path, line, name):
    if value not in ("0", "1"):
        raise IngestError(path, line, name, f"expected 0 or 1, got {value!r}")
    return int(value)


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestError(path, 1, "header", "empty file") from None
        if tuple(h.strip() for h in first) != header:
            raise IngestError(path, 1, "header", f"expected {','.join(header)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(path, line, "row", f"expected {len(header)} fields, got {len(row)}")
            rec = {h: v.strip() for h, v in zip(header, row)}
            for h, v in rec.items():
                if v == "":
                    raise IngestError(path, line, h, "missing value")
            rows.append((line, rec))
    return rows


def parse_school_rows(rows, path="<schools>") -> dict:
    schools = {}
    for line, rec in rows:
        sid = rec["school_id"]
        if sid in schools:
            raise IngestError(path, line, "school_id", f"duplicate school {sid!r}")
        cov = {}
        for group, levels in SCHOOL_CATEGORIES.items():
            token = rec[group].lower()
            if token not in levels:
                raise IngestError(path, line, group, f"unknown category {rec[group]!r}")
            for dummies in levels.values():
                for d in dummies:
                    cov[d] = 0.0
            for d in levels[token]:
                cov[d] = 1.0
        schools[sid] = SchoolRecord(sid, cov)
    return schools


def parse_student_rows(rows, path="<students>"):
    """Encode student rows; returns column arrays in file order."""
    n = len(rows)
    ids, school_of = [], []
    y1 = np.empty(n)
    y2 = np.empty(n)
    y3 = np.empty(n, dtype=np.int64)
    cov = np.zeros((n, len(STUDENT_COVARIATES)))
    col = {name: k for k, name in enumerate(STUDENT_COVARIATES)}
    for i, (line, rec) in enumerate(rows):
        ids.append(rec["student_id"])
        school_of.append(rec["school_id"])
        y1[i] = _real(rec["attainment8"], path, line, "attainment8")
        y2[i] = _count(rec["total_absences"], path, line, "total_absences")
        y3[i] = _binary(rec["excluded"], path, line, "excluded")
        cov[i, col["prior_attainment"]] = _real(rec["ks2_score"], path, line, "ks2_score")
        cov[i, col["prior_absences"]] = _count(rec["prior_absences"], path, line, "prior_absences")
        for name in ("prior_excluded", "summer_born", "female", "eal", "sen", "fsm"):
            cov[i, col[name]] = _binary(rec[name], path, line, name)
        eth = rec["ethnicity"].lower()
        if eth not in ETHNICITIES:
            raise IngestError(path, line, "ethnicity", f"unknown category {rec['ethnicity']!r}")
        if eth != "white":
            cov[i, col[eth]] = 1.0
    return ids, school_of, y1, y2, y3, cov


def encode(student_rows, school_rows, students_path="<students>", schools_path="<schools>") -> Dataset:
    """Build a validated raw-covariate Dataset from parsed (line, dict) rows."""
    schools = parse_school_rows(school_rows, schools_path)
    ids, school_of, y1, y2, y3, cov = parse_student_rows(student_rows, students_path)
    for (line, rec), sid in zip(student_rows, school_of):
        if sid not in schools:
            raise IngestError(students_path, line, "school_id", f"no such school {sid!r}")
    raw = Dataset(
        student_ids=np.array(ids, dtype=object),
        school_of=np.array(school_of, dtype=object),
        y1=y1,
        y2=y2,
        y3=y3,
        covariates=cov,
        covariate_names=STUDENT_COVARIATES,
        schools=schools,
    )
    return validate_dataset(raw)


def load_join_encode(students_path, schools_path) -> Dataset:
    school_rows = _read_rows(schools_path, SCHOOL_HEADER)
    student_rows = _read_rows(students_path, STUDENT_HEADER)
    return encode(student_rows, school_rows, Path(students_path), Path(schools_path))


def transform_outcomes(data: Dataset, cfg: TransformConfig = TransformConfig()) -> Dataset:
    """Log-transform absences and z-score prior attainment (sample SD)."""
    if data.transformed:
        raise DatasetError("dataset outcomes are already transformed")
    if cfg.log_offset < 0:
        raise DatasetError("log_offset must be >= 0")
    if cfg.log_offset == 0 and np.any(data.y2 == 0):
        raise DatasetError("log_offset = 0 with zero absence counts")
    y2 = np.log(data.y2 + cfg.log_offset)
    cov = data.covariates.copy()
    if cfg.standardize_prior_attainment and "prior_attainment" in data.covariate_names:
        k = data.covariate_names.index("prior_attainment")
        x = cov[:, k]
        sd = x.std(ddof=1) if len(x) > 1 else 0.0
        if not sd > 0:
            raise DatasetError("prior attainment has zero SD")
        cov[:, k] = (x - x.mean()) / sd
    return dataclasses.replace(data, y2=y2, covariates=cov, transformed=True)


def load_dataset(students_path, schools_path, cfg: TransformConfig = TransformConfig()) -> Dataset:
    return transform_outcomes(load_join_encode(students_path, schools_path), cfg)
