import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schoolva.core import (
    SCHOOL_COVARIATES,
    Dataset,
    DatasetError,
    DesignError,
    ModelSpec,
    SchoolRecord,
    StudentRecord,
    build_design,
    validate_dataset,
)


def _student(sid, school, y1=1.0, y2=2.0, y3=0, cov=None):
    return StudentRecord(sid, school, y1, y2, y3, cov if cov is not None else {"x": 0.5})


def _schools(*ids):
    return [SchoolRecord(i, {}) for i in ids]


def test_empty_dataset_rejected():
    raw = Dataset.from_records([], _schools("a", "b"), covariate_names=("x",))
    with pytest.raises(DatasetError, match="J < 2"):
        validate_dataset(raw)


def test_minimal_two_schools():
    raw = Dataset.from_records([_student("1", "a"), _student("2", "b", y3=1)], _schools("a", "b"))
    data = validate_dataset(raw)
    assert (data.J, data.N) == (2, 2)
    assert data.n_j.tolist() == [1, 1]


def test_rejects_duplicates_dangling_and_nonfinite():
    with pytest.raises(DatasetError, match="duplicate student"):
        validate_dataset(Dataset.from_records([_student("1", "a"), _student("1", "b")], _schools("a", "b")))
    with pytest.raises(DatasetError, match="unknown school"):
        validate_dataset(Dataset.from_records([_student("1", "a"), _student("2", "z")], _schools("a", "b")))
    with pytest.raises(DatasetError, match="non-finite"):
        validate_dataset(Dataset.from_records([_student("1", "a", y1=np.nan), _student("2", "b")], _schools("a", "b")))
    with pytest.raises(DatasetError, match="missing or non-finite covariate"):
        validate_dataset(Dataset.from_records([_student("1", "a", cov={"x": np.nan}), _student("2", "b")],
                                              _schools("a", "b")))


def test_covariate_ordering_must_match():
    with pytest.raises(DatasetError, match="ordering"):
        Dataset.from_records([_student("1", "a", cov={"x": 1, "z": 2}), _student("2", "b", cov={"z": 2, "x": 1})],
                             _schools("a", "b"))


def test_school_dummies_one_hot():
    with pytest.raises(DatasetError, match="one-hot"):
        SchoolRecord("a", {"academy": 1.0, "sponsored": 1.0})


def test_sorting_and_school_ordinals():
    students = [_student("10", "s2"), _student("9", "s1"), _student("2", "s2"), _student("1", "s1")]
    data = validate_dataset(Dataset.from_records(students, _schools("s2", "s1", "s3")))
    assert data.school_ids == ("s1", "s2")  # ascending, empty school dropped
    assert data.student_ids.tolist() == ["1", "9", "2", "10"]  # numeric id order within school
    assert data.school_index.tolist() == [0, 0, 1, 1]


def test_large_synthetic_dataset_counts():
    rng = np.random.default_rng(0)
    sizes = np.array([19, 404] + [150] * 298)
    sizes[2:22] -= 1
    rng.shuffle(sizes)
    school_of = np.repeat([f"{j:03d}" for j in range(300)], sizes)
    N = len(school_of)
    raw = Dataset(
        student_ids=np.array([str(i) for i in range(N)], dtype=object),
        school_of=school_of.astype(object),
        y1=rng.normal(size=N),
        y2=rng.normal(size=N),
        y3=rng.integers(0, 2, size=N),
        covariates=np.zeros((N, 0)),
        covariate_names=(),
        schools={f"{j:03d}": SchoolRecord(f"{j:03d}") for j in range(300)},
    )
    data = validate_dataset(raw)
    assert data.J == 300 and data.N == 45_103 == data.n_j.sum()
    assert data.n_j.min() == 19 and data.n_j.max() == 404


def test_preset_column_counts(covariate_data):
    p = {preset: build_design(covariate_data, ModelSpec.from_preset(preset)).p
         for preset in ("null", "va", "cva", "cva_school")}
    assert p["null"] == (1, 1, 1)
    assert p["va"] == (4, 4, 4)
    assert p["cva"] == (13, 13, 13)
    assert p["cva_school"] == (21, 21, 21)


def test_design_properties(covariate_data):
    spec = ModelSpec.from_preset("cva_school")
    d1, d2 = build_design(covariate_data, spec), build_design(covariate_data, spec)
    for a, b in zip(d1.X, d2.X):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(d1.X[0], d1.X[1])
    np.testing.assert_array_equal(d1.X[0], d1.X[2])
    assert all(n[0] == "intercept" for n in d1.names)
    assert np.all(d1.X[0][:, 0] == 1.0)
    starts = covariate_data.school_starts
    for k, name in enumerate(d1.names[0]):
        if name in SCHOOL_COVARIATES:
            col = d1.X[0][:, k]
            for s, n in zip(starts, covariate_data.n_j):
                assert np.ptp(col[s : s + n]) == 0


def test_design_errors(covariate_data):
    with pytest.raises(DesignError, match="unknown covariate"):
        build_design(covariate_data, ModelSpec.custom(["nope"], [], []))
    with pytest.raises(DesignError, match="unknown preset"):
        ModelSpec.from_preset("model5")
    students = [_student("1", "a", cov={"x": 1.0}), _student("2", "b", cov={"x": 1.0})]
    data = validate_dataset(Dataset.from_records(students, _schools("a", "b")))
    with pytest.raises(DesignError, match="constant"):
        build_design(data, ModelSpec.custom(["x"], [], []))
    with pytest.raises(DesignError, match="constant"):
        build_design(data, ModelSpec.custom([], ["grammar"], []))


def test_custom_spec_equations_may_differ(covariate_data):
    d = build_design(covariate_data, ModelSpec.custom(["prior_attainment"], [], ["female", "fsm"]))
    assert d.p == (2, 1, 3)
    assert d.names[2] == ("intercept", "female", "fsm")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.floats(-5, 5)), min_size=2, max_size=30))
def test_validate_invariants_hold(rows):
    students = [_student(str(i), f"s{school}", y1=y) for i, (school, y) in enumerate(rows)]
    raw = Dataset.from_records(students, _schools(*(f"s{k}" for k in range(5))))
    if len({s for s, _ in rows}) < 2:
        with pytest.raises(DatasetError):
            validate_dataset(raw)
        return
    data = validate_dataset(raw)
    assert data.n_j.sum() == data.N == len(rows)
    assert np.all(data.n_j >= 1)
    # contiguous school slices
    assert np.all(np.diff(data.school_index) >= 0)
