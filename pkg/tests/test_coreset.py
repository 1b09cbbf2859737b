import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from passforge.coreset import (
    Coreset,
    GreedyCoresetSelector,
    RewardMatrix,
    brute_force_select,
    build_reward_matrix,
    greedy_select,
    greedy_select_reference,
    load_coreset,
    load_matrix_csv,
    normalize_rows,
    objective,
    save_coreset,
    save_matrix_csv,
)
from passforge.errors import FormatError, InputError
from passforge.synthenv import GeneratorConfig, generate_program, passes_of_template, rollout

FIXTURE = np.array([
    [1.0, 0.9, 0.1],
    [0.2, 1.0, 0.1],
    [0.1, 0.9, 1.0],
])


def matrix(values, normalized=False):
    values = np.asarray(values, dtype=np.float64)
    return RewardMatrix(
        values,
        tuple(f"p{i}" for i in range(values.shape[0])),
        tuple(range(values.shape[1])),
        normalized=normalized,
    )


# -- objective ----------------------------------------------------------------

def test_objective_empty_set_is_zero():
    assert objective(matrix(FIXTURE, normalized=True), set()) == 0.0


def test_objective_hand_sum():
    assert objective(matrix(FIXTURE, normalized=True), {1}) == pytest.approx(2.8, abs=1e-12)


def test_objective_all_columns_on_normalized_is_n():
    rng = np.random.default_rng(0)
    raw = matrix(rng.uniform(0.5, 2.0, size=(6, 4)))
    R = normalize_rows(raw)
    assert objective(R, set(range(4))) == pytest.approx(6.0, abs=1e-12)


# -- normalization ------------------------------------------------------------

def test_normalize_rows_examples():
    R = normalize_rows(matrix([[2.0, 1.0], [1.0, 1.0]]))
    assert np.array_equal(R.values, [[1.0, 0.5], [1.0, 1.0]])
    assert R.normalized


def test_normalize_rows_property():
    rng = np.random.default_rng(1)
    R = normalize_rows(matrix(rng.uniform(0.2, 3.0, size=(3, 3))))
    assert np.all(R.values.max(axis=1) == 1.0)


def test_matrix_validation():
    with pytest.raises(InputError):
        matrix([[1.0, -0.5]])
    with pytest.raises(InputError):
        matrix([[0.5, 0.7]], normalized=True)


# -- greedy -------------------------------------------------------------------

def test_greedy_k1_matches_brute_force_singleton():
    R = matrix(FIXTURE, normalized=True)
    out = greedy_select(R, 1)
    assert out.selected == (1,)
    assert out.objective_trace[0] == pytest.approx(2.8, abs=1e-12)


def test_greedy_k2_tie_breaks_to_lowest_index():
    R = matrix(FIXTURE, normalized=True)
    out = greedy_select(R, 2)
    assert out.selected == (1, 0)
    assert out.objective_trace[-1] == pytest.approx(2.9, abs=1e-12)


def test_greedy_single_column():
    R = matrix([[1.0], [1.0]], normalized=True)
    assert greedy_select(R, 1).selected == (0,)


def test_greedy_stops_when_no_gain():
    # column 1 duplicates column 0: second pick adds nothing
    R = matrix([[1.0, 1.0], [1.0, 1.0]], normalized=True)
    out = greedy_select(R, 2)
    assert out.selected == (0,)


def test_greedy_matches_naive_reference():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n, m = rng.integers(1, 9), rng.integers(1, 11)
        R = normalize_rows(matrix(rng.uniform(0.1, 2.0, size=(n, m))))
        k = int(rng.integers(1, m + 1))
        fast = greedy_select(R, k)
        ref = greedy_select_reference(R, k)
        assert fast.selected == ref.selected
        assert fast.objective_trace == pytest.approx(ref.objective_trace, abs=1e-9)


def test_greedy_trace_nondecreasing_and_bounded():
    rng = np.random.default_rng(9)
    R = normalize_rows(matrix(rng.uniform(0.1, 1.5, size=(8, 10))))
    out = greedy_select(R, 10)
    trace = out.objective_trace
    assert all(a <= b + 1e-12 for a, b in zip(trace, trace[1:]))
    assert trace[-1] <= 8.0 + 1e-9


# -- brute force --------------------------------------------------------------

def test_brute_force_fixture():
    R = matrix(FIXTURE, normalized=True)
    s, j = brute_force_select(R, 2)
    assert j == pytest.approx(2.9, abs=1e-12)
    assert s == (0, 1)  # lexicographically smallest among ties


def test_brute_force_k_equals_m():
    rng = np.random.default_rng(3)
    R = normalize_rows(matrix(rng.uniform(0.1, 2.0, size=(5, 4))))
    _, j = brute_force_select(R, 4)
    assert j == pytest.approx(5.0, abs=1e-12)


def test_brute_force_guard():
    R = matrix(np.full((2, 60), 0.5))
    with pytest.raises(InputError):
        brute_force_select(R, 20)


def test_greedy_nemhauser_bound_spot_check():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n, m, k = int(rng.integers(2, 8)), int(rng.integers(3, 10)), int(rng.integers(1, 4))
        k = min(k, m)
        R = normalize_rows(matrix(rng.uniform(0.1, 2.0, size=(n, m))))
        _, j_opt = brute_force_select(R, k)
        j_greedy = greedy_select(R, k).objective_trace[-1]
        assert j_greedy + 1e-12 >= (1 - 1 / math.e) * j_opt


# -- matrix construction ------------------------------------------------------

def test_build_matrix_noop_column_is_ones():
    programs = [generate_program(s, GeneratorConfig("small", "A")) for s in (0, 1)]
    noops = tuple(passes_of_template("noop")[:2])
    R = build_reward_matrix(programs, [noops])
    assert np.array_equal(R.values, np.ones((2, 1)))


def test_build_matrix_known_ratio():
    from test_candidates import dead_load_program
    from test_passes import covers, find_pass

    p = dead_load_program()  # 3 -> 2 under a load-covering dce
    dce = find_pass("dce", covers("load"))
    R = build_reward_matrix([p], [(dce,)])
    assert R.values[0, 0] == pytest.approx(3 / 2, abs=0)


def test_build_matrix_matches_serial_recompute():
    programs = [generate_program(s, GeneratorConfig("small", "B")) for s in range(3)]
    seqs = [(10,), (10, 53), (68, 0), (99, 3, 7)]
    R = build_reward_matrix(programs, seqs)
    for i, p in enumerate(programs):
        for j, seq in enumerate(seqs):
            expected = p.instruction_count / rollout(p, seq).best_size
            assert R.values[i, j] == expected


# -- estimator API ------------------------------------------------------------

def test_selector_fit_transform():
    rng = np.random.default_rng(5)
    X = rng.uniform(0.5, 2.0, size=(10, 8))
    sel = GreedyCoresetSelector(k=3)
    Xt = sel.fit_transform(X)
    assert Xt.shape == (10, len(sel.selected_))
    assert len(sel.selected_) <= 3
    assert sel.objective_trace_ == sorted(sel.objective_trace_)


def test_selector_matches_functional_greedy():
    rng = np.random.default_rng(6)
    X = rng.uniform(0.5, 2.0, size=(12, 9))
    sel = GreedyCoresetSelector(k=4).fit(X)
    R = normalize_rows(matrix(X))
    assert tuple(sel.selected_) == greedy_select(R, 4).selected


def test_selector_sklearn_protocol():
    sel = GreedyCoresetSelector(k=7, normalize=False)
    assert sel.get_params() == {"k": 7, "normalize": False}
    cloned = clone(sel)
    assert cloned.get_params() == sel.get_params()
    with pytest.raises(NotFittedError):
        sel.transform(np.ones((2, 2)))


# -- files --------------------------------------------------------------------

def test_matrix_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    R = matrix(rng.uniform(0.5, 2.0, size=(4, 3)))
    path = tmp_path / "R.csv"
    save_matrix_csv(R, path)
    loaded = load_matrix_csv(path)
    assert np.array_equal(loaded.values, R.values)
    assert loaded.row_ids == R.row_ids


def test_matrix_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope,seq_0\np0,1.0\n")
    with pytest.raises(FormatError):
        load_matrix_csv(path)


def test_coreset_json_roundtrip(tmp_path):
    c = Coreset((2, 0), ((5, 1), (3,)), (1.5, 2.5))
    path = tmp_path / "coreset.json"
    save_coreset(c, path)
    assert load_coreset(path) == c
