import itertools
import math

import numpy as np
import pytest

from rpclay import dataset, inverse, mlp
from rpclay.constitutive import MaterialParams
from rpclay.errors import EmptySelectionError, OverflowGridError
from rpclay.inverse import Grid, GridSpec
from rpclay.solver import DEFAULT_CASES, simulate

REFS = (16.0, 25.0, 19.0)


def test_grid_corners_and_published_optimum():
    g = inverse.build_grid(GridSpec())
    assert len(g) == 1_000_000
    assert g.at(0, 0, 0) == (59.5, 0.0725, 0.0625)
    assert g.at(99, 99, 99) == (952.0, 1.16, 1.0)
    B, n, C = g.at(3, 9, 44)
    assert abs(B - 86.545) <= 1e-3 and abs(n - 0.171) <= 1e-3 and abs(C - 0.479) <= 1e-3


def test_grid_reproduces_all_published_triples():
    g = inverse.build_grid(GridSpec())
    for row in dataset.load_fixture("fixture_B1").rows:
        target = (row.params.jc.B, row.params.jc.n, row.params.jc.C)
        got = g.at(*g.nearest(target))
        assert abs(got[0] - target[0]) <= 1e-2
        assert abs(got[1] - target[1]) <= 1e-3
        assert abs(got[2] - target[2]) <= 1e-3


def test_grid_is_affine_and_lexicographic():
    spec = GridSpec(levels=7)
    g = Grid(spec)
    for (i, j, k), p in itertools.islice(iter(g), 0, 343, 17):
        for axis, idx in enumerate((i, j, k)):
            step = (spec.maxs[axis] - spec.mins[axis]) / (spec.levels - 1)
            assert p[axis] == pytest.approx(spec.mins[axis] + idx * step, rel=1e-12)
    flat = [g.ravel(*ijk) for ijk, _ in g]
    assert flat == list(range(len(g)))
    np.testing.assert_array_equal(g.params(np.arange(len(g)))[5], g.at(0, 0, 5))


def test_grid_limits():
    with pytest.raises(OverflowGridError):
        Grid(GridSpec(levels=300))
    with pytest.raises(ValueError):
        GridSpec(mins=(1.0, 1.0, 1.0), maxs=(0.5, 2.0, 2.0))
    with pytest.raises(ValueError):
        GridSpec(levels=1)


def test_objective_examples():
    assert inverse.objective(16, 25, 19) == 0.0
    assert inverse.objective(15, 24, 18) == pytest.approx(1.0)
    assert inverse.objective(16.183, 24.463, 18.636) == pytest.approx(0.3613, abs=1e-4)
    assert inverse.objective(17, 25, 19) == inverse.objective(16, 26, 19) == inverse.objective(16, 25, 20)
    # permuting (prediction, reference) pairs together leaves the score unchanged
    assert inverse.objective(1, 2, 3, (4, 6, 9)) == pytest.approx(inverse.objective(3, 1, 2, (9, 4, 6)))
    np.testing.assert_array_equal(inverse.objective(np.array([16, 15]), 25, 19), [0.0, 1 / 3])


def _analytic_models():
    return [lambda X: 0.02 * X[:, 0] + 10 * X[:, 1] + 8 * X[:, 2],
            lambda X: 0.03 * X[:, 0] + 12 * X[:, 1] + 10 * X[:, 2],
            lambda X: 0.025 * X[:, 0] + 11 * X[:, 1] + 9 * X[:, 2]]


def _brute_force(levels, refs, per_cap, common_cap, k):
    spec = GridSpec(levels=levels)
    axes = [[lo + i * (hi - lo) / (levels - 1) for i in range(levels)]
            for lo, hi in zip(spec.mins, spec.maxs)]
    coef = [(0.02, 10, 8), (0.03, 12, 10), (0.025, 11, 9)]
    rows = []
    for flat, (i, j, kk) in enumerate(itertools.product(range(levels), repeat=3)):
        B, n, C = axes[0][i], axes[1][j], axes[2][kk]
        preds = [a * B + b * n + c * C for a, b, c in coef]
        rel = [abs(p - r) / r for p, r in zip(preds, refs)]
        score = sum(abs(r - p) for p, r in zip(preds, refs)) / 3
        rows.append((flat, preds, rel, score))
    per_case = {c + 1: [f for f, _, rel, _ in sorted(rows, key=lambda r: (r[2][c], r[0]))
                        if rel[c] < per_cap] for c in range(3)}
    common = [r for r in rows if all(e < per_cap for e in r[2]) and sum(r[2]) / 3 < common_cap]
    common.sort(key=lambda r: (r[3], r[0]))
    return per_case, [r[0] for r in common], [(r[0], r[3]) for r in common[:k]]


@pytest.mark.parametrize("levels", [2, 4])
def test_tiny_grid_matches_brute_force(levels):
    refs = (20.0, 29.0, 24.0)
    caps = (0.6, 0.5)
    sw = inverse.sweep(_analytic_models(), Grid(GridSpec(levels=levels)), refs)
    res = inverse.select(sw, *caps, k=5)
    per_case, common, top = _brute_force(levels, refs, *caps, 5)
    assert {c: list(v) for c, v in res.per_case_low_error.items()} == per_case
    assert list(res.common) == common
    g = Grid(GridSpec(levels=levels))
    assert [(g.ravel(*c.idx), c.score) for c in res.top_k] == pytest.approx(top, rel=1e-12)


def test_constant_surrogate_scores_zero():
    models = [lambda X, r=r: np.full(len(X), r) for r in REFS]
    sw = inverse.sweep(models, Grid(GridSpec(levels=5)))
    assert np.all(sw.score == 0)
    res = inverse.select(sw, 0.0, 0.0, k=3)  # exact matches survive zero caps
    assert len(res.common) == 125
    assert [c.idx for c in res.top_k] == [(0, 0, 0), (0, 0, 1), (0, 0, 2)]


def test_chunking_and_threads_do_not_change_results():
    g = Grid(GridSpec(levels=12))
    a = inverse.sweep(_analytic_models(), g, REFS, chunk=1 << 20)
    b = inverse.sweep(_analytic_models(), g, REFS, chunk=37, jobs=4)
    np.testing.assert_array_equal(a.preds, b.preds)
    ra, rb = inverse.select(a, 0.5, 0.5), inverse.select(b, 0.5, 0.5)
    np.testing.assert_array_equal(ra.common, rb.common)


def test_cap_saturation_and_empty_selection():
    g = Grid(GridSpec(levels=6))
    # predictions stay inside (0, 2 * ref), so a 100 % relative cap admits every point
    models = [lambda X, r=r: r * (0.5 + 0.9 * X[:, 1] / 1.16) for r in REFS]
    sw = inverse.sweep(models, g)
    assert len(inverse.select(sw, 1.0, 1.0).common) == len(g)
    with pytest.raises(EmptySelectionError):
        inverse.select(sw, 0.0, 0.0)
    with pytest.raises(ValueError):
        inverse.select(sw, 0.1, 0.1, k=0)


def test_absolute_caps():
    g = Grid(GridSpec(levels=4))
    models = [lambda X, r=r: np.full(len(X), r + 0.5) for r in REFS]
    sw = inverse.sweep(models, g)
    assert len(inverse.select(sw, 0.6, 0.6, absolute=True).common) == 64
    with pytest.raises(EmptySelectionError):
        inverse.select(sw, 0.4, 0.6, absolute=True)


def test_common_is_subset_and_exports():
    sw = inverse.sweep(_analytic_models(), Grid(GridSpec(levels=10)), (20.0, 29.0, 24.0))
    res = inverse.select(sw, 0.3, 0.2)
    for lst in res.per_case_low_error.values():
        assert set(res.common) <= set(lst)
    d = res.to_dict()
    assert d["common_count"] == len(res.common) and len(d["top_k"]) == len(res.top_k)
    assert inverse.candidate_from_dict(d["top_k"][0]) == res.top_k[0]
    lines = res.common_csv().splitlines()
    assert len(lines) == len(res.common) + 1


def test_validation_consistency_row():
    mat = MaterialParams().updated(B=150.0, n=0.45, C=0.3)
    depths = tuple(simulate(c, mat).depth for c in DEFAULT_CASES)
    cand = inverse.Candidate((0, 0, 0), (150.0, 0.45, 0.3), *depths, 0.0)
    res = inverse.InverseResult(depths, {}, np.array([0]), [cand], 0.1, 0.11, GridSpec())
    rep = inverse.validate(res)
    assert rep.optimum.ann_abs_error == (0.0, 0.0, 0.0)
    assert rep.optimum.mean_rel_error == 0.0
    assert rep.default.mean_rel_error > 0
    assert res.validation is rep
    with pytest.raises(EmptySelectionError):
        inverse.validate(inverse.InverseResult(REFS, {}, np.array([]), [], 0.1, 0.11, GridSpec()))


@pytest.mark.slow
def test_default_reference_inversion(surrogates):
    sw = inverse.sweep(surrogates, inverse.build_grid(GridSpec()), REFS)
    assert sw.score.min() <= sw.score.mean()
    res = inverse.select(sw)
    assert len(res.top_k) == 10
    assert all(np.mean(np.abs(np.array(c.preds) - REFS) / REFS) < 0.07 for c in res.top_k)
    rep = inverse.validate(res)
    assert rep.optimum.mean_rel_error < 0.05
    assert rep.default.mean_rel_error > rep.optimum.mean_rel_error


def test_identity_ablation_reproduces_direct_run(factorial_set):
    cfg = mlp.TrainConfig(epochs=300, seed=4)
    spec = GridSpec(levels=25)
    rep = inverse.ablation(factorial_set, (1.0,), repeats=1, seed=4, hidden=(8,),
                           train_cfg=cfg, grid_spec=spec)
    run = rep.runs[0]
    assert run.error is None and run.n_rows == 125
    models = inverse.fit_surrogates(factorial_set, (8,), cfg)
    direct = inverse.validate(inverse.select(inverse.sweep(models, Grid(spec))), include_default=False)
    assert run.optimum_rel_error == direct.optimum.mean_rel_error
    summary = rep.summary()[0]
    assert summary["fraction"] == 1.0 and summary["failed"] == 0
    assert rep.mean_accuracy(1.0) == run.accuracy
    assert "fraction" in rep.to_csv().splitlines()[0]


def test_ablation_records_failures(factorial_set):
    rep = inverse.ablation(factorial_set, (0.02,), repeats=2, hidden=(4,),
                           train_cfg=mlp.TrainConfig(epochs=5), grid_spec=GridSpec(levels=4))
    assert all(r.error for r in rep.runs)  # 2 rows cannot be trained on
    assert math.isnan(rep.summary()[0]["mean_accuracy"])
    with pytest.raises(ValueError):
        inverse.ablation(factorial_set, (1.5,))
