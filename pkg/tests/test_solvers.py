import warnings

import numpy as np
import pytest

from deepmf.errors import DimensionError, DomainError, UsageError
from deepmf.metrics import mrsa_matched
from deepmf.objectives import FactorStack, eval_L0, random_stack
from deepmf.projections import ConstraintSpec
from deepmf.solvers import (
    AutoscaleWarning,
    SolverConfig,
    autoscale_kappa,
    autoscale_lambda,
    autoscale_mu,
    degenerate_transform,
    greedy_columns,
    init_greedy,
    mmf_solve,
    single_nmf_solve,
    solve,
    split_budget,
    tri_dmf_solve,
)
from deepmf.synth import SynthConfig, generate_dataset, kappa_tilde_for

UPTICK = 1e-12


def nonincreasing(values, tol=UPTICK):
    return all(b <= a + tol * abs(a) for a, b in zip(values, values[1:]))


@pytest.fixture(scope="module")
def noiseless():
    return generate_dataset(SynthConfig(n=300, epsilon=0.0, seed=4))


# -- initialization ---------------------------------------------------------


def test_greedy_picks_orthogonal_dominant_columns(rng):
    x = 0.01 * rng.random((4, 7))
    x[:, 2] += [10, 0, 0, 0]
    x[:, 5] += [0, 8, 0, 0]
    x[:, 0] += [0, 0, 6, 0]
    assert greedy_columns(x, 3) == [2, 5, 0]


def test_greedy_recovers_separable_basis(rng):
    for _ in range(10):
        w = rng.random((5, 3)) + 0.1
        h = rng.dirichlet(np.ones(3), size=40).T
        perm = rng.permutation(43)
        x = np.hstack([w, w @ h])[:, perm]
        picked = set(greedy_columns(x, 3))
        assert picked == {int(np.where(perm == k)[0][0]) for k in range(3)}


def test_greedy_recovers_more_columns_than_rows():
    # six generators in a 3-dimensional space, each on the hull
    from deepmf.synth import W1_TABLE

    w = np.array(W1_TABLE, dtype=float)
    rng = np.random.default_rng(0)
    x = np.hstack([w, w @ rng.dirichlet(0.5 * np.ones(6), size=200).T])
    assert set(greedy_columns(x, 6)) == set(range(6))


def test_greedy_exhaustion_and_bounds(rng):
    x = rng.random((3, 5))
    assert sorted(greedy_columns(x, 5)) == list(range(5))
    with pytest.raises(DimensionError):
        greedy_columns(x, 6)


def test_init_greedy_h_is_nnls(rng):
    x = rng.random((4, 12))
    w, h = init_greedy(x, 3)
    assert np.all(h >= 0)
    from oracles import nnls_enum

    for j in range(12):
        np.testing.assert_allclose(h[:, j], nnls_enum(w, x[:, j]), atol=1e-6)


# -- parameter rules ----------------------------------------------------------


def test_autoscale_lambda_examples():
    assert autoscale_lambda([10, 2], [10]) == [50.0]
    assert autoscale_lambda([3, 3], [10]) == [10.0]
    assert autoscale_lambda([12, 3, 4], [10, 1]) == [40.0, 3.0]
    with pytest.warns(AutoscaleWarning):
        assert autoscale_lambda([1, 0], [10]) == [10.0]
    assert autoscale_mu(3) == [1.0, 1.0]


def test_autoscale_kappa_examples():
    w = np.array([[np.sqrt(np.exp(4.0) - 0.1)]])
    assert autoscale_kappa([2.0], [w], [0.01], 0.1)[0] == pytest.approx(0.005)
    assert autoscale_kappa([2.0], [w], [0.0], 0.1) == [0.0]
    with pytest.warns(AutoscaleWarning):
        assert autoscale_kappa([2.0], [np.array([[np.sqrt(0.9)]])], [0.01], 0.1) == [0.01]


def test_split_budget():
    assert split_budget(500, 2) == [250, 250]
    assert split_budget(7, 3) == [3, 2, 2]
    assert sum(split_budget(50, 3)) == 50


def test_config_validation():
    with pytest.raises(UsageError):
        SolverConfig(ranks=(0,))
    with pytest.raises(UsageError):
        SolverConfig(ranks=(3, 2), w_constraints=("nonneg",) * 3)
    with pytest.raises(Exception):
        SolverConfig(outer_iters=10, it_in=20)
    cfg = SolverConfig(ranks=(3, 2), w_constraints="simplex")
    assert cfg.w_constraints == (ConstraintSpec.parse("simplex"),) * 2


# -- degenerate solutions -----------------------------------------------------


def test_degenerate_transform_preserves_l0_and_collapses_rank(rng):
    for _ in range(50):
        s = random_stack(rng, 8, 10, (6, 3))
        x = rng.random((8, 10))
        d = degenerate_transform(s)
        assert eval_L0(x, d) == pytest.approx(eval_L0(x, s), rel=1e-10)
        w1 = d.W[1]
        for h in [d.H[1]]:
            w1 = w1 @ h
        np.testing.assert_allclose(w1, d.W[0], atol=1e-15)
        sv = np.linalg.svd(d.W[0], compute_uv=False)
        assert np.all(sv[3:] < 1e-10 * sv[0])


def test_degenerate_transform_edge_cases(rng):
    s = random_stack(rng, 4, 5, (3,))
    d = degenerate_transform(s)
    np.testing.assert_array_equal(d.W[0], s.W[0])
    np.testing.assert_array_equal(d.H[0], s.H[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = FactorStack([rng.random((4, 2)), rng.random((4, 3))], [rng.random((2, 5)), rng.random((3, 2))])
    with pytest.raises(DomainError):
        degenerate_transform(s)


# -- methods -------------------------------------------------------------------


def test_trace_lengths_and_feasibility(noiseless):
    x = noiseless.X
    for method in ("mmf", "lcdmf", "dcdmf", "tridmf"):
        cfg = SolverConfig(method=method, ranks=(6, 3), w_constraints="simplex",
                           h_constraints=("nonneg", "sparse:0.4"), outer_iters=30, it_in=6)
        rep = solve(x, cfg)
        assert rep.layer_centric.shape == (31, 2) and rep.data_centric.shape == (31, 2)
        assert len(rep.l0) == 31
        for c, m in zip(cfg.w_constraints + cfg.h_constraints, rep.stack.W + rep.stack.H):
            assert c.is_feasible(m)
        if method != "mmf":
            assert rep.global_start == 6
            assert len(rep.penalized_total) == 31 - 6


def test_mmf_noiseless_layer1_error(noiseless):
    rep = mmf_solve(noiseless.X, SolverConfig(method="mmf", ranks=(6, 3)))
    assert rep.layer_centric[-1, 0] < 1e-4


def test_mmf_sequential_isolation(noiseless):
    x = noiseless.X
    one = mmf_solve(x, SolverConfig(method="mmf", ranks=(6,), outer_iters=40, it_in=0))
    two = mmf_solve(x, SolverConfig(method="mmf", ranks=(6, 3), outer_iters=80, it_in=0))
    other = mmf_solve(x, SolverConfig(method="mmf", ranks=(6, 2), outer_iters=80, it_in=0))
    for rep in (two, other):
        np.testing.assert_array_equal(rep.stack.W[0], one.stack.W[0])
        np.testing.assert_array_equal(rep.stack.H[0], one.stack.H[0])


def test_single_layer_equivalences(rng):
    x = rng.random((5, 8))
    cfg = SolverConfig(method="mmf", ranks=(2,), outer_iters=60, it_in=0, seed=3)
    a = mmf_solve(x, cfg)
    b = single_nmf_solve(x, 2, cfg)
    np.testing.assert_array_equal(a.stack.W[0], b.stack.W[0])
    np.testing.assert_array_equal(a.stack.H[0], b.stack.H[0])
    assert nonincreasing(b.penalized_total)
    lc = solve(x, SolverConfig(method="lcdmf", ranks=(2,), outer_iters=60, it_in=10, seed=3))
    dc = solve(x, SolverConfig(method="dcdmf", ranks=(2,), outer_iters=60, it_in=10, seed=3))
    np.testing.assert_array_equal(lc.stack.W[0], dc.stack.W[0])
    np.testing.assert_array_equal(lc.stack.H[0], dc.stack.H[0])


def test_single_full_rank_is_exact(rng):
    x = rng.random((5, 4))
    rep = single_nmf_solve(x, 4, SolverConfig(method="single", ranks=(4,), outer_iters=50))
    assert rep.layer_centric[-1, 0] < 1e-6


@pytest.mark.parametrize("method", ["lcdmf", "dcdmf"])
def test_global_loss_nonincreasing_at_every_update(method):
    ds = generate_dataset(SynthConfig(n=300, epsilon=0.01, seed=1))
    cfg = SolverConfig(method=method, ranks=(6, 3), w_constraints="simplex", h_constraints="nonneg",
                       kappa_tilde=kappa_tilde_for(0.01), outer_iters=60, it_in=10, record_updates=True)
    rep = solve(ds.X, cfg)
    assert len(rep.update_losses) == 1 + 50 * 4
    assert nonincreasing(rep.update_losses)
    assert nonincreasing(rep.penalized_total)
    assert rep.penalized_total[0] == rep.update_losses[0]


def test_deterministic_reports(noiseless):
    cfg = SolverConfig(method="tridmf", ranks=(6, 3), outer_iters=20, it_in=4, seed=9)
    a, b = solve(noiseless.X, cfg), solve(noiseless.X, cfg)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(a.stack.W[1], b.stack.W[1])


def test_random_init_uses_seed(noiseless):
    cfg = dict(method="lcdmf", ranks=(6, 3), init_mode="random", outer_iters=5, it_in=2)
    a = solve(noiseless.X, SolverConfig(seed=1, **cfg))
    b = solve(noiseless.X, SolverConfig(seed=1, **cfg))
    c = solve(noiseless.X, SolverConfig(seed=2, **cfg))
    np.testing.assert_array_equal(a.stack.W[0], b.stack.W[0])
    assert not np.array_equal(a.stack.W[0], c.stack.W[0])


def test_tri_dmf_single_layer_is_plain_bcd(rng):
    x = rng.random((5, 8))
    seen = []
    tri_dmf_solve(x, SolverConfig(method="tridmf", ranks=(3,), outer_iters=3, it_in=1),
                  probe=lambda which, i, sub, s: seen.append((which, sub.operands["left"] is s.W[0],
                                                              sub.operands["right"])))
    assert seen[0] == ("H", True, None)
    assert seen[1][0] == "W" and seen[1][2] is not None and seen[1][1] is False


def test_tri_dmf_update_slots_follow_distinct_objectives(rng):
    x = rng.random((6, 10))
    slots = {}

    def probe(which, i, sub, s):
        ops = sub.operands
        assert ops["target"] is x
        H, W = s.H, s.W
        if which == "H":
            a = W[2] if i == 2 else W[i + 1] @ H[i + 1]
            b = None if i == 0 else (H[0] if i == 1 else H[1] @ H[0])
            np.testing.assert_allclose(ops["left"], a, rtol=1e-13)
        else:
            assert ops["left"] is None
            b = H[0] if i == 0 else (H[1] @ H[0] if i == 1 else H[2] @ H[1] @ H[0])
            np.testing.assert_allclose(ops["right"], b, rtol=1e-13)
        if which == "H":
            if b is None:
                assert ops["right"] is None
            else:
                np.testing.assert_allclose(ops["right"], b, rtol=1e-13)
        slots.setdefault((which, i), 0)
        slots[which, i] += 1

    tri_dmf_solve(x, SolverConfig(method="tridmf", ranks=(4, 3, 2), outer_iters=5, it_in=3), probe=probe)
    assert slots == {(w, i): 2 for w in "HW" for i in range(3)}


def test_lcdmf_beats_tridmf_on_noiseless_layer1():
    lc, tri = [], []
    for seed in range(10):
        ds = generate_dataset(SynthConfig(n=1000, epsilon=0.0, seed=seed))
        for method, acc in (("lcdmf", lc), ("tridmf", tri)):
            cfg = SolverConfig(method=method, ranks=(6, 3), w_constraints="simplex", h_constraints="nonneg",
                               kappa_tilde=kappa_tilde_for(0.0), seed=seed, outer_iters=200, it_in=20)
            acc.append(mrsa_matched(ds.W1, solve(ds.X, cfg).stack.W[0])[0])
    print(f"noiseless layer-1 MRSA: lcdmf {np.mean(lc):.4f} tridmf {np.mean(tri):.4f}")
    assert np.mean(lc) < np.mean(tri)
