import math
import warnings

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_eer

from sigrank.verification import (
    REPORT_SCHEMA,
    SignerEmbeddings,
    TemplateSet,
    TrialScore,
    decide,
    eer,
    eer_from_scores,
    embed_distance,
    evaluate_t1,
    evaluate_t5,
    fold_blocks,
    run_protocol,
    score,
)


def test_distance_examples():
    assert embed_distance([1, 2, 3], [2, 4, 6]) == 0.0
    assert embed_distance([1, 0], [-3, 0]) == pytest.approx(2.0)
    assert embed_distance([1, 0], [0, 5]) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        embed_distance([0, 0], [1, 0])


def test_single_template_score():
    ts = TemplateSet("a", [[1.0, 0.0]])
    assert ts.d_bar == 1.0
    t = score(ts, [0.0, 1.0])
    assert t.s_ave == t.s_min == pytest.approx(math.sqrt(2))


def test_identical_to_a_template():
    e = np.random.default_rng(0).standard_normal((5, 6))
    t = score(TemplateSet("a", e), e[3])
    assert t.s_min == pytest.approx(0.0, abs=1e-7)
    assert t.s_ave > 0


def test_normalization_by_mean_template_distance():
    e = np.array([[1.0, 0.0], [0.0, 1.0]])  # mean pairwise distance sqrt(2)
    ts = TemplateSet("a", e)
    t = score(ts, [1.0, 1.0])
    d = math.sqrt(2 - math.sqrt(2))
    assert t.s_ave == pytest.approx(d / 2 ** 0.25)


def test_coincident_templates_rejected():
    with pytest.raises(ValueError):
        TemplateSet("a", [[1.0, 0.0], [2.0, 0.0]])


def test_decide():
    assert decide(TrialScore(0.0, 0.0, "genuine"), 0.1)
    assert not decide(TrialScore(0.3, 0.2, "genuine"), 0.0)


def test_eer_examples():
    assert eer_from_scores([1, 2], [3, 4]) == 0.0
    assert eer_from_scores([1, 2, 3], [1, 2, 3]) == pytest.approx(50.0)
    assert eer_from_scores([1, 2, 3, 4], [3, 4, 5, 6]) == 25.0
    with pytest.raises(ValueError):
        eer([TrialScore(1, 0.5, "genuine")])


def test_eer_modes():
    trials = [TrialScore(s / 2, s / 2, lab) for s, lab in
              [(1, "genuine"), (2, "forgery"), (3, "genuine"), (4, "forgery"), (1, "genuine"), (0.5, "forgery")]]
    assert eer(trials, "global") == brute_force_eer([1, 3, 1], [2, 4, 0.5])
    users = ["a", "a", "a", "a", "b", "b"]
    assert eer(trials, "user_specific", users) == pytest.approx((brute_force_eer([1, 3], [2, 4]) + 100.0) / 2)


@given(st.lists(st.integers(0, 12), min_size=1, max_size=15), st.lists(st.integers(0, 12), min_size=1, max_size=15))
def test_eer_matches_brute_force(g, f):
    g, f = [v / 4 for v in g], [v / 4 for v in f]
    assert eer_from_scores(g, f) == brute_force_eer(g, f)


@given(st.lists(st.floats(0, 4), min_size=1, max_size=12), st.lists(st.floats(0, 4), min_size=1, max_size=12),
       st.randoms())
def test_eer_permutation_invariant(g, f, r):
    a = eer_from_scores(g, f)
    r.shuffle(g)
    r.shuffle(f)
    assert eer_from_scores(g, f) == a
    assert 0.0 <= a <= 100.0


def _signers(n=4, sep=1.3, seed=0, ng=10, nf=6):
    rng = np.random.default_rng(seed)
    out = {}
    for k in range(n):
        center = rng.standard_normal(16) * 5
        out[f"s{k}"] = SignerEmbeddings(center + rng.standard_normal((ng, 16)),
                                        center + sep * rng.standard_normal((nf, 16)))
    return out


def test_perfectly_separable_zero_eer():
    rng = np.random.default_rng(1)
    signers = {}
    for k in range(3):
        c = np.zeros(8)
        c[k] = 1
        signers[k] = SignerEmbeddings(c + 1e-3 * rng.standard_normal((8, 8)), -c + 1e-3 * rng.standard_normal((4, 8)))
    assert evaluate_t5(signers, trials=5) == {"global": 0.0, "user": 0.0}
    assert evaluate_t1(signers) == {"global": 0.0, "user": 0.0}


def test_t5_deterministic_and_seed_sensitive():
    s = _signers()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = evaluate_t5(s, 20, seed=3), evaluate_t5(s, 20, seed=3)
        c = evaluate_t5(s, 20, seed=4)
    assert a == b and a != c


def test_t5_skips_short_signers():
    s = _signers()
    s["tiny"] = SignerEmbeddings(np.ones((5, 16)), np.ones((2, 16)))
    with pytest.warns(RuntimeWarning, match="tiny"):
        evaluate_t5(s, 3)


def test_fold_blocks_contiguous():
    ids = [f"u{i}" for i in range(40)]
    blocks = fold_blocks(ids, 10)
    assert blocks[0] == ids[:4] and blocks[9] == ids[36:]
    with pytest.raises(ValueError):
        fold_blocks(ids, 41)


class _FakeCorpus:
    def __init__(self, signers):
        self.signers = signers


def test_run_protocol_schema_and_folds():
    rng = np.random.default_rng(2)
    signers = {}
    for k in range(6):
        c = rng.standard_normal(5) * 4
        signers[f"u{k}"] = {"genuine": [c + rng.standard_normal(5) for _ in range(8)],
                            "forgery": [c + 3 * rng.standard_normal(5) for _ in range(4)]}
    seen = []

    def embed_for_fold(train_ids, k):
        seen.append((k, list(train_ids)))
        return lambda sigs: np.array(sigs)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = run_protocol(_FakeCorpus(signers), embed_for_fold, "both", folds=3, trials=4, seed=1, dataset="toy")
        rep2 = run_protocol(_FakeCorpus(signers), embed_for_fold, "both", folds=3, trials=4, seed=1, dataset="toy")
    jsonschema.validate(rep, REPORT_SCHEMA)
    assert rep == rep2
    assert [k for k, _ in seen[:3]] == [0, 1, 2]
    assert seen[0][1] == ["u2", "u3", "u4", "u5"]
    assert rep["mean"]["t5_global"] == pytest.approx(np.mean([f["t5_global"] for f in rep["folds"]]))


def test_report_schema_rejects_missing_mean():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"dataset": "x", "protocol": "t5", "folds": []}, REPORT_SCHEMA)
