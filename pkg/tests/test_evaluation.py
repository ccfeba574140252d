from __future__ import annotations

from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_model
from oracles import pair_count_auc
from advnids.attacks import FgsmConfig, JsmaConfig, PgdConfig
from advnids.data import Dataset
from advnids.defence import DefendedModel, HcConfig
from advnids.errors import DataError
from advnids.evaluation import (
    ClassReport,
    ConfusionMatrix,
    EvalReport,
    attack_labels,
    auc,
    classification_report,
    confusion,
    evaluate_pipeline,
    generate_adversarial_sets,
    make_report,
    pct,
    render_table,
    roc_curve,
)
from advnids.net import predict

REFERENCE_COUNTS = ConfusionMatrix(tp=47545, tn=41986, fp=1207, fn=122)

labelled_scores = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


class TestConfusion:
    def test_perfect(self):
        assert confusion([1, 0], [1, 0]) == ConfusionMatrix(tp=1, tn=1, fp=0, fn=0)

    def test_hand_count(self):
        assert confusion([0, 0, 1], [1, 0, 0]) == ConfusionMatrix(tp=0, tn=1, fp=1, fn=1)

    def test_as_array_layout(self):
        np.testing.assert_array_equal(REFERENCE_COUNTS.as_array(), [[41986, 1207], [122, 47545]])

    @pytest.mark.parametrize("t,p", [([0, 1], [0]), ([0, 2], [0, 1]), ([[0, 1]], [[0, 1]])])
    def test_errors(self, t, p):
        with pytest.raises(DataError):
            confusion(t, p)

    def test_negative_counts(self):
        with pytest.raises(DataError):
            ConfusionMatrix(tp=-1, tn=0, fp=0, fn=0)


class TestClassificationReport:
    def test_reference_counts_to_two_decimals(self):
        cr = classification_report(REFERENCE_COUNTS)
        got = {
            "AC": pct(cr.accuracy),
            "P0": pct(cr.per_class[0]["precision"]), "R0": pct(cr.per_class[0]["recall"]),
            "F0": pct(cr.per_class[0]["f1"]),
            "P1": pct(cr.per_class[1]["precision"]), "R1": pct(cr.per_class[1]["recall"]),
            "F1": pct(cr.per_class[1]["f1"]),
            "MP": pct(cr.macro["precision"]), "MR": pct(cr.macro["recall"]), "MF": pct(cr.macro["f1"]),
            "WP": pct(cr.weighted["precision"]), "WR": pct(cr.weighted["recall"]), "WF": pct(cr.weighted["f1"]),
        }
        want = {
            "AC": "98.54", "P0": "99.71", "R0": "97.21", "F0": "98.44",
            "P1": "97.52", "R1": "99.74", "F1": "98.62",
            "MP": "98.62", "MR": "98.47", "MF": "98.53",
            "WP": "98.56", "WR": "98.54", "WF": "98.54",
        }
        assert {k: str(v) for k, v in got.items()} == want

    def test_fpr_arithmetic(self):
        assert classification_report(REFERENCE_COUNTS).fpr == 1207 / 43193
        assert pct(1207 / 43193) == Decimal("2.79")

    def test_perfect(self):
        cr = classification_report(ConfusionMatrix(tp=5, tn=5, fp=0, fn=0))
        assert cr.accuracy == 1.0 and cr.fpr == 0.0
        for c in (0, 1):
            assert cr.per_class[c]["precision"] == cr.per_class[c]["recall"] == cr.per_class[c]["f1"] == 1.0
        assert not cr.degenerate

    def test_zero_denominator_flagged(self):
        cr = classification_report(ConfusionMatrix(tp=0, tn=3, fp=0, fn=2))
        assert cr.per_class[1]["precision"] == 0.0
        assert "precision_1" in cr.degenerate

    def test_empty(self):
        with pytest.raises(DataError):
            classification_report(ConfusionMatrix(0, 0, 0, 0))

    @given(st.tuples(*[st.integers(0, 10_000)] * 4).filter(lambda c: sum(c) > 0))
    def test_identities(self, c):
        cm = ConfusionMatrix(*c)
        cr = classification_report(cm)
        assert cr.accuracy == (cm.tp + cm.tn) / cm.total
        assert cr.weighted["recall"] == pytest.approx(cr.accuracy, abs=1e-12)
        rates = [cr.accuracy, cr.fpr] + [v for pc in cr.per_class.values() for k, v in pc.items() if k != "support"]
        assert all(0.0 <= r <= 1.0 for r in rates)

    @given(st.integers(1, 500), st.integers(0, 500), st.integers(0, 500))
    def test_equal_supports_macro_equals_weighted(self, n, fn, fp):
        fn, fp = min(fn, n), min(fp, n)
        cr = classification_report(ConfusionMatrix(tp=n - fn, fn=fn, tn=n - fp, fp=fp))
        for k in ("precision", "recall", "f1"):
            assert cr.macro[k] == pytest.approx(cr.weighted[k], abs=1e-12)

    def test_round_trip(self):
        cr = classification_report(REFERENCE_COUNTS)
        assert ClassReport.from_dict(cr.to_dict()) == cr


class TestPct:
    @pytest.mark.parametrize(
        "value,text", [(0.98535, "98.53"), (0.5, "50.00"), (0.0, "0.00"), (1.0, "100.00"), (0.123449, "12.34")]
    )
    def test_rounding(self, value, text):
        # 0.98535 is stored just below the decimal midpoint
        assert str(pct(value)) == text

    @pytest.mark.parametrize("value,text", [(1 / 32, "3.12"), (3 / 32, "9.38"), (5 / 32, "15.62")])
    def test_exact_half_rounds_to_even(self, value, text):
        # k/32 is exact in binary, so the percentage ends in an exact ...5
        assert str(pct(value)) == text


class TestRoc:
    def test_perfect_separation(self):
        c = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        pts = set(zip(c.fpr.tolist(), c.tpr.tolist()))
        assert (0.0, 1.0) in pts
        assert auc(c) == 1.0

    def test_all_equal_scores(self):
        c = roc_curve([0.3] * 6, [0, 1, 0, 1, 1, 0])
        assert c.fpr.tolist() == [0.0, 1.0] and c.tpr.tolist() == [0.0, 1.0]
        assert auc(c) == 0.5

    def test_hand_example(self):
        assert auc(roc_curve([0.9, 0.4, 0.6, 0.2], [1, 0, 0, 1])) == pytest.approx(0.5, abs=1e-12)

    def test_endpoints_and_sentinel(self):
        c = roc_curve([0.2, 0.7, 0.7, 0.1], [0, 1, 0, 1])
        assert np.isinf(c.thresholds[0])
        assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
        assert c.thresholds[1:].tolist() == [0.7, 0.2, 0.1]

    @pytest.mark.parametrize("s,y", [([0.1, 0.2], [1, 1]), ([np.nan, 0.2], [0, 1]), ([0.1], [0, 1])])
    def test_errors(self, s, y):
        with pytest.raises(DataError):
            roc_curve(s, y)

    @given(labelled_scores)
    def test_monotone_and_matches_pair_count(self, data):
        s, y = data
        c = roc_curve(s, y)
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
        assert abs(auc(c) - pair_count_auc(s, y)) <= 1e-9

    @given(labelled_scores, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, data, rnd):
        s, y = data
        idx = list(range(len(s)))
        rnd.shuffle(idx)
        a = roc_curve(s, y)
        b = roc_curve([s[i] for i in idx], [y[i] for i in idx])
        assert a.fpr.tolist() == b.fpr.tolist() and a.tpr.tolist() == b.tpr.tolist()
        cm_a = confusion(y, [int(v >= 0.5) for v in s])
        cm_b = confusion([y[i] for i in idx], [int(s[i] >= 0.5) for i in idx])
        assert cm_a == cm_b


@pytest.fixture(scope="module")
def tiny():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 6))
    m = random_model(5)
    y = predict(m, X)
    y[:6] = 1 - y[:6]
    return m, Dataset(X, y, [f"f{i}" for i in range(6)])


ATTACKS = [FgsmConfig(eps=0.1), PgdConfig(eps=0.1, max_iter=5), JsmaConfig(theta=0.3, gamma=0.5), FgsmConfig(eps=0.2)]


class TestPipeline:
    def test_no_attacks_single_clean_report(self, tiny):
        m, data = tiny
        (r,) = evaluate_pipeline(m, data)
        assert r.phase == "pre-attack" and r.attack is None
        assert r.confusion == confusion(data.labels, predict(m, data.features))

    def test_report_count_and_echo(self, tiny):
        m, data = tiny
        reports = evaluate_pipeline(m, data, ATTACKS)
        assert len(reports) == 5
        assert [r.attack for r in reports] == [None, "fgsm", "pgd", "jsma", "fgsm2"]
        for r, cfg in zip(reports[1:], ATTACKS):
            assert r.phase == "post-attack" and r.attack_config == cfg.to_dict()
            assert r.extra["mode"] == "regenerate"

    def test_labels_for_repeats(self):
        assert attack_labels(ATTACKS + [FgsmConfig()]) == ["fgsm", "pgd", "jsma", "fgsm2", "fgsm3"]

    def test_replay_uses_cached_sets(self, tiny):
        m, data = tiny
        cached = generate_adversarial_sets(m, data, ATTACKS[:1])
        dm = DefendedModel(m, postprocessor=HcConfig(cutoff=0.05), provenance=[{"defence": "high_confidence"}])
        reports = evaluate_pipeline(dm, data, ATTACKS[:1], phase="post-defence", replay=cached)
        assert [r.phase for r in reports] == ["post-defence", "post-defence"]
        assert reports[1].extra["mode"] == "replay"
        assert reports[1].defence == [{"defence": "high_confidence"}]
        expect = confusion(data.labels, predict(m, cached["fgsm"].x_adv))
        assert reports[1].confusion == expect

    def test_replay_shape_mismatch(self, tiny):
        m, data = tiny
        cached = generate_adversarial_sets(m, data.subset(np.arange(10)), ATTACKS[:1])
        with pytest.raises(DataError):
            evaluate_pipeline(m, data, ATTACKS[:1], replay=cached)

    def test_attack_error_names_attack(self, tiny):
        m, data = tiny
        bad = Dataset(np.zeros((3, 5)), np.array([0, 1, 0]), [f"f{i}" for i in range(5)])
        with pytest.raises(DataError, match="fgsm"):
            generate_adversarial_sets(m, bad, ATTACKS[:1])

    def test_report_round_trip(self, tiny):
        m, data = tiny
        for r in evaluate_pipeline(m, data, ATTACKS[:2]):
            back = EvalReport.from_dict(r.to_dict())
            assert back.to_dict() == r.to_dict()

    def test_single_class_has_no_roc(self):
        r = make_report([1, 1, 1], [1, 0, 1], [0.9, 0.2, 0.8], "pre-attack")
        assert r.roc is None and r.auc is None

    def test_unknown_phase(self):
        with pytest.raises(DataError):
            make_report([0, 1], [0, 1], [0.1, 0.9], "during-attack")


class TestRender:
    def test_layout(self):
        r = EvalReport("pre-attack", classification_report(REFERENCE_COUNTS), REFERENCE_COUNTS, None, 0.98551)
        lines = render_table(r).splitlines()
        assert lines[0] == "phase: pre-attack   attack: none"
        assert lines[2].split() == ["LB", "AC(%)", "P(%)", "R(%)", "F(%)"]
        assert lines[3].split() == ["0", "98.54", "99.71", "97.21", "98.44"]
        assert lines[4].split() == ["1", "97.52", "99.74", "98.62"]
        assert lines[5].split() == ["MA", "98.62", "98.47", "98.53"]
        assert lines[6].split() == ["WA", "98.56", "98.54", "98.54"]
        text = "\n".join(lines)
        assert "41986" in text and "47545" in text
        assert "FPR(%): 2.79" in text
        assert "AUC: 0.985510 (98.55)" in text
