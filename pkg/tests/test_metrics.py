import itertools
import json

import numpy as np
import pytest

from cotasr.errors import InputError, UndefinedMetricError
from cotasr.metrics import BiasList, Report, align, biased_wer, eer, report, wer


def edit_distance_oracle(r, h):
    """Independent recursive edit distance with memoization."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (r[i - 1] != h[j - 1]))

    return d(len(r), len(h))


def test_align_examples():
    a = align("a b c", "a x c")
    assert (a.S, a.I, a.D, a.R) == (1, 0, 0, 3) and abs(a.wer - 1 / 3) < 1e-15
    b = align("a", "")
    assert (b.D, b.wer) == (1, 1.0)
    c = align("", "x y")
    assert (c.I, c.R) == (2, 0)


def test_align_tie_break_prefers_substitution_over_indel():
    a = align("a b", "a c")
    assert [op for op, _, _ in a.ops] == ["match", "substitute"]


def test_align_counts_match_ops():
    a = align("the cat sat on it", "a cat sat it now")
    kinds = [op for op, _, _ in a.ops]
    assert kinds.count("substitute") == a.S and kinds.count("insert") == a.I and kinds.count("delete") == a.D
    assert sum(1 for k in kinds if k != "insert") == a.R


def test_align_cost_equals_oracle_exhaustively():
    vocab = "abc"
    for n in range(0, 4):
        for m in range(0, 4):
            for r in itertools.product(vocab, repeat=n):
                for h in itertools.product(vocab, repeat=m):
                    assert align(list(r), list(h)).errors == edit_distance_oracle(r, h)


def test_align_cost_random_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        r = list(rng.choice(list("xyz"), rng.integers(0, 7)))
        h = list(rng.choice(list("xyz"), rng.integers(0, 7)))
        assert align(r, h).errors == edit_distance_oracle(tuple(r), tuple(h))


def test_wer_examples():
    assert wer(["a b", "c"], ["a b", "c"]) == 0.0
    assert round(wer(["a b c"], ["a x c"]), 4) == 0.3333
    with pytest.raises(InputError):
        wer(["a"], [])


def test_wer_is_pooled_not_averaged():
    refs, hyps = ["a", "a b c d e f g h i"], ["x", "a b c d e f g h i"]
    assert wer(refs, hyps) == pytest.approx(1 / 10, abs=1e-15)
    per_utt = np.mean([align(r, h).wer for r, h in zip(refs, hyps)])
    assert per_utt == pytest.approx(0.5)


def test_wer_is_not_symmetric():
    assert wer(["a b"], ["a"]) == 0.5
    assert wer(["a"], ["a b"]) == 1.0


def test_case_folding():
    assert wer(["The Cat"], ["the cat"]) == 0.0


def test_eer_examples():
    refs = ["buy zyrtec and visa", "call halo now"]
    spans = [[(1, 2), (3, 4)], []]
    assert eer(refs, spans, refs) == 0.0
    assert eer(refs, spans, ["buy zyrtec and vista", "call halo now"]) == 0.5
    with pytest.raises(UndefinedMetricError):
        eer(["a b"], [[]], ["a b"])


def test_eer_multiword_entity_needs_every_word():
    assert eer(["open bit warden now"], [[(1, 3, "bit warden")]], ["open bitwarden now"]) == 1.0
    assert eer(["open bit warden now"], [[(1, 3)]], ["open bit warden now"]) == 0.0


def test_eer_ignores_entity_elsewhere_in_hypothesis():
    # the entity word appears, but not where the alignment puts it
    assert eer(["halo is fun"], [[(0, 1)]], ["it is fun halo"]) == 1.0


def test_eer_monotone_in_corruption():
    ref = "a b c d e f"
    spans = [[(0, 1), (2, 4), (5, 6)]]
    hyps = ["a b c d e f", "x b c d e f", "x b c y e f", "x b c y e z"]
    vals = [eer([ref], spans, [h]) for h in hyps]
    assert vals == sorted(vals) and vals[-1] == 1.0


def test_biased_wer_substitution_on_bias_word():
    r = biased_wer(["the rare bird"], ["the rear bird"], BiasList.of(["rare"]))
    assert r.b_wer == 1.0 and r.u_wer == 0.0 and r.wer == pytest.approx(1 / 3)


def test_biased_wer_disjoint_list():
    refs, hyps = ["a b c"], ["a x c"]
    r = biased_wer(refs, hyps, BiasList.of(["zzz"]))
    assert r.b_wer is None and r.u_wer == wer(refs, hyps)


def test_biased_wer_inserted_bias_word():
    bias = BiasList.of(["rare"])
    base = biased_wer(["the bird"], ["the bird"], bias)
    ins = biased_wer(["the bird"], ["the rare bird"], bias)
    assert ins.b_errors == base.b_errors + 1 and ins.u_errors == base.u_errors
    other = biased_wer(["the bird"], ["the big bird"], bias)
    assert other.u_errors == base.u_errors + 1


def test_bias_partition_identity_random():
    rng = np.random.default_rng(1)
    words = list("abcdef")
    bias = BiasList.of(["a", "b"])
    for _ in range(1000):
        r = " ".join(rng.choice(words, rng.integers(1, 8)))
        h = " ".join(rng.choice(words, rng.integers(0, 8)))
        res = biased_wer([r], [h], bias)
        a = align(r, h)
        assert res.b_errors + res.u_errors == a.errors
        assert res.b_ref + res.u_ref == a.R


def test_bias_list_file(tmp_path):
    p = tmp_path / "bias.txt"
    p.write_text("Rare\nrare\n\nbird\n")
    assert BiasList.from_file(p).words == frozenset({"rare", "bird"})


def test_report_average_is_unweighted_mean():
    rep = report({"sys": {"set1": {"EER": 0.10}, "set2": {"EER": 0.20}}})
    assert rep.average("sys", "EER") == pytest.approx(0.15)
    assert "15.00" in rep.table()


def test_report_two_systems_deterministic_columns():
    res = {"b": {"s": {"WER": 0.1, "EER": 0.2}}, "a": {"s": {"EER": 0.3, "WER": 0.4}}}
    t1, t2 = report(res).table(), report(json.loads(json.dumps(res))).table()
    assert t1 == t2
    header = t1.splitlines()[0].split()
    assert header == ["set", "b:WER", "b:EER", "a:WER", "a:EER"]


def test_report_round_trip(tmp_path):
    res = {"x": {"s1": {"WER": 1 / 3, "EER": None, "RTF": 0.257}, "s2": {"WER": 0.1, "EER": 0.7, "RTF": 0.1}}}
    rep = report(res)
    rep.save(tmp_path / "r.json")
    back = Report.load(tmp_path / "r.json")
    assert back.results == rep.results and back.table() == rep.table()
    assert json.loads((tmp_path / "r.json").read_text())["schema_version"] == 1


def test_report_needs_a_system():
    with pytest.raises(InputError):
        report({})
