import json

import numpy as np
import pytest

from imgcot.errors import ContractError, EmptyInputError, ParseError, ScoringError
from imgcot.filter import (
    ELLIPSIS,
    Aggregation,
    GammaEstimate,
    assign_tokens,
    build_limgcot_sample,
    collapse,
    confidence,
    estimate_gamma,
    filter_profile,
    filter_trace,
    full_cot_output,
    read_gamma,
    retention,
    step_spans,
    write_gamma,
)
from imgcot.lmclient import LocalScorer
from imgcot.numerics.tensor import default_dtype
from imgcot.reasoner import ReasonerConfig, ReasonerNet, Vocab, token_logprobs
from imgcot.tasks.chainlookup import generate

from oracles import FixedScorer, TableScorer, profile_from_steps

VOCAB = Vocab()


# confidence ---------------------------------------------------------------------------


def test_step_spans():
    assert step_spans("ab\n\n cd \nef") == [(0, 2), (5, 7), (9, 11)]
    assert step_spans("a;b", (";",)) == [(0, 1), (2, 3)]
    with pytest.raises(EmptyInputError):
        step_spans(" \n ")


def test_assign_tokens_splits_toward_earlier_step():
    spans = [(0, 3), (4, 7)]
    # a token starting inside step 0 and running over the boundary stays in step 0
    assert assign_tokens(np.array([0, 2, 4, 6]), spans).tolist() == [0, 0, 1, 1]
    assert assign_tokens(np.array([3]), spans).tolist() == [0]


def test_confidence_deterministic_scorer():
    prof = confidence("ab\ncd", TableScorer(default=0.0))
    assert np.all(prof.values[1:] == 0.0)
    assert prof.step_means.tolist() == [0.0, 0.0]


def test_confidence_uniform_scorer():
    v = 50
    prof = confidence("abc\nde\nf", TableScorer(default=-np.log(v)))
    np.testing.assert_allclose(prof.values[1:], -np.log(v), rtol=0, atol=0)
    np.testing.assert_allclose(prof.step_means, -np.log(v))


def test_confidence_step_means_are_arithmetic_means():
    text = "ab\ncde"
    prof = confidence(text, FixedScorer({text: [np.nan, -1.0, -0.5, -2.0, -3.0, -4.0]}))
    # position 0 is excluded; the newline belongs to the earlier step
    assert prof.token_step.tolist() == [0, 0, 0, 1, 1, 1]
    np.testing.assert_allclose(prof.step_means, [(-1.0 - 0.5) / 2, -3.0])
    assert prof.step_ranges() == [(0, 3), (3, 6)]


def test_confidence_propagates_scorer_failures():
    text = "ab\ncd"
    with pytest.raises(ScoringError) as info:
        confidence(text, FixedScorer({text: [np.nan, -1.0, -1.0, np.nan, -1.0]}))
    assert info.value.step == 1

    class Broken:
        name = "broken"

        def score(self, request):
            raise ContractError("model unavailable")

    with pytest.raises(ScoringError):
        confidence(text, Broken())


def test_local_scorer_confidence_matches_direct_log_softmax():
    with default_dtype(np.float64):
        net = ReasonerNet(ReasonerConfig(VOCAB.size, dim=8, layers=1, heads=2, context=64))
    text = "P(a)=b\nQ(b)=c"
    prof = confidence(text, LocalScorer(net, VOCAB))
    direct = token_logprobs(net, VOCAB.encode(text))
    np.testing.assert_allclose(prof.values[1:], direct[1:], rtol=0, atol=1e-12)


# gamma --------------------------------------------------------------------------------------


def test_gamma_three_values():
    scorer = FixedScorer({"abcd": [np.nan, -1.0, -2.0, -3.0]})
    est = estimate_gamma(["abcd"], scorer)
    assert est.gamma == -2.0 and est.token_count == 3 and est.mode is Aggregation.MEAN
    assert estimate_gamma(["abcd"], scorer, Aggregation.SUM).gamma == -6.0


def test_gamma_identical_texts_equal_single_text_mean():
    scorer = TableScorer({"a": -0.3, "b": -1.7, "\n": -0.1})
    one = estimate_gamma(["ab\nba"], scorer)
    many = estimate_gamma(["ab\nba"] * 7, scorer)
    assert many.gamma == pytest.approx(one.gamma, abs=1e-15)
    assert many.token_count == 7 * one.token_count


def test_gamma_rejects_empty_corpus_and_bad_values():
    with pytest.raises(ContractError):
        estimate_gamma([], TableScorer())
    with pytest.raises(ContractError):
        GammaEstimate(float("nan"), "c", 3)
    with pytest.raises(ContractError):
        GammaEstimate(-1.0, "c", 0)


def test_reference_gamma_round_trips(tmp_path):
    path = tmp_path / "gamma.txt"
    path.write_text("-1.58864506\n")
    est = read_gamma(path)
    assert est.gamma == -1.58864506
    out = tmp_path / "gamma.json"
    write_gamma(GammaEstimate(est.gamma, "reference", 1000, Aggregation.MEAN, "qwen-0.5b"), out)
    back = read_gamma(out)
    assert back.gamma == -1.58864506 and back.scorer == "qwen-0.5b" and back.token_count == 1000
    assert json.loads(out.read_text())["mode"] == "mean"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        read_gamma(path)
    path.write_text('{"value": 1}')
    with pytest.raises(ParseError):
        read_gamma(path)


# filtering -------------------------------------------------------------------------------------


def test_example_first_step_filtered():
    text = "easy\nhard"
    scorer = FixedScorer({text: [np.nan, -0.5, -0.5, -0.5, -0.5, -3.0, -3.0, -3.0, -3.0]})
    trace = filter_trace(text, -2.0, scorer)
    assert trace.means == (-0.5, -3.0)
    assert trace.items == (ELLIPSIS, "hard")
    assert trace.kept == (1,)
    assert trace.text == "...\nhard"


def test_boundary_equality_retains():
    assert retention([-2.0, -1.999, -2.001], -2.0).tolist() == [True, False, True]
    assert retention([np.nan], -2.0).tolist() == [True]


def test_all_filtered_collapses_to_one_ellipsis():
    trace = filter_profile(profile_from_steps([[-0.1], [-0.2, -0.1], [-0.3]]), -2.0)
    assert trace.items == (ELLIPSIS,)
    assert trace.text == "..."
    assert trace.token_ids(VOCAB).tolist() == [VOCAB.ellipsis_id]


def test_no_filtering_is_token_identical():
    cot = "P(a)=b\n  Q(b)=c\nR(c)=d"
    trace = filter_trace(cot, 0.5, TableScorer(default=-1.0))
    assert trace.n_filtered == 0
    assert trace.text == cot
    assert np.array_equal(trace.token_ids(VOCAB), VOCAB.encode(cot))


def _hand_filter(step_values, gamma):
    """Loop oracle: per-step arithmetic mean, strict comparison, run collapse."""
    items, kept = [], []
    for j, vals in enumerate(step_values):
        mean = sum(vals) / len(vals)
        if mean > gamma:
            if not items or items[-1] != "...":
                items.append("...")
        else:
            items.append(f"s{j}")
            kept.append(j)
    return items, kept


def _random_step_values(rng):
    return [list(rng.uniform(-5, 0, size=int(rng.integers(1, 6)))) for _ in range(int(rng.integers(1, 9)))]


def test_retention_matches_hand_comparisons():
    rng = np.random.default_rng(0)
    for _ in range(100):
        vals = _random_step_values(rng)
        gamma = float(rng.uniform(-4, -0.5))
        trace = filter_profile(profile_from_steps(vals), gamma)
        items, kept = _hand_filter(vals, gamma)
        assert ["..." if it is ELLIPSIS else it for it in trace.items] == items
        assert list(trace.kept) == kept


def test_filtered_set_shrinks_as_gamma_rises():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        vals = _random_step_values(rng)
        # reuse step means as thresholds so boundary equality is exercised
        prof = profile_from_steps(vals)
        candidates = list(prof.step_means) + list(rng.uniform(-5, 0, size=2))
        g1, g2 = sorted(rng.choice(candidates, size=2))
        removed_lo = set(np.flatnonzero(~retention(prof.step_means, g1)))
        removed_hi = set(np.flatnonzero(~retention(prof.step_means, g2)))
        assert removed_hi <= removed_lo


def test_structure_invariants_on_random_traces():
    rng = np.random.default_rng(2)
    for _ in range(300):
        vals = _random_step_values(rng)
        steps = [f"step {j} {'x' * j}" for j in range(len(vals))]
        trace = filter_profile(profile_from_steps(vals, steps), float(rng.uniform(-4, -0.5)))
        for a, b in zip(trace.items, trace.items[1:]):
            assert not (a is ELLIPSIS and b is ELLIPSIS)
        assert [it for it in trace.items if it is not ELLIPSIS] == [steps[j] for j in trace.kept]
        assert list(trace.kept) == sorted(trace.kept)
        cot = "\n".join(steps)
        if trace.n_filtered:
            assert len(trace.token_ids(VOCAB)) < len(VOCAB.encode(cot))


def test_refiltering_retained_steps_keeps_them():
    rng = np.random.default_rng(3)
    for _ in range(200):
        vals = _random_step_values(rng)
        gamma = float(rng.uniform(-4, -0.5))
        first = filter_profile(profile_from_steps(vals), gamma)
        if not first.kept:
            continue
        # ellipsis markers are not scored: the second pass sees only the retained steps
        again = filter_profile(profile_from_steps([vals[j] for j in first.kept]), gamma)
        assert again.n_filtered == 0


def test_collapse_is_run_length_on_removed_steps():
    assert collapse(["a", "b", "c", "d", "e"], [0, 0, 1, 0, 1]) == (ELLIPSIS, "c", ELLIPSIS, "e")


# hybrid samples -----------------------------------------------------------------------------------


def test_limgcot_sample_with_single_ellipsis():
    trace = filter_profile(profile_from_steps([[-0.1], [-0.1]]), -2.0)
    s = build_limgcot_sample("a:PQ?", np.zeros((8, 4)), trace, "c", VOCAB)
    expected = [VOCAB.ellipsis_id, *VOCAB.encode("\nc"), VOCAB.eos_id]
    assert s.output.tolist() == expected
    assert (s.s_z, s.e_z, s.s_o, s.e_o) == (6, 14, 15, 15 + 4)


def test_limgcot_output_shorter_than_full_cot():
    cot = "P(a)=b\nQ(b)=c\nR(c)=d"
    means = [[-0.1] * 6, [-3.0] * 7, [-3.0] * 7]
    trace = filter_profile(profile_from_steps(means, cot.split("\n")), -2.0, cot)
    s = build_limgcot_sample("a:PQR?", np.zeros((2, 4)), trace, "d", VOCAB)
    full = full_cot_output(cot, "d", VOCAB)
    assert len(s.output) - 1 < len(full)
    assert VOCAB.decode(s.output) == "...\nQ(b)=c\nR(c)=d\nd"
    assert s.e_o - s.s_o == len(s.output) and s.denominator == 2 + len(s.output)


def test_limgcot_strictly_shorter_on_synthetic_corpus():
    train, _ = generate(2000, 500, seed=0)
    cots = [it.cot for it in train]
    scorer = TableScorer.unigram(cots)
    gamma = estimate_gamma(cots, scorer).gamma
    filtered = 0
    for it in train:
        trace = filter_trace(it.cot, gamma, scorer)
        s = build_limgcot_sample(it.question, np.zeros((8, 4)), trace, it.answer, VOCAB)
        full = full_cot_output(it.cot, it.answer, VOCAB)
        if trace.n_filtered:
            filtered += 1
            assert len(s.output) - 1 < len(full), it.id
        else:
            assert np.array_equal(s.output[:-1], full)
    assert 0 < filtered < len(train)
