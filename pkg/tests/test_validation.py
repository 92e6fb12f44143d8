from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benchcard.card_model import BenchmarkCard, FieldValue
from benchcard.errors import InvalidVerdict
from benchcard.gateway import Gateway, HashEmbeddingBackend, ScriptedChatBackend
from benchcard.retrieval import ChunkPolicy, build_index, chunk_document, embed_chunks
from benchcard.validation import (
    AtomicStatement,
    EntailmentVerdict,
    ValidationConfig,
    aggregate_score,
    atomize,
    judge_entailment,
    revise_field,
    score_card,
    validation_loop,
)
from conftest import make_doc
from reference_impls import ref_aggregate

EPS = 1e-3


def verdict(e, c, n, atom_id="a", chunk_id="c"):
    return EntailmentVerdict.from_probabilities(atom_id, chunk_id, e, c, n)


def gateway_with(script=None, fixed=None) -> Gateway:
    if fixed is not None:

        class Fixed(ScriptedChatBackend):
            def complete_once(self, request):
                return fixed

        return Gateway(Fixed(), HashEmbeddingBackend())
    return Gateway(ScriptedChatBackend(script=script or {}), HashEmbeddingBackend())


def small_index(texts: dict[str, str]):
    gw = gateway_with()
    chunks = []
    for sid, text in texts.items():
        chunks.extend(chunk_document(make_doc(text, source_id=sid), ChunkPolicy()))
    return build_index(embed_chunks(chunks, gw)), gw


class TestAtomize:
    def _card(self, **fields) -> BenchmarkCard:
        return BenchmarkCard(
            benchmark_id="b",
            fields={k: FieldValue(text=v) for k, v in fields.items()},
        )

    def test_sentence_split_into_two_atoms(self, schema):
        card = self._card(purpose="X is multilingual. X has 3 tasks.")
        atoms, warnings = atomize(card, gateway_with(), schema)
        assert [a.text for a in atoms] == ["X is multilingual.", "X has 3 tasks."]
        assert all(a.field_id == "purpose" for a in atoms)
        assert atoms[0].atom_id == "purpose.a1"
        assert warnings == []

    def test_empty_field_skipped_without_call(self, schema):
        card = self._card(purpose="One claim here.", risks="   ")
        gw = gateway_with()
        atoms, _ = atomize(card, gw, schema)
        assert {a.field_id for a in atoms} == {"purpose"}
        assert len(gw.call_log) == 1  # no call for the blank field

    def test_one_call_per_nonempty_field(self, schema):
        card = self._card(purpose="A claim.", methodology="Another claim.")
        gw = gateway_with()
        atomize(card, gw, schema)
        assert len(gw.call_log) == 2

    def test_all_empty_rejected(self, schema):
        with pytest.raises(ValueError):
            atomize(self._card(purpose="  "), gateway_with(), schema)

    def test_overlong_atom_skipped_with_warning(self, schema):
        long_sentence = "word " * 80
        card = self._card(purpose=f"{long_sentence.strip()}. Short one stays.")
        atoms, warnings = atomize(card, gateway_with(), schema)
        assert [a.text for a in atoms] == ["Short one stays."]
        assert any("skipped atom" in w for w in warnings)

    def test_atom_word_cap_enforced_on_type(self):
        with pytest.raises(ValueError):
            AtomicStatement(atom_id="x", field_id="f", text="w " * 61)


class TestJudgeEntailment:
    _atom = AtomicStatement(atom_id="a1", field_id="purpose", text="The sky is blue.")

    def _chunk(self, text):
        return chunk_document(make_doc(text, source_id="s"))[0]

    def test_verbatim_context_entails(self):
        v = judge_entailment(self._atom, self._chunk("Note that the sky is blue."), gateway_with())
        assert (v.p_entail, v.p_contradict, v.p_neutral) == (0.95, 0.01, 0.04)
        assert v.atom_id == "a1" and v.chunk_id == "s#0"

    def test_scripted_negation_contradicts(self):
        v = judge_entailment(
            self._atom, self._chunk("It is not true that the sky is blue."), gateway_with()
        )
        assert (v.p_entail, v.p_contradict, v.p_neutral) == (0.02, 0.93, 0.05)

    def test_all_zero_triple_rejected(self):
        gw = gateway_with(fixed='{"entail": 0, "contradict": 0, "neutral": 0}')
        with pytest.raises(InvalidVerdict):
            judge_entailment(self._atom, self._chunk("whatever text"), gw)

    def test_negative_probability_rejected(self):
        gw = gateway_with(fixed='{"entail": 0.5, "contradict": -0.1, "neutral": 0.6}')
        with pytest.raises(InvalidVerdict):
            judge_entailment(self._atom, self._chunk("whatever text"), gw)

    def test_renormalization(self):
        gw = gateway_with(fixed='{"entail": 2, "contradict": 1, "neutral": 1}')
        v = judge_entailment(self._atom, self._chunk("whatever text"), gw)
        assert v.p_entail + v.p_contradict + v.p_neutral == pytest.approx(1.0, abs=1e-6)
        assert v.p_entail == pytest.approx(0.5, abs=1e-12)


class TestAggregateScore:
    def test_empty_is_exactly_half(self):
        assert aggregate_score([]) == 0.5

    def test_symmetric_verdict_is_half(self):
        assert aggregate_score([verdict(1 / 3, 1 / 3, 1 / 3)]) == 0.5

    def test_single_strong_verdict_closed_form(self):
        # oracle: logistic(ln((0.9+eps)/(0.1+eps))) = (0.9+eps)/(1 + 2*eps)
        got = aggregate_score([verdict(0.9, 0.1, 0.0)], EPS)
        closed = (0.9 + EPS) / ((0.9 + EPS) + (0.1 + EPS))
        assert got == pytest.approx(closed, abs=1e-12)
        assert abs(got - 0.9) < 1e-3

    def test_two_strong_verdicts_closed_form(self):
        # oracle: logistic(2 ln r) = r^2/(1+r^2), r = (0.9+eps)/(0.1+eps)
        got = aggregate_score([verdict(0.9, 0.1, 0.0)] * 2, EPS)
        r = (0.9 + EPS) / (0.1 + EPS)
        closed = r * r / (1.0 + r * r)
        assert got == pytest.approx(closed, abs=1e-12)
        assert abs(got - 81.0 / 82.0) < 1e-3

    def test_matches_reference_on_random_lists(self):
        rng = random.Random(5)
        for _ in range(200):
            triples = []
            for _ in range(rng.randint(0, 6)):
                e, c = rng.randint(0, 100), rng.randint(0, 100)
                n = rng.randint(0, 100)
                total = max(e + c + n, 1)
                triples.append((e / total, c / total, n / total))
            verdicts = [verdict(*t) for t in triples]
            assert aggregate_score(verdicts, EPS) == pytest.approx(
                ref_aggregate(triples, EPS), abs=1e-9
            )

    def test_permutation_invariance_is_exact(self):
        rng = random.Random(11)
        verdicts = [
            verdict(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1))
            for _ in range(6)
        ]
        base = aggregate_score(verdicts, EPS)
        for _ in range(20):
            shuffled = verdicts[:]
            rng.shuffle(shuffled)
            assert aggregate_score(shuffled, EPS) == base  # bitwise

    def test_supporting_verdict_strictly_increases(self):
        base = [verdict(0.6, 0.3, 0.1)]
        s0 = aggregate_score(base, EPS)
        s1 = aggregate_score(base + [verdict(0.5, 0.2, 0.3)], EPS)
        assert s1 > s0

    def test_neutral_ratio_leaves_score_unchanged(self):
        base = [verdict(0.6, 0.3, 0.1), verdict(0.2, 0.7, 0.1)]
        s0 = aggregate_score(base, EPS)
        s1 = aggregate_score(base + [verdict(0.25, 0.25, 0.5)], EPS)
        assert abs(s1 - s0) <= 1e-12

    def test_open_interval(self):
        assert 0.0 < aggregate_score([verdict(0.99, 0.0, 0.01)] * 3, EPS) < 1.0
        assert 0.0 < aggregate_score([verdict(0.0, 0.99, 0.01)] * 3, EPS) < 1.0


# hypothesis: probabilities on a coarse grid keep logits bounded, so strict
# monotonicity is not lost to float saturation
_grid = st.integers(min_value=0, max_value=50)


@st.composite
def verdict_lists(draw):
    n = draw(st.integers(min_value=0, max_value=5))
    out = []
    for _ in range(n):
        e, c, nn = draw(_grid), draw(_grid), draw(_grid)
        if e + c + nn == 0:
            nn = 1
        total = e + c + nn
        out.append(verdict(e / total, c / total, nn / total))
    return out


@given(verdict_lists(), st.randoms(use_true_random=False))
@settings(max_examples=200, deadline=None)
def test_aggregate_properties(verdicts, rng):
    score = aggregate_score(verdicts, EPS)
    assert 0.0 < score < 1.0
    shuffled = verdicts[:]
    rng.shuffle(shuffled)
    assert aggregate_score(shuffled, EPS) == score
    stronger = verdicts + [verdict(0.7, 0.2, 0.1)]
    assert aggregate_score(stronger, EPS) > score


class TestScoreCard:
    def _setup(self, purpose_text: str, judge_overrides=None, grader="all"):
        schema = __import__("benchcard.card_model", fromlist=["CardSchema"]).CardSchema.default()
        card = BenchmarkCard(
            benchmark_id="b", fields={"purpose": FieldValue(text=purpose_text)}
        )
        index, _ = small_index(
            {
                "src": "Red pandas eat bamboo. Blue whales sing songs.",
                "other": "Totally unrelated content about rivers and mountains.",
            }
        )
        script = {"grader": grader}
        if judge_overrides:
            script["judge_overrides"] = judge_overrides
        return card, index, gateway_with(script), schema

    def test_verbatim_atoms_unflagged(self, schema):
        card, index, gw, schema = self._setup("Red pandas eat bamboo. Blue whales sing songs.")
        report = score_card(card, index, gw, ValidationConfig(), schema)
        assert report.flagged_atoms() == []
        closed = (0.95 + EPS) / ((0.95 + EPS) + (0.01 + EPS))
        for atom in report.atoms:
            assert atom.score >= 0.6
            # exactly one entailing chunk, neutrals contribute nothing
            assert atom.score == pytest.approx(closed, abs=1e-9)

    def test_unsupported_atom_scores_half_and_flags(self):
        card, index, gw, schema = self._setup(
            "Red pandas eat bamboo. Nothing in the corpus supports this claim."
        )
        report = score_card(card, index, gw, ValidationConfig(), schema)
        flagged = report.flagged_atoms()
        assert len(flagged) == 1
        assert flagged[0].score == 0.5
        assert flagged[0].text == "Nothing in the corpus supports this claim."

    def test_no_relevant_evidence_gives_half(self):
        card, index, gw, schema = self._setup("Red pandas eat bamboo.", grader="none")
        report = score_card(card, index, gw, ValidationConfig(), schema)
        assert report.atoms[0].score == 0.5
        assert report.atoms[0].flagged

    def test_tau_zero_never_flags(self):
        card, index, gw, schema = self._setup("Unsupported claim text here.")
        report = score_card(card, index, gw, ValidationConfig(tau_flag=0.0), schema)
        assert report.flagged_atoms() == []

    def test_atoms_sorted_score_ascending(self):
        card, index, gw, schema = self._setup(
            "Red pandas eat bamboo. This claim has no support at all."
        )
        report = score_card(card, index, gw, ValidationConfig(), schema)
        scores = [a.score for a in report.atoms]
        assert scores == sorted(scores)

    def test_score_recomputable_from_verdicts(self):
        card, index, gw, schema = self._setup("Red pandas eat bamboo. Blue whales sing songs.")
        report = score_card(card, index, gw, ValidationConfig(), schema)
        for atom in report.atoms:
            assert aggregate_score(atom.verdicts, EPS) == atom.score  # bit-for-bit

    def test_judge_failure_degrades_to_flagged_unscored(self):
        class FailingJudge(ScriptedChatBackend):
            def complete_once(self, request):
                if "task:judge" in request.user:
                    raise RuntimeError("judge exploded")
                return super().complete_once(request)

        schema = __import__("benchcard.card_model", fromlist=["CardSchema"]).CardSchema.default()
        card = BenchmarkCard(benchmark_id="b", fields={"purpose": FieldValue(text="Red pandas eat bamboo.")})
        index, _ = small_index({"src": "Red pandas eat bamboo."})
        gw = Gateway(FailingJudge(), HashEmbeddingBackend())
        report = score_card(card, index, gw, ValidationConfig(), schema)
        assert len(report.atoms) == 1
        atom = report.atoms[0]
        assert atom.score is None and atom.flagged and "judge exploded" in atom.error

    def test_flagged_atoms_have_exactly_one_action(self):
        card, index, gw, schema = self._setup("No support for this. None for this either.")
        report = score_card(card, index, gw, ValidationConfig(strategy="review"), schema)
        flagged_ids = [a.atom_id for a in report.flagged_atoms()]
        action_ids = [r.atom_id for r in report.remediation_actions]
        assert sorted(flagged_ids) == sorted(action_ids)
        assert all(r.strategy == "human_review" for r in report.remediation_actions)


class TestReviseField:
    def _fixture(self):
        schema = __import__("benchcard.card_model", fromlist=["CardSchema"]).CardSchema.default()
        card = BenchmarkCard(
            benchmark_id="b",
            fields={"purpose": FieldValue(text="Old wrong text.", status="draft", revision=0)},
        )
        index, _ = small_index({"src": "Red pandas eat bamboo."})
        return card, index, schema

    def test_scripted_revision_replaces_text_and_bumps_revision(self):
        card, index, schema = self._fixture()
        gw = gateway_with({"revisions": {"purpose": "Corrected text."}})
        report = score_card(card, index, gw, ValidationConfig(), schema)
        flagged = [a for a in report.flagged_atoms() if a.field_id == "purpose"]
        new_card = revise_field(card, "purpose", flagged, [], gw)
        fv = new_card.fields["purpose"]
        assert fv.text == "Corrected text."
        assert fv.revision == 1 and fv.status == "draft"

    def test_prompt_contains_only_given_evidence(self):
        card, index, schema = self._fixture()
        seen = {}

        class Spy(ScriptedChatBackend):
            def complete_once(self, request):
                if "task:revise" in request.user:
                    seen["prompt"] = request.user
                return super().complete_once(request)

        gw = Gateway(Spy(script={"revisions": {"purpose": "x"}}), HashEmbeddingBackend())
        chunks = [c for c in index.chunks]  # single chunk corpus
        flagged = [
            __import__("benchcard.validation", fromlist=["AtomScore"]).AtomScore(
                atom_id="purpose.a1", field_id="purpose", text="Old wrong text.",
                score=0.5, verdicts=(), flagged=True,
            )
        ]
        revise_field(card, "purpose", flagged, chunks, gw)
        assert "CHUNK src#0:" in seen["prompt"]
        assert seen["prompt"].count("CHUNK ") == 1

    def test_refuses_without_flagged_atoms(self):
        card, index, schema = self._fixture()
        with pytest.raises(ValueError):
            revise_field(card, "purpose", [], [], gateway_with())


class TestValidationLoop:
    def _index(self):
        return small_index({"src": "Red pandas eat bamboo. Blue whales sing songs."})

    def _card(self, purpose: str) -> BenchmarkCard:
        return BenchmarkCard(benchmark_id="b", fields={"purpose": FieldValue(text=purpose)})

    def test_zero_flags_single_report(self, schema):
        index, _ = self._index()
        card = self._card("Red pandas eat bamboo.")
        final, reports = validation_loop(
            card, index, gateway_with(), ValidationConfig(strategy="auto"), schema
        )
        assert len(reports) == 1
        assert final.fields["purpose"].text == card.fields["purpose"].text
        assert final.fields["purpose"].status == "validated"

    def test_persistent_flags_hit_round_bound(self, schema):
        index, _ = self._index()
        card = self._card("This claim is never supported.")
        gw = gateway_with({"revisions": {"purpose": "Still not supported at all."}})
        final, reports = validation_loop(
            card, index, gw, ValidationConfig(strategy="auto", max_rounds=2), schema
        )
        assert len(reports) == 3  # initial + 2 revision rounds
        assert final.fields["purpose"].status == "flagged"
        assert final.fields["purpose"].revision == 2
        assert all(a.outcome == "unresolved" for a in reports[-1].remediation_actions)

    def test_auto_revision_fixes_flag(self, schema):
        index, _ = self._index()
        card = self._card("Red pandas eat bamboo. Made up claim appears here.")
        gw = gateway_with({"revisions": {"purpose": "Red pandas eat bamboo."}})
        final, reports = validation_loop(
            card, index, gw, ValidationConfig(strategy="auto"), schema
        )
        assert len(reports) == 2
        assert reports[0].flagged_atoms() and not reports[1].flagged_atoms()
        assert final.fields["purpose"].status == "validated"
        assert final.fields["purpose"].revision == 1

    def test_strategy_none_scores_once(self, schema):
        index, _ = self._index()
        card = self._card("Unsupported claim.")
        final, reports = validation_loop(
            card, index, gateway_with(), ValidationConfig(strategy="none"), schema
        )
        assert len(reports) == 1
        assert final.fields["purpose"].status == "flagged"

    def test_deterministic_for_scripted_backends(self, schema):
        index, _ = self._index()

        def run():
            card = self._card("Red pandas eat bamboo. Unsupported claim.")
            gw = gateway_with({"revisions": {"purpose": "Red pandas eat bamboo."}})
            final, reports = validation_loop(
                card, index, gw, ValidationConfig(strategy="auto"), schema
            )
            return [r.to_json() for r in reports]

        a, b = run(), run()
        for ra, rb in zip(a, b):
            ra.pop("run_id"), rb.pop("run_id")
            assert ra == rb
