import json

import numpy as np
import pytest

from utils.errors import ParseError, ShapeError, UndefinedSimilarityError
from utils.feature_ops import MadFilterReport
from utils.text_behavior import (AMBIVALENCE_CATEGORIES, HESITANCY_CATEGORIES, POLES,
                                 SentenceRecord, ambivalence_distribution, compute_text_stats,
                                 hesitancy_scores, load_lexicon, load_prompts,
                                 load_sentence_records, sentence_level_pool, split_sentences,
                                 stats_feature_row, tokenize, visual_chunk_stats)


@pytest.fixture
def lexicon_path(tmp_path):
    eye = np.eye(4)
    payload = {category: {'expressions': [f"{category} phrase"],
                          'embeddings': [eye[index].tolist()]}
               for index, category in enumerate(HESITANCY_CATEGORIES)}
    path = tmp_path / 'lexicon.json'
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def prompts_path(tmp_path):
    eye = np.eye(4)
    # Poles listed out of order; rows follow the listed names
    listed = ['both', 'neutral', 'positive', 'negative']
    payload = {category: {'expressions': listed,
                          'embeddings': [eye[POLES.index(p)].tolist() for p in listed]}
               for category in AMBIVALENCE_CATEGORIES}
    path = tmp_path / 'prompts.json'
    path.write_text(json.dumps(payload))
    return str(path)


class TestTextStats:
    def test_hand_example(self):
        stats = compute_text_stats("well well, I mean.")
        assert stats.word_count == 4
        assert stats.short_pauses == 1
        assert stats.long_pauses == 1
        assert stats.consecutive_repetitions == 1
        assert stats.lexical_diversity == pytest.approx(0.75)

    def test_empty_transcript(self):
        stats = compute_text_stats("")
        assert stats.word_count == 0
        assert stats.lexical_diversity == 0.0

    def test_runs_of_terminal_punctuation_count_once(self):
        assert compute_text_stats("Really?! Yes... no.").long_pauses == 3

    def test_decimal_point_is_not_a_pause(self):
        stats = compute_text_stats("It costs 3.5 dollars. Maybe 2.75!")
        assert stats.long_pauses == 2
        assert split_sentences("It costs 3.5 dollars. Maybe 2.75!") == [
            'It costs 3.5 dollars', 'Maybe 2.75']

    def test_tokenize_strips_punctuation_and_case(self):
        assert tokenize("Uh, I -- THINK so!") == ['uh', 'i', 'think', 'so']

    def test_split_sentences(self):
        assert split_sentences("One. Two!  Three?") == ['One', 'Two', 'Three']


class TestHesitancy:
    def test_margins_for_aligned_sentence(self, lexicon_path):
        lexicon = load_lexicon(lexicon_path)
        scores = hesitancy_scores(SentenceRecord("um", np.array([1.0, 0, 0, 0])), lexicon)
        assert scores.raw['filler_words'] == pytest.approx(1.0)
        expected = [1.0, -1 / 3, -1 / 3, -1 / 3]
        assert [scores.margin[c] for c in HESITANCY_CATEGORIES] == pytest.approx(expected)

    def test_margins_sum_to_zero(self, lexicon_path):
        lexicon = load_lexicon(lexicon_path)
        rng = np.random.default_rng(0)
        for _ in range(10):
            scores = hesitancy_scores(SentenceRecord("x", rng.normal(size=4)), lexicon)
            assert sum(scores.margin.values()) == pytest.approx(0.0, abs=1e-12)

    def test_dimension_mismatch(self, lexicon_path):
        with pytest.raises(ShapeError):
            hesitancy_scores(SentenceRecord("x", np.ones(3)), load_lexicon(lexicon_path))

    def test_zero_embedding(self, lexicon_path):
        with pytest.raises(UndefinedSimilarityError):
            hesitancy_scores(SentenceRecord("x", np.zeros(4)), load_lexicon(lexicon_path))

    def test_missing_category(self, tmp_path):
        path = tmp_path / 'lexicon.json'
        path.write_text(json.dumps({'hedging': {'expressions': ['maybe'],
                                                'embeddings': [[1.0, 0.0]]}}))
        with pytest.raises(ParseError, match="filler_words"):
            load_lexicon(str(path))

    def test_expression_count_mismatch(self, tmp_path, lexicon_path):
        payload = json.loads(open(lexicon_path).read())
        payload['hedging']['expressions'].append('perhaps')
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(payload))
        with pytest.raises(ParseError):
            load_lexicon(str(path))


class TestAmbivalence:
    def test_both_pole_dominates(self, prompts_path):
        prompts = load_prompts(prompts_path)
        both = np.eye(4)[POLES.index('both')]
        distributions = ambivalence_distribution(both, prompts)
        assert set(distributions) == set(AMBIVALENCE_CATEGORIES)
        for distribution in distributions.values():
            assert distribution.sum() == pytest.approx(1.0)
            assert distribution[POLES.index('both')] > 0.99

    def test_lower_multiplier_flattens(self, prompts_path):
        text = np.array([0.2, 0.1, 0.1, 0.9])
        sharp = ambivalence_distribution(text, load_prompts(prompts_path, temperature=10.0))
        flat = ambivalence_distribution(text, load_prompts(prompts_path, temperature=1.0))
        assert sharp['excuse'].max() > flat['excuse'].max()

    def test_pole_names_are_required(self, tmp_path):
        payload = {c: {'expressions': ['a', 'b', 'c', 'd'], 'embeddings': np.eye(4).tolist()}
                   for c in AMBIVALENCE_CATEGORIES}
        path = tmp_path / 'prompts.json'
        path.write_text(json.dumps(payload))
        with pytest.raises(ParseError):
            load_prompts(str(path))


class TestPooling:
    def test_empty_transcript_pools_to_zero(self):
        pool = sentence_level_pool([])
        assert pool.valid == 0
        assert all(float(s.mean) == 0.0 for s in pool.stats.values())

    def test_sentence_pool(self):
        per_sentence = [{c: 0.1 for c in HESITANCY_CATEGORIES},
                        {c: 0.3 for c in HESITANCY_CATEGORIES}]
        pool = sentence_level_pool(per_sentence)
        assert pool.valid == 1
        assert float(pool.stats['hedging'].mean) == pytest.approx(0.2)
        assert float(pool.stats['hedging'].std) == pytest.approx(0.1)

    def test_visual_chunk_stats(self):
        report = MadFilterReport(kept=np.array([True, True, False, True]),
                                 scores=np.array([0.9, 0.8, 0.1, 0.7]),
                                 median=0.75, mad=0.1, multiplier=50.0)
        rows = visual_chunk_stats(report, frames_per_chunk=2)
        np.testing.assert_allclose(rows, [[1.0, 1.0, 0.85], [1.0, 0.5, 0.4]])

    def test_feature_row_columns(self, prompts_path):
        prompts = load_prompts(prompts_path)
        columns, values = stats_feature_row(
            text_stats=compute_text_stats("so, um, so so."),
            hesitancy=sentence_level_pool([]),
            ambivalence=ambivalence_distribution(np.ones(4), prompts),
            visual=np.array([[1.0, 1.0, 0.9], [0.0, 0.0, 0.2]]))
        assert len(columns) == len(values) == 5 + 17 + 24 + 12
        assert len(set(columns)) == len(columns)
        assert columns[0] == 'text_word_count'
        assert 'ambivalence_sentiment_both' in columns
        assert 'visual_valid_ratio_mean' in columns


def test_sentence_records(tmp_path):
    path = tmp_path / 'sentences.jsonl'
    path.write_text('{"text": "um", "embedding": [1, 0]}\n\n{"text": "ok", "embedding": [0, 1]}\n')
    records = load_sentence_records(str(path))
    assert [r.text for r in records] == ['um', 'ok']
    path.write_text('{"text": "um"}\n')
    with pytest.raises(ParseError, match="line 1"):
        load_sentence_records(str(path))
