import json
import math

import numpy as np
import pytest

from utils.committee import (Candidate, CommitteeMember, build_committee, candidate_sample_set, committee_predict,
                             enumerate_combos, fit_threshold, gather_candidates, load_candidates,
                             load_committee, save_committee, select_member, votes_by_split)
from utils.data_model import ComboMask, SampleSet, write_scores
from utils.errors import (DegenerateLabelsError, DuplicateIdError, IncompleteCommitteeError,
                          MissingCandidatesError)
from utils.metrics import f1_scores

ALGORITHMS = ('mlp', 'rf', 'gbdt')

# Validation BCE of each candidate per modality combination, with the expected winner
CANDIDATE_BCE = {
    'text': ((0.5730, 0.6234, 0.6309), 'mlp'),
    'audio': ((0.6751, 0.6950, 0.6922), 'mlp'),
    'video': ((0.7465, 0.6963, 0.6956), 'gbdt'),
    'stats': ((0.6496, 0.6341, 0.6403), 'rf'),
    'text+audio': ((0.5925, 0.6322, 0.6393), 'mlp'),
    'text+video': ((0.6884, 0.6242, 0.6316), 'rf'),
    'text+stats': ((0.5937, 0.6203, 0.6294), 'mlp'),
    'audio+video': ((0.7170, 0.6936, 0.6921), 'gbdt'),
    'audio+stats': ((0.6612, 0.6698, 0.6679), 'mlp'),
    'video+stats': ((0.7283, 0.6593, 0.6621), 'rf'),
    'text+audio+video': ((0.6872, 0.6349, 0.6414), 'rf'),
    'text+audio+stats': ((0.6001, 0.6282, 0.6370), 'mlp'),
    'text+video+stats': ((0.7334, 0.6209, 0.6302), 'rf'),
    'audio+video+stats': ((0.6897, 0.6732, 0.6736), 'rf'),
    'text+audio+video+stats': ((0.6962, 0.6271, 0.6362), 'rf'),
}


def _two_sample_candidate(combo, algorithm, target_bce):
    # On labels [1, 0], scores [p, 1 - p] give a mean BCE of -ln p
    p = math.exp(-target_bce)
    return Candidate(combo=combo, algorithm=algorithm, scores=np.array([p, 1.0 - p]))


@pytest.fixture
def samples():
    ids = tuple(f"v{i}" for i in range(8))
    splits = ('train', 'train', 'train', 'val', 'val', 'val', 'val', 'test')
    return SampleSet(ids, splits, np.array([0, 1, 1, 0, 1, 0, 1, 1]))


def _scores_for(samples, good):
    rng = np.random.default_rng(len(samples))
    noise = rng.uniform(0.0, 0.1, len(samples))
    return np.where(samples.labels == 1, 0.9 - noise, 0.1 + noise) if good else \
        np.full(len(samples), 0.5)


class TestSelection:
    def test_winners_follow_lowest_bce(self):
        samples = SampleSet(('a', 'b'), ('val', 'val'), np.array([1, 0]))
        candidates = {}
        for name, (bces, _) in CANDIDATE_BCE.items():
            combo = ComboMask.parse(name)
            candidates[combo] = [_two_sample_candidate(combo, algorithm, value)
                                 for algorithm, value in zip(ALGORITHMS, bces)]
        members = build_committee(candidates, samples, threads=4)
        assert len(members) == 15
        for member in members:
            bces, winner = CANDIDATE_BCE[member.combo.name]
            assert member.algorithm == winner
            assert member.val_bce == pytest.approx(min(bces), abs=1e-9)
            assert [c.val_bce for c in member.candidates] == pytest.approx(list(bces), abs=1e-9)
        algorithms = [m.algorithm for m in members]
        assert (algorithms.count('mlp'), algorithms.count('rf'),
                algorithms.count('gbdt')) == (6, 7, 2)

    def test_first_candidate_wins_ties(self, samples):
        combo = ComboMask(1)
        scores = _scores_for(samples, good=True)
        first = Candidate(combo, 'mlp', scores)
        second = Candidate(combo, 'rf', scores.copy())
        assert select_member([first, second], samples).algorithm == 'mlp'
        assert select_member([second, first], samples).algorithm == 'rf'

    def test_no_candidates(self, samples):
        with pytest.raises(MissingCandidatesError):
            select_member([], samples)

    def test_missing_combination(self, samples):
        combo = ComboMask(1)
        with pytest.raises(MissingCandidatesError, match="audio"):
            build_committee({combo: [Candidate(combo, 'mlp', _scores_for(samples, True))]},
                            samples)

    def test_enumerate_combos(self):
        assert [c.mask for c in enumerate_combos()] == list(range(1, 16))


class TestThreshold:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            labels = rng.integers(0, 2, 15)
            labels[:2] = [0, 1]
            scores = np.round(rng.uniform(size=15), 2)
            distinct = np.unique(scores)
            grid = sorted(set(((distinct[:-1] + distinct[1:]) / 2).tolist()) | {0.5})
            best, expected = -1.0, None
            for t in grid:
                macro, _, _ = f1_scores(labels, (scores >= t).astype(int))
                if macro > best:
                    best, expected = macro, t
            assert fit_threshold(scores, labels) == pytest.approx(expected)

    def test_separable_scores(self):
        threshold = fit_threshold(np.array([0.1, 0.2, 0.7, 0.8]), np.array([0, 0, 1, 1]))
        assert 0.2 < threshold <= 0.7
        assert threshold == pytest.approx(0.45)

    def test_single_class(self):
        with pytest.raises(DegenerateLabelsError):
            fit_threshold(np.array([0.1, 0.9]), np.array([1, 1]))


class TestVotes:
    def _members(self, samples):
        candidates = {combo: [Candidate(combo, 'mlp', _scores_for(samples, True))]
                      for combo in enumerate_combos()}
        return build_committee(candidates, samples), candidate_sample_set(candidates, samples)

    def test_vote_matrix_shape(self, samples):
        members, scored = self._members(samples)
        votes = committee_predict(members, scored)
        assert votes.shape == (15, len(samples))
        assert votes.dtype == np.int8
        np.testing.assert_array_equal(votes[0], samples.labels)

    def test_score_on_threshold_votes_positive(self):
        samples = SampleSet(('a', 'b', 'c', 'd'), ('val',) * 4, np.array([0, 0, 1, 1]))
        scores = np.array([0.1, 0.2, 0.3, 0.4])
        members = [CommitteeMember(combo=combo, algorithm='mlp', threshold=0.3, val_bce=0.5,
                                   val_f1=1.0, model='shared')
                   for combo in enumerate_combos()]
        votes = committee_predict(members, samples.with_scores({'shared': scores}))
        for row in votes:
            np.testing.assert_array_equal(row, [0, 0, 1, 1])

    def test_incomplete_committee(self, samples):
        members, scored = self._members(samples)
        with pytest.raises(IncompleteCommitteeError):
            committee_predict(members[:14], scored)


class TestFiles:
    def _write_candidates(self, directory, samples, algorithm='mlp'):
        for combo in enumerate_combos():
            write_scores(str(directory / f"{combo.name}_{algorithm}.csv"), samples.ids,
                         _scores_for(samples, True))

    def test_load_candidates_groups_by_combo(self, tmp_path, samples):
        self._write_candidates(tmp_path, samples)
        (tmp_path / 'notes.csv').write_text("id,score\n")
        grouped = load_candidates(str(tmp_path), samples)
        assert len(grouped) == 15
        assert grouped[ComboMask(3)][0].name == 'text+audio_mlp'

    def test_gather_rejects_duplicate_models(self, tmp_path, samples):
        first, second = tmp_path / 'a', tmp_path / 'b'
        first.mkdir()
        second.mkdir()
        self._write_candidates(first, samples)
        self._write_candidates(second, samples)
        with pytest.raises(DuplicateIdError):
            gather_candidates([str(first), str(second)], samples)

    def test_gather_merges_directories(self, tmp_path, samples):
        first, second = tmp_path / 'a', tmp_path / 'b'
        first.mkdir()
        second.mkdir()
        self._write_candidates(first, samples, 'mlp')
        self._write_candidates(second, samples, 'gbdt')
        grouped = gather_candidates([str(first), str(second)], samples)
        assert [c.algorithm for c in grouped[ComboMask(15)]] == ['mlp', 'gbdt']

    def test_committee_round_trip_and_votes_by_split(self, tmp_path, samples):
        candidates_dir = tmp_path / 'candidates'
        candidates_dir.mkdir()
        self._write_candidates(candidates_dir, samples)
        members = build_committee(load_candidates(str(candidates_dir), samples), samples)
        path = str(tmp_path / 'out' / 'committee.json')
        save_committee(path, members)
        payload = json.loads(open(path).read())
        assert payload['members'][0]['scores_path'].startswith('..')

        restored = load_committee(path)
        assert [m.threshold for m in restored] == [m.threshold for m in members]
        votes, labels = votes_by_split(restored, samples)
        assert votes['train'].shape == (15, 3)
        assert votes['val'].shape == (15, 4)
        assert votes['test'].shape == (15, 1)
        np.testing.assert_array_equal(labels['val'], [0, 1, 0, 1])
