"""Committee of 15 members, one per modality combination.

For each combination the candidate with the lowest validation BCE wins, then a
decision threshold is fitted on the validation macro F1 of the winner.
"""
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.data_model import SPLITS, ComboMask, SampleSet, load_scores
from utils.errors import (AmbivoteError, DegenerateLabelsError, DuplicateIdError, EmptyInputError,
                          IncompleteCommitteeError, MissingCandidatesError, ParseError,
                          ShapeError)
from utils.logger import get_logger
from utils.metrics import batch_f1_macro, bce, f1_scores

logger = get_logger(__name__)

COMMITTEE_SIZE = 15
# Rows of the (thresholds x samples) prediction matrix evaluated per block
_THRESHOLD_BLOCK = 512


@dataclass(frozen=True)
class Candidate:
    combo: ComboMask
    algorithm: str
    scores: np.ndarray
    model: str = ""
    scores_path: Optional[str] = None

    @property
    def name(self) -> str:
        return self.model or f"{self.combo.name}_{self.algorithm}"


@dataclass(frozen=True)
class CandidateReport:
    model: str
    algorithm: str
    val_bce: float
    val_f1: float


@dataclass(frozen=True)
class CommitteeMember:
    combo: ComboMask
    algorithm: str
    threshold: float
    val_bce: float
    val_f1: float
    model: str = ""
    scores_path: Optional[str] = None
    candidates: Tuple[CandidateReport, ...] = field(default_factory=tuple)

    @property
    def name(self) -> str:
        return self.model or f"{self.combo.name}_{self.algorithm}"


def enumerate_combos() -> List[ComboMask]:
    """The 15 non-empty modality subsets in ascending mask order"""
    return [ComboMask(mask) for mask in range(1, COMMITTEE_SIZE + 1)]


def fit_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Threshold maximising macro F1 of ``score >= t``

    Candidates are the midpoints between consecutive distinct scores plus 0.5;
    ties go to the smallest candidate.

    Args:
        scores: Validation probabilities
        labels: Validation labels (both classes present)

    Returns:
        Best threshold
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} differ")
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError("Threshold fitting needs both classes in the labels")

    distinct = np.unique(scores)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.unique(np.append(midpoints, 0.5))

    best_f1, best_threshold = -1.0, 0.5
    for start in range(0, len(thresholds), _THRESHOLD_BLOCK):
        block = thresholds[start:start + _THRESHOLD_BLOCK]
        f1 = batch_f1_macro(scores[None, :] >= block[:, None], labels)
        index = int(np.argmax(f1))
        if f1[index] > best_f1:
            best_f1, best_threshold = float(f1[index]), float(block[index])
    return best_threshold


def _candidate_report(candidate: Candidate, val_mask: np.ndarray,
                      val_labels: np.ndarray) -> CandidateReport:
    val_scores = candidate.scores[val_mask]
    macro, _, _ = f1_scores(val_labels, (val_scores >= 0.5).astype(int))
    return CandidateReport(model=candidate.name, algorithm=candidate.algorithm,
                           val_bce=bce(val_labels, val_scores), val_f1=macro)


def select_member(candidates: Sequence[Candidate], samples: SampleSet) -> CommitteeMember:
    """
    Pick the candidate with the lowest validation BCE and fit its threshold

    Args:
        candidates: Candidates of a single combination, in tie-break order
        samples: Manifest-aligned samples (labels and splits)

    Returns:
        CommitteeMember
    """
    if not candidates:
        raise MissingCandidatesError("No candidates supplied for this combination")
    combos = {c.combo for c in candidates}
    if len(combos) != 1:
        raise ShapeError(f"Candidates mix combinations: {', '.join(sorted(map(str, combos)))}")

    val_mask = np.array([s == "val" for s in samples.splits], dtype=bool)
    if not val_mask.any():
        raise EmptyInputError("Validation split is empty")
    val_labels = samples.labels[val_mask]

    reports = []
    for candidate in candidates:
        if np.shape(candidate.scores) != (len(samples),):
            raise ShapeError(f"Candidate '{candidate.name}' has {np.shape(candidate.scores)} "
                             f"scores for {len(samples)} samples")
        reports.append(_candidate_report(candidate, val_mask, val_labels))

    # np.argmin returns the first minimum, so input order breaks ties
    winner_index = int(np.argmin([r.val_bce for r in reports]))
    winner = candidates[winner_index]
    val_scores = winner.scores[val_mask]
    threshold = fit_threshold(val_scores, val_labels)
    val_f1, _, _ = f1_scores(val_labels, (val_scores >= threshold).astype(int))

    member = CommitteeMember(combo=winner.combo, algorithm=winner.algorithm, threshold=threshold,
                             val_bce=reports[winner_index].val_bce, val_f1=val_f1,
                             model=winner.name, scores_path=winner.scores_path,
                             candidates=tuple(reports))
    logger.debug(f"Committee {member.combo.name}: {member.algorithm} bce={member.val_bce:.4f} "
                 f"threshold={threshold:.4f} f1={val_f1:.4f}")
    return member


def build_committee(candidates: Mapping[ComboMask, Sequence[Candidate]], samples: SampleSet,
                    threads: int = 1) -> List[CommitteeMember]:
    """Select one member for each of the 15 combinations"""
    combos = enumerate_combos()
    missing = [c.name for c in combos if not candidates.get(c)]
    if missing:
        raise MissingCandidatesError(f"No candidates for combinations: {', '.join(missing)}")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        members = list(pool.map(lambda combo: select_member(candidates[combo], samples), combos))
    return members


def _ordered_members(members: Sequence[CommitteeMember]) -> List[CommitteeMember]:
    by_mask: Dict[int, CommitteeMember] = {}
    for member in members:
        if member.combo.mask in by_mask:
            raise IncompleteCommitteeError(f"Two members for combination {member.combo.name}")
        by_mask[member.combo.mask] = member
    missing = [c.name for c in enumerate_combos() if c.mask not in by_mask]
    if missing:
        raise IncompleteCommitteeError(f"Committee lacks members for: {', '.join(missing)}")
    return [by_mask[mask] for mask in range(1, COMMITTEE_SIZE + 1)]


def committee_predict(members: Sequence[CommitteeMember], samples: SampleSet) -> np.ndarray:
    """
    Binary votes of every member on every sample

    Returns:
        (15 x n) int8 matrix; vote is 1 iff score >= threshold
    """
    ordered = _ordered_members(members)
    votes = np.zeros((COMMITTEE_SIZE, len(samples)), dtype=np.int8)
    for row, member in enumerate(ordered):
        votes[row] = samples.score(member.name) >= member.threshold
    return votes


def load_candidates(directory: str, samples: SampleSet) -> Dict[ComboMask, List[Candidate]]:
    """
    Read every ``<combo>_<algorithm>.csv`` score file in a directory

    Files are grouped by combination and ordered by file name within a group.

    Args:
        directory: Candidate directory
        samples: Manifest the scores are joined onto

    Returns:
        Candidates keyed by ComboMask
    """
    if not os.path.isdir(directory):
        raise ParseError(f"Candidate directory not found: {directory}")

    grouped: Dict[ComboMask, List[Candidate]] = {}
    for path in sorted(Path(directory).glob("*.csv")):
        combo_text, sep, algorithm = path.stem.partition("_")
        if not sep or not algorithm:
            logger.warning(f"Skipping {path.name}: expected <combo>_<algorithm>.csv")
            continue
        try:
            combo = ComboMask.parse(combo_text)
        except AmbivoteError:
            logger.warning(f"Skipping {path.name}: unknown combination '{combo_text}'")
            continue
        scores = load_scores(str(path), samples.ids)
        grouped.setdefault(combo, []).append(
            Candidate(combo=combo, algorithm=algorithm, scores=scores, model=path.stem,
                      scores_path=str(path)))

    logger.info(f"Loaded {sum(len(v) for v in grouped.values())} candidates "
                f"for {len(grouped)} combinations from {directory}")
    return grouped


def gather_candidates(directories: Sequence[str],
                      samples: SampleSet) -> Dict[ComboMask, List[Candidate]]:
    """
    Merge the candidates of several directories; model names must be unique

    Args:
        directories: Candidate directories, in tie-break order
        samples: Manifest the scores are joined onto

    Returns:
        Candidates keyed by ComboMask
    """
    grouped: Dict[ComboMask, List[Candidate]] = {}
    seen = set()
    for directory in directories:
        for combo, candidates in load_candidates(directory, samples).items():
            for candidate in candidates:
                if candidate.name in seen:
                    raise DuplicateIdError(f"Candidate '{candidate.name}' appears in more "
                                           f"than one candidate directory")
                seen.add(candidate.name)
            grouped.setdefault(combo, []).extend(candidates)
    return grouped


def candidate_sample_set(candidates: Mapping[ComboMask, Sequence[Candidate]],
                         samples: SampleSet) -> SampleSet:
    """Attach every candidate's scores to the samples under its model name"""
    return samples.with_scores({c.name: c.scores for group in candidates.values() for c in group})


def committee_to_dict(members: Sequence[CommitteeMember], base_dir: Optional[str] = None) -> dict:
    def _path(path):
        if path is None:
            return None
        if base_dir:
            return os.path.relpath(os.path.abspath(path), os.path.abspath(base_dir))
        return path

    return {
        'members': [
            {
                'combo': m.combo.name,
                'mask': m.combo.mask,
                'algorithm': m.algorithm,
                'model': m.name,
                'threshold': m.threshold,
                'val_bce': m.val_bce,
                'val_f1': m.val_f1,
                'scores_path': _path(m.scores_path),
                'candidates': [
                    {'model': c.model, 'algorithm': c.algorithm, 'val_bce': c.val_bce,
                     'val_f1': c.val_f1}
                    for c in m.candidates
                ],
            }
            for m in _ordered_members(members)
        ]
    }


def save_committee(path: str, members: Sequence[CommitteeMember]):
    """Write committee.json; score paths are stored relative to the file"""
    base_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(committee_to_dict(members, base_dir), f, indent=2)


def load_committee(path: str) -> List[CommitteeMember]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
        base_dir = os.path.dirname(os.path.abspath(path))
        members = []
        for item in payload['members']:
            scores_path = item.get('scores_path')
            if scores_path and not os.path.isabs(scores_path):
                scores_path = os.path.normpath(os.path.join(base_dir, scores_path))
            members.append(CommitteeMember(
                combo=ComboMask(int(item['mask'])),
                algorithm=str(item['algorithm']),
                threshold=float(item['threshold']),
                val_bce=float(item['val_bce']),
                val_f1=float(item['val_f1']),
                model=str(item.get('model', '')),
                scores_path=scores_path,
                candidates=tuple(CandidateReport(c['model'], c['algorithm'], float(c['val_bce']),
                                                 float(c['val_f1']))
                                 for c in item.get('candidates', [])),
            ))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Error reading committee {path}: {str(e)}")
    return _ordered_members(members)


def committee_sample_set(members: Sequence[CommitteeMember], samples: SampleSet) -> SampleSet:
    """Join each member's score file onto the manifest samples"""
    scores = {}
    for member in members:
        if not member.scores_path:
            raise MissingCandidatesError(f"Member {member.name} has no score file")
        scores[member.name] = load_scores(member.scores_path, samples.ids)
    return samples.with_scores(scores)


def votes_by_split(members: Sequence[CommitteeMember],
                   samples: SampleSet) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Committee votes and labels per split

    Args:
        members: The 15 members, with score files
        samples: Manifest samples

    Returns:
        (votes, labels) keyed by split; votes are (15 x n_split)
    """
    scored = committee_sample_set(members, samples)
    votes = committee_predict(members, scored)
    splits = np.asarray(scored.splits)
    return ({s: votes[:, splits == s] for s in SPLITS},
            {s: scored.labels[splits == s] for s in SPLITS})
