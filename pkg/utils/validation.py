from typing import Any, Dict, Mapping, Sequence

import numpy as np

from utils.data_model import SPLITS, SampleSet


class Validator:
    """Handles validation of manifests, input coverage and feature tables"""

    def __init__(self, required_splits: Sequence[str] = ("train", "val")):
        self.required_splits = tuple(required_splits)

    def validate_sample_set(self, samples: SampleSet) -> Dict[str, Any]:
        """
        Check that every required split exists and holds both classes

        Args:
            samples: Manifest samples

        Returns:
            Dict containing validation results
        """
        validation_results = {
            'valid': True,
            'errors': [],
            'warnings': [],
            'statistics': {}
        }

        splits = np.asarray(samples.splits)
        for split in SPLITS:
            labels = samples.labels[splits == split]
            validation_results['statistics'][split] = {
                'count': int(labels.size),
                'positives': int(labels.sum()),
            }
            if split in self.required_splits:
                if labels.size == 0:
                    validation_results['errors'].append(f"Split '{split}' is empty")
                    validation_results['valid'] = False
                elif np.unique(labels).size < 2:
                    validation_results['errors'].append(f"Split '{split}' contains a single class")
                    validation_results['valid'] = False
            elif labels.size == 0:
                validation_results['warnings'].append(f"Split '{split}' is empty")

        return validation_results

    def validate_coverage(self, available: Mapping[str, str], ids: Sequence[str],
                          what: str) -> Dict[str, Any]:
        """
        Compare the ids found in an input directory against the manifest ids

        Args:
            available: id -> path found on disk
            ids: Manifest ids
            what: Input name used in messages

        Returns:
            Dict containing coverage results
        """
        missing = [i for i in ids if i not in available]
        extra = sorted(set(available) - set(ids))
        result = {
            'valid': not missing,
            'errors': [],
            'warnings': [],
            'missing': missing,
            'extra': extra,
        }
        if missing:
            preview = ', '.join(missing[:5]) + (' ...' if len(missing) > 5 else '')
            result['errors'].append(f"{what}: {len(missing)} manifest ids have no file ({preview})")
        if extra:
            result['warnings'].append(f"{what}: {len(extra)} files are not in the manifest")
        return result

    @staticmethod
    def merge_results(results: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
        """Combine several validation dicts into one"""
        merged = {'valid': True, 'errors': [], 'warnings': []}
        for result in results:
            merged['valid'] = merged['valid'] and result.get('valid', True)
            merged['errors'].extend(result.get('errors', []))
            merged['warnings'].extend(result.get('warnings', []))
        return merged
