import hashlib
import json
import os
from datetime import datetime
from typing import Any, Dict, List, Sequence

from utils.logger import get_logger

logger = get_logger(__name__)


def stage_key(stage: str, inputs: Dict[str, Any]) -> str:
    """Content key of a stage: SHA-256 over its name and canonical JSON inputs"""
    canonical = json.dumps({'stage': stage, 'inputs': inputs}, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class CacheManager:
    """Tracks pipeline stage outputs by content key so unchanged stages are reused"""

    def __init__(self, cache_dir: str):
        self.cache_dir = cache_dir
        self.metadata_file = os.path.join(cache_dir, "cache_metadata.json")
        os.makedirs(self.cache_dir, exist_ok=True)

    def _load_all_metadata(self) -> Dict[str, Any]:
        """Load all stage metadata; a missing or unreadable file means an empty cache"""
        if not os.path.exists(self.metadata_file):
            return {}
        try:
            with open(self.metadata_file, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Ignoring unreadable cache metadata {self.metadata_file}: {str(e)}")
            return {}

    def _save_all_metadata(self, metadata: Dict[str, Any]):
        with open(self.metadata_file, 'w', encoding='utf-8') as f:
            json.dump(metadata, f, indent=2, sort_keys=True, ensure_ascii=False)

    def is_cached(self, stage: str, key: str) -> bool:
        """
        Whether a stage with this key completed and all of its outputs still exist

        Args:
            stage: Stage name
            key: Content key from stage_key()

        Returns:
            bool
        """
        entry = self._load_all_metadata().get(stage)
        if not entry or entry.get('key') != key:
            return False
        return all(os.path.exists(path) for path in entry.get('outputs', []))

    def record(self, stage: str, key: str, outputs: Sequence[str]):
        """Store the key and outputs of a completed stage"""
        metadata = self._load_all_metadata()
        metadata[stage] = {
            'key': key,
            'outputs': list(outputs),
            'datetime': datetime.now().isoformat(),
        }
        self._save_all_metadata(metadata)

    def outputs(self, stage: str) -> List[str]:
        return list(self._load_all_metadata().get(stage, {}).get('outputs', []))
