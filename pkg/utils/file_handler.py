import hashlib
import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from utils.data_model import EmbeddingSequence, Modality, load_embedding_sequence
from utils.errors import ParseError
from utils.logger import get_logger

logger = get_logger(__name__)

_DIGEST_BLOCK = 1 << 20


class FileHandler:
    """Handles file operations for per-video input directories and run outputs"""

    def __init__(self, threads: int = 1):
        self.threads = max(1, threads)
        self.embedding_extensions = ['.csv']

    def scan_directory(self, directory: str, extensions: Optional[Sequence[str]] = None) -> Dict[str, str]:
        """
        Map file stems to paths for every matching file in a directory

        Args:
            directory: Directory to scan (not recursive)
            extensions: Accepted suffixes; defaults to embedding CSVs

        Returns:
            Dict of stem -> path, sorted by stem
        """
        if not os.path.isdir(directory):
            raise ParseError(f"Directory not found: {directory}")
        extensions = [e.lower() for e in (extensions or self.embedding_extensions)]
        found = {}
        for path in sorted(Path(directory).iterdir()):
            if path.is_file() and path.suffix.lower() in extensions:
                found[path.stem] = str(path)
        return found

    def read_embedding_directory(self, directory: str, modality: Modality,
                                 ids: Sequence[str]) -> Dict[str, EmbeddingSequence]:
        """
        Load ``<id>.csv`` embedding sequences for the given ids

        Args:
            directory: Directory of per-video embedding CSVs
            modality: Modality of the embeddings
            ids: Video ids to load

        Returns:
            Dict of id -> EmbeddingSequence, in ``ids`` order
        """
        available = self.scan_directory(directory)
        missing = [i for i in ids if i not in available]
        if missing:
            raise ParseError(f"{directory}: no {modality.tag} embeddings for "
                             f"{', '.join(missing[:5])}")

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            sequences = list(pool.map(
                lambda i: load_embedding_sequence(available[i], modality, i), ids))

        dims = {s.dim for s in sequences}
        if len(dims) > 1:
            raise ParseError(f"{directory}: {modality.tag} embeddings have mixed dimensions "
                             f"{sorted(dims)}")
        logger.debug(f"Read {len(sequences)} {modality.tag} sequences from {directory}")
        return dict(zip(ids, sequences))

    def file_digest(self, file_path: str) -> str:
        """SHA-256 of a file's content"""
        digest = hashlib.sha256()
        with open(file_path, 'rb') as f:
            for block in iter(lambda: f.read(_DIGEST_BLOCK), b''):
                digest.update(block)
        return digest.hexdigest()

    def directory_digest(self, directory: str) -> str:
        """Digest over the names and contents of every file below a directory"""
        digest = hashlib.sha256()
        root = Path(directory)
        for path in sorted(p for p in root.rglob('*') if p.is_file()):
            digest.update(str(path.relative_to(root)).encode('utf-8'))
            digest.update(self.file_digest(str(path)).encode('ascii'))
        return digest.hexdigest()

    def path_digest(self, path: Optional[str]) -> Optional[str]:
        if not path:
            return None
        if os.path.isdir(path):
            return self.directory_digest(path)
        return self.file_digest(path)

    def write_json(self, file_path: str, payload: Any) -> str:
        """Write sorted, indented UTF-8 JSON"""
        os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        return file_path

    def clear_directory(self, directory: str) -> str:
        """Remove a stage output directory and recreate it empty"""
        if os.path.isdir(directory):
            shutil.rmtree(directory)
            logger.info(f"Cleared {directory}")
        os.makedirs(directory, exist_ok=True)
        return directory
