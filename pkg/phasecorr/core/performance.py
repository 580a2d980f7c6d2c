import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from phasecorr.config import DEFAULT_CACHE_DIR, DEFAULT_THREADS

T = TypeVar('T')
R = TypeVar('R')

logger = logging.getLogger(__name__)


class TableCache:
    """Disk cache for tabulated functions: JSON header + packed little-endian float64 payload"""

    def __init__(self, cache_dir: Optional[Path] = None):
        self.cache_dir = Path(cache_dir or DEFAULT_CACHE_DIR)

    @staticmethod
    def _generate_cache_key(kind: str, params: Dict[str, Any]) -> str:
        """Generate unique cache key for table kind + parameters"""
        params_str = json.dumps(params, sort_keys=True)
        return hashlib.md5(f"{kind}:{params_str}".encode()).hexdigest()

    def _path(self, kind: str, params: Dict[str, Any]) -> Path:
        return self.cache_dir / f"{kind}-{self._generate_cache_key(kind, params)}.bin"

    def get(self, kind: str, params: Dict[str, Any]) -> Optional[Tuple[Dict[str, Any], np.ndarray]]:
        """Retrieve a cached table if available and consistent"""
        path = self._path(kind, params)
        if not path.is_file():
            return None
        try:
            raw = path.read_bytes()
            (header_len,) = struct.unpack('<I', raw[:4])
            header = json.loads(raw[4:4 + header_len].decode())
            payload = np.frombuffer(raw[4 + header_len:], dtype='<f8').copy()
        except (OSError, ValueError, struct.error) as e:
            logger.warning(f"Ignoring unreadable cache file {path}: {e}")
            return None
        if header.get("params") != params or payload.size != header.get("size"):
            logger.warning(f"Ignoring stale cache file {path}")
            return None
        return header, payload

    def set(self, kind: str, params: Dict[str, Any], payload: np.ndarray,
            extra: Optional[Dict[str, Any]] = None) -> Optional[Path]:
        """Cache a table; failures to write are logged, never fatal"""
        path = self._path(kind, params)
        data = np.ascontiguousarray(payload, dtype='<f8').ravel()
        header = {"kind": kind, "params": params, "size": int(data.size)}
        header.update(extra or {})
        blob = json.dumps(header, sort_keys=True).encode()
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".tmp{os.getpid()}")
            tmp.write_bytes(struct.pack('<I', len(blob)) + blob + data.tobytes())
            os.replace(tmp, path)
        except OSError as e:
            logger.warning(f"Could not write cache file {path}: {e}")
            return None
        return path


def chunk_ranges(n: int, chunk: int) -> List[Tuple[int, int]]:
    """Split [0, n) into consecutive ranges of at most `chunk` items"""
    return [(start, min(start + chunk, n)) for start in range(0, n, chunk)]


def run_ordered(func: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """Map func over items on a thread pool, returning results in input order"""
    threads = max(1, int(threads or DEFAULT_THREADS))
    if threads == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(func, items))


def ordered_sum(parts: Iterable[np.ndarray]) -> np.ndarray:
    """Reduce partial results in their given order so sums are bit-reproducible"""
    total = None
    for part in parts:
        total = part.copy() if total is None else total + part
    return total


def substream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the substream identified by (seed, *keys)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in keys))))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent integer seed for a repetition of a seeded pipeline"""
    return int(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in keys)).generate_state(1)[0])
