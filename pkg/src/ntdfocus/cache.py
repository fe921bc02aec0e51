"""On-disk cache of NtD kernels.

Each entry is ``<key>.npy`` plus a ``<key>.json`` sidecar holding the build
metadata and the SHA-256 of the array bytes.  The key hashes everything the
kernel depends on (profile digest, N, T, solver grid), so a changed profile
misses the cache.  Writes go through a temporary file and ``os.replace``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .medium import MediumProfile
from .ntd import NtdOperator
from .signals import TimeGrid
from .wave_forward import SolverGrid, build_ntd

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CacheCorruptError(RuntimeError):
    pass


def cache_key(profile: MediumProfile, tgrid: TimeGrid, sgrid: SolverGrid) -> str:
    payload = {
        "format": FORMAT_VERSION,
        "profile": profile.digest(),
        "N": tgrid.N,
        "T": repr(float(tgrid.T)),
        "n_x": sgrid.n_x,
        "n_t": sgrid.n_t,
        "x_max": repr(float(sgrid.x_max)),
        "cfl_factor": repr(float(sgrid.cfl_factor)),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class NtdCache:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def paths(self, key: str) -> tuple[Path, Path]:
        return self.root / f"{key}.npy", self.root / f"{key}.json"

    def store(self, key: str, ntd: NtdOperator) -> None:
        arr_path, meta_path = self.paths(key)
        with tempfile.TemporaryFile() as fh:
            np.save(fh, np.asarray(ntd.kernel))
            fh.seek(0)
            data = fh.read()
        _atomic_write(arr_path, data)
        meta = {"sha256": hashlib.sha256(data).hexdigest(), "meta": ntd.meta,
                "N": ntd.grid.N, "T": ntd.grid.T}
        _atomic_write(meta_path, json.dumps(meta, sort_keys=True, indent=2).encode())

    def load(self, key: str) -> NtdOperator | None:
        """Cached operator, ``None`` on a miss; raises on checksum mismatch."""
        arr_path, meta_path = self.paths(key)
        if not (arr_path.exists() and meta_path.exists()):
            return None
        try:
            meta = json.loads(meta_path.read_text())
        except (OSError, ValueError) as exc:
            raise CacheCorruptError(f"unreadable cache metadata {meta_path}: {exc}") from exc
        if _sha256(arr_path) != meta.get("sha256"):
            raise CacheCorruptError(f"checksum mismatch for {arr_path}")
        kernel = np.load(arr_path, allow_pickle=False)
        return NtdOperator(kernel=kernel, grid=TimeGrid(meta["N"], meta["T"]),
                           meta=meta.get("meta", {}))

    def get_or_build(
        self,
        profile: MediumProfile,
        tgrid: TimeGrid,
        sgrid: SolverGrid,
        force: bool = False,
    ) -> tuple[NtdOperator, str]:
        """Return ``(operator, status)`` with status ``hit``, ``built`` or
        ``rebuilt`` (after a forced or corruption-triggered rebuild)."""
        key = cache_key(profile, tgrid, sgrid)
        status = "built"
        if force:
            status = "rebuilt"
        else:
            try:
                ntd = self.load(key)
                if ntd is not None:
                    return ntd, "hit"
            except CacheCorruptError as exc:
                log.warning("%s; rebuilding", exc)
                status = "rebuilt"
        ntd = build_ntd(profile, tgrid, sgrid)
        self.store(key, ntd)
        return ntd, status
