"""
Utilities for writing artifacts safely and describing them in manifests.
"""
# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.

from __future__ import annotations

import hashlib
import json
import os
import shutil
from contextlib import contextmanager

from jupyter_core.utils import ensure_dir_exists

MANIFEST_NAME = "manifest.json"


def replace_file(src, dst):
    """replace dst with src"""
    os.replace(src, dst)


def copy2_safe(src, dst, log=None):
    """copy src to dst

    like shutil.copy2, but log errors in copystat instead of raising
    """
    shutil.copyfile(src, dst)
    try:
        shutil.copystat(src, dst)
    except OSError:
        if log:
            log.debug("copystat on %s failed", dst, exc_info=True)


def path_to_intermediate(path):
    """Name of the intermediate file used in atomic writes."""
    dirname, basename = os.path.split(path)
    return os.path.join(dirname, ".~" + basename)


@contextmanager
def atomic_writing(path, text=True, encoding="utf-8", log=None, **kwargs):
    """Context manager to write to a file only if the entire write is successful.

    This works by copying the previous file contents to a temporary file in the
    same directory, and renaming that file back to the target if the context
    exits with an error. If the context is successful, the new data is synced to
    disk and the temporary file is removed.

    Parameters
    ----------
    path : str
        The target file to write to.
    text : bool, optional
        Whether to open the file in text mode (i.e. to write unicode). Default is
        True.
    encoding : str, optional
        The encoding to use for files opened in text mode. Default is UTF-8.
    **kwargs
        Passed to :func:`io.open`.
    """
    path = os.fspath(path)
    if os.path.islink(path):
        path = os.path.join(os.path.dirname(path), os.readlink(path))

    parent = os.path.dirname(path)
    if parent:
        ensure_dir_exists(parent)

    tmp_path = path_to_intermediate(path)

    if os.path.isfile(path):
        copy2_safe(path, tmp_path, log=log)

    try:
        if text:
            # Unix linefeeds keep the files byte-identical across platforms
            kwargs.setdefault("newline", "\n")
            fileobj = open(path, "w", encoding=encoding, **kwargs)  # noqa: SIM115
        else:
            fileobj = open(path, "wb", **kwargs)  # noqa: SIM115
    except OSError as e:
        raise OSError(e.errno, f"cannot write {path}: {e.strerror}") from e

    try:
        yield fileobj
    except BaseException:
        # Failed! Move the backup file back to the real path to avoid corruption
        fileobj.close()
        if os.path.isfile(tmp_path):
            replace_file(tmp_path, path)
        else:
            os.remove(path)
        raise

    # Flush to disk
    fileobj.flush()
    os.fsync(fileobj.fileno())
    fileobj.close()

    # Written successfully, now remove the backup copy
    if os.path.isfile(tmp_path):
        os.remove(tmp_path)


def file_checksum(path, algorithm="sha256", chunk_size=1 << 20):
    """Hex digest of a file's bytes."""
    digest = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, artifacts, log=None):
    """Write ``manifest.json`` under ``out_dir`` listing each artifact's checksum.

    ``artifacts`` are paths, absolute or relative to ``out_dir``. Returns the
    manifest path.
    """
    out_dir = os.fspath(out_dir)
    entries = []
    for artifact in sorted({os.path.relpath(os.path.join(out_dir, a), out_dir) for a in artifacts}):
        full = os.path.join(out_dir, artifact)
        entries.append(
            {
                "path": artifact.replace(os.sep, "/"),
                "sha256": file_checksum(full),
                "bytes": os.path.getsize(full),
            }
        )
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    with atomic_writing(manifest_path, log=log) as f:
        f.write(json.dumps({"artifacts": entries}, indent=2, sort_keys=True))
        f.write("\n")
    return manifest_path
