import json
import os

import pytest

from msp_pretrain.fileio import MANIFEST_NAME, atomic_writing, file_checksum, write_manifest


class CustomExc(Exception):
    pass


def test_atomic_writing(tmp_path):
    f1 = tmp_path / "penguin"
    f1.write_text("Before")

    with pytest.raises(CustomExc), atomic_writing(str(f1)) as f:
        f.write("Failing write")
        raise CustomExc

    # should have restored the original file
    assert f1.read_text() == "Before"
    assert not (tmp_path / ".~penguin").exists()

    with atomic_writing(str(f1)) as f:
        f.write("Overwritten")
    assert f1.read_text() == "Overwritten"
    assert not (tmp_path / ".~penguin").exists()


def test_atomic_writing_new_file_removed_on_error(tmp_path):
    path = tmp_path / "fresh.txt"
    with pytest.raises(CustomExc), atomic_writing(path) as f:
        f.write("partial")
        raise CustomExc
    assert not path.exists()


def test_atomic_writing_creates_parents(tmp_path):
    path = tmp_path / "a" / "b" / "c.txt"
    with atomic_writing(path) as f:
        f.write("x\n")
    assert path.read_text() == "x\n"


def test_atomic_writing_unix_newlines(tmp_path):
    path = tmp_path / "lines.txt"
    with atomic_writing(path) as f:
        f.write("a\nb\n")
    assert path.read_bytes() == b"a\nb\n"


def test_atomic_writing_binary(tmp_path):
    path = tmp_path / "blob.bin"
    with atomic_writing(path, text=False) as f:
        f.write(b"\x00\x01\xff")
    assert path.read_bytes() == b"\x00\x01\xff"


@pytest.mark.skipif(os.name == "nt", reason="symlinks need privileges on windows")
def test_atomic_writing_through_symlink(tmp_path):
    target = tmp_path / "target.txt"
    target.write_text("old")
    link = tmp_path / "link.txt"
    link.symlink_to(target)
    with atomic_writing(link) as f:
        f.write("new")
    assert link.is_symlink()
    assert target.read_text() == "new"


def test_file_checksum(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    assert file_checksum(path) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    path.write_bytes(b"abc")
    assert file_checksum(path, chunk_size=1) == file_checksum(path)


def test_write_manifest(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "a.txt").write_text("alpha")
    (tmp_path / "sub" / "b.txt").write_text("beta!")
    path = write_manifest(tmp_path, ["sub/b.txt", str(tmp_path / "a.txt"), "a.txt"])
    assert os.path.basename(path) == MANIFEST_NAME
    data = json.loads((tmp_path / MANIFEST_NAME).read_text())
    entries = data["artifacts"]
    assert [e["path"] for e in entries] == ["a.txt", "sub/b.txt"]
    assert entries[0]["bytes"] == 5
    assert entries[1]["sha256"] == file_checksum(tmp_path / "sub" / "b.txt")
