import logging
import math

import numpy as np
import pytest

from src.engine import cache
from src.engine.action import precompute_action
from src.engine.basis import enumerate_basis
from src.engine.cache import SUFFIX, list_entries, load_or_build, load_table, purge, save_table
from src.errors import CacheIntegrityError
from src.geometry.couplings import compute_couplings
from src.geometry.layout import build_chain
from src.hamiltonian.builders import build_secular_hamiltonian


@pytest.fixture
def system():
    layout = build_chain(3, 0.154, 1.0)
    hamiltonian = build_secular_hamiltonian(layout, compute_couplings(layout))
    return hamiltonian, enumerate_basis(3)


def test_cached_table_matches_fresh_build(system, tmp_path):
    hamiltonian, basis = system
    built = load_or_build(hamiltonian, basis, directory=tmp_path, layout="target")
    entries = list_entries(tmp_path)
    assert len(entries) == 1
    assert entries[0]["basis_hash"] == basis.content_hash
    assert entries[0]["hamiltonian_hash"] == hamiltonian.content_hash()
    loaded = load_or_build(hamiltonian, basis, directory=tmp_path, layout="target")
    np.testing.assert_array_equal(loaded.to_dense(), built.to_dense())
    np.testing.assert_array_equal(built.to_dense(), precompute_action(hamiltonian, basis, layout="target").to_dense())


def test_chunked_build_leaves_no_partial_files(system, tmp_path):
    hamiltonian, basis = system
    table = load_or_build(hamiltonian, basis, directory=tmp_path, layout="source", chunk_size=7)
    assert not list(tmp_path.glob("*.part*"))
    np.testing.assert_array_equal(table.to_dense(), precompute_action(hamiltonian, basis).to_dense())


def test_corrupt_file_is_detected_and_rebuilt(system, tmp_path, caplog):
    hamiltonian, basis = system
    table = load_or_build(hamiltonian, basis, directory=tmp_path, layout="target")
    path = next(tmp_path.glob(f"*{SUFFIX}"))
    raw = path.read_bytes()
    path.write_bytes(raw[:-16] + bytes(16))
    with pytest.raises(CacheIntegrityError):
        load_table(path, basis, hamiltonian, "target")
    with caplog.at_level(logging.WARNING):
        rebuilt = load_or_build(hamiltonian, basis, directory=tmp_path, layout="target")
    assert "重新构建" in caplog.text
    np.testing.assert_array_equal(rebuilt.to_dense(), table.to_dense())
    load_table(path, basis, hamiltonian, "target")


def test_header_mismatch_is_rejected(system, tmp_path):
    hamiltonian, basis = system
    table = precompute_action(hamiltonian, basis, layout="target")
    path = save_table(table, basis, hamiltonian, tmp_path)
    other = hamiltonian.scaled(2.0)
    with pytest.raises(CacheIntegrityError, match="hamiltonian_hash"):
        load_table(path, basis, other, "target")


def test_truncated_file_is_rejected(system, tmp_path):
    hamiltonian, basis = system
    path = save_table(precompute_action(hamiltonian, basis), basis, hamiltonian, tmp_path)
    path.write_bytes(b"not a header")
    with pytest.raises(CacheIntegrityError):
        load_table(path, basis, hamiltonian, "target")


def test_disabled_cache_writes_nothing(system, tmp_path):
    hamiltonian, basis = system
    load_or_build(hamiltonian, basis, directory=tmp_path, use_cache=False)
    assert list_entries(tmp_path) == []


def test_purge_removes_entries(system, tmp_path):
    hamiltonian, basis = system
    load_or_build(hamiltonian, basis, directory=tmp_path, layout="target")
    load_or_build(hamiltonian.scaled(0.5), basis, directory=tmp_path, layout="target")
    assert len(list_entries(tmp_path)) == 2
    assert purge(tmp_path) == 2
    assert list_entries(tmp_path) == []
    assert purge(tmp_path / "missing") == 0


def test_resume_with_other_chunk_size_ignores_misaligned_parts(system, tmp_path, monkeypatch, caplog):
    hamiltonian, basis = system

    def interrupted(*args, **kwargs):
        raise RuntimeError("interrupted")

    monkeypatch.setattr(cache, "finish_table", interrupted)
    with pytest.raises(RuntimeError):
        load_or_build(hamiltonian, basis, directory=tmp_path, layout="target", chunk_size=5)
    parts = list(tmp_path.glob("*.part*"))
    assert len(parts) == math.ceil(len(basis) / 5)
    monkeypatch.undo()

    with caplog.at_level(logging.WARNING):
        resumed = load_or_build(hamiltonian, basis, directory=tmp_path, layout="target", chunk_size=20)
    assert "rows mismatch" in caplog.text
    np.testing.assert_array_equal(resumed.to_dense(), precompute_action(hamiltonian, basis, layout="target").to_dense())
    assert not list(tmp_path.glob("*.part*"))
