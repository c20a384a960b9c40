import json
import multiprocessing as mp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitprint import fingerprint as FP
from fitprint import package_io as PIO
from fitprint import registry as R
from fitprint.models import build_mlp, save_model


def _files(tmp_path, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(size=(4, 1, 4, 4))
    pkg = FP.FingerprintPackage(FP.random_target(2, 2, seed=seed), FP.MappingConfig(mu=2, nu=2), x0,
                                np.zeros_like(x0), FP.ExtractionConfig())
    p, m = tmp_path / f"p{seed}.fpp", tmp_path / f"m{seed}.fpm"
    PIO.save_package(pkg, p)
    save_model(build_mlp(3, input_shape=(1, 4, 4), seed=seed), m)
    return p, m


def test_register_and_lookup(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    p, m = _files(tmp_path, 0)
    rec = reg.register("alice", p, m)
    assert rec.seq == 1 and rec.record_id == "rec-00000001"
    assert reg.lookup(R.sha256_file(p)) == [rec]
    assert reg.lookup(R.sha256_file(m)) == [rec]
    assert reg.lookup(owner="bob") == []
    assert reg.check_artifact(rec.package_digest) and reg.check_artifact(rec.model_digest)
    assert R.Registry(tmp_path / "reg").records == [rec]


def test_duplicate_package_rejected(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    p, m = _files(tmp_path, 0)
    reg.register("alice", p, m)
    with pytest.raises(R.RegistryError, match="already registered"):
        reg.register("mallory", p, m)
    assert len(reg.records) == 1


def test_unreadable_package_rejected(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    _, m = _files(tmp_path, 0)
    (tmp_path / "bad.fpp").write_bytes(b"junk")
    with pytest.raises(R.RegistryError, match="cannot register"):
        reg.register("alice", tmp_path / "bad.fpp", m)
    assert reg.records == []


def test_precedence():
    a = R.RegistryRecord(1, "rec-00000001", "a", "x", "y", 0.0)
    b = R.RegistryRecord(2, "rec-00000002", "b", "z", "w", 0.0)
    assert R.precedence(a, b) == "a_first"
    assert R.precedence(b, a) == "b_first"
    with pytest.raises(ValueError):
        R.precedence(a, a)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=2, max_size=2, unique=True))
def test_precedence_antisymmetric(seqs):
    a, b = (R.RegistryRecord(s, f"rec-{s:08d}", "o", "p", "m", 0.0) for s in seqs)
    assert {R.precedence(a, b), R.precedence(b, a)} == {"a_first", "b_first"}


def test_wall_clock_does_not_decide_order(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    recs = [reg.register("o", *_files(tmp_path, s)) for s in range(2)]
    lines = (tmp_path / "reg" / R.LOG_NAME).read_text().splitlines()
    first = json.loads(lines[0])
    first.pop("check")
    first["wall_time"] = 9e12  # a later timestamp on the earlier record
    first["check"] = R._check(first)
    lines[0] = json.dumps(first, sort_keys=True, separators=(",", ":"))
    (tmp_path / "reg" / R.LOG_NAME).write_text("\n".join(lines) + "\n")
    again = R.Registry(tmp_path / "reg").records
    assert R.precedence(again[0], again[1]) == "a_first"
    assert again[1] == recs[1]


@pytest.mark.parametrize("cut", [1, 10, 40, -1])
def test_torn_tail_dropped_and_store_reusable(tmp_path, cut):
    reg = R.Registry(tmp_path / "reg")
    first = reg.register("o", *_files(tmp_path, 0))
    line = R.RegistryRecord(2, "rec-00000002", "o", "a" * 64, "b" * 64, 1.0).to_line()
    torn = line[:cut] if cut > 0 else line[:-2] + "\n"  # cut=-1: complete line with a broken check
    with open(tmp_path / "reg" / R.LOG_NAME, "a") as fh:
        fh.write(torn)
    reopened = R.Registry(tmp_path / "reg")
    assert reopened.records == [first]
    second = reopened.register("o", *_files(tmp_path, 1))
    assert second.seq == 2
    assert R.Registry(tmp_path / "reg").records == [first, second]


def test_corrupt_middle_line_reported(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    for s in range(3):
        reg.register("o", *_files(tmp_path, s))
    log = tmp_path / "reg" / R.LOG_NAME
    lines = log.read_text().splitlines()
    lines[1] = lines[1].replace('"owner":"o"', '"owner":"x"')
    log.write_text("\n".join(lines) + "\n")
    with pytest.raises(R.RegistryError, match="line 2"):
        R.Registry(tmp_path / "reg")


def _worker(args):
    root, path_p, path_m = args
    try:
        return R.Registry(root).register("w", path_p, path_m).seq
    except R.RegistryError:
        return None


def test_concurrent_writers_get_distinct_sequence_numbers(tmp_path):
    pairs = [_files(tmp_path, s) for s in range(6)]
    root = tmp_path / "reg"
    R.Registry(root)
    with mp.get_context("fork").Pool(3) as pool:
        seqs = pool.map(_worker, [(root, p, m) for p, m in pairs])
    assert sorted(seqs) == list(range(1, 7))
    assert [r.seq for r in R.Registry(root).records] == list(range(1, 7))


def test_artifact_tamper_detected(tmp_path):
    reg = R.Registry(tmp_path / "reg")
    rec = reg.register("o", *_files(tmp_path, 0))
    reg.artifact_path(rec.package_digest).write_bytes(b"tampered")
    assert not reg.check_artifact(rec.package_digest)
