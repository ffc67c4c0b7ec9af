import hashlib
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cimf.errors import Duplicate, IntegrityError, NotFound
from cimf.hashing import EMPTY_DIGEST, canonical_json, digest_bytes
from cimf.store import ObjectStore, check_logical_name, stored_name_for, strip_hash


@pytest.fixture
def store(tmp_path):
    return ObjectStore(tmp_path / "objects")


def test_empty_digest_matches_hashlib():
    assert EMPTY_DIGEST == hashlib.sha256(b"").hexdigest()
    assert digest_bytes(b"") == EMPTY_DIGEST


def test_canonical_json_is_key_order_independent():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})
    assert canonical_json({"a": 1}) == b'{"a":1}'


@pytest.mark.parametrize("logical, stored", [
    ("depth.asc", "depth.{h}.asc"),
    ("logs/model.log", "logs/model.{h}.log"),
    ("Makefile", "Makefile.{h}"),
    ("model#m3/depth.asc", "model#m3/depth.{h}.asc"),
])
def test_stored_name_layout(logical, stored):
    d = digest_bytes(b"x")
    assert stored_name_for(logical, d) == stored.format(h=d[:16])
    assert strip_hash(stored_name_for(logical, d)) == logical


@pytest.mark.parametrize("bad", ["", "/abs", "a/../b", "a//b", "./a", "_index.json", "x/_y"])
def test_logical_name_rejects_unsafe(bad):
    with pytest.raises(ValueError):
        check_logical_name(bad)


def test_put_get_round_trip_and_metadata(store):
    b = store.create_bucket("run-1")
    obj = store.put(b, "depth.asc", b"hello")
    assert obj.digest == hashlib.sha256(b"hello").hexdigest()
    assert obj.size == 5
    data, meta = store.get(b, "depth.asc")
    assert data == b"hello" and meta == obj
    assert store.get(b, obj.stored_name)[0] == b"hello"


def test_identical_content_is_deduplicated(store):
    b = store.create_bucket("run-1")
    first = store.put(b, "a.txt", b"same")
    second = store.put(b, "a.txt", b"same")
    assert first == second
    assert len(store.list(b)) == 1


def test_latest_version_wins_for_logical_name(store):
    b = store.create_bucket("run-1")
    old = store.put(b, "a.txt", b"v1")
    new = store.put(b, "a.txt", b"v2")
    assert old.stored_name != new.stored_name
    assert store.get(b, "a.txt")[0] == b"v2"
    assert store.get(b, old.stored_name)[0] == b"v1"


def test_tampered_bytes_raise_integrity_error(store):
    b = store.create_bucket("run-1")
    obj = store.put(b, "a.bin", bytes(range(64)))
    path = store.path_of(obj)
    raw = bytearray(path.read_bytes())
    raw[10] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        store.get(b, "a.bin")


def test_missing_object_and_bucket(store):
    b = store.create_bucket("run-1")
    with pytest.raises(NotFound):
        store.get(b, "nope.txt")
    with pytest.raises(NotFound):
        store.get("run-2", "nope.txt")
    assert not store.exists(b, "nope.txt")


def test_create_bucket_is_idempotent(store):
    assert store.create_bucket("r") == "r"
    store.put("r", "x", b"1")
    assert store.create_bucket("r") == "r"
    assert store.get("r", "x")[0] == b"1"


def test_bucket_dir_with_stray_content_is_refused(store, tmp_path):
    (tmp_path / "objects" / "junk").mkdir(parents=True)
    (tmp_path / "objects" / "junk" / "f").write_text("?")
    with pytest.raises(Duplicate):
        store.create_bucket("junk")


def test_invalid_bucket_id(store):
    with pytest.raises(ValueError):
        store.create_bucket("../escape")


def test_list_prefix_and_order(store):
    b = store.create_bucket("r")
    for name in ["logs/b.log", "logs/a.log", "depth.asc"]:
        store.put(b, name, name.encode())
    assert [o.logical_name for o in store.list(b, "logs/")] == ["logs/a.log", "logs/b.log"]
    names = [o.stored_name for o in store.list(b)]
    assert names == sorted(names)


def test_copy_between_buckets(store):
    a, b = store.create_bucket("a"), store.create_bucket("b")
    obj = store.put(a, "x.txt", b"payload")
    copied = store.copy(obj, b, "y.txt")
    assert copied.bucket == "b" and copied.digest == obj.digest
    assert store.get(b, "y.txt")[0] == b"payload"


def test_concurrent_puts_keep_every_object(store):
    b = store.create_bucket("r")

    def worker(k):
        for i in range(20):
            store.put(b, f"w{k}/f{i}.txt", f"{k}-{i}".encode())

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(store.list(b)) == 120
    assert store.get(b, "w3/f7.txt")[0] == b"3-7"


def test_index_survives_reopen(store, tmp_path):
    b = store.create_bucket("r")
    obj = store.put(b, "x.txt", b"persist")
    again = ObjectStore(tmp_path / "objects")
    assert again.stat(b, "x.txt") == obj


names = st.from_regex(r"[a-z][a-z0-9]{0,7}(/[a-z][a-z0-9]{0,7})?(\.[a-z]{1,4})?", fullmatch=True)


@settings(max_examples=100, deadline=None)
@given(entries=st.dictionaries(names, st.binary(max_size=256), min_size=1, max_size=6),
       other=st.binary(max_size=64), flip=st.integers(min_value=0))
def test_store_properties(tmp_path_factory, entries, other, flip):
    store = ObjectStore(tmp_path_factory.mktemp("prop"))
    a, b = store.create_bucket("a"), store.create_bucket("b")
    for name, data in entries.items():
        obj = store.put(a, name, data)
        # round trip and content addressing
        assert store.get(a, name)[0] == data
        assert obj.digest == hashlib.sha256(data).hexdigest()
        assert store.put(a, name, data) == obj
    # isolation: nothing written to a is visible in b
    assert store.list(b) == []
    name = sorted(entries)[0]
    store.put(b, name, other)
    assert store.get(a, name)[0] == entries[name]
    # tamper detection
    target = next(o for o in store.list(a) if o.logical_name == name)
    data = entries[name]
    path = store.path_of(target)
    if data:
        raw = bytearray(data)
        raw[flip % len(raw)] ^= 0xFF
        path.write_bytes(bytes(raw))
    else:
        path.write_bytes(b"\x00")
    with pytest.raises(IntegrityError):
        store.get(a, target.stored_name)
