import threading

import pytest
from fastapi.testclient import TestClient
from hypothesis import given, settings
from hypothesis import strategies as st

from bloomstack.store import (
    AlreadyExists,
    BlobStore,
    BlobTooLarge,
    InvalidName,
    InvalidPath,
    NotFound,
    UnknownContainer,
)
from bloomstack.store.api import create_store_app


@pytest.fixture
def store(tmp_path):
    events = []
    s = BlobStore(tmp_path / "root", publish=events.append)
    s.events = events  # test-side convenience
    s.create_container("batch")
    s.create_container("stream")
    return s


class TestContainers:
    def test_create_and_list(self, store):
        assert store.list_containers() == ["batch", "stream"]

    def test_duplicate_rejected(self, store):
        with pytest.raises(AlreadyExists):
            store.create_container("batch")

    @pytest.mark.parametrize("name", ["B!", "ab", "UPPER", "x" * 64, "sp ace"])
    def test_invalid_names(self, store, name):
        with pytest.raises(InvalidName):
            store.create_container(name)


class TestPutGet:
    def test_round_trip(self, store):
        body = b"\x00\x01binary\xff" * 100
        blob = store.put_blob("stream", "imgs/a.jpg", body, "image/jpeg")
        assert blob.version == 1
        assert blob.size == len(body)
        got = store.get_blob("stream", "imgs/a.jpg")
        assert got.data == body
        assert got.content_type == "image/jpeg"

    def test_overwrite_bumps_version_and_last_writer_wins(self, store):
        store.put_blob("stream", "a.bin", b"one")
        blob2 = store.put_blob("stream", "a.bin", b"two")
        assert blob2.version == 2
        assert store.get_blob("stream", "a.bin").data == b"two"
        kinds = [e.kind for e in store.events]
        assert kinds == ["BlobCreated", "BlobCreated"]

    def test_get_missing(self, store):
        with pytest.raises(NotFound):
            store.get_blob("batch", "missing.jpg")

    def test_unknown_container(self, store):
        with pytest.raises(UnknownContainer):
            store.put_blob("nope", "a", b"x")
        with pytest.raises(UnknownContainer):
            store.list_blobs("nope")

    @pytest.mark.parametrize(
        "path", ["/abs", "a/../b", "..", "a//b", "", "a/", "nul\x00byte", "back\\slash"]
    )
    def test_invalid_paths(self, store, path):
        with pytest.raises(InvalidPath):
            store.put_blob("stream", path, b"x")

    def test_size_cap(self, tmp_path):
        s = BlobStore(tmp_path / "r", max_blob_bytes=10)
        s.create_container("box")
        with pytest.raises(BlobTooLarge):
            s.put_blob("box", "big", b"x" * 11)

    @settings(max_examples=30, deadline=None)
    @given(body=st.binary(max_size=2048), name=st.from_regex(r"[a-z0-9]{1,12}(/[a-z0-9]{1,12}){0,2}", fullmatch=True))
    def test_round_trip_property(self, tmp_path_factory, body, name):
        root = tmp_path_factory.mktemp("prop")
        s = BlobStore(root)
        s.create_container("box")
        s.put_blob("box", name, body)
        assert s.get_blob("box", name).data == body


class TestListDelete:
    def test_list_sorted_with_prefix(self, store):
        for path in ("july08/b.jpg", "july08/a.jpg", "july14/c.jpg"):
            store.put_blob("batch", path, b"x")
        entries = store.list_blobs("batch", "")
        assert [e.path for e in entries] == ["july08/a.jpg", "july08/b.jpg", "july14/c.jpg"]
        assert [e.path for e in store.list_blobs("batch", "july08/")] == [
            "july08/a.jpg",
            "july08/b.jpg",
        ]

    def test_list_empty(self, store):
        assert store.list_blobs("batch") == []

    def test_delete_then_get(self, store):
        store.put_blob("batch", "x.bin", b"x")
        store.delete_blob("batch", "x.bin")
        with pytest.raises(NotFound):
            store.get_blob("batch", "x.bin")
        assert [e.kind for e in store.events] == ["BlobCreated", "BlobDeleted"]

    def test_delete_missing_no_event(self, store):
        with pytest.raises(NotFound):
            store.delete_blob("batch", "missing")
        assert store.events == []


class TestEvents:
    def test_exact_counts(self, store):
        for i in range(10):
            store.put_blob("batch", f"f{i}", b"x")
        for i in range(4):
            store.delete_blob("batch", f"f{i}")
        created = [e for e in store.events if e.kind == "BlobCreated"]
        deleted = [e for e in store.events if e.kind == "BlobDeleted"]
        assert len(created) == 10 and len(deleted) == 4
        assert len({e.event_id for e in store.events}) == 14

    def test_event_not_before_readable(self, tmp_path):
        seen = []

        def probing_publish(event):
            # At publish time the blob must already round-trip.
            blob = s.get_blob(event.container, event.path)
            seen.append((event.path, blob.size == event.size))

        s = BlobStore(tmp_path / "r", publish=probing_publish)
        s.create_container("box")
        s.put_blob("box", "a", b"hello")
        s.put_blob("box", "b", b"hi")
        assert seen == [("a", True), ("b", True)]

    def test_batch_ingest_event_volume(self, tmp_path):
        # Desk-scale rerun of the 9,000-image / 157.6 MB batch ingest.
        counter = {"created": 0, "bytes": 0}

        def count(event):
            counter["created"] += 1
            counter["bytes"] += event.size

        s = BlobStore(tmp_path / "bulk", publish=count)
        s.create_container("batch")
        body = bytes(17_511)
        for i in range(9_000):
            s.put_blob("batch", f"july08/f{i:05d}.jpg", body, "image/jpeg")
        assert counter["created"] == 9_000
        assert counter["bytes"] == 9_000 * 17_511  # ~157.6 MB
        assert len(s.list_blobs("batch")) == 9_000


class TestConcurrency:
    def test_distinct_paths_parallel(self, store):
        bodies = {f"p{i}": bytes([i]) * 4096 for i in range(16)}
        threads = [
            threading.Thread(target=store.put_blob, args=("stream", p, b))
            for p, b in bodies.items()
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for p, b in bodies.items():
            assert store.get_blob("stream", p).data == b

    def test_same_path_atomic_replace(self, store):
        bodies = [b"A" * 8192, b"B" * 8192]
        threads = [
            threading.Thread(target=store.put_blob, args=("stream", "contested", body))
            for body in bodies
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        final = store.get_blob("stream", "contested")
        assert final.version == 2
        assert final.data in bodies
        versions = sorted(e.size for e in store.events)  # both writes emitted
        assert len(versions) == 2


class TestPersistence:
    def test_reopen_preserves_index(self, tmp_path):
        root = tmp_path / "r"
        s1 = BlobStore(root)
        s1.create_container("box")
        s1.put_blob("box", "a", b"one")
        s1.put_blob("box", "a", b"two")
        s1.put_blob("box", "gone", b"x")
        s1.delete_blob("box", "gone")

        s2 = BlobStore(root)
        blob = s2.get_blob("box", "a")
        assert blob.data == b"two"
        assert blob.version == 2
        with pytest.raises(NotFound):
            s2.get_blob("box", "gone")
        # Versions keep increasing after reopen.
        assert s2.put_blob("box", "a", b"three").version == 3


class TestRestApi:
    @pytest.fixture
    def api(self, store):
        return TestClient(create_store_app(store))

    def test_put_get_round_trip(self, api):
        r = api.put(
            "/v1/containers/stream/blobs/imgs/a.jpg",
            content=b"JPEGDATA",
            headers={"Content-Type": "image/jpeg"},
        )
        assert r.status_code == 201
        assert r.json() == {"container": "stream", "path": "imgs/a.jpg", "size": 8, "version": 1}
        r = api.get("/v1/containers/stream/blobs/imgs/a.jpg")
        assert r.status_code == 200
        assert r.content == b"JPEGDATA"
        assert r.headers["content-type"].startswith("image/jpeg")

    def test_unknown_container_404(self, api):
        assert api.put("/v1/containers/nope/blobs/a", content=b"x").status_code == 404
        assert api.get("/v1/containers/nope/blobs/a").status_code == 404

    def test_invalid_path_400(self, api):
        assert api.put("/v1/containers/stream/blobs/a/%2E%2E/b", content=b"x").status_code == 400
        assert api.put("/v1/containers/stream/blobs/a//b", content=b"x").status_code == 400

    def test_list_with_prefix(self, api):
        api.put("/v1/containers/batch/blobs/july08/a.jpg", content=b"1")
        api.put("/v1/containers/batch/blobs/july14/b.jpg", content=b"2")
        r = api.get("/v1/containers/batch/blobs", params={"prefix": "july08/"})
        assert r.status_code == 200
        assert [e["path"] for e in r.json()] == ["july08/a.jpg"]

    def test_delete(self, api):
        api.put("/v1/containers/batch/blobs/x", content=b"1")
        assert api.delete("/v1/containers/batch/blobs/x").status_code == 204
        assert api.get("/v1/containers/batch/blobs/x").status_code == 404

    def test_create_container(self, api):
        assert api.post("/v1/containers", json={"name": "output"}).status_code == 201
        assert api.post("/v1/containers", json={"name": "output"}).status_code == 409
        assert api.post("/v1/containers", json={"name": "B!"}).status_code == 400

    def test_stats_counting(self, api):
        api.post("/v1/stats/reset")
        api.put("/v1/containers/batch/blobs/one", content=b"1")
        api.get("/v1/containers/batch/blobs/one")
        stats = api.get("/v1/stats").json()
        assert stats["requests"] == 2
        assert stats["inflight"] == 0
        assert stats["max_inflight"] >= 1
