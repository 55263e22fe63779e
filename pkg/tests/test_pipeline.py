import numpy as np
import pytest

from svalign.data import DataError, DocumentPair, FormatError
from svalign.fbank import IdenticalPair
from svalign.pipeline import (
    THREADS_ENV,
    AudioStore,
    Detection,
    align_pairs,
    blacklists,
    detect_pairs,
    map_ordered,
    read_detections,
    resolve_threads,
    write_detections,
)
from svalign.synth import SynthConfig, generate


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    assert resolve_threads(4) == 4
    monkeypatch.setenv(THREADS_ENV, "6")
    assert resolve_threads(None) == 6
    assert resolve_threads(2) == 2
    with pytest.raises(DataError):
        resolve_threads(0)


def test_map_ordered_keeps_order():
    items = list(range(50))
    assert map_ordered(lambda x: x * x, items, 4) == [x * x for x in items]


def test_detections_round_trip(tmp_path):
    dets = [Detection(DocumentPair("a", "b"), IdenticalPair(1, 2, 0.03, 0.5)),
            Detection(DocumentPair("c", "d"), IdenticalPair(0, 0, 0.0, 0.0))]
    p = tmp_path / "d.tsv"
    write_detections(p, dets)
    assert read_detections(p) == dets
    src, tgt = blacklists(dets)
    assert src == {"a": {1}, "c": {0}} and tgt == {"b": {2}, "d": {0}}


def test_detections_bad_line(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("a|b\t1\t2\t0.0\t0.0\nab\t1\t2\t0.0\t0.0\n")
    with pytest.raises(FormatError) as err:
        read_detections(p)
    assert err.value.line == 2


def test_audio_store_errors(tmp_path):
    with pytest.raises(DataError, match="missing audio"):
        AudioStore(tmp_path).samples("x")
    store = AudioStore(arrays={"x": np.zeros(100, np.int16)})
    with pytest.raises(DataError, match="document x"):
        store.fbank("x", 0.0, 0.001)


def test_detect_pairs_finds_planted_and_is_thread_independent():
    c = generate(SynthConfig(n_pairs=3, segs_per_doc=(10, 14), identical_rate=0.2, with_audio=True, seed=8))
    store = AudioStore(arrays=c.audio)
    one = detect_pairs(c.pairs, c.src_segments, c.tgt_segments, store, threads=1)
    three = detect_pairs(c.pairs, c.src_segments, c.tgt_segments, store, threads=3)
    assert one == three
    found = {(d.pair.src_doc_id, d.hit.src_index, d.pair.tgt_doc_id, d.hit.tgt_index) for d in one}
    assert found == {(p.src_doc, p.src_index, p.tgt_doc, p.tgt_index) for p in c.identical}


def test_align_pairs_thread_independent():
    c = generate(SynthConfig(n_pairs=4, segs_per_doc=(20, 30), seed=2))
    a = align_pairs(c.pairs, c.src_embeddings, c.tgt_embeddings, threads=1)
    b = align_pairs(c.pairs, c.src_embeddings, c.tgt_embeddings, threads=4)
    assert a == b


def test_align_pair_unknown_document():
    c = generate(SynthConfig(n_pairs=1, segs_per_doc=(5, 5)))
    with pytest.raises(DataError, match="no embeddings for document zz"):
        align_pairs([DocumentPair("zz", c.pairs[0].tgt_doc_id)], c.src_embeddings, c.tgt_embeddings)
