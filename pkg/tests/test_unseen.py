import json

import numpy as np
import pytest

from dts_forge.codec import encode_task, reconstruct_model
from dts_forge.errors import (
    BaseMismatch,
    DimensionMismatch,
    EmptyInput,
    WeightTaskMismatch,
    ZeroNormEmbedding,
)
from dts_forge.lowrank import CodecConfig
from dts_forge.tensor_store import DeltaMap, TensorMap, content_fingerprint
from dts_forge.unseen import (
    TaskEmbedding,
    load_embeddings,
    merge_for_unseen,
    similarity_weights,
)


def _emb(name, vec):
    return TaskEmbedding(name, np.asarray(vec, dtype=np.float64))


def test_orthogonal_pair():
    w = similarity_weights(_emb("u", [1, 0]), [_emb("a", [1, 0]), _emb("b", [0, 1])])
    assert w.as_dict() == {"a": pytest.approx(1.0), "b": pytest.approx(0.0)}


def test_identical_embeddings_uniform():
    seen = [_emb(f"t{i}", [1, 1, 0]) for i in range(4)]
    w = similarity_weights(_emb("u", [1, 1, 0]), seen)
    for _, g in w.weights:
        assert g == pytest.approx(0.25)


def test_all_negative_cosines_fall_back_to_uniform():
    w = similarity_weights(_emb("u", [1, 0]), [_emb("a", [-1, 0]), _emb("b", [0, 1])])
    assert w.as_dict() == {"a": pytest.approx(0.5), "b": pytest.approx(0.5)}


def test_weights_nonnegative_and_normalized():
    rng = np.random.default_rng(0)
    for _ in range(50):
        seen = [_emb(f"t{i}", rng.standard_normal(8)) for i in range(5)]
        w = similarity_weights(_emb("u", rng.standard_normal(8)), seen)
        gammas = [g for _, g in w.weights]
        assert all(g >= 0 for g in gammas)
        assert abs(sum(gammas) - 1.0) <= 1e-12


def test_permutation_equivariance():
    rng = np.random.default_rng(1)
    seen = [_emb(f"t{i}", rng.standard_normal(6)) for i in range(4)]
    target = _emb("u", rng.standard_normal(6))
    w1 = similarity_weights(target, seen).as_dict()
    w2 = similarity_weights(target, seen[::-1]).as_dict()
    assert w1 == w2


def test_scale_invariance():
    rng = np.random.default_rng(2)
    seen = [_emb(f"t{i}", rng.standard_normal(6)) for i in range(3)]
    target = _emb("u", rng.standard_normal(6))
    w1 = similarity_weights(target, seen).as_dict()
    scaled = [TaskEmbedding(e.task_name, 7.5 * e.vector) for e in seen]
    w2 = similarity_weights(TaskEmbedding("u", 0.3 * target.vector), scaled).as_dict()
    for name in w1:
        assert w1[name] == pytest.approx(w2[name], abs=1e-12)


def test_embedding_validation():
    with pytest.raises(ZeroNormEmbedding):
        _emb("z", [0.0, 0.0])
    with pytest.raises(EmptyInput):
        similarity_weights(_emb("u", [1, 0]), [])
    with pytest.raises(DimensionMismatch):
        similarity_weights(_emb("u", [1, 0]), [_emb("a", [1, 0, 0])])


def _setup_archives(seed, n_tasks=2):
    rng = np.random.default_rng(seed)
    base = TensorMap({
        "w": rng.standard_normal((6, 4)).astype(np.float32),
        "b": rng.standard_normal(4).astype(np.float32),
    })
    fp = content_fingerprint(base)
    archives = []
    deltas = []
    for i in range(n_tasks):
        delta = TensorMap({k: rng.standard_normal(v.shape).astype(np.float32) for k, v in base})
        deltas.append(delta)
        archives.append(encode_task(f"t{i}", DeltaMap(delta), fp, CodecConfig(r=1.0)))
    return base, archives, deltas


def test_single_archive_full_weight_equals_reconstruct():
    base, archives, _ = _setup_archives(3, n_tasks=1)
    w = similarity_weights(_emb("u", [1.0, 0.5]), [_emb("t0", [1.0, 0.5])])
    fused = merge_for_unseen(base, archives, w)
    assert fused == reconstruct_model(base, archives[0])


def test_opposite_deltas_cancel_under_uniform_weights():
    rng = np.random.default_rng(4)
    base = TensorMap({"b": rng.standard_normal(12).astype(np.float32)})
    fp = content_fingerprint(base)
    # sign-symmetric values with even group sizes: both medians fall between
    # data points, so the groups of -x mirror those of x and decode negates
    g = np.abs(rng.standard_normal(6)).astype(np.float32) + 0.1
    delta = TensorMap({"b": np.concatenate([g, -g])})
    neg = TensorMap({"b": -delta["b"]})
    a1 = encode_task("t0", DeltaMap(delta), fp, CodecConfig(r=1.0))
    a2 = encode_task("t1", DeltaMap(neg), fp, CodecConfig(r=1.0))
    w = similarity_weights(_emb("u", [1, 1]), [_emb("t0", [1, 1]), _emb("t1", [1, 1])])
    fused = merge_for_unseen(base, [a1, a2], w)
    np.testing.assert_array_equal(fused["b"], base["b"])


def test_fusion_affine_in_weights():
    from dts_forge.unseen import MergeWeights

    base, archives, _ = _setup_archives(5, n_tasks=2)
    w1 = MergeWeights([("t0", 1.0), ("t1", 0.0)])
    w2 = MergeWeights([("t0", 0.0), ("t1", 1.0)])
    wm = MergeWeights([("t0", 0.5), ("t1", 0.5)])
    f1 = merge_for_unseen(base, archives, w1)
    f2 = merge_for_unseen(base, archives, w2)
    fm = merge_for_unseen(base, archives, wm)
    for name in base.names():
        interp = 0.5 * f1[name].astype(np.float64) + 0.5 * f2[name].astype(np.float64)
        np.testing.assert_allclose(fm[name], interp, atol=1e-5)


def test_fusion_base_and_name_checks():
    from dts_forge.unseen import MergeWeights

    base, archives, _ = _setup_archives(6, n_tasks=2)
    other = TensorMap({k: v + 1 for k, v in base})
    good = MergeWeights([("t0", 0.5), ("t1", 0.5)])
    with pytest.raises(BaseMismatch):
        merge_for_unseen(other, archives, good)
    with pytest.raises(WeightTaskMismatch):
        merge_for_unseen(base, archives, MergeWeights([("t0", 1.0)]))


def test_load_embeddings_file(tmp_path):
    doc = {"dimension": 3, "tasks": {"a": [1, 0, 0], "b": [0, 1, 0]}, "target": [1, 1, 0]}
    path = tmp_path / "emb.json"
    path.write_text(json.dumps(doc))
    target, seen = load_embeddings(path)
    assert [e.task_name for e in seen] == ["a", "b"]
    assert target.vector.tolist() == [1.0, 1.0, 0.0]
    with pytest.raises(DimensionMismatch):
        doc["target"] = [1, 0]
        path.write_text(json.dumps(doc))
        load_embeddings(path)
