"""Extractor contract tests.

The engine package is imported here only to validate emitted files; the
extractor itself never depends on it.
"""

import numpy as np
import pytest
import torch

from openpatch import read_class_map, read_embedding_sets
from openpatch_extractor import (
    ExtractionSpec,
    extract,
    load_backbone,
    load_dataset,
    octahedral_rotations,
    sample_features,
    save_checkpoint,
)
from openpatch_extractor.cli import main
from openpatch_extractor.pointops import normalize_cloud, resample_points

POINTS = 128  # enough for every backbone's FPS plan, fast to embed


def make_dataset(tmp_path, classes=("bolt", "bracket"), per_class=2, duplicate=False):
    rng = np.random.default_rng(5)
    root = tmp_path / "clouds"
    base_cloud = rng.standard_normal((200, 3))
    for ci, name in enumerate(classes):
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for i in range(per_class):
            cloud = base_cloud if duplicate else rng.standard_normal((150 + 40 * ci + i, 3))
            np.save(class_dir / f"sample{i}.npy", cloud)
    unk = root / "UNKNOWN"
    unk.mkdir()
    np.savetxt(unk / "odd.xyz", rng.standard_normal((170, 3)))
    return root


def spec_for(backbone, layer, ckpt, **kw):
    return ExtractionSpec(
        backbone=backbone, layer=layer, checkpoint=str(ckpt), points_per_cloud=POINTS, **kw
    )


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpts")
    paths = {}
    for tag in ("pointnet2", "epn", "transformer", "sparse-conv"):
        path = root / f"{tag}.pt"
        save_checkpoint(tag, path, seed=3)
        paths[tag] = path
    return paths


class TestEngineValidation:
    @pytest.mark.parametrize(
        "backbone,layer,channels",
        [
            ("pointnet2", "sa2", 128),
            ("epn", "block4", 64),
            ("transformer", "block3", 96),
            ("sparse-conv", "conv3", 56),
        ],
    )
    def test_outputs_pass_engine_read(self, tmp_path, checkpoints, backbone, layer, channels):
        root = make_dataset(tmp_path)
        out = tmp_path / f"{backbone}.opbk"
        summary = extract(spec_for(backbone, layer, checkpoints[backbone]), root, out)
        sets = read_embedding_sets(out)  # engine-side validation
        assert summary["channels"] == channels
        assert all(s.dim == channels for s in sets)
        assert all(s.anchors is not None and s.global_embedding is not None for s in sets)
        assert [s.label for s in sets] == [0, 0, 1, 1, -1]

    def test_class_map_written(self, tmp_path, checkpoints):
        root = make_dataset(tmp_path)
        out = tmp_path / "embeds.opbk"
        extract(spec_for("transformer", "block1", checkpoints["transformer"]), root, out)
        assert read_class_map(tmp_path / "classes.map") == {0: "bolt", 1: "bracket"}


class TestRotationAggregation:
    def test_max_pool_dominates_every_rotation(self, checkpoints):
        spec = spec_for("epn", "block2", checkpoints["epn"])
        model = load_backbone(spec)
        rng = np.random.default_rng(11)
        cloud = normalize_cloud(resample_points(rng.standard_normal((300, 3)), POINTS))
        with torch.no_grad():
            stack, _ = model(torch.from_numpy(cloud))["layers"]["block2"]
        assert stack.dim() == 3 and stack.shape[1] == 24  # (P, R, C)
        pooled = stack.max(dim=1).values
        for r in range(stack.shape[1]):
            assert (pooled >= stack[:, r, :]).all()

    def test_extracted_features_equal_manual_pool(self, checkpoints):
        spec = spec_for("epn", "block2", checkpoints["epn"])
        model = load_backbone(spec)
        rng = np.random.default_rng(12)
        cloud = rng.standard_normal((256, 3))
        feats, _, _ = sample_features(model, spec, cloud)
        prepared = normalize_cloud(resample_points(cloud, POINTS))
        with torch.no_grad():
            stack, _ = model(torch.from_numpy(prepared))["layers"]["block2"]
        assert np.array_equal(feats, stack.max(dim=1).values.numpy())

    def test_rotation_set_is_a_group_of_rotations(self):
        mats = octahedral_rotations()
        assert mats.shape == (24, 3, 3)
        for m in mats:
            assert torch.allclose(m @ m.T, torch.eye(3), atol=1e-6)
            assert float(torch.det(m)) == pytest.approx(1.0, abs=1e-6)


class TestDeterminism:
    def test_duplicated_cloud_yields_identical_records(self, tmp_path, checkpoints):
        root = make_dataset(tmp_path, classes=("only",), per_class=2, duplicate=True)
        out = tmp_path / "dup.opbk"
        extract(spec_for("pointnet2", "sa2", checkpoints["pointnet2"]), root, out)
        sets = read_embedding_sets(out)
        first, second = sets[0], sets[1]
        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.anchors, second.anchors)
        assert np.array_equal(first.global_embedding, second.global_embedding)

    def test_repeated_extraction_is_byte_identical(self, tmp_path, checkpoints):
        root = make_dataset(tmp_path)
        out_a, out_b = tmp_path / "a.opbk", tmp_path / "b.opbk"
        spec = spec_for("sparse-conv", "conv2", checkpoints["sparse-conv"])
        extract(spec, root, out_a)
        extract(spec, root, out_b)
        assert out_a.read_bytes() == out_b.read_bytes()


class TestSpecValidation:
    def test_invalid_layer_for_backbone(self, checkpoints):
        with pytest.raises(ValueError, match="not valid"):
            spec_for("pointnet2", "block4", checkpoints["pointnet2"])

    def test_rotation_agg_rejected_off_epn(self, checkpoints):
        with pytest.raises(ValueError, match="rotation-discretized"):
            spec_for("transformer", "block1", checkpoints["transformer"], rotation_aggregation="max")

    def test_checkpoint_backbone_mismatch(self, checkpoints):
        spec = spec_for("epn", "block1", checkpoints["pointnet2"])
        with pytest.raises(ValueError, match="backbone"):
            load_backbone(spec)

    def test_missing_checkpoint(self, tmp_path):
        spec = spec_for("pointnet2", "sa1", tmp_path / "nope.pt")
        with pytest.raises(ValueError, match="does not exist"):
            load_backbone(spec)

    def test_too_few_points_rejected(self, checkpoints):
        with pytest.raises(ValueError, match="at least"):
            ExtractionSpec(
                backbone="pointnet2", layer="sa1",
                checkpoint=str(checkpoints["pointnet2"]), points_per_cloud=16,
            )


class TestDataset:
    def test_empty_dataset_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError, match="no point-cloud files"):
            load_dataset(tmp_path / "empty")

    def test_unknown_dir_labels(self, tmp_path):
        root = make_dataset(tmp_path)
        samples, names = load_dataset(root)
        assert names == {0: "bolt", 1: "bracket"}
        assert [s.label for s in samples] == [0, 0, 1, 1, -1]


class TestCli:
    def test_init_and_extract_round_trip(self, tmp_path):
        root = make_dataset(tmp_path)
        ckpt = tmp_path / "ckpt.pt"
        out = tmp_path / "cli.opbk"
        assert main(["init-ckpt", "--backbone", "pointnet2", "--seed", "1", "--out", str(ckpt)]) == 0
        assert (
            main(
                [
                    "extract",
                    "--backbone", "pointnet2",
                    "--layer", "sa2",
                    "--ckpt", str(ckpt),
                    "--data", str(root),
                    "--out", str(out),
                    "--points", str(POINTS),
                ]
            )
            == 0
        )
        sets = read_embedding_sets(out)
        assert sets[0].dim == 128

    def test_mismatched_checkpoint_is_data_error(self, tmp_path):
        root = make_dataset(tmp_path)
        ckpt = tmp_path / "ckpt.pt"
        main(["init-ckpt", "--backbone", "transformer", "--out", str(ckpt)])
        code = main(
            [
                "extract",
                "--backbone", "epn",
                "--layer", "block1",
                "--ckpt", str(ckpt),
                "--data", str(root),
                "--out", str(tmp_path / "x.opbk"),
                "--points", str(POINTS),
            ]
        )
        assert code == 3
