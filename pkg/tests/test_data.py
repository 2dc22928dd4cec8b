"""Tests for manifests, corpus composition, and the synthetic generator."""

import numpy as np
import pytest
from PIL import Image

from twintune.data import (
    CorpusSpec,
    Dataset,
    ManifestError,
    Sample,
    check_no_test_leakage,
    compose_corpus,
    load_image_file,
    load_manifest,
    synth_generate,
    write_manifest,
)


def make_corpus_dir(tmp_path, rows, with_files=True):
    if with_files:
        for rel, _, _ in rows:
            p = tmp_path / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            if not p.exists():
                Image.new("RGB", (8, 8), (100, 120, 140)).save(p)
    manifest = tmp_path / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


class TestLoadManifest:
    def test_reads_rows_and_infers_sorted_classes(self, tmp_path):
        rows = [
            ("img/a.png", "melanoma", "train"),
            ("img/b.png", "nevus", "test"),
            ("img/c.png", "unlabeled", "pretrain"),
        ]
        ds = load_manifest(make_corpus_dir(tmp_path, rows))
        assert len(ds) == 3
        assert ds.classes == ("melanoma", "nevus")
        assert ds.samples[2].label is None
        assert ds.samples[2].split == "pretrain"

    def test_declared_class_list_wins_over_inference(self, tmp_path):
        rows = [("a.png", "x", "train")]
        ds = load_manifest(make_corpus_dir(tmp_path, rows), classes=["x", "y", "z"])
        assert ds.classes == ("x", "y", "z")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "nope.csv")

    def test_wrong_header_reports_line_1(self, tmp_path):
        p = tmp_path / "manifest.csv"
        p.write_text("path,class,subset\na.png,x,train\n")
        with pytest.raises(ManifestError, match=r":1: expected header"):
            load_manifest(p)

    def test_bad_arity_reports_line_number(self, tmp_path):
        p = tmp_path / "manifest.csv"
        p.write_text("relative_path,label,split\na.png,x\n")
        with pytest.raises(ManifestError, match=r":2: expected 3 fields"):
            load_manifest(p)

    def test_unknown_split_reports_line_number(self, tmp_path):
        rows = [("a.png", "x", "train")]
        manifest = make_corpus_dir(tmp_path, rows)
        manifest.write_text("relative_path,label,split\na.png,x,train\nb.png,x,valid\n")
        (tmp_path / "b.png").touch()
        with pytest.raises(ManifestError, match=r":3: unknown split 'valid'"):
            load_manifest(manifest)

    def test_label_outside_declared_classes(self, tmp_path):
        rows = [("a.png", "x", "train"), ("b.png", "q", "train")]
        manifest = make_corpus_dir(tmp_path, rows)
        with pytest.raises(ManifestError, match=r":3: unknown label 'q'"):
            load_manifest(manifest, classes=["x"])

    def test_duplicate_path_split_pair(self, tmp_path):
        rows = [("a.png", "x", "train")]
        manifest = make_corpus_dir(tmp_path, rows)
        manifest.write_text(
            "relative_path,label,split\na.png,x,train\na.png,x,train\n"
        )
        with pytest.raises(ManifestError, match=r":3: duplicate entry"):
            load_manifest(manifest)

    def test_same_path_in_two_splits_is_allowed(self, tmp_path):
        rows = [("a.png", "x", "train"), ("a.png", "x", "pretrain")]
        ds = load_manifest(make_corpus_dir(tmp_path, rows))
        assert len(ds) == 2

    def test_missing_file_reports_line_number(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        write_manifest(manifest, [("ghost.png", "x", "train")])
        with pytest.raises(ManifestError, match=r":2: file not found"):
            load_manifest(manifest)

    def test_empty_manifest(self, tmp_path):
        p = tmp_path / "manifest.csv"
        p.write_text("relative_path,label,split\n")
        with pytest.raises(ManifestError, match="empty manifest"):
            load_manifest(p)


class TestDataset:
    def test_split_filters_and_targets_index_classes(self, micro_corpus):
        train = micro_corpus.split("train")
        test = micro_corpus.split("test")
        pretrain = micro_corpus.split("pretrain")
        assert len(train) == 48 and len(test) == 32 and len(pretrain) == 48
        assert micro_corpus.classes == ("class0", "class1", "class2", "class3")
        t = train.targets()
        assert t.dtype == np.int64
        assert set(t.tolist()) == {0, 1, 2, 3}

    def test_unknown_split_name_raises(self, micro_corpus):
        with pytest.raises(ValueError):
            micro_corpus.split("valid")

    def test_load_all_caches_and_stacks(self, micro_corpus):
        test = micro_corpus.split("test")
        batch = test.load_all(size=32)
        assert batch.shape == (32, 32, 32, 3)
        assert batch.dtype == np.float32
        assert 0.0 <= batch.min() and batch.max() <= 1.0
        assert test.load_all(size=32) is batch

    def test_load_image_resizes(self, micro_corpus):
        img = micro_corpus.load_image(0, size=16)
        assert img.shape == (16, 16, 3)


class TestImageDecode:
    def test_round_trip_is_exact_for_8bit_values(self, tmp_path):
        rng = np.random.default_rng(3)
        arr8 = rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8)
        p = tmp_path / "x.png"
        Image.fromarray(arr8).save(p)
        got = load_image_file(p)
        assert np.array_equal(got, arr8.astype(np.float32) / 255.0)

    def test_decode_is_deterministic(self, tmp_path):
        p = tmp_path / "y.png"
        Image.new("RGB", (32, 24), (10, 200, 30)).save(p)
        a = load_image_file(p, size=16)
        b = load_image_file(p, size=16)
        assert np.array_equal(a, b)
        assert a.shape == (16, 16, 3)


def sized_dataset(n, tag, split="pretrain"):
    samples = [Sample(f"{tag}/{i}.png", None, split) for i in range(n)]
    return Dataset(samples, ())


class TestCorpusComposition:
    def test_total_is_pure_arithmetic(self):
        spec = CorpusSpec((("isic", 2), ("derm", 1)))
        assert spec.total({"isic": 6132, "derm": 19559}) == 31823

    def test_compose_applies_multiplicity_and_order(self):
        spec = CorpusSpec((("a", 2), ("b", 1)))
        a, b = sized_dataset(3, "a"), sized_dataset(2, "b")
        out = compose_corpus(spec, {"a": a, "b": b})
        assert len(out) == 8
        paths = [s.path for s in out.samples]
        assert paths == [
            "a/0.png", "a/1.png", "a/2.png",
            "a/0.png", "a/1.png", "a/2.png",
            "b/0.png", "b/1.png",
        ]
        assert all(s.split == "pretrain" for s in out.samples)

    def test_compose_retags_train_rows_as_pretrain(self):
        spec = CorpusSpec((("a", 1),))
        ds = sized_dataset(4, "a", split="train")
        out = compose_corpus(spec, {"a": ds})
        assert all(s.split == "pretrain" for s in out.samples)

    def test_missing_component_raises(self):
        with pytest.raises(KeyError):
            compose_corpus(CorpusSpec((("a", 1),)), {})

    def test_spec_rejects_bad_multiplicity(self):
        with pytest.raises(ValueError):
            CorpusSpec((("a", 0),))
        with pytest.raises(ValueError):
            CorpusSpec(())

    def test_leakage_check_flags_shared_paths(self):
        pre = sized_dataset(3, "x")
        test = Dataset([Sample("x/1.png", "c", "test")], ("c",))
        with pytest.raises(ManifestError, match="leak"):
            check_no_test_leakage(pre, test)

    def test_leakage_check_passes_on_disjoint_sets(self):
        pre = sized_dataset(3, "x")
        test = Dataset([Sample("y/0.png", "c", "test")], ("c",))
        check_no_test_leakage(pre, test)

    def test_train_overlap_is_not_leakage(self, micro_corpus):
        # train rows double as pretrain rows by design
        check_no_test_leakage(
            micro_corpus.split("pretrain"), micro_corpus.split("test")
        )
        assert micro_corpus.split("pretrain").paths() == micro_corpus.split("train").paths()


class TestSynthGenerate:
    def test_regeneration_is_byte_identical(self, tmp_path):
        a = synth_generate(tmp_path / "a", num_classes=3, n_train=9, n_test=6, image_size=16, seed=5)
        b = synth_generate(tmp_path / "b", num_classes=3, n_train=9, n_test=6, image_size=16, seed=5)
        assert a.read_text() == b.read_text()
        for rel in ("images/class0/train_00000.png", "images/class2/test_00001.png"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_different_seed_changes_pixels(self, tmp_path):
        a = synth_generate(tmp_path / "a", num_classes=2, n_train=4, n_test=2, image_size=16, seed=0)
        c = synth_generate(tmp_path / "c", num_classes=2, n_train=4, n_test=2, image_size=16, seed=1)
        pa = a.parent / "images/class0/train_00000.png"
        pc = c.parent / "images/class0/train_00000.png"
        assert pa.read_bytes() != pc.read_bytes()

    def test_counts_and_splits(self, micro_corpus):
        train = micro_corpus.split("train")
        labels = train.labels()
        assert all(labels.count(f"class{c}") == 12 for c in range(4))
        test = micro_corpus.split("test")
        assert all(test.labels().count(f"class{c}") == 8 for c in range(4))

    def test_imbalance_weights_respected_exactly(self, tmp_path):
        manifest = synth_generate(
            tmp_path, num_classes=3, n_train=10, n_test=3, image_size=8,
            imbalance=[6, 3, 1], seed=2,
        )
        ds = load_manifest(manifest)
        labels = ds.split("train").labels()
        assert [labels.count(f"class{c}") for c in range(3)] == [6, 3, 1]

    def test_classes_are_linearly_separable_oracle(self, tmp_path):
        # least-squares on raw pixels must beat chance by a wide margin,
        # otherwise the generator carries no learnable signal
        manifest = synth_generate(
            tmp_path, num_classes=4, n_train=96, n_test=48, image_size=16, seed=7
        )
        ds = load_manifest(manifest)
        train, test = ds.split("train"), ds.split("test")
        xtr = train.load_all().reshape(len(train), -1)
        xte = test.load_all().reshape(len(test), -1)
        ytr = np.eye(4)[train.targets()]
        a = np.hstack([xtr, np.ones((len(xtr), 1))])
        coef, *_ = np.linalg.lstsq(a, ytr, rcond=None)
        pred = np.hstack([xte, np.ones((len(xte), 1))]) @ coef
        acc = float((pred.argmax(1) == test.targets()).mean())
        assert acc > 0.5

    def test_rejects_single_class(self, tmp_path):
        with pytest.raises(ValueError):
            synth_generate(tmp_path, num_classes=1, n_train=4, n_test=2)

    def test_rejects_bad_imbalance(self, tmp_path):
        with pytest.raises(ValueError):
            synth_generate(tmp_path, num_classes=3, imbalance=[1, 2])
        with pytest.raises(ValueError):
            synth_generate(tmp_path, num_classes=2, imbalance=[1, 0])
