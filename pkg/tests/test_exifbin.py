import numpy as np
import pytest

from metatrace.coredata import SampleRecord
from metatrace.exifbin import (
    Bin,
    BinningConfig,
    BinningError,
    SplitError,
    bin_exif,
    build_acquisition_split,
    default_binning_config,
    derive_smart_vs_nonsmart,
    load_binning_config,
    parse_numeric,
)


def rec(exif=None, photographer=None, sid="s0"):
    return SampleRecord(
        sample_id=sid,
        source_path="",
        semantic_label=0,
        photographer_id=photographer,
        exif=exif,
    )


class TestParseNumeric:
    def test_rational(self):
        assert parse_numeric("1/1000") == pytest.approx(0.001)

    def test_decimal(self):
        assert parse_numeric("2.8") == pytest.approx(2.8)

    def test_unit_suffix(self):
        assert parse_numeric("50 mm") == pytest.approx(50.0)

    def test_garbage(self):
        assert parse_numeric("auto") is None

    def test_zero_denominator(self):
        assert parse_numeric("1/0") is None


class TestBinExif:
    def test_exposure_canonical(self):
        config = default_binning_config("exposure")
        idx = bin_exif(rec(exif={"ExposureTime": "1/1000"}), config)
        assert config.class_names[idx] == "1/1000"

    def test_exposure_numeric_equivalent(self):
        config = default_binning_config("exposure")
        idx = bin_exif(rec(exif={"ExposureTime": "0.001"}), config)
        assert config.class_names[idx] == "1/1000"

    def test_missing_exif_is_none(self):
        config = default_binning_config("exposure")
        assert bin_exif(rec(exif=None), config) is None

    def test_aperture_outside_ladder_is_none(self):
        config = default_binning_config("aperture")
        assert bin_exif(rec(exif={"FNumber": "16"}), config) is None

    def test_aperture_in_ladder(self):
        config = default_binning_config("aperture")
        idx = bin_exif(rec(exif={"FNumber": "2.8"}), config)
        assert config.class_names[idx] == "f2.8"

    def test_iso(self):
        config = default_binning_config("iso")
        idx = bin_exif(rec(exif={"ISOSpeedRatings": "400"}), config)
        assert config.class_names[idx] == "400"

    def test_focal_with_unit(self):
        config = default_binning_config("focal")
        idx = bin_exif(rec(exif={"FocalLength": "50 mm"}), config)
        assert config.class_names[idx] == "50mm"

    def test_make_exact(self):
        config = default_binning_config("make")
        idx = bin_exif(rec(exif={"Make": "FUJIFILM"}), config)
        assert config.class_names[idx] == "FUJIFILM"

    def test_model_exact(self):
        config = default_binning_config("model_all")
        idx = bin_exif(rec(exif={"Model": "NIKON D850"}), config)
        assert config.class_names[idx] == "NIKON D850"

    def test_unparseable_value_unbinned(self):
        config = default_binning_config("iso")
        assert bin_exif(rec(exif={"ISOSpeedRatings": "Hi-1"}), config) is None

    def test_binning_is_a_function(self):
        # every ladder value maps to exactly one bin
        for family in ("exposure", "aperture", "iso", "focal"):
            config = default_binning_config(family)
            for b in config.bins:
                matches = [
                    other.name
                    for other in config.bins
                    if other.matches(b.canonical[0], b.values[0] if b.values else None)
                ]
                assert matches == [b.name]


class TestSmartVsNonsmart:
    @pytest.mark.parametrize("make,expected", [
        ("Canon", "non-smart"),
        ("NIKON CORPORATION", "non-smart"),
        ("Apple", "smart"),
        ("Google", "smart"),
        ("Leica", None),
        ("samsung", None),  # in neither allowlist
    ])
    def test_allowlists(self, make, expected):
        assert derive_smart_vs_nonsmart(rec(exif={"Make": make})) == expected

    def test_no_make_tag(self):
        assert derive_smart_vs_nonsmart(rec(exif={"Model": "X"})) is None

    def test_binary_config_routes_through_derive(self):
        config = default_binning_config("model_smart_vs_nonsmart")
        assert bin_exif(rec(exif={"Make": "Apple"}), config) == 0
        assert bin_exif(rec(exif={"Make": "Olympus"}), config) == 1


class TestBinningConfigValidation:
    def test_wrong_bin_count(self):
        with pytest.raises(BinningError):
            BinningConfig(family="iso", bins=(Bin(name="only", values=(100.0,)),))

    def test_overlapping_intervals(self):
        bins = tuple(
            Bin(name=f"b{i}", interval=(float(i), float(i) + 1.5)) for i in range(16)
        )
        with pytest.raises(BinningError):
            BinningConfig(family="iso", bins=bins)

    def test_load_from_file(self, tmp_path):
        import json

        obj = {
            "family": "iso",
            "version": "7",
            "bins": [{"name": f"b{i}", "interval": [i * 10, i * 10 + 10]} for i in range(16)],
        }
        path = tmp_path / "iso.json"
        path.write_text(json.dumps(obj))
        config = load_binning_config(path)
        assert config.version == "7"
        assert bin_exif(rec(exif={"ISOSpeedRatings": "25"}), config) == 2


def synthetic_corpus(rng, n_classes=3, per_class=600, n_photographers=60,
                     iso_values=("100", "400", "1600"), skew_photo=None):
    """ISO-family corpus: per_class images per class, photographers drawn
    at random, optionally one photographer owning 90% of class 0."""
    records = []
    sid = 0
    for c in range(n_classes):
        for i in range(per_class):
            if skew_photo is not None and c == 0 and i < int(0.9 * per_class):
                photo = skew_photo
            else:
                photo = f"ph{rng.integers(0, n_photographers)}"
            records.append(
                SampleRecord(
                    sample_id=f"s{sid}",
                    source_path="",
                    semantic_label=0,
                    photographer_id=photo,
                    exif={"ISOSpeedRatings": iso_values[c]},
                )
            )
            sid += 1
    return records


def check_split_invariants(split, n_test, n_val):
    ids = [s for s, _ in split.train] + [s for s, _ in split.val] + [s for s, _ in split.test]
    assert len(ids) == len(set(ids))  # no sample in two parts
    train_classes = np.array([c for _, c in split.train])
    counts = np.bincount(train_classes)
    counts = counts[counts > 0]
    assert counts.max() == counts.min()  # exact balance
    test_counts = np.bincount(np.array([c for _, c in split.test]))
    assert np.all(test_counts[test_counts > 0] == n_test)
    val_counts = np.bincount(np.array([c for _, c in split.val]))
    assert np.all(val_counts[val_counts > 0] == n_val)


class TestAcquisitionSplit:
    def make_photo_map(self, records):
        return {r.sample_id: r.photographer_id for r in records}

    def test_basic_split(self, rng):
        records = synthetic_corpus(rng)
        split = build_acquisition_split(
            records, "iso", seed=0, min_class_images=500, test_per_class=100, val_per_class=50
        )
        check_split_invariants(split, 100, 50)
        photo = self.make_photo_map(records)
        test_photos = {photo[s] for s, _ in split.test}
        trainval_photos = {photo[s] for s, _ in split.train} | {photo[s] for s, _ in split.val}
        assert not (test_photos & trainval_photos)

    def test_deterministic(self, rng):
        records = synthetic_corpus(rng)
        a = build_acquisition_split(records, "iso", seed=3, min_class_images=500,
                                    test_per_class=100, val_per_class=50)
        b = build_acquisition_split(records, "iso", seed=3, min_class_images=500,
                                    test_per_class=100, val_per_class=50)
        assert a.train == b.train and a.val == b.val and a.test == b.test

    def test_seed_changes_split(self, rng):
        records = synthetic_corpus(rng)
        a = build_acquisition_split(records, "iso", seed=1, min_class_images=500,
                                    test_per_class=100, val_per_class=50)
        b = build_acquisition_split(records, "iso", seed=2, min_class_images=500,
                                    test_per_class=100, val_per_class=50)
        assert a.test != b.test

    def test_skewed_photographer_never_leaks(self, rng):
        records = synthetic_corpus(rng, skew_photo="mega")
        try:
            split = build_acquisition_split(
                records, "iso", seed=0, min_class_images=400,
                test_per_class=100, val_per_class=50,
            )
        except SplitError:
            return  # loud failure is acceptable
        photo = self.make_photo_map(records)
        test_photos = {photo[s] for s, _ in split.test}
        trainval_photos = {photo[s] for s, _ in split.train} | {photo[s] for s, _ in split.val}
        assert not (test_photos & trainval_photos)

    def test_records_without_photographer_dropped(self, rng):
        records = synthetic_corpus(rng)
        records.append(rec(exif={"ISOSpeedRatings": "100"}, photographer=None, sid="orphan"))
        split = build_acquisition_split(records, "iso", seed=0, min_class_images=500,
                                        test_per_class=100, val_per_class=50)
        assert split.provenance["dropped"]["no_photographer"] == 1
        all_ids = {s for s, _ in split.train + split.val + split.test}
        assert "orphan" not in all_ids

    def test_no_surviving_class_fails(self):
        records = [rec(exif={"ISOSpeedRatings": "100"}, photographer="p", sid=f"s{i}")
                   for i in range(10)]
        with pytest.raises(SplitError):
            build_acquisition_split(records, "iso", seed=0)

    def test_model_family_protocol(self, rng):
        # 4:1 protocol: 100 test, 320 train, 80 val per class
        models = ("iPhone 11", "iPhone 7", "iPhone X")
        records = []
        sid = 0
        for c, model in enumerate(models):
            for i in range(700):
                records.append(
                    SampleRecord(
                        sample_id=f"s{sid}", source_path="", semantic_label=0,
                        photographer_id=f"ph{rng.integers(0, 80)}",
                        exif={"Model": model},
                    )
                )
                sid += 1
        split = build_acquisition_split(records, "model_smart", seed=0)
        test_counts = np.bincount(np.array([c for _, c in split.test]), minlength=12)
        assert sorted(test_counts[test_counts > 0].tolist()) == [100, 100, 100]
        train_counts = np.bincount(np.array([c for _, c in split.train]), minlength=12)
        assert sorted(train_counts[train_counts > 0].tolist()) == [320, 320, 320]
        val_counts = np.bincount(np.array([c for _, c in split.val]), minlength=12)
        assert sorted(val_counts[val_counts > 0].tolist()) == [80, 80, 80]
