"""Schema building, encoding, discretization, splits, and synthetic data."""

import numpy as np
import pytest

from fcn_ctr.features import (DataError, EncodedBatch, FieldSpec, OOV_ID,
                              OOV_TOKEN, build_schema, discretize_numeric,
                              encode, read_csv, split, synth_interaction_data,
                              write_csv)
from fcn_ctr.numerics import Rng


def records_of(columns, rows):
    return [dict(zip(columns, row)) for row in rows]


class TestDiscretize:
    def test_at_two_is_one(self):
        assert discretize_numeric("2") == "1"

    def test_hundred(self):
        # (ln 100)^2 = 21.207..., floored
        assert discretize_numeric("100") == "21"

    def test_three(self):
        # (ln 3)^2 = 1.206..., floored
        assert discretize_numeric("3") == "1"

    def test_log2_mode(self):
        assert discretize_numeric("100", mode="log2") == "6"
        assert discretize_numeric("4", mode="log2") == "2"
        assert discretize_numeric("2", mode="log2") == "1"

    def test_non_finite_goes_oov(self):
        assert discretize_numeric("nan") == OOV_TOKEN
        assert discretize_numeric("inf") == OOV_TOKEN
        assert discretize_numeric("not-a-number") == OOV_TOKEN

    def test_negative_is_low_bucket(self):
        assert discretize_numeric("-5") == "1"


class TestBuildSchema:
    def test_min_count_threshold(self):
        rows = [{"a": "rare"}] * 9 + [{"a": "common"}] * 10
        schema = build_schema(rows, [FieldSpec("a", min_count=10)])
        assert schema.vocabs[0].get("rare", OOV_ID) == OOV_ID
        assert schema.vocabs[0]["common"] == 1

    def test_min_count_one_keeps_everything(self):
        rows = records_of(["a"], [["x"], ["y"], ["z"], ["x"]])
        schema = build_schema(rows, [FieldSpec("a")])
        ids = {schema.vocabs[0][t] for t in ("x", "y", "z")}
        assert ids == {1, 2, 3}
        assert schema.sizes == [4]  # plus the OOV slot

    def test_first_seen_order(self):
        rows = records_of(["a"], [["z"], ["y"], ["z"], ["x"]])
        schema = build_schema(rows, [FieldSpec("a")])
        assert schema.vocabs[0]["z"] == 1
        assert schema.vocabs[0]["y"] == 2
        assert schema.vocabs[0]["x"] == 3

    def test_fields_are_isolated(self):
        rows = records_of(["a", "b"], [["t1", "t2"], ["t2", "t1"]])
        schema = build_schema(rows, [FieldSpec("a"), FieldSpec("b")])
        assert schema.vocabs[0]["t1"] == 1 and schema.vocabs[0]["t2"] == 2
        assert schema.vocabs[1]["t2"] == 1 and schema.vocabs[1]["t1"] == 2

    def test_missing_field_names_record(self):
        rows = [{"a": "x"}, {"b": "y"}]
        with pytest.raises(DataError, match="record 1"):
            build_schema(rows, [FieldSpec("a")])

    def test_numeric_field_counts_buckets(self):
        rows = records_of(["n"], [["100"], ["101"], ["3"]])
        schema = build_schema(rows, [FieldSpec("n", kind="numeric", min_count=2)])
        # 100 and 101 share bucket "21", which meets min_count 2; "1" does not
        assert schema.vocabs[0]["21"] == 1
        assert "1" not in schema.vocabs[0]


class TestEncode:
    def schema(self):
        rows = records_of(["a", "b", "label"],
                          [["x", "p", "1"], ["y", "q", "0"]])
        return rows, build_schema(rows, [FieldSpec("a"), FieldSpec("b")])

    def test_known_and_unknown_tokens(self):
        rows, schema = self.schema()
        batch = encode(rows + [{"a": "never-seen", "b": "p", "label": "1"}], schema)
        assert batch.ids[0, 0] == schema.vocabs[0]["x"]
        assert batch.ids[2, 0] == OOV_ID
        assert batch.ids[2, 1] == schema.vocabs[1]["p"]

    def test_labels_parsed(self):
        rows, schema = self.schema()
        batch = encode(rows, schema)
        np.testing.assert_array_equal(batch.labels, [1, 0])

    def test_bad_label_names_row(self):
        rows, schema = self.schema()
        rows[1]["label"] = "maybe"
        with pytest.raises(DataError, match="row 3"):
            encode(rows, schema)

    def test_ids_always_below_vocab_size(self):
        rng = Rng(5)
        tokens = [f"t{i}" for i in range(20)]
        rows = [{"a": tokens[int(rng.integers(20))],
                 "b": tokens[int(rng.integers(20))],
                 "label": "0"} for _ in range(300)]
        schema = build_schema(rows[:150], [FieldSpec("a", min_count=3),
                                           FieldSpec("b", min_count=3)])
        batch = encode(rows, schema)
        for j, size in enumerate(schema.sizes):
            assert batch.ids[:, j].max() < size
            assert batch.ids[:, j].min() >= 0

    def test_roundtrip_ids_through_tokens(self):
        # distinct tokens map to distinct ids and back, per field
        rng = Rng(6)
        for _ in range(5):
            vocab_n = int(rng.integers(8)) + 2
            rows = [{"a": f"v{int(rng.integers(vocab_n))}", "label": "0"}
                    for _ in range(100)]
            schema = build_schema(rows, [FieldSpec("a")])
            id_to_token = {i: t for t, i in schema.vocabs[0].items()}
            rebuilt = [{"a": id_to_token[int(i)], "label": "0"}
                       for i in encode(rows, schema).ids[:, 0]]
            reencoded = encode(rebuilt, schema)
            np.testing.assert_array_equal(reencoded.ids, encode(rows, schema).ids)

    def test_optional_labels_for_prediction(self):
        rows, schema = self.schema()
        unlabeled = [{"a": "x", "b": "p"}]
        batch = encode(unlabeled, schema, require_labels=False)
        assert batch.labels is None


class TestSplit:
    def batch(self, n):
        ids = np.arange(n, dtype=np.int64)[:, None]
        return EncodedBatch(ids, np.zeros(n, dtype=np.int64), [n])

    def test_80_10_10(self):
        parts = split(self.batch(100), (0.8, 0.1, 0.1), Rng(1))
        assert [p.n for p in parts] == [80, 10, 10]

    def test_deterministic(self):
        a = split(self.batch(57), (0.5, 0.25, 0.25), Rng(9))
        b = split(self.batch(57), (0.5, 0.25, 0.25), Rng(9))
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.ids, pb.ids)

    def test_disjoint_cover(self):
        parts = split(self.batch(101), (0.6, 0.2, 0.2), Rng(2))
        seen = np.concatenate([p.ids[:, 0] for p in parts])
        assert sorted(seen) == list(range(101))

    def test_empty_part_rejected(self):
        with pytest.raises(DataError, match="empty"):
            split(self.batch(3), (0.9, 0.05, 0.05), Rng(3))

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            split(self.batch(10), (0.5, 0.2), Rng(0))


class TestSynthData:
    def test_order_one_is_single_field(self):
        records, truth = synth_interaction_data(4, 6, 1, 3000, Rng(123))
        labels = np.array([int(r["label"]) for r in records])
        latent = np.array([truth["latents"]["f0"][r["f0"]] for r in records])
        agree = ((latent > 0) == (labels == 1)).mean()
        assert agree > 0.9  # equals 1 - noise up to sampling error

    def test_positive_rate_balanced(self):
        records, _ = synth_interaction_data(8, 10, 4, 50000, Rng(40))
        rate = np.mean([int(r["label"]) for r in records])
        assert 0.48 <= rate <= 0.52

    def test_no_single_field_signal_for_high_order(self):
        records, truth = synth_interaction_data(8, 10, 4, 50000, Rng(41))
        labels = np.array([int(r["label"]) for r in records])
        for j in range(8):
            latent = truth["latents"][f"f{j}"]
            vals = np.array([latent[r[f"f{j}"]] for r in records])
            corr = abs(np.corrcoef(vals, labels)[0, 1])
            assert corr < 0.03, f"field f{j} leaks marginal signal: {corr}"

    def test_deterministic_under_seed(self):
        a, _ = synth_interaction_data(3, 4, 2, 50, Rng(77))
        b, _ = synth_interaction_data(3, 4, 2, 50, Rng(77))
        assert a == b

    def test_order_bounds(self):
        with pytest.raises(ValueError):
            synth_interaction_data(3, 4, 5, 10, Rng(0))


class TestCsv:
    def test_roundtrip_with_quoting(self, tmp_path):
        path = tmp_path / "x.csv"
        rows = [{"a": 'he said "hi"', "b": "1,2", "label": "1"},
                {"a": "plain", "b": "line\nbreak", "label": "0"}]
        write_csv(path, ["a", "b", "label"], rows)
        columns, back = read_csv(path)
        assert columns == ["a", "b", "label"]
        assert back == rows

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="header"):
            read_csv(path)
