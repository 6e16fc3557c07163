"""MLKG model, file formats, preprocessing filters, synthetic generator."""

import numpy as np
import pytest

from kgadapters.data import (Entity, LanguageSplit, MLKG, Relation, Triple,
                             assign_language_splits, filter_descriptions,
                             filter_entities, filter_triples, load_c1, load_c2,
                             load_mlkg, load_split, save_c1, save_c2,
                             save_mlkg, save_split, TaggedSentence)
from kgadapters.errors import DataError
from kgadapters.synthetic import (SyntheticConfig, audit_zs_un_absence,
                                  gen_synthetic, save_dataset, transform_word)


def toy_mlkg(label_counts=(3, 2, 1)):
    langs = [f"l{j}" for j in range(max(label_counts))]
    entities = {}
    for i, n in enumerate(label_counts):
        eid = f"e{i}"
        entities[eid] = Entity(id=eid, labels={langs[j]: f"word{i}x{j}" for j in range(n)})
    relations = {"r0": Relation(id="r0", labels={"aa": "rel zero"})}
    triples = [Triple("e0", "r0", "e1"), Triple("e1", "r0", "e2")]
    return MLKG(entities=entities, relations=relations, triples=triples)


class TestLoadSave:
    def test_roundtrip(self, tmp_path):
        mlkg = toy_mlkg()
        paths = (tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv")
        save_mlkg(mlkg, *paths)
        loaded = load_mlkg(*paths)
        assert sorted(loaded.entities) == sorted(mlkg.entities)
        assert loaded.triples == mlkg.triples
        assert loaded.stats() == mlkg.stats()

    def test_empty_triples_file_is_valid(self, tmp_path):
        mlkg = toy_mlkg()
        mlkg.triples = []
        paths = (tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv")
        save_mlkg(mlkg, *paths)
        assert load_mlkg(*paths).triples == []

    def test_dangling_triple_reports_line_number(self, tmp_path):
        mlkg = toy_mlkg()
        paths = (tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv")
        save_mlkg(mlkg, *paths)
        with open(paths[2], "a", encoding="utf-8") as fh:
            fh.write("e0\tr0\tghost\n")
        with pytest.raises(DataError, match=r"t\.tsv:3.*ghost"):
            load_mlkg(*paths)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "e.tsv"
        p.write_text("e0\taa=x\ne0\taa=y\n", encoding="utf-8")
        (tmp_path / "r.tsv").write_text("r0\taa=rel\n", encoding="utf-8")
        (tmp_path / "t.tsv").write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="duplicate id"):
            load_mlkg(p, tmp_path / "r.tsv", tmp_path / "t.tsv")

    def test_alignment_pair_stats(self):
        # entity with labels in n languages contributes n*(n-1)/2 pairs
        assert toy_mlkg((3, 2, 1)).stats()["alignment_pairs"] == 3 + 1 + 0


class TestFilters:
    def test_strictly_more_than_threshold(self):
        mlkg = toy_mlkg((11, 10, 2))
        kept = filter_entities(mlkg, min_labels=10)
        assert set(kept.entities) == {"e0"}

    def test_threshold_zero_is_identity(self):
        mlkg = toy_mlkg()
        kept = filter_entities(mlkg, min_labels=0)
        assert set(kept.entities) == set(mlkg.entities)
        assert kept.triples == mlkg.triples

    def test_triples_refiltered_with_entities(self):
        mlkg = toy_mlkg((3, 3, 1))
        kept = filter_entities(mlkg, min_labels=2)
        assert set(kept.entities) == {"e0", "e1"}
        assert kept.triples == [Triple("e0", "r0", "e1")]

    def test_filter_triples_endpoint_rules(self):
        mlkg = toy_mlkg()
        assert filter_triples(mlkg, {"e0", "e1"}) == [Triple("e0", "r0", "e1")]
        assert filter_triples(mlkg, {"e0"}) == []
        assert filter_triples(mlkg, {"e0", "e1", "e2"}) == mlkg.triples

    def test_filters_idempotent(self):
        mlkg = toy_mlkg((11, 10, 2))
        once = filter_entities(mlkg, min_labels=9)
        twice = filter_entities(once, min_labels=9)
        assert set(once.entities) == set(twice.entities)
        assert once.triples == twice.triples

    def test_no_dangling_triples_after_filtering(self):
        mlkg = toy_mlkg((5, 4, 1))
        kept = filter_entities(mlkg, min_labels=1)
        for t in kept.triples:
            assert t.head in kept.entities and t.tail in kept.entities

    def test_filter_descriptions(self):
        recs = [
            TaggedSentence("aa", ["x", "word0"], "e0", (1, 1)),
            TaggedSentence("bb", ["y", "word0b"], "e0", (1, 1)),
            TaggedSentence("aa", ["z", "word1"], "e1", (1, 1)),
        ]
        kept = filter_descriptions(recs, min_langs=2)
        assert {r.entity_id for r in kept} == {"e0"}
        assert filter_descriptions(recs, min_langs=1) == recs


class TestLanguageSplits:
    def test_deterministic_assignment(self):
        split = assign_language_splits(["aa", "bb", "cc", "dd", "ee", "ff"], 3, 2, 1)
        assert split.sup == ["aa", "bb", "cc"]
        assert split.zs_in == ["dd", "ee"]
        assert split.zs_un == ["ff"]

    def test_oversize_request_rejected(self):
        with pytest.raises(DataError):
            assign_language_splits(["aa", "bb"], 2, 1, 0)

    def test_overlap_rejected(self):
        with pytest.raises(DataError, match="overlap"):
            LanguageSplit(sup=["aa"], zs_in=["aa"], zs_un=[])

    def test_roundtrip(self, tmp_path):
        split = assign_language_splits(["aa", "bb", "cc"], 1, 1, 1)
        save_split(tmp_path / "s.tsv", split)
        loaded = load_split(tmp_path / "s.tsv")
        assert loaded == split


def small_config(**kw):
    defaults = dict(languages=4, entities=12, relations=3, triples=30,
                    sentences_per_entity=1, vocab_size=12, seed=5,
                    sup=2, zs_in=1, zs_un=1, mlm_sentences_per_lang=20)
    defaults.update(kw)
    return SyntheticConfig(**defaults)


class TestSyntheticGenerator:
    def test_same_config_twice_byte_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_dataset(gen_synthetic(small_config()), d1)
        save_dataset(gen_synthetic(small_config()), d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_alignment_ground_truth_is_bijection(self):
        ds = gen_synthetic(small_config())
        for l1 in ds.languages:
            for l2 in ds.languages:
                if l1 == l2:
                    continue
                labels1 = [e.labels[l1] for e in ds.mlkg.entities.values()]
                labels2 = [e.labels[l2] for e in ds.mlkg.entities.values()]
                assert len(set(labels1)) == len(labels1)
                assert len(set(labels2)) == len(labels2)

    def test_language_transform_bijective_and_invertible(self):
        assert transform_word("kora", 0) == "kora"
        assert transform_word("kora", 2) != transform_word("kora", 1)
        assert transform_word("7", 3) == "7"

    def test_spans_reproduce_labels(self):
        ds = gen_synthetic(small_config())
        for r in ds.c1:
            label = ds.mlkg.entities[r.entity_id].labels[r.lang]
            assert " ".join(r.tokens[r.span[0]:r.span[1] + 1]) == label
        for r in ds.c2:
            label = ds.mlkg.entities[r.triple.tail].labels[ds.base_lang]
            assert " ".join(r.tokens[r.obj_span[0]:r.obj_span[1] + 1]) == label

    def test_zs_un_absent_from_training_corpora(self):
        ds = gen_synthetic(small_config())
        assert audit_zs_un_absence(ds) == []

    def test_saved_files_reload_cleanly(self, tmp_path):
        ds = gen_synthetic(small_config())
        save_dataset(ds, tmp_path)
        mlkg = load_mlkg(tmp_path / "entities.tsv", tmp_path / "relations.tsv",
                         tmp_path / "triples.tsv")
        assert mlkg.stats() == ds.mlkg.stats()
        c1 = load_c1(tmp_path / "c1.tsv", mlkg)
        c2 = load_c2(tmp_path / "c2.tsv", mlkg)
        assert len(c1) == len(ds.c1)
        assert len(c2) == len(ds.c2)
        split = load_split(tmp_path / "split.tsv")
        assert split == ds.split

    def test_test_triples_held_out_of_c2(self):
        ds = gen_synthetic(small_config())
        c2_triples = {r.triple for r in ds.c2}
        assert not c2_triples & set(ds.test_triples)

    def test_relation_pools_constrain_tails(self):
        ds = gen_synthetic(small_config())
        tails_per_rel = {}
        for t in ds.mlkg.triples:
            tails_per_rel.setdefault(t.rel, set()).add(t.tail)
        for rel, tails in tails_per_rel.items():
            assert len(tails) <= ds.config.relation_pool_size

    def test_invalid_configs_rejected(self):
        with pytest.raises(Exception):
            small_config(entities=5)
        with pytest.raises(Exception):
            small_config(sup=1, zs_in=1, zs_un=1)  # does not sum to languages
