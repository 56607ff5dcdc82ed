import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from crds.cli import main
from crds.config import load_config, parse_config
from crds.errors import ConfigError


def write_jsonl(path, records):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


@pytest.fixture
def workspace(tmp_path):
    pool = tmp_path / "pool.jsonl"
    tests = tmp_path / "tests.jsonl"
    write_jsonl(pool, [
        {"id": i, "text": f"pool item {i} body", "response_length": (i * 13) % 50}
        for i in range(60)
    ])
    write_jsonl(tests, [{"id": i, "text": f"test query {i}"} for i in range(3)])

    def make_cfg(name="cfg.yaml", **extra):
        raw = {
            "pool": str(pool),
            "tests": str(tests),
            "workdir": str(tmp_path / "work"),
            "method": "plain",
            "shards": 3,
            "workers": 2,
            "encoder": {"v": 16, "num_layers": 1, "seed": 5},
            "selection": {"k": 10},
        }
        raw.update(extra)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(raw))
        return str(path)

    return tmp_path, make_cfg


class TestConfig:
    def test_paper_defaults(self):
        cfg = parse_config({})
        assert cfg.encoder.truncation_length == 2048
        assert cfg.encoder.num_layers == 18
        assert cfg.whitening.beta in (512, 1024)
        assert cfg.whitening.fit_size == 500_000
        assert cfg.workers == 8
        assert cfg.shards == 8

    def test_crds_r_with_beta_is_mutually_exclusive(self):
        with pytest.raises(ConfigError):
            parse_config({"method": "crds_r", "whitening": {"beta": 64}})

    def test_crds_w_with_projection_keys_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"method": "crds_w", "projection": {"w": 8}})

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            parse_config({"method": "pca"})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"budget": 7})

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"method": "plain", "encoder": {"v": 8, "num_layers": 1}}))
        cfg = load_config(path, ["encoder.seed=99", "workers=3", "normalize=false"])
        assert cfg.encoder.seed == 99
        assert cfg.workers == 3
        assert cfg.normalize is False

    def test_workdir_env_default(self, monkeypatch):
        monkeypatch.setenv("CRDS_WORKDIR", "/tmp/somewhere-else")
        assert parse_config({}).workdir == "/tmp/somewhere-else"


class TestExitCodes:
    def test_config_validation_error_is_1(self, workspace, capsys):
        tmp_path, make_cfg = workspace
        cfg = make_cfg("bad.yaml", method="crds_r", whitening={"beta": 8})
        assert main(["similarity", "-c", cfg]) == 1
        assert "exclusive" in capsys.readouterr().err

    def test_missing_stage_input_is_2_and_names_producer(self, workspace, capsys):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        assert main(["similarity", "-c", cfg]) == 2
        err = capsys.readouterr().err
        assert "crds embed" in err or "crds ingest" in err

    def test_missing_transformer_names_fit_whiten(self, workspace, capsys):
        tmp_path, make_cfg = workspace
        cfg = make_cfg("w.yaml", method="crds_w", whitening={"beta": 8, "fit_size": 30})
        assert main(["embed", "-c", cfg]) == 0
        assert main(["similarity", "-c", cfg]) == 2
        assert "crds fit-whiten" in capsys.readouterr().err

    def test_usage_error_is_1(self, capsys):
        assert main(["no-such-command"]) == 1

    def test_unreadable_shard_is_2(self, workspace, tmp_path, capsys):
        _, make_cfg = workspace
        bad = tmp_path / "not_a_shard.crds"
        bad.write_bytes(b"garbage")
        cfg = make_cfg("i.yaml", encoder={"mode": "ingest", "v": 16, "num_layers": 1})
        assert main(["ingest", "-c", cfg, str(bad)]) == 2


class TestStages:
    def test_embed_then_similarity_then_select(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        assert main(["embed", "-c", cfg]) == 0
        assert main(["similarity", "-c", cfg]) == 0
        assert main(["select", "-c", cfg]) == 0
        work = tmp_path / "work"
        assert (work / "similarity.crsm").exists()
        assert (work / "similarity.crsm.provenance.json").exists()
        lines = (work / "selection.jsonl").read_text().splitlines()
        assert len(lines) == 11  # summary + k records
        picks = [json.loads(l)["pool_index"] for l in lines[1:]]
        assert len(set(picks)) == 10

    def test_stage_rerun_is_bitwise(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        main(["pipeline", "-c", cfg])
        work = tmp_path / "work"
        artifacts = sorted(p for p in work.rglob("*") if p.is_file())
        before = {p: p.read_bytes() for p in artifacts}
        main(["pipeline", "-c", cfg])
        for p, data in before.items():
            assert p.read_bytes() == data, f"{p} changed between identical runs"

    def test_workers_flag_changes_no_bytes(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        main(["pipeline", "-c", cfg, "--workers", "1"])
        work = tmp_path / "work"
        before = {p: p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}
        main(["pipeline", "-c", cfg, "--workers", "4"])
        after = {p: p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}
        assert before == after

    def test_random_and_length_selectors(self, workspace):
        tmp_path, make_cfg = workspace
        for selector in ("random", "length"):
            cfg = make_cfg(f"{selector}.yaml",
                           selection={"k": 5, "selector": selector, "seed": 3},
                           workdir=str(tmp_path / f"work_{selector}"))
            assert main(["select", "-c", cfg]) == 0
            lines = (tmp_path / f"work_{selector}" / "selection.jsonl").read_text().splitlines()
            assert json.loads(lines[0])["method"] == selector
            assert len(lines) == 6

    def test_ingest_accepts_exported_shards(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        main(["embed", "-c", cfg])
        shard_glob = str(tmp_path / "work" / "shards" / "*.crds")
        cfg2 = make_cfg("cfg2.yaml", workdir=str(tmp_path / "work2"))
        assert main(["ingest", "-c", cfg2, shard_glob]) == 0
        assert main(["similarity", "-c", cfg2]) == 0
        a = (tmp_path / "work" / "similarity.crsm")
        main(["similarity", "-c", cfg])
        b = (tmp_path / "work2" / "similarity.crsm")
        assert a.read_bytes() == b.read_bytes()

    def test_overlap_command(self, workspace, capsys):
        tmp_path, make_cfg = workspace
        cfg_a = make_cfg("a.yaml", workdir=str(tmp_path / "wa"))
        cfg_b = make_cfg("b.yaml", workdir=str(tmp_path / "wb"),
                         selection={"k": 10, "selector": "random", "seed": 1})
        main(["pipeline", "-c", cfg_a])
        main(["select", "-c", cfg_b])
        out = tmp_path / "overlap.json"
        code = main(["overlap", str(tmp_path / "wa" / "selection.jsonl"),
                     str(tmp_path / "wb" / "selection.jsonl"), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert 0.0 <= report["jaccard"] <= 1.0
        assert report["method_a"] == "round_robin"
        assert report["method_b"] == "random"

    def test_fit_whiten_requires_crds_w(self, workspace, capsys):
        tmp_path, make_cfg = workspace
        cfg = make_cfg()
        assert main(["fit-whiten", "-c", cfg]) == 1

    def test_crds_w_pipeline(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg("w2.yaml", method="crds_w",
                       whitening={"beta": 8, "fit_size": 30, "seed": 2})
        assert main(["pipeline", "-c", cfg]) == 0
        work = tmp_path / "work"
        assert (work / "whitening.crdw").exists()
        prov = json.loads((work / "similarity.crsm.provenance.json").read_text())
        assert prov["method"] == "crds_w"
        assert prov["whitening"]["beta"] == 8
        assert prov["seeds"]["whitening_fit"] == 2

    def test_crds_r_pipeline_with_default_w(self, workspace):
        tmp_path, make_cfg = workspace
        cfg = make_cfg("r.yaml", method="crds_r",
                       encoder={"v": 16, "num_layers": 4, "seed": 5},
                       projection={"seed": 21})
        assert main(["pipeline", "-c", cfg]) == 0
        prov = json.loads(
            (tmp_path / "work" / "similarity.crsm.provenance.json").read_text())
        assert prov["projection"]["w"] == 4  # floor(16 / 4)
        assert prov["representation_dim"] == 16
