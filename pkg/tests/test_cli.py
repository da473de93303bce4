"""End-to-end CLI runs: generate, preprocess, match, sweeps, eval, replay."""

import json
import shutil

import pytest

from diffmatch import __version__
from diffmatch.cli import ABLATION_NAMES, CliError, ablation_config, main


@pytest.fixture(scope="module")
def pair_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pair")
    rc = main(
        [
            "generate",
            "--kind",
            "permuted",
            "--base",
            "cylinder",
            "--resolution",
            "10",
            "--seed",
            "3",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def bend_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bend")
    rc = main(
        [
            "generate",
            "--kind",
            "isometric_bend",
            "--resolution",
            "8",
            "--seed",
            "0",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    return out


_FAST_REFINE = [
    "-k", "20", "--spectral-k", "8", "--h", "4", "--max-iters", "1",
]


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_the_documented_files(pair_dir):
    for name in ("mesh_m.off", "mesh_n.off", "gt.txt", "spec.json"):
        assert (pair_dir / name).exists(), name
    spec = json.loads((pair_dir / "spec.json").read_text())
    assert spec["kind"] == "permuted"
    assert spec["base"] == "cylinder"
    assert spec["resolution"] == 10
    assert spec["seed"] == 3
    assert spec["n"] == 100


def test_generate_is_deterministic(tmp_path, pair_dir):
    rc = main(
        [
            "generate", "--kind", "permuted", "--base", "cylinder",
            "--resolution", "10", "--seed", "3", "--out", str(tmp_path),
        ]
    )
    assert rc == 0
    for name in ("mesh_m.off", "mesh_n.off", "gt.txt"):
        assert (tmp_path / name).read_bytes() == (pair_dir / name).read_bytes()


def test_generate_rejects_bad_kind(capsys):
    with pytest.raises(SystemExit):
        main(["generate", "--kind", "origami", "--out", "/tmp/x"])


# ---------------------------------------------------------------------------
# preprocess


def test_preprocess_populates_and_reuses_cache(tmp_path, pair_dir, capsys):
    mesh = str(pair_dir / "mesh_m.off")
    rc = main(["preprocess", mesh, "-k", "20", "--cache-dir", str(tmp_path)])
    assert rc == 0
    first = json.loads(capsys.readouterr().out)
    assert first["cache_hit"] is False
    assert first["k"] == 20
    rc = main(["preprocess", mesh, "-k", "20", "--cache-dir", str(tmp_path)])
    assert rc == 0
    second = json.loads(capsys.readouterr().out)
    assert second["cache_hit"] is True
    assert second["mesh_hash"] == first["mesh_hash"]


def test_preprocess_requires_cache_dir(pair_dir, capsys, monkeypatch):
    monkeypatch.delenv("DIFFMATCH_CACHE_DIR", raising=False)
    rc = main(["preprocess", str(pair_dir / "mesh_m.off")])
    assert rc == 1
    assert "cache-dir" in capsys.readouterr().err


def test_preprocess_env_cache_dir(tmp_path, pair_dir, capsys, monkeypatch):
    monkeypatch.setenv("DIFFMATCH_CACHE_DIR", str(tmp_path))
    rc = main(["preprocess", str(pair_dir / "mesh_m.off"), "-k", "10"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["cache_dir"] == str(tmp_path)


# ---------------------------------------------------------------------------
# match


def test_match_pair_directory_writes_everything(tmp_path, pair_dir, capsys):
    out = tmp_path / "run"
    rc = main(
        ["match", "--pair", str(pair_dir), "--out", str(out), "-k", "30"]
    )
    assert rc == 0
    for name in ("map_mn.txt", "map_nm.txt", "manifest.json", "metrics.json", "pck.csv"):
        assert (out / name).exists(), name
    printed = json.loads(capsys.readouterr().out)
    assert printed["auc"] > 0.99  # relabelled copies are matched exactly
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "match"
    assert manifest["config"]["mode"] == "descriptor_nn"
    assert manifest["tool_version"] == __version__
    assert set(manifest["cache"]) == {"source_hash", "target_hash"}


def test_match_without_ground_truth(tmp_path, pair_dir, capsys):
    out = tmp_path / "run"
    rc = main(
        [
            "match",
            "--source", str(pair_dir / "mesh_m.off"),
            "--target", str(pair_dir / "mesh_n.off"),
            "--out", str(out),
            "-k", "30",
        ]
    )
    assert rc == 0
    assert (out / "map_mn.txt").exists()
    assert not (out / "metrics.json").exists()
    assert "wrote correspondence" in capsys.readouterr().out


def test_match_refine_writes_trace(tmp_path, bend_dir):
    out = tmp_path / "run"
    rc = main(
        ["match", "--pair", str(bend_dir), "--mode", "refine", "--out", str(out)]
        + _FAST_REFINE
    )
    assert rc == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,l_diff,l_couple,l_struct,l_total,step_size"
    assert len(trace) >= 2


def test_match_replays_manifest_byte_identically(tmp_path, pair_dir):
    cache = tmp_path / "cache"
    first = tmp_path / "first"
    again = tmp_path / "again"
    base = ["--pair", str(pair_dir), "-k", "30", "--cache-dir", str(cache)]
    assert main(["match", *base, "--out", str(first)]) == 0
    rc = main(
        [
            "match",
            "--from-manifest", str(first / "manifest.json"),
            "--out", str(again),
            "--cache-dir", str(cache),
        ]
    )
    assert rc == 0
    for name in ("map_mn.txt", "map_nm.txt", "metrics.json", "pck.csv", "manifest.json"):
        assert (first / name).read_bytes() == (again / name).read_bytes(), name


def test_match_requires_inputs(capsys):
    rc = main(["match", "--out", "/tmp/nowhere"])
    assert rc == 1
    assert "provide either" in capsys.readouterr().err


def test_match_reports_missing_pair_files(tmp_path, capsys):
    rc = main(["match", "--pair", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "missing" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_time_csv(tmp_path, bend_dir, capsys):
    out = tmp_path / "sweep"
    rc = main(
        [
            "sweep-time",
            "--pair", str(bend_dir),
            "--T-list", "1e-2,1e-3",
            "--out", str(out),
        ]
        + _FAST_REFINE
    )
    assert rc == 0
    lines = (out / "sweep_time.csv").read_text().strip().splitlines()
    assert lines[0] == "T,mean_geo_error_x100,auc,smoothness"
    assert len(lines) == 3
    for line in lines[1:]:
        fields = [float(x) for x in line.split(",")]
        assert len(fields) == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "sweep-time"
    assert manifest["config"]["T_list"] == [1e-2, 1e-3]
    assert "T,mean_geo_error_x100" in capsys.readouterr().out


def test_sweep_time_parallel_matches_serial(tmp_path, bend_dir):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    flags = ["--pair", str(bend_dir), "--T-list", "1e-2,1e-3", *_FAST_REFINE]
    assert main(["sweep-time", *flags, "--out", str(serial)]) == 0
    assert main(["sweep-time", *flags, "--jobs", "2", "--out", str(parallel)]) == 0
    assert (serial / "sweep_time.csv").read_bytes() == (
        parallel / "sweep_time.csv"
    ).read_bytes()


def test_sweep_time_requires_ground_truth(tmp_path, pair_dir, capsys):
    bare = tmp_path / "bare"
    bare.mkdir()
    for name in ("mesh_m.off", "mesh_n.off"):
        shutil.copy(pair_dir / name, bare / name)
    rc = main(
        ["sweep-time", "--pair", str(bare), "--out", str(tmp_path / "o")]
        + _FAST_REFINE
    )
    assert rc == 1
    assert "ground-truth" in capsys.readouterr().err


def test_sweep_time_help_documents_reference_behaviour(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep-time", "--help"])
    assert exc.value.code == 0
    assert "23.7" in capsys.readouterr().out


def test_sweep_ablation_csv(tmp_path, bend_dir):
    out = tmp_path / "ablation"
    rc = main(
        ["sweep-ablation", "--pair", str(bend_dir), "--out", str(out)]
        + _FAST_REFINE
    )
    assert rc == 0
    lines = (out / "sweep_ablation.csv").read_text().strip().splitlines()
    assert lines[0] == "config,mean_geo_error_x100,auc,smoothness,coverage"
    names = [line.split(",")[0] for line in lines[1:]]
    assert tuple(names) == ABLATION_NAMES
    for line in lines[1:]:
        assert len(line.split(",")) == 5


def test_ablation_config_overrides():
    base = {"T": 1e-2, "smoothness_term": "diff", "init": "wks", "fixed_time": None}
    assert ablation_config(base, "full")["smoothness_term"] == "diff"
    assert ablation_config(base, "no_ldiff")["smoothness_term"] == "none"
    assert ablation_config(base, "fixed_t")["fixed_time"] == pytest.approx(5e-3)
    assert ablation_config(base, "eig_init")["init"] == "eigfuncs"
    assert ablation_config(base, "kernel")["smoothness_term"] == "kernel"
    assert ablation_config(base, "dirichlet")["smoothness_term"] == "dirichlet"
    assert ablation_config(base, "cycle")["smoothness_term"] == "cycle"
    for name in ABLATION_NAMES:
        assert ablation_config(base, name)["mode"] == "refine"
    with pytest.raises(CliError):
        ablation_config(base, "mystery")


# ---------------------------------------------------------------------------
# eval


def test_eval_scores_a_prediction(tmp_path, pair_dir, capsys):
    out = tmp_path / "eval"
    rc = main(
        [
            "eval",
            "--pred", str(pair_dir / "gt.txt"),  # the truth itself: perfect score
            "--pair", str(pair_dir),
            "--out", str(out),
        ]
    )
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["auc"] == pytest.approx(1.0)
    assert summary["mean_geo_error_x100"] == 0.0
    assert (out / "metrics.json").exists()
    assert (out / "pck.csv").read_text().startswith("threshold,pck")


def test_eval_needs_ground_truth(tmp_path, pair_dir, capsys):
    bare = tmp_path / "bare"
    bare.mkdir()
    for name in ("mesh_m.off", "mesh_n.off"):
        shutil.copy(pair_dir / name, bare / name)
    rc = main(
        [
            "eval",
            "--pred", str(pair_dir / "gt.txt"),
            "--pair", str(bare),
            "--out", str(tmp_path / "o"),
        ]
    )
    assert rc == 1
    assert "ground truth" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# error surfaces


def test_json_errors_flag(tmp_path, capsys):
    rc = main(
        [
            "match",
            "--pair", str(tmp_path),  # empty: no meshes inside
            "--out", str(tmp_path / "o"),
            "--json-errors",
        ]
    )
    assert rc == 1
    payload = json.loads(capsys.readouterr().err)
    assert payload["error"] == "CliError"
    assert "missing" in payload["message"]


def test_unknown_flag_fails_fast():
    with pytest.raises(SystemExit) as exc:
        main(["match", "--nonsense"])
    assert exc.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out
