"""Command-line surface: subcommands, config files, determinism."""

import json

import numpy as np
import pytest

from mallows_smc2.cli import main


@pytest.fixture
def complete_csv(tmp_path, rng):
    from conftest import sample_mallows_complete

    m = 4
    rows = sample_mallows_complete(m, 0.5, np.arange(1, m + 1), 15, rng)
    lines = ["user," + ",".join(f"i{j}" for j in range(m))]
    for u, r in enumerate(rows):
        lines.append(f"{u + 1}," + ",".join(map(str, r)))
    path = tmp_path / "c.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_fit_and_summarize(tmp_path, complete_csv):
    out = tmp_path / "rec.jsonl"
    cloud = tmp_path / "cloud.npz"
    rc = main([
        "fit", "--input", str(complete_csv), "--mode", "complete",
        "--out", str(out), "--particles", "64", "--seed", "5",
        "--pair", "1,2", "--cloud-out", str(cloud),
    ])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 16
    assert json.loads(lines[-1])["type"] == "summary"

    summary_out = tmp_path / "sum.json"
    rc = main(["summarize", "--cloud", str(cloud), "--pair", "1,2",
               "--reference", "1,2,3,4", "--out", str(summary_out)])
    assert rc == 0
    rec = json.loads(summary_out.read_text())
    assert "rho_pair_probs" in rec and "mean_distance_to_reference" in rec


def test_fit_reruns_identically(tmp_path, complete_csv):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        main(["fit", "--input", str(complete_csv), "--mode", "complete",
              "--out", str(out), "--particles", "32", "--seed", "9",
              "--replicates", "2"])
        outs.append(out.read_text())
    assert outs[0] == outs[1]


def test_config_file_defaults(tmp_path, complete_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("particles = 48\nseed = 4\ndistance = footrule\n# comment\n")
    out = tmp_path / "rec.jsonl"
    rc = main(["fit", "--input", str(complete_csv), "--mode", "complete",
               "--out", str(out), "--config", str(cfg)])
    assert rc == 0
    assert out.exists()


def test_orderings_subcommand(tmp_path, capsys):
    src = tmp_path / "p.csv"
    src.write_text("user,preferred_item,other_item\n1,1,2\n1,1,3\n")
    out = tmp_path / "counts.csv"
    rc = main(["orderings", "--input", str(src), "--out", str(out)])
    assert rc == 0
    assert "2 orderings" in capsys.readouterr().out
    header, row = out.read_text().strip().splitlines()
    assert header == "user,n_pairs,n_orderings,cpu_ms"
    assert row.startswith("1,2,2,")


def test_convert_subcommand(tmp_path):
    src = tmp_path / "v.toc"
    src.write_text("2: 1,2,3\n")
    out = tmp_path / "pairs.csv"
    rc = main(["convert", "--preflib", str(src), "--out", str(out)])
    assert rc == 0
    assert len(out.read_text().strip().splitlines()) == 1 + 6


def test_fit_pairs_mode(tmp_path):
    src = tmp_path / "p.csv"
    src.write_text(
        "user,preferred_item,other_item\n"
        + "\n".join(f"{u},1,{o}" for u in range(1, 7) for o in (2, 3))
        + "\n"
    )
    out = tmp_path / "rec.jsonl"
    rc = main(["fit", "--input", str(src), "--mode", "pairs-consistent",
               "--out", str(out), "--particles", "48", "--filters", "6",
               "--seed", "2", "--items", "4"])
    assert rc == 0
    final = json.loads(out.read_text().strip().splitlines()[-1])
    assert final["type"] == "summary"


def test_fit_noisy_pairs_mode(tmp_path):
    src = tmp_path / "p.csv"
    src.write_text("user,preferred_item,other_item\n1,1,2\n1,2,1\n2,1,3\n")
    out = tmp_path / "rec.jsonl"
    rc = main(["fit", "--input", str(src), "--mode", "pairs-noisy",
               "--out", str(out), "--particles", "32", "--filters", "4",
               "--seed", "3", "--items", "3"])
    assert rc == 0
    final = json.loads(out.read_text().strip().splitlines()[-1])
    assert 0 <= final["epsilon_mean"] < 0.5
