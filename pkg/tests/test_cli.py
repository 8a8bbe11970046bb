import json
import subprocess
import sys
from dataclasses import replace

import pytest

from planekit import LossBreakdown
from planekit.cli import COMMANDS, build_parser, main
from planekit.io import read_manifest, write_manifest


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--num-images", "4", "--seed", "3", "--out", str(out)]) == 0
    return out


def metrics(path):
    return json.loads(path.read_text())["metrics"]


def test_common_flags_on_every_subcommand(tmp_path):
    parser = build_parser()
    extra = {"synth": []}
    for name in COMMANDS:
        argv = [name, "--seed", "5", "--config", "c.json", "--out", str(tmp_path), "--jobs", "3"]
        argv += extra.get(name, ["--manifest", "m.jsonl"])
        args = parser.parse_args(argv)
        assert (args.seed, args.config.name, args.out, args.jobs) == (5, "c.json", tmp_path, 3)


def test_synth_writes_manifest(dataset):
    entries = read_manifest(dataset / "manifest.jsonl")
    assert len(entries) == 4 and len({e.id for e in entries}) == 4
    assert all(e.pred_seg_path for e in entries)


def test_eval_depth_of_ground_truth_is_perfect(dataset, tmp_path, capsys):
    entries = [replace(e, depth_path=e.gt_depth_path) for e in read_manifest(dataset / "manifest.jsonl")]
    write_manifest(tmp_path / "m.jsonl", entries)
    assert main(["eval-depth", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path)]) == 0
    m = metrics(tmp_path / "depth.json")
    assert m["rel"] == 0 and m["rms"] == 0 and m["sigma1"] == 1 and m["images"] == 4
    assert "sigma1" in capsys.readouterr().out


def test_render_then_ibims_is_planar(tmp_path):
    data, pd, ev = tmp_path / "d", tmp_path / "pd", tmp_path / "ev"
    assert main(["synth", "--num-images", "3", "--pred-noise", "0", "--out", str(data)]) == 0
    assert main(["render-pd", "--manifest", str(data / "manifest.jsonl"), "--out", str(pd)]) == 0
    assert main(["eval-ibims", "--manifest", str(pd / "manifest.jsonl"), "--out", str(ev)]) == 0
    assert metrics(ev / "ibims.json")["pe_plan"] < 1e-6


def test_losses_of_perfect_prediction_vanish(tmp_path):
    data, out = tmp_path / "d", tmp_path / "l"
    assert main(["synth", "--num-images", "1", "--layout", "plane", "--pred-noise", "0",
                 "--score-mode", "one", "--out", str(data)]) == 0
    assert main(["losses", "--manifest", str(data / "manifest.jsonl"), "--out", str(out)]) == 0
    b = LossBreakdown.from_record((out / "losses.txt").read_text())
    assert b.total < 1e-5
    assert b.rmse == 0 and b.dgs == 0 and b.psn == 0


def test_losses_gradient_checks(dataset, tmp_path):
    assert main(["losses", "--manifest", str(dataset / "manifest.jsonl"), "--index", "1",
                 "--out", str(tmp_path)]) == 0
    checks = json.loads((tmp_path / "grad_checks.json").read_text())
    assert checks and all(v for k, v in checks.items() if k.endswith("pass"))


def test_fit_planes_and_eval_seg(dataset, tmp_path):
    assert main(["fit-planes", "--manifest", str(dataset / "manifest.jsonl"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "planes.json").read_text())
    assert main(["eval-seg", "--manifest", str(dataset / "manifest.jsonl"), "--out", str(tmp_path)]) == 0
    m = metrics(tmp_path / "segmentation.json")
    assert 0 <= m["ap_mask"] <= m["ap_mask50"] + 1e-12 <= 1 + 1e-12


def test_reports_do_not_depend_on_jobs(dataset, tmp_path):
    man = str(dataset / "manifest.jsonl")
    for jobs in ("1", "3"):
        for cmd in ("eval-depth", "eval-seg", "eval-ibims"):
            assert main([cmd, "--manifest", man, "--jobs", jobs, "--out", str(tmp_path / jobs)]) == 0
    names = sorted(p.name for p in (tmp_path / "1").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "3").iterdir())
    for name in names:
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()


def test_synth_is_deterministic_across_jobs(tmp_path):
    for jobs in ("1", "2"):
        assert main(["synth", "--num-images", "3", "--jobs", jobs, "--out", str(tmp_path / jobs)]) == 0
    files = sorted(f.relative_to(tmp_path / "1") for f in (tmp_path / "1").rglob("*") if f.is_file())
    assert files == sorted(f.relative_to(tmp_path / "2") for f in (tmp_path / "2").rglob("*") if f.is_file())
    for f in files:
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes(), f


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval-depth", "--manifest", str(tmp_path / "missing.jsonl")]) == 1
    assert "error" in capsys.readouterr().err
    (tmp_path / "c.json").write_text(json.dumps({"not_a_key": 1}))
    assert main(["synth", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1
    assert "not_a_key" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--jobs", "0"])
    assert exc.value.code == 2


def test_unknown_flag_from_shell():
    proc = subprocess.run([sys.executable, "-m", "planekit.cli", "synth", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "--bogus" in proc.stderr
