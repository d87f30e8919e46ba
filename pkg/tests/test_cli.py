import json
import os
import re
from pathlib import Path

import pytest

from masskit.checkpoint import load_checkpoint
from masskit.cli import build_parser, main
from masskit.plotting import render_mirror_svg
from masskit.spectra import BinnedSpectrum, read_msp

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = ["gen-data", "split", "train", "predict", "eval-sim", "rank", "ce-sweep", "attention", "grad-check"]

TINY = {
    "generation": {"n_molecules": 14, "ce_grid": [20.0, 80.0]},
    "model": {"num_layers": 1, "hidden_dim": 16, "attn_dim_per_head": 8, "num_heads": 2, "ffn_dim": 32, "mlp_hidden_dims": [32]},
    "binning": {"n_bins": 600},
    "train": {"epochs": 2, "batch_size": 8},
    "eval": {"ce_grid": [20.0, 80.0]},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def help_text(command, monkeypatch, capsys):
    monkeypatch.setenv("COLUMNS", "100")
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    return capsys.readouterr().out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data, split and train on a tiny config, shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(TINY))
    for cmd in ("gen-data", "split", "train"):
        assert main([cmd, "--config", str(cfg), "--out-dir", str(root)]) == 0
    return root, cfg


class TestHelp:
    @pytest.mark.parametrize("command", COMMANDS)
    def test_matches_snapshot(self, command, monkeypatch, capsys):
        text = help_text(command, monkeypatch, capsys)
        snap = SNAPSHOTS / f"help_{command}.txt"
        if os.environ.get("MASSKIT_UPDATE_SNAPSHOTS"):
            SNAPSHOTS.mkdir(exist_ok=True)
            snap.write_text(text)
        assert text == snap.read_text()

    @pytest.mark.parametrize("command", COMMANDS)
    def test_every_flag_states_default(self, command, monkeypatch, capsys):
        text = help_text(command, monkeypatch, capsys)
        sub = next(a for a in build_parser()._actions if a.dest == "command").choices[command]
        for action in sub._actions:
            if action.help is None or "-h" in action.option_strings:
                continue
            assert "(default:" in action.help or "(required)" in action.help, action.option_strings
        assert "--out-dir" in text and "--threads" in text


class TestErrors:
    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"epochz": 3}}))
        code, _, err = run(capsys, "split", "--config", cfg, "--out-dir", tmp_path)
        assert code == 2 and "epochz" in err

    def test_unknown_top_level_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"trian": {}}))
        assert run(capsys, "split", "--config", cfg)[0] == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert run(capsys, "split", "--config", tmp_path / "nope.json")[0] == 2

    def test_bad_thread_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MASSKIT_THREADS", "many")
        assert run(capsys, "split", "--out-dir", tmp_path)[0] == 2

    def test_missing_inputs_before_compute(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--out-dir", tmp_path)
        assert code == 3 and "molecules.tsv" in err
        assert not (tmp_path / "model.ckpt").exists() and not (tmp_path / "metrics.csv").exists()

    def test_invalid_smiles(self, workspace, capsys):
        root, cfg = workspace
        code, _, err = run(capsys, "predict", "--config", cfg, "--out-dir", root, "--smiles", "C1CC", "--ce", 40, "--output", "bad.msp")
        assert code == 4 and "SmilesError" in err

    def test_unknown_adduct(self, workspace, capsys):
        root, cfg = workspace
        code = run(capsys, "predict", "--config", cfg, "--out-dir", root, "--smiles", "CCO", "--ce", 40, "--adduct", "[M-H]-")[0]
        assert code == 4

    def test_unknown_compound(self, workspace, capsys):
        root, cfg = workspace
        assert run(capsys, "ce-sweep", "--config", cfg, "--out-dir", root, "--compound", "nope")[0] == 3

    def test_grad_check_failure_exit_code(self, capsys):
        code, out, _ = run(capsys, "grad-check", "--layers", 1, "--hidden-dim", 4, "--bins", 8, "--tolerance", 0)
        assert code == 1 and "FAIL" in out

    def test_argparse_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["predict", "--ce", "40"])
        assert exc.value.code == 2


class TestPipeline:
    def test_outputs_present(self, workspace):
        root, _ = workspace
        for name in ("molecules.tsv", "spectra.msp", "split.csv", "model.ckpt", "metrics.csv", "train.config.json", "dataset_summary.csv"):
            assert (root / name).exists(), name
        assert len(read_msp(root / "spectra.msp")) == 28

    def test_config_echo_is_effective(self, workspace):
        root, _ = workspace
        echoed = json.loads((root / "train.config.json").read_text())
        assert echoed["train"]["epochs"] == 2 and echoed["model"]["hidden_dim"] == 16
        assert echoed["out_dir"] == str(root)

    def test_predict_writes_msp_and_svg(self, workspace, capsys):
        root, cfg = workspace
        code, _, _ = run(capsys, "predict", "--config", cfg, "--out-dir", root, "--smiles", "CCO", "--ce", 40, "--svg")
        assert code == 0
        (spec,) = read_msp(root / "prediction.msp")
        assert spec.metadata.collision_energy == 40.0 and spec.metadata.adduct == "[M+H]+"
        assert max(p.intensity for p in spec.peaks) == 1.0
        assert (root / "prediction.svg").read_text().startswith("<?xml")

    @pytest.mark.parametrize(
        "command,outputs",
        [
            ("eval-sim", ["similarity.csv", "similarity_summary.csv"]),
            ("rank", ["ranking_detail.csv", "ranking_summary.csv"]),
            ("ce-sweep", ["ce_sweep.csv", "ce_trend.csv", "ce_density_predicted.csv", "ce_density_real.csv"]),
            ("attention", ["attention.csv"]),
        ],
    )
    def test_eval_commands_byte_identical(self, workspace, capsys, tmp_path, command, outputs):
        root, cfg = workspace
        blobs = []
        for out in (tmp_path / "a", tmp_path / "b"):
            out.mkdir()
            for name in ("molecules.tsv", "spectra.msp", "split.csv", "model.ckpt"):
                (out / name).write_bytes((root / name).read_bytes())
            assert run(capsys, command, "--config", cfg, "--out-dir", out, "--split", "test")[0] == 0
            blobs.append([(out / name).read_bytes() for name in outputs])
        assert blobs[0] == blobs[1]

    def test_eval_sim_seed_aggregate(self, workspace, capsys, tmp_path):
        root, cfg = workspace
        ckpt = str(root / "model.ckpt")
        code, out, _ = run(capsys, "eval-sim", "--config", cfg, "--out-dir", root, "--split", "train", "--checkpoint", ckpt, "--checkpoint", ckpt)
        assert code == 0 and "over 2 checkpoints" in out
        assert (root / "similarity_seeds.csv").read_text().splitlines()[1].endswith(",0.0")

    def test_ce_sweep_mirror_svgs(self, workspace, capsys):
        root, cfg = workspace
        cid = sorted(r.compound_id for r in read_msp(root / "spectra.msp"))[0]
        split = (root / "split.csv").read_text()
        which = re.search(rf"^{cid},([a-z]+),", split, re.M).group(1)
        code = run(capsys, "ce-sweep", "--config", cfg, "--out-dir", root, "--split", which, "--compound", cid, "--svg")[0]
        assert code == 0
        assert sorted(p.name for p in root.glob(f"mirror_{cid}_*.svg")) == [f"mirror_{cid}_ce20.svg", f"mirror_{cid}_ce80.svg"]

    def test_gen_data_rerun_identical(self, workspace, tmp_path, capsys):
        _, cfg = workspace
        assert run(capsys, "gen-data", "--config", cfg, "--out-dir", tmp_path)[0] == 0
        assert (tmp_path / "spectra.msp").read_bytes() == (workspace[0] / "spectra.msp").read_bytes()

    def test_train_rerun_bitwise(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        for name in ("molecules.tsv", "spectra.msp", "split.csv"):
            (tmp_path / name).write_bytes((root / name).read_bytes())
        assert run(capsys, "train", "--config", cfg, "--out-dir", tmp_path)[0] == 0
        assert (tmp_path / "metrics.csv").read_bytes() == (root / "metrics.csv").read_bytes()
        assert (tmp_path / "model.ckpt").read_bytes() == (root / "model.ckpt").read_bytes()

    def test_checkpoint_carries_architecture(self, workspace):
        ckpt = load_checkpoint(workspace[0] / "model.ckpt")
        assert ckpt.model_config.hidden_dim == 16 and ckpt.model_config.output_bins == 600

    def test_heldout_scaffolds(self, workspace, tmp_path, capsys):
        _, cfg = workspace
        (tmp_path / "molecules.tsv").write_bytes((workspace[0] / "molecules.tsv").read_bytes())
        (tmp_path / "held.txt").write_text("# benzene ring systems\nc1ccccc1\n")
        code, out, _ = run(capsys, "split", "--config", cfg, "--out-dir", tmp_path, "--heldout-scaffolds", "held.txt")
        assert code == 0 and "excluded=" in out
        rows = [line.split(",") for line in (tmp_path / "split.csv").read_text().splitlines()[1:]]
        assert all(r[1] == "excluded" for r in rows if r[2] == "c1ccccc1")

    def test_grad_check_passes(self, capsys):
        code, out, _ = run(capsys, "grad-check", "--layers", 1, "--hidden-dim", 8, "--bins", 16)
        assert code == 0 and "PASS" in out


class TestCache:
    def test_cache_reused_and_invalidated(self, workspace, tmp_path, capsys):
        from masskit.cache import GraphCache
        from masskit.chem import read_molecule_file
        from masskit.graphprep import EncodingConfig

        smiles = dict(read_molecule_file(workspace[0] / "molecules.tsv"))
        cache = GraphCache(tmp_path, EncodingConfig())
        first, fresh = cache.get(smiles)
        assert fresh == len(smiles)
        again, fresh = cache.get(smiles)
        assert fresh == 0
        for cid in smiles:
            assert again[cid].spd_bucket.tobytes() == first[cid].spd_bucket.tobytes()
            assert again[cid].elements == first[cid].elements
        cid = next(iter(smiles))
        smiles[cid] = "CCO"
        assert cache.get(smiles)[1] == 1
        other = GraphCache(tmp_path, EncodingConfig(max_spd=12))
        assert other.path != cache.path and other.get(smiles)[1] == len(smiles)


class TestMirrorSvg:
    def _spec(self, bins):
        import numpy as np

        return BinnedSpectrum(np.asarray(bins, dtype=float))

    def test_byte_identical(self, tmp_path):
        a = self._spec([0, 1, 0.5, 0, 0.2])
        render_mirror_svg(a, a, tmp_path / "x.svg")
        render_mirror_svg(a, a, tmp_path / "y.svg")
        assert (tmp_path / "x.svg").read_bytes() == (tmp_path / "y.svg").read_bytes()

    def test_identical_spectra_symmetric(self, tmp_path):
        a = self._spec([0, 1, 0.5, 0, 0.2])
        render_mirror_svg(a, a, tmp_path / "x.svg")
        text = (tmp_path / "x.svg").read_text()
        sticks = re.findall(r'<line x1="([\d.]+)" y1="([\d.]+)" x2="[\d.]+" y2="([\d.]+)" stroke="#', text)
        up = sorted((x, round(float(y1) - float(y2), 2)) for x, y1, y2 in sticks if float(y2) < float(y1))
        down = sorted((x, round(float(y2) - float(y1), 2)) for x, y1, y2 in sticks if float(y2) > float(y1))
        assert up == down and len(up) == 3

    def test_empty_prediction(self, tmp_path):
        render_mirror_svg(self._spec([0, 1, 0.5]), self._spec([0, 0, 0]), tmp_path / "x.svg")
        assert "#c0392b" not in (tmp_path / "x.svg").read_text()

    def test_grid_mismatch(self, tmp_path):
        import numpy as np

        with pytest.raises(ValueError):
            render_mirror_svg(self._spec([1, 0]), BinnedSpectrum(np.array([1.0, 0.0]), bin_width=0.5), tmp_path / "x.svg")


def test_rank_rejects_overlapping_decoys(workspace, capsys):
    root, cfg = workspace
    code, _, err = run(capsys, "rank", "--config", cfg, "--out-dir", root, "--split", "train")
    assert code == 4 and "ScaffoldOverlapError" in err
