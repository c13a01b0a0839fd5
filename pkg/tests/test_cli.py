import os

import numpy as np
import pytest

from ncacf.cli import main
from ncacf.config import ExperimentConfig, load_config, write_config
from ncacf.data import load_triplets
from ncacf.models import load_model


BASE_CFG = """
[data]
triplets = raw/triplets.tsv
features = raw/features.tsv
prepared = prepared
min_user_songs = 1
min_item_users = 1

[variant]
family = {family}
coupling = {coupling}

[hyperparams]
embed_dim = 4
lambda_w = 0.1
lambda_h = 1.0
eta = 0.001
batch_items = 16
n_iters = 3
n_gd = 1
max_epochs = 4
pretrain_epochs = 2
finetune_epochs = 3
eval_every = 2
hidden_width = 8
extractor_layers = 2

[split]
mode = {mode}
num_folds = 4
val_fraction = 0.2
fold = 0

[eval]
setting = {mode}
top_k = 5

[synth]
num_users = 30
num_items = 24
k_true = 3
num_features = 6
noise = 0.1
density = 0.35

[run]
seed = 7
threads = 1
output = {output}
"""


def write_cfg(tmp_path, name="cfg.ini", family="wmf", coupling="content_free",
              mode="warm", output="run", extra=None):
    text = BASE_CFG.format(family=family, coupling=coupling, mode=mode,
                           output=output)
    if extra:
        text += extra
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["prepare", "--config", cfg]) == 0
    return tmp_path


class TestSynth:
    def test_writes_dataset_and_sidecar(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert main(["synth", "--config", cfg]) == 0
        t = load_triplets(tmp_path / "raw" / "triplets.tsv")
        assert t.num_users <= 30 and t.num_items <= 24
        assert os.path.exists(tmp_path / "raw" / "triplets.tsv.planted.npz")
        planted = np.load(tmp_path / "raw" / "triplets.tsv.planted.npz")
        assert planted["W"].shape == (3, 30)

    def test_seed_changes_data(self, tmp_path):
        cfg = write_cfg(tmp_path)
        main(["synth", "--config", cfg])
        a = (tmp_path / "raw" / "triplets.tsv").read_bytes()
        main(["synth", "--config", cfg, "--seed", "8"])
        b = (tmp_path / "raw" / "triplets.tsv").read_bytes()
        assert a != b


class TestPrepare:
    def test_rerun_bit_identical(self, workspace):
        cfg = str(workspace / "cfg.ini")
        files = ["manifest.txt", "triplets.tsv", "features.tsv",
                 "split_cold.txt", "split_warm.txt", "features_std.tsv"]
        first = {f: (workspace / "prepared" / f).read_bytes() for f in files}
        assert main(["prepare", "--config", cfg]) == 0
        for f in files:
            assert (workspace / "prepared" / f).read_bytes() == first[f], f

    def test_manifest_bucket_table(self, workspace):
        text = (workspace / "prepared" / "manifest.txt").read_text()
        assert "warm_orphan_violations = 0" in text
        rows = [l.split("\t") for l in text.splitlines()
                if l.startswith(("warm\t", "cold\t", "total\t"))]
        total = next(r for r in rows if r[0] == "total")
        warm_train = next(r for r in rows if r[:2] == ["warm", "train"])
        warm_val = next(r for r in rows if r[:2] == ["warm", "validation"])
        warm_test = next(r for r in rows if r[:2] == ["warm", "test"])
        assert (int(warm_train[4]) + int(warm_val[4]) + int(warm_test[4])
                == int(total[4]))
        cold_rows = [r for r in rows if r[0] == "cold"]
        assert sum(int(r[3]) for r in cold_rows) == int(total[3])

    def test_missing_feature_names_item(self, tmp_path):
        cfg = write_cfg(tmp_path)
        main(["synth", "--config", cfg])
        feat_path = tmp_path / "raw" / "features.tsv"
        lines = feat_path.read_text().splitlines()
        # Drop one item's feature row; prepare must name it.
        feat_path.write_text("\n".join(lines[:5] + lines[6:]) + "\n")
        assert main(["prepare", "--config", cfg]) == 3


class TestTrainEvaluate:
    def test_wmf_warm_end_to_end(self, workspace):
        cfg = str(workspace / "cfg.ini")
        assert main(["train", "--config", cfg]) == 0
        run = workspace / "run"
        assert (run / "last.ckpt").exists()
        assert (run / "best.ckpt").exists()
        assert (run / "report.tsv").exists()
        assert main(["evaluate", "--config", cfg,
                     "--checkpoint", str(run / "best.ckpt")]) == 0
        assert (run / "eval_warm_test.tsv").exists()
        assert (run / "eval_warm_validation.tsv").exists()

    def test_evaluate_idempotent(self, workspace):
        cfg = str(workspace / "cfg.ini")
        main(["train", "--config", cfg])
        ckpt = str(workspace / "run" / "best.ckpt")
        main(["evaluate", "--config", cfg, "--checkpoint", ckpt])
        first = (workspace / "run" / "eval_warm_test.tsv").read_bytes()
        main(["evaluate", "--config", cfg, "--checkpoint", ckpt])
        assert (workspace / "run" / "eval_warm_test.tsv").read_bytes() == first

    def test_wmf_needs_no_features(self, tmp_path):
        cfg = write_cfg(tmp_path)
        main(["synth", "--config", cfg])
        main(["prepare", "--config", cfg])
        os.remove(tmp_path / "prepared" / "features.tsv")
        assert main(["train", "--config", cfg]) == 0

    def test_ncacf_cold_end_to_end(self, tmp_path):
        cfg = write_cfg(tmp_path, family="ncacf", coupling="relaxed", mode="cold",
                        extra="\ncombination = multiplication\nq_hidden = 1\n"
                              .replace("\ncombination",
                                       "\n[variant]\ncombination"))
        main(["synth", "--config", cfg])
        main(["prepare", "--config", cfg])
        assert main(["train", "--config", cfg]) == 0
        ckpt = str(tmp_path / "run" / "best.ckpt")
        assert main(["evaluate", "--config", cfg, "--checkpoint", ckpt]) == 0
        assert (tmp_path / "run" / "eval_cold_test.tsv").exists()

    def test_trained_rerun_bit_identical(self, workspace):
        cfg = str(workspace / "cfg.ini")
        main(["train", "--config", cfg])
        first = (workspace / "run" / "last.ckpt").read_bytes()
        main(["train", "--config", cfg])
        assert (workspace / "run" / "last.ckpt").read_bytes() == first

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg_full = write_cfg(tmp_path, name="full.ini", family="mf_uni",
                             coupling="relaxed", output="run_full")
        main(["synth", "--config", cfg_full])
        main(["prepare", "--config", cfg_full])
        assert main(["train", "--config", cfg_full]) == 0

        # Same run, but stopped after 2 epochs and resumed to the full budget.
        short = write_cfg(tmp_path, name="short.ini", family="mf_uni",
                          coupling="relaxed", output="run_resumed")
        short_text = (tmp_path / "short.ini").read_text()
        (tmp_path / "short.ini").write_text(
            short_text.replace("max_epochs = 4", "max_epochs = 2"))
        assert main(["train", "--config", str(tmp_path / "short.ini")]) == 0
        resumed = write_cfg(tmp_path, name="resume.ini", family="mf_uni",
                            coupling="relaxed", output="run_resumed")
        assert main(["train", "--config", resumed,
                     "--resume", str(tmp_path / "run_resumed" / "last.ckpt")]) == 0
        a = (tmp_path / "run_full" / "last.ckpt").read_bytes()
        b = (tmp_path / "run_resumed" / "last.ckpt").read_bytes()
        assert a == b

    def test_ncacf_resumes_from_pretrained(self, tmp_path):
        uni = write_cfg(tmp_path, name="uni.ini", family="mf_uni",
                        coupling="relaxed", output="run_uni")
        main(["synth", "--config", uni])
        main(["prepare", "--config", uni])
        assert main(["train", "--config", uni]) == 0
        deep = write_cfg(tmp_path, name="deep.ini", family="ncacf",
                         coupling="relaxed", output="run_deep")
        assert main(["train", "--config", deep, "--pretrained",
                     str(tmp_path / "run_uni" / "best.ckpt")]) == 0
        model, header, _, _ = load_model(tmp_path / "run_deep" / "last.ckpt")
        assert model.interaction is not None
        from ncacf.training import read_report
        phases = {row[1] for row in
                  read_report(tmp_path / "run_deep" / "report.tsv").rows}
        assert phases == {"finetune"}


class TestExitCodes:
    def test_unknown_family_is_config_error(self, tmp_path):
        cfg = write_cfg(tmp_path, family="bogus")
        assert main(["prepare", "--config", cfg]) == 2

    def test_missing_prepared_data_is_data_error(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert main(["train", "--config", cfg]) == 3

    def test_cold_eval_of_content_free_model(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, mode="cold")
        main(["synth", "--config", cfg])
        main(["prepare", "--config", cfg])
        assert main(["train", "--config", cfg]) == 0
        code = main(["evaluate", "--config", cfg,
                     "--checkpoint", str(tmp_path / "run" / "best.ckpt")])
        assert code == 2
        assert "cold-start evaluation unsupported" in capsys.readouterr().err

    def test_divergence_exit_code(self, workspace, monkeypatch):
        from ncacf.errors import TrainingDivergedError
        import ncacf.cli as cli

        def boom(*args, **kwargs):
            raise TrainingDivergedError("objective is not finite (inf)")

        monkeypatch.setattr(cli.T, "train_wmf", boom)
        assert main(["train", "--config", str(workspace / "cfg.ini")]) == 4

    def test_checkpoint_variant_mismatch(self, workspace):
        cfg = str(workspace / "cfg.ini")
        main(["train", "--config", cfg])
        other = write_cfg(workspace, name="other.ini", family="mf_uni",
                          coupling="relaxed")
        assert main(["evaluate", "--config", other,
                     "--checkpoint", str(workspace / "run" / "best.ckpt")]) == 2


class TestSweep:
    def test_single_cell_grid(self, workspace):
        cfg = write_cfg(workspace, name="sweep.ini", family="wmf",
                        coupling="content_free", output="run_sweep",
                        extra="\n[sweep]\ngrid_lambda_w = 0.1\ngrid_lambda_h = 1.0\n")
        assert main(["sweep", "--config", cfg]) == 0
        rows = (workspace / "run_sweep" / "sweep.tsv").read_text().splitlines()
        assert len(rows) == 2  # header + one cell
        best = load_config(str(workspace / "run_sweep" / "best_config.ini"))
        assert best.hyper.lambda_w == 0.1 and best.hyper.lambda_h == 1.0

    def test_grid_table_size_and_best_row(self, workspace):
        cfg = write_cfg(workspace, name="sweep2.ini", family="wmf",
                        coupling="content_free", output="run_sweep2",
                        extra="\n[sweep]\ngrid_lambda_w = 0.05,0.5\n"
                              "grid_lambda_h = 0.5,5.0\n")
        assert main(["sweep", "--config", cfg]) == 0
        lines = (workspace / "run_sweep2" / "sweep.tsv").read_text().splitlines()[1:]
        assert len(lines) == 4
        table = [tuple(map(float, l.split("\t"))) for l in lines]
        best = load_config(str(workspace / "run_sweep2" / "best_config.ini"))
        top = max(table, key=lambda r: (r[2], r[0], r[1]))
        assert (best.hyper.lambda_w, best.hyper.lambda_h) == (top[0], top[1])


class TestReport:
    def test_single_run_table(self, workspace):
        cfg = str(workspace / "cfg.ini")
        main(["train", "--config", cfg])
        main(["evaluate", "--config", cfg,
              "--checkpoint", str(workspace / "run" / "best.ckpt")])
        out = str(workspace / "summary")
        assert main(["report", str(workspace / "run"), "--output", out]) == 0
        table = (workspace / "summary" / "report_table.tsv").read_text().splitlines()
        assert len(table) == 2
        assert table[1].startswith("wmf\t")
        first = (workspace / "summary" / "report_table.tsv").read_bytes()
        assert main(["report", str(workspace / "run"), "--output", out]) == 0
        assert (workspace / "summary" / "report_table.tsv").read_bytes() == first


class TestReportSorting:
    def _fake_run(self, tmp_path, name, family, coupling, cold=None, warm=None):
        run = tmp_path / name
        run.mkdir()
        cfg = ExperimentConfig()
        cfg.family = family
        cfg.coupling = coupling
        write_config(run / "config.ini", cfg)
        for setting, mean in (("cold", cold), ("warm", warm)):
            if mean is None:
                continue
            (run / f"eval_{setting}_test.tsv").write_text(
                f"setting\t{setting}\nbucket\ttest\nfold\t0\nnum_users\t5\n"
                f"num_excluded\t0\npool_size_total\t50\nmean_ndcg\t{mean!r}\n")
        return str(run)

    def test_sorted_by_cold_ndcg_descending(self, tmp_path):
        runs = [
            self._fake_run(tmp_path, "a", "wmf", "content_free", warm=0.5),
            self._fake_run(tmp_path, "b", "mf_hybrid", "relaxed", cold=0.3),
            self._fake_run(tmp_path, "c", "ncacf", "relaxed", cold=0.4),
        ]
        out = str(tmp_path / "summary")
        assert main(["report", *runs, "--output", out]) == 0
        lines = (tmp_path / "summary" / "report_table.tsv").read_text().splitlines()
        variants = [l.split("\t")[0] for l in lines[1:]]
        assert variants == ["ncacf-relaxed", "mf_hybrid-relaxed", "wmf"]


class TestConfigRoundtrip:
    def test_emitted_config_reparses_equal(self, tmp_path):
        cfg_path = write_cfg(tmp_path, family="ncacf", coupling="strict")
        cfg = load_config(cfg_path)
        out = tmp_path / "emitted.ini"
        write_config(out, cfg)
        again = load_config(str(out))
        assert again == cfg

    def test_profile_defaults_applied(self, tmp_path):
        cfg_path = write_cfg(tmp_path)
        desk = load_config(cfg_path)
        assert desk.top_k == 5  # file value beats profile default
        text = (tmp_path / "cfg.ini").read_text()
        (tmp_path / "pf.ini").write_text(
            text.replace("embed_dim = 4\n", "").replace("top_k = 5\n", ""))
        paper = load_config(str(tmp_path / "pf.ini"), profile="paper-faithful")
        assert paper.hyper.embed_dim == 128
        assert paper.top_k == 50

    def test_unknown_key_rejected(self, tmp_path):
        cfg_path = write_cfg(tmp_path, extra="\n[run]\nbogus_key = 1\n")
        from ncacf.errors import ConfigError
        with pytest.raises(ConfigError):
            load_config(cfg_path)

    def test_desk_synth_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.synth_users, cfg.synth_items, cfg.synth_k_true) == (500, 400, 8)

    def test_output_root_env(self, tmp_path, monkeypatch):
        root = tmp_path / "outroot"
        monkeypatch.setenv("NCACF_OUTPUT_ROOT", str(root))
        cfg = load_config(write_cfg(tmp_path))
        assert cfg.output == str(root / "run")
