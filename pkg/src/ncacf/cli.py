"""Command-line entry point orchestrating the full experimental protocol.

Verbs: prepare, synth, train, evaluate, sweep, report. Every command is
driven by an INI config (see config.py) plus a few overrides. Exit codes:
0 success, 2 config error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import data as D
from . import evaluation as E
from . import models as M
from . import training as T
from .config import ExperimentConfig, load_config, write_config
from .errors import (ColdStartUnsupportedError, ConfigError, DataError,
                     TrainingDivergedError)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:  # includes ColdStartUnsupportedError
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncacf",
        description="Content-aware collaborative filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=("desk", "paper-faithful"), default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--output", default=None, help="run output directory")

    p = sub.add_parser("prepare", help="filter, split and standardize a dataset")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a planted-model synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model variant")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--pretrained", default=None,
                   help="dot-product pretraining checkpoint (deep variants)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-search the regularization weights")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate runs into a comparison table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--output", default=None, help="directory for report files")
    p.set_defaults(func=cmd_report)

    return parser


def _config(args) -> ExperimentConfig:
    return load_config(args.config, profile=args.profile, seed=args.seed,
                       threads=args.threads, output=args.output)


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _config(args)
    raw = D.load_triplets(cfg.triplets)
    filtered = D.filter_activity(raw, cfg.min_user_songs, cfg.min_item_users)
    os.makedirs(cfg.prepared, exist_ok=True)
    D.write_triplets(os.path.join(cfg.prepared, "triplets.tsv"), filtered)

    table = None
    if cfg.features is not None and os.path.exists(cfg.features):
        labels, values = D.load_features(cfg.features)
        table = D.align_features(labels, values, filtered.item_labels)
        D.write_features(os.path.join(cfg.prepared, "features.tsv"),
                         filtered.item_labels, table.values)

    cold = D.split_cold(filtered.num_items, cfg.num_folds, cfg.val_fraction, cfg.seed)
    warm = D.split_warm(filtered, cfg.num_folds, cfg.val_fraction, cfg.seed)
    D.write_split_plan(os.path.join(cfg.prepared, "split_cold.txt"), cold)
    D.write_split_plan(os.path.join(cfg.prepared, "split_warm.txt"), warm)
    orphans = D.scan_warm_orphans(warm, filtered)
    if orphans:
        raise DataError(f"warm split repair failed for {len(orphans)} fold/item pairs")

    plan = cold if cfg.split_mode == "cold" else warm
    membership = D.materialize_fold(plan, cfg.fold)
    std_items = membership.train if cfg.split_mode == "cold" \
        else np.arange(filtered.num_items)
    if table is not None:
        std = D.standardize_features(table, std_items)
        D.write_features(os.path.join(cfg.prepared, "features_std.tsv"),
                         filtered.item_labels, std.values)

    manifest = os.path.join(cfg.prepared, "manifest.txt")
    _write_manifest(manifest, cfg, filtered, cold, warm, len(orphans))
    print(f"prepared dataset in {cfg.prepared}")
    return 0


def _bucket_interactions(triplets: D.InteractionTriplets, plan: D.SplitPlan,
                         fold: int) -> dict[str, tuple[int, int]]:
    """(songs, interactions) per bucket for one rotation of the plan."""
    membership = D.materialize_fold(plan, fold)
    out = {}
    if plan.mode == "cold":
        for bucket, items in (("train", membership.train),
                              ("validation", membership.validation),
                              ("test", membership.test)):
            keep = np.isin(triplets.items, items)
            out[bucket] = (int(items.size), int(keep.sum()))
    else:
        for bucket, idx in (("train", membership.train),
                            ("validation", membership.validation),
                            ("test", membership.test)):
            out[bucket] = (triplets.num_items, int(idx.size))
    return out


def _write_manifest(path, cfg: ExperimentConfig, triplets: D.InteractionTriplets,
                    cold: D.SplitPlan, warm: D.SplitPlan, orphans: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# dataset manifest\n")
        fh.write(f"users = {triplets.num_users}\n")
        fh.write(f"songs = {triplets.num_items}\n")
        fh.write(f"interactions = {triplets.num_entries}\n")
        fh.write(f"min_user_songs = {cfg.min_user_songs}\n")
        fh.write(f"min_item_users = {cfg.min_item_users}\n")
        fh.write("filter_order = activity_filter_on_raw_playcounts_then_binarize\n")
        fh.write(f"binarize_tau = {cfg.hyper.tau!r}\n")
        fh.write(f"seed = {cfg.seed}\n")
        fh.write(f"num_folds = {cfg.num_folds}\n")
        fh.write(f"val_fraction = {cfg.val_fraction!r}\n")
        fh.write(f"manifest_fold = {cfg.fold}\n")
        fh.write(f"warm_orphan_violations = {orphans}\n")
        fh.write(f"cold_validation_songs = {cold.validation.size}\n")
        fh.write("cold_fold_sizes = " + " ".join(str(f.size) for f in cold.folds) + "\n")
        fh.write(f"warm_validation_interactions = {warm.validation.size}\n")
        fh.write("warm_fold_sizes = " + " ".join(str(f.size) for f in warm.folds) + "\n")
        fh.write(f"warm_train_always = {warm.train_always.size}\n")
        fh.write("# setting\tbucket\tusers\tsongs\tinteractions\n")
        fh.write(f"total\t-\t{triplets.num_users}\t{triplets.num_items}"
                 f"\t{triplets.num_entries}\n")
        for setting, plan in (("warm", warm), ("cold", cold)):
            rows = _bucket_interactions(triplets, plan, cfg.fold)
            for bucket in ("train", "validation", "test"):
                songs, inter = rows[bucket]
                fh.write(f"{setting}\t{bucket}\t{triplets.num_users}\t{songs}\t{inter}\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    synth = D.generate_synthetic(cfg.synth_users, cfg.synth_items, cfg.synth_k_true,
                                 cfg.synth_features, cfg.synth_noise,
                                 cfg.synth_density, cfg.seed, tau=cfg.hyper.tau)
    for path in (cfg.triplets, cfg.features):
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
    D.write_triplets(cfg.triplets, synth.triplets)
    D.write_features(cfg.features, synth.triplets.item_labels, synth.features.values)
    sidecar = cfg.triplets + ".planted.npz"
    np.savez(sidecar, W=synth.planted.W, H=synth.planted.H,
             feature_map=synth.planted.feature_map,
             affinity_median=synth.planted.affinity_median)
    print(f"wrote {synth.triplets.num_entries} interactions "
          f"({cfg.synth_users} users x {cfg.synth_items} items) and planted sidecar")
    return 0


# ---------------------------------------------------------------------------
# shared run loading
# ---------------------------------------------------------------------------

class PreparedData:
    def __init__(self, cfg: ExperimentConfig):
        tri_path = os.path.join(cfg.prepared, "triplets.tsv")
        if not os.path.exists(tri_path):
            raise DataError(f"{tri_path} missing; run `ncacf prepare` first")
        self.triplets = D.load_triplets(tri_path)
        self.features = None
        feat_path = os.path.join(cfg.prepared, "features.tsv")
        if os.path.exists(feat_path):
            labels, values = D.load_features(feat_path)
            self.features = D.align_features(labels, values, self.triplets.item_labels)
        plan_path = os.path.join(cfg.prepared, f"split_{cfg.split_mode}.txt")
        if not os.path.exists(plan_path):
            raise DataError(f"{plan_path} missing; run `ncacf prepare` first")
        self.plan = D.read_split_plan(plan_path)
        self.membership = D.materialize_fold(self.plan, cfg.fold)
        if cfg.split_mode == "cold":
            self.item_pool = self.membership.train
        else:
            self.item_pool = np.arange(self.triplets.num_items)
        train_idx = self.membership.train_entry_idx(self.triplets)
        self.train_data = D.SparsePlaycounts.from_triplets(self.triplets.subset(train_idx))

    def standardized_features(self):
        if self.features is None:
            return None
        return D.standardize_features(self.features, self.item_pool)


def _make_validator(cfg: ExperimentConfig, prep: PreparedData, variant,
                    features_std):
    if cfg.split_mode == "cold" and not variant.has_content:
        return None
    scheme = cfg.hyper.scheme()

    def validator(model):
        result = E.evaluate(model, prep.membership, "validation", prep.triplets,
                            scheme, features_std, cfg.top_k)
        return result.mean

    return validator


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    variant = cfg.variant()
    prep = PreparedData(cfg)
    features_std = prep.standardized_features()
    if variant.has_content and features_std is None:
        raise DataError("this variant needs item features; none were prepared")
    validator = _make_validator(cfg, prep, variant, features_std)

    os.makedirs(cfg.output, exist_ok=True)
    write_config(os.path.join(cfg.output, "config.ini"), cfg)
    last_path = os.path.join(cfg.output, "last.ckpt")
    best_path = os.path.join(cfg.output, "best.ckpt")

    extra_arrays = {}
    if features_std is not None:
        extra_arrays["feat_mean"] = features_std.means
        extra_arrays["feat_std"] = features_std.stds

    run_header = {
        "split_mode": cfg.split_mode,
        "fold": cfg.fold,
        "seed": cfg.seed,
        "hyper": _hyper_dict(cfg),
    }

    prev_rows = []
    if args.resume and os.path.exists(os.path.join(cfg.output, "report.tsv")):
        prev_rows = T.read_report(os.path.join(cfg.output, "report.tsv")).rows

    def save_last(model, adams, progress, best_tracker):
        head = dict(run_header)
        head["progress"] = progress
        head["best"] = best_tracker
        M.save_model(last_path, model, extra_header=head,
                     arrays=extra_arrays, adams=adams)

    def save_best(model):
        M.save_model(best_path, model, extra_header=dict(run_header),
                     arrays=extra_arrays)

    kwargs = dict(item_pool=prep.item_pool, threads=cfg.threads, validator=validator)
    U, I = prep.triplets.num_users, prep.triplets.num_items

    initial_best = None
    if args.resume:
        head_r = M.read_checkpoint(args.resume)[0]
        best_info = head_r.get("best") or {}
        if best_info.get("best_val") is not None:
            initial_best = (best_info["best_epoch"], best_info["best_val"])

    if variant.family in ("wmf", "mf_hybrid"):
        start_state = None
        if args.resume:
            model0, head0, _, adams0 = M.load_model(args.resume)
            start_state = (model0, adams0.get("extractor"),
                           head0["progress"]["iteration"])

        def after_iteration(it, model, adam, report):
            adams = {} if adam is None else {"extractor": adam}
            save_last(model, adams, {"iteration": it + 1},
                      {"best_epoch": report.best_epoch, "best_val": report.best_val})
            if report.best_epoch == it:
                save_best(model)

        if variant.family == "wmf":
            model, report = T.train_wmf(prep.train_data, cfg.hyper, U, I, cfg.seed,
                                        after_iteration=after_iteration,
                                        start_state=start_state,
                                        initial_best=initial_best, **kwargs)
        else:
            model, report = T.train_mf_hybrid(prep.train_data, features_std,
                                              cfg.coupling, cfg.hyper, U, I, cfg.seed,
                                              after_iteration=after_iteration,
                                              start_state=start_state,
                                              initial_best=initial_best, **kwargs)
        best_model = model
        if report.best_epoch is not None and os.path.exists(best_path):
            best_model, _, _, _ = M.load_model(best_path)
    elif variant.family == "dcb":
        model, report = T.train_dcb(prep.train_data, features_std, cfg.coupling,
                                    cfg.hyper, U, I, cfg.seed, **kwargs)
        best_model = model
    else:  # mf_uni, ncacf, ncf
        state = None
        if args.resume:
            model0, head0, _, adams0 = M.load_model(args.resume)
            prog = head0["progress"]
            best_model0 = None
            if os.path.exists(best_path):
                best_model0, _, _, _ = M.load_model(best_path)
            state = T.TrainState(model=model0, adams=adams0,
                                 phase_idx=prog["phase_idx"],
                                 epoch_in_phase=prog["epoch_in_phase"],
                                 global_epoch=prog["global_epoch"],
                                 best_model=best_model0)
        elif args.pretrained:
            model0, head0, _, _ = M.load_model(args.pretrained)
            if model0.embed_dim != cfg.hyper.embed_dim:
                raise ConfigError("pretrained checkpoint embed_dim differs from config")
            model0.variant = variant
            model0.interaction = None
            if not variant.has_content:
                model0.extractor = None
            state = T.TrainState(model=model0, adams={}, phase_idx=1,
                                 epoch_in_phase=0,
                                 global_epoch=head0.get("progress", {}).get(
                                     "global_epoch", cfg.hyper.pretrain_epochs))

        def after_epoch(state, report):
            save_last(state.model, state.adams,
                      {"phase_idx": state.phase_idx,
                       "epoch_in_phase": state.epoch_in_phase,
                       "global_epoch": state.global_epoch},
                      {"best_epoch": report.best_epoch, "best_val": report.best_val})
            if report.best_epoch == state.global_epoch - 1 and state.best_model is not None:
                save_best(state.best_model)

        if variant.family == "mf_uni":
            model, best_model, report = T.train_mf_uni(
                prep.train_data, features_std, cfg.coupling, cfg.hyper, U, I,
                cfg.seed, state=state, after_epoch=after_epoch,
                initial_best=initial_best, **kwargs)
        else:
            model, best_model, report = T.train_ncacf(
                prep.train_data, features_std, cfg.coupling, cfg.combination,
                cfg.q_hidden, cfg.hyper, U, I, cfg.seed, family=variant.family,
                output_activation=cfg.output_activation,
                state=state, after_epoch=after_epoch,
                initial_best=initial_best, **kwargs)

    report.rows = prev_rows + report.rows
    report.settings = _hyper_dict(cfg)
    T.write_report(os.path.join(cfg.output, "report.tsv"), report)
    if not os.path.exists(last_path):
        save_last(model, {}, {"done": True},
                  {"best_epoch": report.best_epoch, "best_val": report.best_val})
    if not os.path.exists(best_path):
        save_best(best_model)
    print(f"trained {variant.family}/{variant.coupling}; "
          f"final objective {report.rows[-1][2]:.6g}; run dir {cfg.output}")
    return 0


def _hyper_dict(cfg: ExperimentConfig) -> dict:
    out = {"family": cfg.family, "coupling": cfg.coupling,
           "combination": cfg.combination, "q_hidden": cfg.q_hidden,
           "split_mode": cfg.split_mode, "fold": cfg.fold, "seed": cfg.seed,
           "top_k": cfg.top_k}
    for f in ("embed_dim", "lambda_w", "lambda_h", "tau", "alpha", "epsilon",
              "eta", "batch_items", "n_iters", "n_gd", "max_epochs",
              "pretrain_epochs", "finetune_epochs", "eval_every",
              "hidden_width", "extractor_layers"):
        out[f] = getattr(cfg.hyper, f)
    return out


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model, header, arrays, _ = M.load_model(args.checkpoint)
    want = cfg.variant()
    if model.variant != want:
        raise ConfigError(
            f"checkpoint variant {model.variant} does not match config {want}")
    if header.get("split_mode") != cfg.split_mode or header.get("fold") != cfg.fold:
        raise ConfigError("checkpoint was trained on a different split/fold")
    setting = cfg.split_mode if cfg.setting == "both" else cfg.setting
    if setting != cfg.split_mode:
        raise ConfigError(
            f"cannot run a {setting} evaluation on a model trained with a "
            f"{cfg.split_mode} split")
    if setting == "cold" and not model.variant.has_content:
        raise ColdStartUnsupportedError(
            f"{model.variant.family} cannot score unseen items: it has no "
            f"content branch (cold-start evaluation unsupported)")

    prep = PreparedData(cfg)
    features_std = None
    if model.variant.has_content:
        if prep.features is None:
            raise DataError("cold evaluation of a content model needs the features file")
        if "feat_mean" not in arrays:
            raise DataError("checkpoint lacks feature standardization statistics")
        features_std = D.FeatureTable(
            (prep.features.values - arrays["feat_mean"]) / arrays["feat_std"],
            arrays["feat_mean"], arrays["feat_std"], standardized=True)

    os.makedirs(cfg.output, exist_ok=True)
    scheme = cfg.hyper.scheme()
    for bucket in ("validation", "test"):
        result = E.evaluate(model, prep.membership, bucket, prep.triplets,
                            scheme, features_std, cfg.top_k)
        out = os.path.join(cfg.output, f"eval_{setting}_{bucket}.tsv")
        E.write_eval_result(out, result, per_user=True)
        print(f"{setting}/{bucket}: mean NDCG@{cfg.top_k} = {result.mean:.4f} "
              f"over {result.num_users} users ({result.num_excluded} excluded)")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    cfg = _config(args)
    variant = cfg.variant()
    prep = PreparedData(cfg)
    features_std = prep.standardized_features()
    if variant.has_content and features_std is None:
        raise DataError("this variant needs item features; none were prepared")
    validator = _make_validator(cfg, prep, variant, features_std)
    if validator is None:
        raise ConfigError("sweep needs a validation signal; cold split with a "
                          "content-free family has none")
    os.makedirs(cfg.output, exist_ok=True)
    U, I = prep.triplets.num_users, prep.triplets.num_items

    def evaluate_pair(lw, lh):
        hyper = replace(cfg.hyper, lambda_w=lw, lambda_h=lh)
        model = _train_for_sweep(cfg, variant, prep, features_std, hyper,
                                 validator, U, I)
        return validator(model)

    (best_lw, best_lh), table = E.grid_search(cfg.grid_lambda_w, cfg.grid_lambda_h,
                                              evaluate_pair)
    sweep_path = os.path.join(cfg.output, "sweep.tsv")
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write("lambda_w\tlambda_h\tval_ndcg\n")
        for lw, lh, score in table:
            fh.write(f"{lw!r}\t{lh!r}\t{score!r}\n")
    best_cfg = ExperimentConfig(**{**cfg.__dict__})
    best_cfg.hyper = replace(cfg.hyper, lambda_w=best_lw, lambda_h=best_lh)
    write_config(os.path.join(cfg.output, "best_config.ini"), best_cfg)
    print(f"best (lambda_w, lambda_h) = ({best_lw!r}, {best_lh!r}); "
          f"table in {sweep_path}")
    return 0


def _train_for_sweep(cfg, variant, prep, features_std, hyper, validator, U, I):
    kwargs = dict(item_pool=prep.item_pool, threads=cfg.threads, validator=validator)
    if variant.family == "wmf":
        model, _ = T.train_wmf(prep.train_data, hyper, U, I, cfg.seed, **kwargs)
    elif variant.family == "mf_hybrid":
        model, _ = T.train_mf_hybrid(prep.train_data, features_std, cfg.coupling,
                                     hyper, U, I, cfg.seed, **kwargs)
    elif variant.family == "dcb":
        model, _ = T.train_dcb(prep.train_data, features_std, cfg.coupling,
                               hyper, U, I, cfg.seed, **kwargs)
    elif variant.family == "mf_uni":
        _, model, _ = T.train_mf_uni(prep.train_data, features_std, cfg.coupling,
                                     hyper, U, I, cfg.seed, **kwargs)
    else:
        _, model, _ = T.train_ncacf(prep.train_data, features_std, cfg.coupling,
                                    cfg.combination, cfg.q_hidden, hyper, U, I,
                                    cfg.seed, family=variant.family,
                                    output_activation=cfg.output_activation,
                                    **kwargs)
    return model


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    out_dir = args.output or args.run_dirs[0]
    os.makedirs(out_dir, exist_ok=True)
    groups: dict[str, dict] = {}
    for run_dir in args.run_dirs:
        cfg_path = os.path.join(run_dir, "config.ini")
        if not os.path.exists(cfg_path):
            raise DataError(f"{run_dir} has no config.ini; not a run directory")
        cfg = load_config(cfg_path)
        label = cfg.family if cfg.coupling == "content_free" \
            else f"{cfg.family}-{cfg.coupling}"
        entry = groups.setdefault(label, {"warm": [], "cold": []})
        for setting in ("warm", "cold"):
            mean = _read_eval_mean(os.path.join(run_dir, f"eval_{setting}_test.tsv"))
            if mean is not None:
                entry[setting].append(mean)
        report_path = os.path.join(run_dir, "report.tsv")
        if os.path.exists(report_path):
            series = T.read_report(report_path)
            name = os.path.basename(os.path.normpath(run_dir))
            with open(os.path.join(out_dir, f"convergence_{name}.tsv"), "w",
                      encoding="utf-8") as fh:
                fh.write("epoch\tphase\tobjective\tval_ndcg\n")
                for epoch, phase, obj, val, _secs in series.rows:
                    val_s = "-" if val is None else repr(val)
                    fh.write(f"{epoch}\t{phase}\t{obj!r}\t{val_s}\n")

    rows = []
    for label, entry in groups.items():
        warm_mean, warm_std = E.fold_mean_std(entry["warm"]) if entry["warm"] else (None, None)
        cold_mean, cold_std = E.fold_mean_std(entry["cold"]) if entry["cold"] else (None, None)
        rows.append((label, warm_mean, warm_std, cold_mean, cold_std,
                     len(entry["warm"]), len(entry["cold"])))
    rows.sort(key=lambda r: (-(r[3] if r[3] is not None else float("-inf")), r[0]))

    table_path = os.path.join(out_dir, "report_table.tsv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("variant\twarm_mean\twarm_std\tcold_mean\tcold_std"
                 "\twarm_folds\tcold_folds\n")
        for label, wm, ws, cm, cs, nw, nc in rows:
            fh.write(f"{label}\t{_fmt(wm)}\t{_fmt(ws)}\t{_fmt(cm)}\t{_fmt(cs)}"
                     f"\t{nw}\t{nc}\n")
    print(f"wrote {table_path} ({len(rows)} variants)")
    return 0


def _fmt(x) -> str:
    return "-" if x is None else repr(float(x))


def _read_eval_mean(path):
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("mean_ndcg\t"):
                return float(line.split("\t")[1])
    return None


if __name__ == "__main__":
    sys.exit(main())
