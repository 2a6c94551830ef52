"""Command-line surface: training, evaluation, prediction, gradient checks,
parameter accounting, and synthetic dataset generation.

Reports land in --out-dir as CSVs plus rendered matplotlib figures; errors
print one machine-readable line `error: <kind>: <message>` and exit nonzero.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint, dataio, fashionnet, metrics as met, nn, report, segnet
from .errors import ConfigError, EngineError, ManifestError, TrainingDivergedError
from .gradcheck import gradcheck_params
from .tensor import Tensor

TRAIN_DEFAULTS = {
    "seg": dict(base_lr=1e-5, momentum=0.9, weight_decay=0.0005,
                step_size=10000, gamma=0.1, batch_size=2, iterations=40000),
    "cls": dict(base_lr=1e-3, momentum=0.9, weight_decay=0.001,
                step_size=20000, gamma=0.1, batch_size=64, iterations=20000),
}

HYPER_KEYS = ("base_lr", "momentum", "weight_decay", "step_size", "gamma",
              "batch_size", "iterations")
_INT_KEYS = {"step_size", "batch_size", "iterations", "seed", "checkpoint_interval"}


def _parse_config_file(path):
    """UTF-8 `key = value` lines with '#' comments."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError("%s line %d: expected 'key = value'" % (path, lineno))
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _resolve_run_config(task, args):
    cfg = dict(TRAIN_DEFAULTS[task])
    cfg.update(seed=0, checkpoint_interval=1000, preset=None, threshold=0.5)
    if getattr(args, "config", None):
        for key, val in _parse_config_file(args.config).items():
            if key not in cfg and key not in ("manifest", "out_dir", "checkpoint"):
                raise ConfigError("unknown config key %r" % key)
            if key in _INT_KEYS:
                cfg[key] = int(val)
            elif key in ("manifest", "out_dir", "checkpoint", "preset"):
                cfg[key] = val
            else:
                cfg[key] = float(val)
    for key in HYPER_KEYS + ("seed", "checkpoint_interval", "threshold"):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    for key in ("manifest", "out_dir", "checkpoint", "preset"):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if cfg.get("preset") is None:
        cfg["preset"] = "mini"
    cfg["task"] = task
    return cfg


def _echo_resolved(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w",
              encoding="utf-8", newline="\n") as fh:
        for key in sorted(cfg):
            if cfg[key] is not None:
                fh.write("%s = %s\n" % (key, cfg[key]))


def _build_net(task, preset, seed, dtype=np.float32):
    if task == "seg":
        return segnet.SegNet(segnet.SegNetConfig.from_preset(preset), seed=seed, dtype=dtype)
    return fashionnet.FashionNet(fashionnet.FashionNetConfig.from_preset(preset),
                                 seed=seed, dtype=dtype)


def _load_records(manifest, task, split=None, class_count=None):
    records = dataio.load_manifest(manifest, class_count=class_count)
    if split is not None:
        records = [r for r in records if r.split == split]
    for r in records:
        if task == "seg" and r.mask_path is None:
            raise ManifestError("record %r needs a mask for segmentation" % r.image_path)
        if task == "cls" and r.label is None:
            raise ManifestError("record %r needs a label for classification" % r.image_path)
    return records


# ---------------------------------------------------------------------------
# train


def loss_norm_terms(label_shape):
    """Pixel count per image: the update scales the summed loss to a
    per-pixel mean (summed over the batch) so learning rates transfer
    across image sizes."""
    n = 1
    for ext in label_shape[1:]:
        n *= ext
    return float(n)


def cmd_train(task, args):
    cfg = _resolve_run_config(task, args)
    if "manifest" not in cfg:
        raise ConfigError("train needs --manifest")
    out_dir = cfg.get("out_dir", ".")
    _echo_resolved(cfg, out_dir)
    root = os.path.dirname(os.path.abspath(cfg["manifest"]))
    records = _load_records(cfg["manifest"], task, split="train")
    if not records:
        raise ManifestError("manifest has no train records")

    net = _build_net(task, cfg["preset"], cfg["seed"])
    # decode once up front; training data is desk scale
    images = {r.image_path: dataio.load_image(root, r.image_path) for r in records}
    masks = ({r.image_path: dataio.load_mask(root, r.mask_path) for r in records}
             if task == "seg" else None)

    state = nn.SgdState(base_lr=cfg["base_lr"], momentum=cfg["momentum"],
                        weight_decay=cfg["weight_decay"],
                        step_size=cfg["step_size"], gamma=cfg["gamma"])
    trace = []
    total = cfg["iterations"]
    interval = cfg["checkpoint_interval"]
    epoch = 0
    done = False
    while not done:
        for batch in dataio.make_batches(records, cfg["batch_size"], cfg["seed"], epoch):
            it = state.iteration
            if it >= total:
                done = True
                break
            x = Tensor(np.stack([images[r.image_path] for r in batch]))
            if task == "seg":
                y = Tensor(np.stack([masks[r.image_path] for r in batch]))
                fused, _ = net.forward(x, mode="train")
                loss = segnet.seg_loss(fused, y)
                # the recorded loss is the batch-and-pixel sum; the update
                # uses the per-term mean gradient so learning rates stay
                # comparable across image sizes and batch sizes
                step_loss = loss * (1.0 / loss_norm_terms(y.shape))
            else:
                labels = np.array([r.label for r in batch])
                logits = net.forward(x, mode="train")
                loss = fashionnet.cls_loss(logits, labels)
                step_loss = loss
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDivergedError("loss became non-finite at iteration %d" % it)
            net.registry.zero_grads()
            step_loss.backward()
            nn.sgd_step(net.registry, state)
            trace.append((it, loss_val))
            if interval > 0 and state.iteration % interval == 0 and state.iteration < total:
                checkpoint.save_checkpoint(
                    net.registry, state.iteration,
                    os.path.join(out_dir, "checkpoint_%06d.fseg" % state.iteration))
        epoch += 1
    ckpt_path = cfg.get("checkpoint") or os.path.join(out_dir, "checkpoint_final.fseg")
    checkpoint.save_checkpoint(net.registry, state.iteration, ckpt_path)
    loss_csv = os.path.join(out_dir, "loss.csv")
    report.write_loss_csv(loss_csv, trace)
    report.render_loss_curve(os.path.join(out_dir, "loss_curve.png"), trace)
    print("trained %s/%s: %d iterations, final loss %.6g" %
          (task, cfg["preset"], state.iteration, trace[-1][1]))
    print("checkpoint: %s" % ckpt_path)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(task, args):
    cfg = _resolve_run_config(task, args)
    for need in ("manifest", "checkpoint"):
        if need not in cfg:
            raise ConfigError("eval needs --" + need)
    out_dir = cfg.get("out_dir", ".")
    _echo_resolved(cfg, out_dir)
    root = os.path.dirname(os.path.abspath(cfg["manifest"]))
    records = _load_records(cfg["manifest"], task, split=args.split)
    if not records:
        raise ManifestError("manifest has no %s records" % args.split)
    net = _build_net(task, cfg["preset"], seed=0)
    checkpoint.restore_into(net.registry, cfg["checkpoint"])

    if task == "seg":
        rows = []
        for r in records:
            x = Tensor(dataio.load_image(root, r.image_path)[None])
            pred = net.predict(x, threshold=cfg["threshold"])
            gt = dataio.load_mask(root, r.mask_path)
            rows.append((r.image_path, met.iou(pred.mask[0, 0], gt[0])))
        mean = met.mean_iou([v for _, v in rows])
        report.write_iou_csv(os.path.join(out_dir, "iou.csv"), rows)
        report.write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                                 [("mean_iou", mean), ("item_count", len(rows))])
        report.render_iou_hist(os.path.join(out_dir, "iou_hist.png"),
                               [v for _, v in rows])
        print("mean_iou,%s" % ("%.6f" % mean))
    else:
        class_count = net.config.class_count
        truths, preds = [], []
        for r in records:
            x = Tensor(dataio.load_image(root, r.image_path)[None])
            logits = net.forward(x, mode="infer")
            preds.append(int(fashionnet.predict_label(logits).labels[0]))
            truths.append(r.label)
        rep = met.cls_report(truths, preds, class_count)
        report.write_confusion_csvs(os.path.join(out_dir, "confusion_counts.csv"),
                                    os.path.join(out_dir, "confusion_rownorm.csv"),
                                    rep.confusion)
        report.write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                                 [("accuracy", rep.accuracy),
                                  ("item_count", rep.item_count)])
        report.render_confusion(os.path.join(out_dir, "confusion_matrix.png"),
                                rep.confusion)
        print("accuracy,%s" % ("%.6f" % rep.accuracy))
    return 0


# ---------------------------------------------------------------------------
# predict


def cmd_predict(task, args):
    cfg = _resolve_run_config(task, args)
    if "checkpoint" not in cfg:
        raise ConfigError("predict needs --checkpoint")
    out_dir = cfg.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    net = _build_net(task, cfg["preset"], seed=0)
    checkpoint.restore_into(net.registry, cfg["checkpoint"])
    from . import netpbm

    for path in args.inputs:
        with open(path, "rb") as fh:
            img = netpbm.decode_ppm(fh.read()).to_tensor_data()
        x = Tensor(img[None])
        if task == "seg":
            pred = net.predict(x, threshold=cfg["threshold"])
            stem = os.path.splitext(os.path.basename(path))[0]
            mask_path = os.path.join(out_dir, stem + ".mask.pgm")
            with open(mask_path, "wb") as fh:
                fh.write(netpbm.mask_to_pgm(pred.mask[0, 0]))
            print(mask_path)
        else:
            logits = net.forward(x, mode="infer")
            p = fashionnet.predict_label(logits)
            label = int(p.labels[0])
            print("%s,%d,%.6g" % (path, label, p.probabilities[0, label]))
    return 0


# ---------------------------------------------------------------------------
# gradcheck / param-count / synth-data


def _gradcheck_loss_fn(task, net, rng):
    if task == "seg":
        x = Tensor(rng.uniform(0, 1, size=(1, 3, 8, 8)))
        y = Tensor((rng.uniform(0, 1, size=(1, 1, 8, 8)) > 0.5).astype(np.float64))

        def loss_fn():
            fused, _ = net.forward(x, mode="train")
            return segnet.seg_loss(fused, y)
    else:
        cfg = net.config
        x = Tensor(rng.uniform(0, 1, size=(1, 3, cfg.input_h, cfg.input_w)))
        labels = rng.integers(0, cfg.class_count, size=1)

        def loss_fn():
            return fashionnet.cls_loss(net.forward(x, mode="train"), labels)
    return loss_fn


def cmd_gradcheck(args):
    task = args.task
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    net = _build_net(task, "mini", seed=int(rng.integers(1 << 31)), dtype=np.float64)
    nn.jitter_params(net.registry, rng)
    loss_fn = _gradcheck_loss_fn(task, net, rng)
    reports = gradcheck_params(loss_fn, net.registry.trainable(), h=1e-5, tol=1e-4)
    worst = sorted(reports, key=lambda r: -r.max_rel_err)
    max_err = worst[0].max_rel_err if worst else 0.0
    ok = all(r.passed for r in reports)
    for r in worst[:5]:
        print("  %-40s max_rel_err=%.3e %s" % (r.name, r.max_rel_err,
                                               "ok" if r.passed else "FAIL"))
    print("gradcheck %s mini: %d parameter tensors, max relative error %.3e -> %s"
          % (task, len(reports), max_err, "PASS" if ok else "FAIL"))
    return 0 if ok else 1


def cmd_param_count(args):
    net = _build_net(args.task, args.preset or "full", seed=0)
    info = nn.param_breakdown(net.registry)
    print("%-40s %-20s %12s" % ("layer", "shape", "weights"))
    for name, shape, size in info["layers"]:
        print("%-40s %-20s %12d" % (name, "x".join(map(str, shape)), size))
    totals = info["totals"]
    print("%-61s %12d" % ("total weights", info["weights"]))
    print("%-61s %12d" % ("total weights + biases", info["weights_plus_bias"]))
    print("%-61s %12d" % ("bn affine", totals["bn_gamma"] + totals["bn_beta"]))
    if args.task == "cls" and (args.preset or "full") == "full":
        ratio = info["weights"] / 61_000_000.0
        print("note: vs the ~61M-weight AlexNet reference this is a ratio of "
              "~1/%.1f; counts are reported as computed, no ratio is asserted."
              % (1.0 / ratio))
    return 0


def cmd_synth(args):
    out_dir = args.out_dir or "."
    manifest = dataio.gen_synthetic(args.kind, args.count,
                                    (args.height, args.width),
                                    args.class_count, args.seed or 0, out_dir)
    print(manifest)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, hyper=False):
    p.add_argument("--config", help="config file of 'key = value' lines")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--preset", choices=("full", "mini"))
    p.add_argument("--threshold", type=float)
    if hyper:
        p.add_argument("--base-lr", dest="base_lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--step-size", dest="step_size", type=int)
        p.add_argument("--gamma", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fashionseg",
        description="CPU engine for human-body segmentation and clothing-fashion "
                    "classification")
    sub = parser.add_subparsers(dest="command", required=True)

    for task in ("seg", "cls"):
        p = sub.add_parser("train-" + task)
        _add_common(p, hyper=True)
        p.set_defaults(func=lambda a, t=task: cmd_train(t, a))

        p = sub.add_parser("eval-" + task)
        _add_common(p)
        p.add_argument("--split", choices=("train", "test"), default="test")
        p.set_defaults(func=lambda a, t=task: cmd_eval(t, a))

        p = sub.add_parser("predict-" + task)
        _add_common(p)
        p.add_argument("inputs", nargs="+")
        p.set_defaults(func=lambda a, t=task: cmd_predict(t, a))

    p = sub.add_parser("gradcheck")
    p.add_argument("task", choices=("seg", "cls"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("param-count")
    p.add_argument("task", choices=("seg", "cls"))
    p.add_argument("--preset", choices=("full", "mini"))
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("synth-data")
    p.add_argument("kind", choices=("seg", "cls"))
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--class-count", dest="class_count", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print("error: %s: %s" % (exc.kind, exc.message), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
