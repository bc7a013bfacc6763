"""Latent viewpoints against late pooling and the fine-grained classifier.

* confusable-pair dataset: class accuracy of all three methods, same backbone
  and budget (results/comparison_confusable.csv);
* default dataset: the same report over several view counts
  (results/comparison_default.csv);
* fine-grained per-epoch test accuracy on the default dataset
  (results/fine_grained_history.csv) and its trade-off summary.
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import asdict, replace

from latentview.alignment import TrainConfig
from latentview.baselines import compare_methods, train_fine_grained, write_report_csv
from latentview.data import DataConfig, generate_dataset
from latentview.model import NetConfig

from _common import RESULTS, provenance, write_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--fine-grained-epochs", type=int, default=40)
    args = ap.parse_args()
    cfg = TrainConfig(epochs=args.epochs, variance_every=0)
    net = NetConfig()
    RESULTS.mkdir(exist_ok=True)

    conf_cfg = DataConfig(variant="confusable", jitter=0.05)
    conf = generate_dataset(conf_cfg, args.seed)
    rows_conf = compare_methods(conf, net, cfg, views=[1, 2, 4, 12], trials=120)
    write_report_csv(rows_conf, RESULTS / "comparison_confusable.csv")

    default = generate_dataset(DataConfig(), args.seed)
    rows_def = compare_methods(default, net, cfg, views=[1, 2, 4, 12], trials=120)
    write_report_csv(rows_def, RESULTS / "comparison_default.csv")

    _, hist = train_fine_grained(default, net, replace(cfg, epochs=args.fine_grained_epochs))
    with open(RESULTS / "fine_grained_history.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "iteration", "class_acc", "view_acc"])
        w.writerows(zip(hist.epochs, hist.iterations, hist.class_acc, hist.view_acc))

    doc = {"confusable": rows_conf, "default": rows_def, "fine_grained_tradeoff": hist.tradeoff(),
           "config": {"train": asdict(cfg), "net": asdict(net), "confusable_data": asdict(conf_cfg),
                      "seed": args.seed, "fine_grained_epochs": args.fine_grained_epochs},
           "provenance": provenance()}
    print(write_json("comparison.json", doc))
    for r in rows_conf + rows_def:
        print(f"{r['method']:>18} views={r['views_used']:>2} class={100 * r['class_acc']:.1f}%")
    print(hist.tradeoff())


if __name__ == "__main__":
    main()
