"""Unattended full-size benchmark runs.

Trains and evaluates every preset below on each dataset found under
``--data-dir`` (default ``$MEI_DATA_DIR``), one ``mei train`` followed by one
``mei evaluate`` per run, and appends the test metrics to ``results.tsv``.
Expect hours per run on a CPU; this is not part of the test suite.

    python demos/run_full_benchmark.py --data-dir ~/kg-data --epochs 500
    python demos/run_full_benchmark.py --dry-run      # print the commands only

The presets fix the model sizes; the remaining settings are plain starting
points, not tuned values.
"""

import argparse
import os
import shlex
import subprocess
import sys
import time

DATASETS = ["WN18", "WN18RR", "FB15k", "FB15k-237"]

COMMON = ["--batch-size", "1024", "--learning-rate", "3e-3", "--decay-rate", "0.995",
          "--init-scale", "1e-3", "--loss-mode", "binary_ce_1n",
          "--batchnorm-hidden-output", "--dropout-h-input", "0.2", "--dropout-hidden-output", "0.3"]

# name -> extra flags
PRESETS = {
    "mei_1x200": ["--K", "1", "--Ce", "200", "--Cr", "30"],
    "mei_3x100": ["--K", "3", "--Ce", "100"],
    # small model trained with the softmax loss and L3 weight decay
    "mei_10x10_softmax_l3": ["--K", "10", "--Ce", "10", "--loss-mode", "softmax_1n",
                             "--l3-weight", "1e-3", "--dropout-h-input", "0",
                             "--dropout-hidden-output", "0"],
}


def commands(dataset_dir, run_dir, preset, epochs, seed):
    train = ["mei", "train", "--dataset", dataset_dir, "--output-dir", run_dir,
             "--epochs", str(epochs), "--seed", str(seed), "--eval-every", "10",
             *COMMON, *PRESETS[preset]]
    evaluate = ["mei", "evaluate", "--checkpoint", os.path.join(run_dir, "best.ckpt"),
                "--dataset", dataset_dir, "--split", "test"]
    return train, evaluate


def run(cmd):
    # use the interpreter running this script so no console script on PATH is required
    return subprocess.run([sys.executable, "-m", "mei", *cmd[1:]], check=True,
                          capture_output=True, text=True).stdout


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default=os.environ.get("MEI_DATA_DIR", "data"))
    p.add_argument("--out", default="benchmark_runs")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--datasets", nargs="+", default=DATASETS)
    p.add_argument("--presets", nargs="+", default=list(PRESETS), choices=list(PRESETS))
    p.add_argument("--dry-run", action="store_true", help="print the commands and exit")
    args = p.parse_args(argv)

    jobs = []
    for name in args.datasets:
        for preset in args.presets:
            run_dir = os.path.join(args.out, f"{name}_{preset}_seed{args.seed}")
            jobs.append((name, preset, *commands(os.path.join(args.data_dir, name), run_dir,
                                                 preset, args.epochs, args.seed)))

    if args.dry_run:
        for _, _, train, evaluate in jobs:
            print(shlex.join(train))
            print(shlex.join(evaluate))
        return 0

    os.makedirs(args.out, exist_ok=True)
    results = os.path.join(args.out, "results.tsv")
    for name, preset, train, evaluate in jobs:
        if not os.path.isdir(train[3]):
            print(f"skipping {name}: {train[3]} not found", file=sys.stderr)
            continue
        start = time.time()
        print(f"{name} / {preset}: training", flush=True)
        run(train)
        if not os.path.exists(evaluate[3]):  # no validation split, so no best checkpoint
            evaluate[3] = evaluate[3].replace("best.ckpt", "final.ckpt")
        tsv = [ln for ln in run(evaluate).splitlines() if ln.startswith("test\t")][-1]
        with open(results, "a", encoding="utf-8") as fh:
            fh.write(f"{name}\t{preset}\t{args.seed}\t{tsv}\n")
        print(f"{name} / {preset}: {tsv} ({(time.time() - start) / 3600:.1f} h)", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
