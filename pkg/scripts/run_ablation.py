"""Run the ablation grid on the toy corpus and print a summary table.

    python scripts/run_ablation.py --workdir runs/ablation
    python scripts/run_ablation.py --workdir runs/quick --fractions 0.1 --variants GST+MF GST+MF+Aux --unstable
    python scripts/run_ablation.py --workdir runs/quick --fractions 0.5 --variants GST+MF GST+MF+Aux --seeds 0 1 2

``--unstable`` adds one GST+Aux cell trained at 100x the learning rate.
"""
import argparse
import dataclasses
import logging
import time

from bgmtts.harness import experiment
from bgmtts.harness.config import VARIANTS, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", nargs="+", type=int, help="training seeds of the ablation cells")
    ap.add_argument("--fractions", nargs="+", type=float)
    ap.add_argument("--variants", nargs="+", choices=VARIANTS)
    ap.add_argument("--unstable", action="store_true")
    ap.add_argument("--ssrn", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = dataclasses.replace(load_config(args.config), seed=args.seed)
    abl = cfg.ablation
    if args.fractions:
        abl = dataclasses.replace(abl, clean_fractions=args.fractions)
    if args.variants:
        abl = dataclasses.replace(abl, variants=args.variants)
    if args.seeds:
        abl = dataclasses.replace(abl, seeds=args.seeds)
    cfg = dataclasses.replace(cfg, ablation=abl)

    ws = experiment.Workspace(args.workdir)
    specs = experiment.ablation_grid(cfg, ws)
    if args.unstable:
        s = experiment.ExperimentSpec.make("GST+Aux", abl.clean_fractions[0], args.seed, lr_scale=100.0)
        specs.append(dataclasses.replace(s, out_dir=str(ws.cells / s.name)))

    t0 = time.time()
    report = experiment.run_pipeline(cfg, args.workdir, specs, args.workers, with_ssrn=args.ssrn)
    print(f"\nfinished in {time.time() - t0:.0f}s; report at {ws.root / 'report.json'}\n")
    print(f"{'snr':>5} {'si-snr noisy':>13} {'filtered':>9} {'gain':>6} {'lsd noisy':>10} {'filtered':>9}")
    for r in report.filter["per_snr"]:
        print(f"{r['snr_db']:5.0f} {r['si_snr_noisy']:13.2f} {r['si_snr_filtered']:9.2f} "
              f"{r['si_snr_improvement']:6.2f} {r['lsd_noisy']:10.2f} {r['lsd_filtered']:9.2f}")
    print()
    print(f"{'cell':<28} {'status':<9} {'aqc acc':>8} {'silhouette':>10} {'held-out l1':>11}")
    fmt = lambda v: "-" if v is None else f"{v:.3f}"  # noqa: E731
    for c in report.cells:
        m = c["metrics"]
        print(f"{c['name']:<28} {c['status']:<9} {fmt(m['aqc_accuracy']):>8} {fmt(m['silhouette']):>10} "
              f"{fmt(m['heldout_l1']):>11}")


if __name__ == "__main__":
    main()
