"""Synthesise a sentence and export quality embeddings from a finished ablation run.

    python scripts/run_ablation.py --workdir runs/demo --fractions 0.5 --variants GST+MF GST+MF+Aux --ssrn
    python scripts/demo_synth.py --workdir runs/demo --text "ma la so mi"

Writes ``<cell>/demo.wav`` and ``<cell>/embeddings.csv`` for every GST cell in
the report and prints the embedding summary of each.
"""
import argparse
import json
from pathlib import Path

from bgmtts import corpus, dsp
from bgmtts.gsttts import Text2Mel
from bgmtts.harness import experiment
from bgmtts.harness.config import load_config
from bgmtts.harness.embed import embed_export
from bgmtts.harness.synth import synthesize_wav
from bgmtts.ssrn import Ssrn


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--config")
    ap.add_argument("--text", default="ma la so mi")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config)
    ws = experiment.Workspace(args.workdir)
    report = experiment.EvalReport.load(ws.root / "report.json")
    ssrn = Ssrn.load(ws.ssrn_checkpoint)
    data = experiment.prepare_cell_data(ws, cfg)
    reference = dsp.read_wav(next(r for r in data.clean if r.id not in set(data.test_ids)).audio_path)

    for cell in report.cells:
        if cell["status"] != experiment.Status.OK or cell["metrics"]["silhouette"] is None:
            continue
        out_dir = Path(cell["checkpoint"]).parent
        t2m = Text2Mel.load(cell["checkpoint"])
        out = synthesize_wav(t2m, ssrn, args.text, reference, seed=args.seed)
        dsp.write_wav(out_dir / "demo.wav", out.waveform)

        spec = experiment.ExperimentSpec(cell["variant"], cell["clean_fraction"], cell["lambda"], cell["seed"],
                                         cell["lr_scale"], str(ws.filter_checkpoint))
        _, held_clean, held_degraded = experiment.cell_examples(spec, data)
        held = held_clean + held_degraded
        summary = embed_export([e.id for e in held], [e.quality for e in held], t2m.embed([e.mel for e in held]),
                               out_dir / "embeddings.csv")
        print(json.dumps({"cell": cell["name"], "wav": str(out_dir / "demo.wav"),
                          "frames": int(out.result.mel.shape[0]), "completed": out.result.completed,
                          **experiment.jsonable(summary)}))


if __name__ == "__main__":
    main()
