"""Headline benchmark: four variants, three seeds, clean and noisy test inputs.

Prints mean R2 per band, band gains over the plain LSTM and the R2 drop
under each noise condition.  Usage: python3 scripts/benchmark_summary.py [H]
"""
import sys
import time

from freqstream import evaluation as ev
from freqstream.blocks import ModelSpec
from freqstream.data import generate_synthetic_wells, prepare_dataset
from freqstream.noise import STANDARD_CONDITIONS

VARIANTS = ("LSTM", "FAF", "TAL", "FAL")


def main(hidden: int = 16) -> None:
    dataset = prepare_dataset(generate_synthetic_wells(seed=0))
    cfg = ev.TrainConfig()
    specs = [ModelSpec(v, len(dataset.input_names), hidden) for v in VARIANTS]
    t0 = time.perf_counter()
    arms = ev.run_ablation(dataset, cfg, specs, seeds=[0, 1, 2])
    ev.run_noise_bench(dataset, cfg, STANDARD_CONDITIONS, specs, trained=arms)
    print(f"wall time {time.perf_counter() - t0:.0f} s")

    r2 = {(r["variant"], r["band"]): r["r2"] for r in ev.ablation_table(arms)}
    print(f"{'variant':8s} {'FULL':>8s} {'LOW':>8s} {'HIGH':>8s} {'dLOW':>8s} {'dHIGH':>8s}")
    for v in VARIANTS:
        d_low = r2[(v, "LOW")] - r2[("LSTM", "LOW")]
        d_high = r2[(v, "HIGH")] - r2[("LSTM", "HIGH")]
        print(f"{v:8s} {r2[(v, 'FULL')]:8.4f} {r2[(v, 'LOW')]:8.4f} {r2[(v, 'HIGH')]:8.4f} "
              f"{d_low:+8.4f} {d_high:+8.4f}")
    labels = [c.label for c in STANDARD_CONDITIONS]
    print("\ndelta R2 (clean minus noisy)")
    rows = [r for r in ev.noise_table(arms, labels) if r["condition"] != "CLEAN"]
    for label in labels:
        cells = "  ".join(f"{r['variant']} {r['delta_r2']:+.4f}" for r in rows if r["condition"] == label)
        print(f"{label:14s} {cells}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 16)
