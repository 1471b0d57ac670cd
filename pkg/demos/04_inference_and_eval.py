"""Few-step sampling, dual-path combination, and the evaluation harness.

Reuses the artifacts written by demo 03 (run that first), performs 3-step
inference on a validation image, combines the two paths (albedo from the
albedo path, metallic/roughness from the material path), and writes a
metric report over the validation split.

Run:  python demos/03_two_stage_training.py && python demos/04_inference_and_eval.py
"""
from pathlib import Path

from pbrflow.dataset import DatasetManifest
from pbrflow.evaluate import evaluate, evaluate_baseline, write_report
from pbrflow.flow import SamplerConfig
from pbrflow.pipeline import estimate_single, load_models, save_triplet_pngs

work = Path("demo_out/training")
if not (work / "unet_mat.ckpt").exists():
    raise SystemExit("run demos/03_two_stage_training.py first")

out = Path("demo_out/inference")
out.mkdir(parents=True, exist_ok=True)

manifest = DatasetManifest.load(work / "dataset")
models = load_models(work)

record = manifest.split("val")[0]
image, target, mask = manifest.load_pair(record)
result = estimate_single(image, models, SamplerConfig(steps=3), seed=0)
save_triplet_pngs(result["combined"], out / "estimate")
print(f"3-step estimate for {record['id']} -> {out / 'estimate'}")
print("  (albedo taken from the albedo path, metallic/roughness from the material path)")

report = evaluate(manifest, models, "val", SamplerConfig(steps=3), seed=0)
baseline = evaluate_baseline(manifest, "val")
write_report(report, out)
print(f"validation report -> {out / 'report.txt'}")
for col in report.aggregates:
    print(f"  {col:>18}: model {report.aggregates[col]:8.4f}   mean-baseline {baseline.aggregates[col]:8.4f}")
