import os
import sys
import time

APP_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "app")
sys.path.insert(0, APP_DIR)

from app import main as spikex  # noqa: E402

STEPS = os.getenv("PIPELINE_STEPS", "100000")


def run_pipeline(out_dir: str = "runs/synthetic") -> None:
    """Desk-scale synthetic run: generate, train SNN-1L, evaluate all methods."""
    dataset = os.path.join(out_dir, "dataset-synthetic.csv")
    model = os.path.join(out_dir, "model.json")
    stages = [
        ("gen-data", ["--out", out_dir, "gen-data", "--mode", "synthetic", "--steps", STEPS, "-o", dataset]),
        ("train", ["--out", out_dir, "--preset", "synthetic-1l", "train", "--dataset", dataset,
                   "--model-name", "SNN-1L", "-o", model]),
        ("evaluate", ["--out", out_dir, "evaluate", "--model", model, "--dataset", dataset,
                      "--model-name", "SNN-1L"]),
    ]

    for name, argv in stages:
        started = time.time()
        code = spikex(argv)
        print(f"{name} finished with code {code} in {time.time() - started:.1f}s")
        if code != 0:
            raise SystemExit(code)


if __name__ == "__main__":
    run_pipeline(sys.argv[1] if len(sys.argv) > 1 else "runs/synthetic")
