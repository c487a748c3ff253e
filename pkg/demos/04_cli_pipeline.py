"""
The full pipeline through the command line
===========================================

simulate -> softmask -> fuse -> eval, exactly as a batch job would run
it. Every command leaves a manifest.json next to its outputs, so any
result can be reproduced from its manifest plus inputs.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp(prefix="fuselab_demo_"))
print(f"working in {work}\n")

config = {
    "dims": [20, 20, 20],
    "lesions": [{"center": [10, 10, 10], "radius": 4}],
    "background_intensity": 40.0,
    "lesion_intensity": 120.0,
    "intensity_noise_sd": 3.0,
    "seed": 5,
    "raters": [
        {"id": "alice", "sens": 0.9, "spec": 0.97, "seed": 1},
        {"id": "bob", "sens": 0.82, "spec": 0.95, "seed": 2},
        {"id": "carol", "sens": 0.88, "spec": 0.93, "seed": 3},
    ],
}
(work / "sim.json").write_text(json.dumps(config, indent=2))


def run(*args):
    print("$ fuselab", " ".join(args))
    proc = subprocess.run([sys.executable, "-m", "fuselab.cli", *args],
                          capture_output=True, text=True)
    if proc.stdout:
        print(proc.stdout.rstrip())
    print(proc.stderr.rstrip() or f"(exit {proc.returncode})", "\n")
    proc.check_returncode()
    return proc


# `python -m fuselab.cli` and the installed `fuselab` script are the same
import fuselab.cli  # noqa: F401  (the module main() is the entry point)

run("simulate", str(work / "sim.json"), "-o", str(work / "sim"))
experts = sorted(str(p) for p in (work / "sim").glob("expert_*.svol"))
run("softmask", *experts, "--flair", str(work / "sim" / "flair.svol"),
    "-o", str(work / "soft"))
soft_masks = sorted(str(p) for p in (work / "soft").glob("expert_*.svol"))
run("fuse", "--variant", "soft-exact", *soft_masks,
    "-o", str(work / "consensus"), "--binarize")
run("eval", str(work / "sim" / "truth.svol"),
    str(work / "consensus" / "consensus.svol"))

manifest = json.loads((work / "consensus" / "manifest.json").read_text())
print("fuse manifest records the fully resolved configuration:")
print(json.dumps(manifest["config"], indent=2, sort_keys=True))
