"""Drives the CLI end to end and reads its dataset files with an independent parser."""
import json
import math
import os
import struct
import subprocess
import sys
from pathlib import Path

CLI = os.environ["SDDA_CLI"]
WORK = Path(sys.argv[1])
WORK.mkdir(parents=True, exist_ok=True)
failures = []


def run(*args):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)


def check(cond, what):
    print(("ok    " if cond else "FAIL  ") + what)
    if not cond:
        failures.append(what)


def parse_dataset(raw):
    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from("<" + fmt, raw, pos)
        pos += struct.calcsize("<" + fmt)
        return vals

    magic = raw[:4]
    pos = 4
    version, classes = take("HH")
    (n_sessions,) = take("I")
    sessions = []
    for _ in range(n_sessions):
        n_trials, channels, samples, rate = take("IHII")
        names = []
        for _ in range(channels):
            (length,) = take("H")
            names.append(raw[pos:pos + length].decode())
            pos += length
        trials = []
        for _ in range(n_trials):
            has_label, label = take("BH")
            data = take(f"{channels * samples}f")
            trials.append((label if has_label else None, data))
        sessions.append({"rate": rate, "names": names, "samples": samples, "trials": trials})
    return {"magic": magic, "version": version, "classes": classes, "sessions": sessions, "rest": len(raw) - pos}


spec = {"source_channels": 6, "common_channels": 3, "samples": 64, "classes": 3, "trials_per_class": 4,
        "source_sessions": 2, "target_sessions": 1, "sampling_rate": 64, "seed": 5}
(WORK / "spec.json").write_text(json.dumps(spec))
r = run("synth", "--spec", WORK / "spec.json", "--out", WORK / "data")
check(r.returncode == 0, "synth exits 0")

src = parse_dataset((WORK / "data" / "source.sdda").read_bytes())
tgt = parse_dataset((WORK / "data" / "target.sdda").read_bytes())
check(src["magic"] == b"SDDA" and src["version"] == 1, "header magic and version")
check(src["rest"] == 0 and tgt["rest"] == 0, "no trailing bytes")
check(src["classes"] == 3 and tgt["classes"] == 3, "class count")
check(len(src["sessions"]) == 2 and len(tgt["sessions"]) == 1, "session counts")
check(all(len(s["names"]) == 6 for s in src["sessions"]), "source channel count")
check(all(len(s["names"]) == 3 for s in tgt["sessions"]), "target channel count")
check(set(tgt["sessions"][0]["names"]) <= set(src["sessions"][0]["names"]), "target channels are a source subset")
for name, d in (("source", src), ("target", tgt)):
    for s in d["sessions"]:
        labels = [t[0] for t in s["trials"]]
        check(len(labels) == 12 and sorted(labels) == [0] * 4 + [1] * 4 + [2] * 4, f"{name} labels balanced")
        check(s["rate"] == 64 and s["samples"] == 64, f"{name} shape and rate")
        check(all(all(math.isfinite(v) for v in t[1]) for t in s["trials"]), f"{name} values finite")

# alignment writes a dataset in the same format with whitened sessions
r = run("align", "--in", WORK / "data" / "target.sdda", "--out", WORK / "aligned.sdda")
check(r.returncode == 0, "align exits 0")
al = parse_dataset((WORK / "aligned.sdda").read_bytes())
s = al["sessions"][0]
c, n = len(s["names"]), len(s["trials"])
cov = [[0.0] * c for _ in range(c)]
for _, data in s["trials"]:
    for i in range(c):
        for j in range(c):
            cov[i][j] += sum(data[i * s["samples"] + t] * data[j * s["samples"] + t] for t in range(s["samples"])) / n
dev = max(abs(cov[i][j] - (1.0 if i == j else 0.0)) for i in range(c) for j in range(c))
check(dev < 1e-3, f"aligned session covariance is identity (max deviation {dev:.2e})")

# a short training run, then eval of its checkpoint
config = {"data": {"source": "data/source.sdda", "target": "data/target.sdda"},
          "train": {"epochs": 2, "batch_size": 8}, "seeds": [0], "variants": ["SDDA"]}
(WORK / "config.json").write_text(json.dumps(config))
r = run("train", "--config", WORK / "config.json", "--out", WORK / "model")
check(r.returncode == 0, "train exits 0")
r = run("eval", "--student", WORK / "model" / "student.ckpt", "--data", WORK / "data" / "target.sdda",
        "--report", WORK / "eval.json")
check(r.returncode == 0, "eval exits 0")
metrics = json.loads((WORK / "eval.json").read_text())
check(metrics["trials"] == 12 and 0 <= metrics["accuracy"] <= 100, "eval report contents")
check(metrics == json.loads((WORK / "model" / "metrics.json").read_text()), "eval matches train-time metrics")

# exit codes
bad = dict(config, train={"epochs": 2, "bogus": 1})
(WORK / "bad.json").write_text(json.dumps(bad))
check(run("run", "--config", WORK / "bad.json", "--out", WORK / "x").returncode == 1, "unknown config key exits 1")
check(run("frobnicate").returncode == 1, "unknown subcommand exits 1")
check(run("align", "--in", WORK / "missing.sdda", "--out", WORK / "y.sdda").returncode == 2, "missing dataset exits 2")
raw = (WORK / "data" / "target.sdda").read_bytes()
(WORK / "truncated.sdda").write_bytes(raw[: len(raw) // 2])
r = run("align", "--in", WORK / "truncated.sdda", "--out", WORK / "y.sdda")
check(r.returncode == 2 and "truncated" in r.stderr, "truncated dataset exits 2 with a message")
(WORK / "junk.ckpt").write_bytes(b"not a checkpoint")
r = run("eval", "--student", WORK / "junk.ckpt", "--data", WORK / "data" / "target.sdda")
check(r.returncode == 2, "corrupt checkpoint exits 2")

print(f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)
