"""Reference out-of-process predictor speaking the stdio line protocol.

Run as ``python -m lanemerge.external_cv [--t-pred N]``. For each query block
it answers with constant-velocity extrapolation, which makes it a drop-in
stand-in for a learned model during integration tests.
"""
from __future__ import annotations

import argparse
import sys


def serve(stdin, stdout, t_pred: int = 1) -> None:
    while True:
        header = stdin.readline()
        if header == "":
            return
        header = header.strip()
        if not header:
            continue
        t_obs, n = (int(tok) for tok in header.split())
        frames = []
        for _ in range(t_obs):
            frame = {}
            for _ in range(n):
                vid_s, x_s, y_s = stdin.readline().strip().split(",")
                frame[int(vid_s)] = (float(x_s), float(y_s))
            frames.append(frame)
        stdin.readline()  # ego line (unused by this predictor)
        stdin.readline()  # blank terminator
        out = []
        for vid in sorted(frames[-1]):
            x, y = frames[-1][vid]
            if t_obs >= 2 and vid in frames[-2]:
                px, py = frames[-2][vid]
                dx, dy = x - px, y - py
            else:
                dx = dy = 0.0
            for _ in range(t_pred):
                x, y = x + dx, y + dy
                out.append(f"{vid},{x!r},{y!r}")
        stdout.write("\n".join(out) + "\n\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--t-pred", type=int, default=1)
    args = parser.parse_args(argv)
    serve(sys.stdin, sys.stdout, args.t_pred)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
