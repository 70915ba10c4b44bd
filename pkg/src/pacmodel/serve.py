"""Serve a model file over the line-oriented oracle protocol.

Counterpart to ExternalOracle, mainly for wiring tests and for exposing a
dense model to other tools:

    python -m pacmodel.serve model.json
"""

from __future__ import annotations

import sys

import numpy as np

from .runtime import load_model


def serve(model_path, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model = load_model(model_path)
    while True:
        # readline throughout; iterating stdin would buffer ahead of EVAL blocks
        line = stdin.readline()
        if line == "":
            return 0
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "DIM" and len(parts) == 1:
            stdout.write(f"{model.input_dim} {model.output_dim}\n")
            stdout.flush()
        elif parts[0] == "EVAL" and len(parts) == 2:
            k = int(parts[1])
            rows = []
            for _ in range(k):
                row = stdin.readline()
                if row == "":
                    raise EOFError("input ended inside an EVAL block")
                rows.append([float(v) for v in row.split()])
            scores = model.forward_batch(np.asarray(rows, dtype=np.float64))
            for row in scores:
                stdout.write(" ".join(format(v, ".17g") for v in row) + "\n")
            stdout.flush()
        else:
            print(f"unrecognized request: {line!r}", file=sys.stderr)
            return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m pacmodel.serve MODEL_JSON", file=sys.stderr)
        return 2
    return serve(argv[0])


if __name__ == "__main__":
    sys.exit(main())
