"""Test double for the line-delimited JSON worker protocol.

Modes: echo (answers from a JSON list of scores, in order), malformed,
slow, crash, wrong_id, out_of_range.
"""

import json
import sys
import time


def main():
    mode = sys.argv[1]
    scores = json.loads(sys.argv[2]) if len(sys.argv) > 2 else [0.5]
    for n, line in enumerate(sys.stdin):
        req = json.loads(line)
        if mode == "malformed":
            print("this is not json", flush=True)
            continue
        if mode == "slow":
            time.sleep(30)
        if mode == "crash":
            sys.exit(3)
        run_id = "someone-else" if mode == "wrong_id" else req["run_id"]
        fitness = 1.5 if mode == "out_of_range" else scores[n % len(scores)]
        print(json.dumps({"fitness": fitness, "run_id": run_id, "seen": [req["train_from"], req["train_to"]]}),
              flush=True)


if __name__ == "__main__":
    main()
