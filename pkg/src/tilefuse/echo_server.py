"""Reference denoiser process: answers every request with zero noise.

Run as ``python -m tilefuse.echo_server``. The ``--fault`` option makes it
misbehave on purpose so clients can be tested against framing errors.
"""

import argparse
import sys
import time

import numpy as np

from .denoisers import _HEADER, MAGIC, VERSION, encode_response, read_request


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tilefuse-echo-server")
    ap.add_argument("--fault", choices=["none", "bad-magic", "bad-version", "wrong-height", "nan", "hang", "exit"],
                    default="none")
    ap.add_argument("--fault-after", type=int, default=0, help="answer this many requests correctly first")
    args = ap.parse_args(argv)

    inp, out = sys.stdin.buffer, sys.stdout.buffer
    served = 0
    while True:
        req = read_request(inp)
        if req is None:
            return 0
        h, w, c = req.shape
        eps = np.zeros((h, w, c), dtype=np.float32)
        fault = args.fault if served >= args.fault_after else "none"
        served += 1
        if fault == "exit":
            return 3
        if fault == "hang":
            time.sleep(3600)
        if fault == "nan":
            eps[0, 0, 0] = np.nan
        msg = encode_response(eps)
        if fault == "bad-magic":
            msg = b"XXXX" + msg[4:]
        elif fault == "bad-version":
            msg = _HEADER.pack(MAGIC, VERSION + 1, h, w) + msg[_HEADER.size :]
        elif fault == "wrong-height":
            msg = encode_response(np.zeros((h + 1, w, c), dtype=np.float32))
        out.write(msg)
        out.flush()


if __name__ == "__main__":
    sys.exit(main())
