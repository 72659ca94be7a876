#!/usr/bin/env python3
"""
LibFuzzer harness for the data-path frame decoder.

Any input must either decode into a message that re-encodes to the same
bytes or raise WireError; nothing else may escape.
Run: python fuzz/fuzz_decode.py fuzz/corpus/ [options]
"""

import sys

try:
    import atheris
except ImportError:
    print("Install atheris: pip install atheris")
    sys.exit(1)

with atheris.instrument_imports():
    from src.core.errors import WireError
    from src.wire.codec import decode, encode


def test_one_input(data: bytes) -> None:
    try:
        msg, consumed = decode(data)
    except WireError:
        return
    assert encode(msg) == data[:consumed]


def main() -> None:
    atheris.Setup(sys.argv, test_one_input)
    atheris.Fuzz()


if __name__ == "__main__":
    main()
