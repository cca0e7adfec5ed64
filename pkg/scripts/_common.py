import argparse
import json
import logging


def parser(description, steps):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print the result dict as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def emit(result, as_json):
    result = {k: v for k, v in result.items() if k != "model"}
    if as_json:
        print(json.dumps(result, default=str, indent=2))
    else:
        for k, v in result.items():
            print(f"{k}: {v}")


def logger(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    return logging.getLogger("experiment").info if verbose else None
