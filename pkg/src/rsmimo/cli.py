"""Command line entry point: ``rsmimo run|validate|sweep``."""

import argparse
import json
import os
import sys

from .harness import (ConfigurationError, SetupFailure, emit_outputs, load_config, sweep,
                      validate_campaign, run_campaign)


def _parser():
    p = argparse.ArgumentParser(prog="rsmimo", description="Rate-splitting vs NoRS campaigns.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=None, help="override master_seed")
        sp.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="run every configured scheme over n_setups setups"))
    v = sub.add_parser("validate", help="closed-form coefficients vs Monte Carlo")
    common(v)
    v.add_argument("--tolerance", type=float, default=0.03)
    s = sub.add_parser("sweep", help="repeat the campaign over values of one parameter")
    common(s)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma separated")
    return p


def _fail(exc, code):
    err = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SetupFailure):
        err.update(setup=exc.index, seed=list(exc.seed), cause=type(exc.cause).__name__)
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, master_seed=args.seed)
        out = args.out or cfg.output_dir
        if args.out:
            cfg = cfg.replace(output_dir=out)
        say = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
        if args.command == "run":
            res = run_campaign(cfg, lambda i: say(f"setup {i + 1}/{cfg.n_setups}"))
            paths = emit_outputs(res, out)
            print(json.dumps({"outputs": paths, "gains": res.aggregates["gains"]}, indent=2))
        elif args.command == "validate":
            rep = validate_campaign(cfg, args.tolerance)
            os.makedirs(out, exist_ok=True)
            path = os.path.join(out, "validation.json")
            with open(path, "w") as fh:
                json.dump(rep, fh, indent=2)
            print(json.dumps({"output": path, "passed": rep["passed"],
                              "max_rel_error": rep["max_rel_error"],
                              "max_dependence_residual": rep["max_dependence_residual"]}))
            if not rep["passed"]:
                print(json.dumps({"error": "ValidationFailed",
                                  "message": f"max relative error {rep['max_rel_error']:.3g}"}),
                      file=sys.stderr)
                return 3
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            results = sweep(cfg, args.param, values)
            index = {}
            for label, res in results.items():
                paths = emit_outputs(res, os.path.join(out, label))
                index[label] = {"outputs": paths, "gains": res.aggregates["gains"]}
            with open(os.path.join(out, "sweep.json"), "w") as fh:
                json.dump(index, fh, indent=2)
            print(json.dumps(index, indent=2))
    except (ConfigurationError, ValueError) as exc:
        return _fail(exc, 2)
    except SetupFailure as exc:
        return _fail(exc, 4)
    except OSError as exc:
        return _fail(exc, 5)
    return 0


if __name__ == "__main__":
    sys.exit(main())
