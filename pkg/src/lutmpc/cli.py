"""Command-line entry points.

Every command prints a report with one ``key=value`` per line. Options come
from a flat ``key=value`` config file (``--config``) and are overridden by
flags. Protocol errors exit with status 2, bad configuration with 3.
"""

import argparse
import math
import os
import re
import sys
import time

import numpy as np

from . import datasets
from .activations import EXP, INVERSE, SIGMOID, lookup_plain
from .csp_offline import Dealer, LookupMode, plan_run, provision, read_bundle, write_bundle
from .dxpriv import GeometricParams, audit_trace, budget_report, mechanism_trace
from .errors import ConfigInvalid, LutMpcError
from .ml_train import (TrainConfig, accuracy, batch_schedule, encode_features, encode_labels,
                       infer, init_weights, load_model, offline_program, oracle_step,
                       party_program, plaintext_oracle_train, predict_plain, save_model,
                       share_dataset, share_model, train)
from .net import parse_endpoint, run_parties, tcp_connect, tcp_listen, with_netem

DEFAULTS = {
    "model": "lr", "dataset": "mnist01", "data_path": None, "n_train": None,
    "batch": None, "lr_shift": None, "epochs": 5, "iterations": None,
    "hidden": "128,128", "center": None, "init_scale": None,
    "mode": "single", "eps": None, "eps_total": None, "r_multi": None, "clamp": 8192,
    "seed": 0, "netem": None, "party": None, "listen": None, "connect": None,
    "bundle": None, "out": None, "model_file": None, "check_oracle": False,
    "op": "sigmoid", "n": 1000, "trials": 100000, "distance": 1, "min_count": 10000,
    "dry_run": False, "rounding": "nearest", "timeout": 600.0, "samples": 100,
}

# model-specific defaults used when not configured
MODEL_DEFAULTS = {
    "lr": {"lr_shift": 9, "center": False, "init_scale": 0.05},
    "nn": {"lr_shift": 6, "center": True, "init_scale": 0.08},
}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    unknown = set(out) - set(DEFAULTS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")
    return out


def _bool(v):
    if isinstance(v, bool):
        return v
    return str(v).lower() in ("1", "true", "yes", "on")


def _float(v):
    return math.inf if str(v).lower() in ("inf", "infinity") else float(v)


def merge_options(ns):
    """Flags over config file over defaults."""
    opts = dict(DEFAULTS)
    if ns.config:
        opts.update(read_config(ns.config))
    for k, v in vars(ns).items():
        if k in opts and v is not None:
            opts[k] = v
    return opts


def lookup_mode(opts):
    kind = opts["mode"]
    clamp = int(opts["clamp"])
    if kind == "single":
        return LookupMode()
    if kind != "multi":
        raise ConfigInvalid(f"mode must be single or multi, not {kind!r}")
    eps = None if opts["eps"] is None else _float(opts["eps"])
    tot = None if opts["eps_total"] is None else _float(opts["eps_total"])
    r = None if opts["r_multi"] is None else int(opts["r_multi"])
    if eps is None and tot is None:
        raise ConfigInvalid("multi mode needs --eps and/or --eps-total")
    if sum(v is not None for v in (eps, tot, r)) < 2:
        r = 100
    return LookupMode.multi(epsilon=eps, epsilon_total=tot, r_multi=r, clamp_bound=clamp)


def train_config(opts):
    model = opts["model"]
    if model not in MODEL_DEFAULTS:
        raise ConfigInvalid(f"model must be lr or nn, not {model!r}")
    md = MODEL_DEFAULTS[model]
    pick = (lambda k, conv: conv(opts[k]) if opts[k] is not None else md[k])
    hidden = tuple(int(h) for h in str(opts["hidden"]).split(",") if h.strip())
    return TrainConfig(
        model=model, batch_size=32 if opts["batch"] is None else int(opts["batch"]),
        lr_shift=pick("lr_shift", int),
        epochs=int(opts["epochs"]),
        iterations=None if opts["iterations"] is None else int(opts["iterations"]),
        hidden=hidden, center=pick("center", _bool), init_scale=pick("init_scale", float),
        seed=int(opts["seed"]), mode=lookup_mode(opts))


def load_split(opts, cfg):
    n = None if opts["n_train"] is None else int(opts["n_train"])
    sp = datasets.load_named(opts["dataset"], n, int(opts["seed"]), opts["data_path"])
    if cfg.model == "nn":
        cfg_classes = max(sp.n_classes, 2)
        if cfg_classes > cfg.n_classes:
            raise ConfigInvalid(f"dataset has {cfg_classes} classes, model has {cfg.n_classes}")
    return sp


def _netem(opts, sessions):
    if not opts["netem"]:
        return
    m = re.fullmatch(r"\s*([0-9.]+)\s*(?:ms)?\s*(?:,\s*([0-9.]+)\s*(?:MB(?:/s)?)?\s*)?",
                     str(opts["netem"]), re.IGNORECASE)
    try:
        lat = float(m.group(1))
        bw = float(m.group(2)) if m.group(2) else None
    except (AttributeError, ValueError):
        raise ConfigInvalid(f"netem must be 'latency_ms[,bandwidth_MBps]', "
                            f"got {opts['netem']!r}") from None
    for s in sessions:
        with_netem(s, lat, bw)


def _emit(lines, out=None):
    out = sys.stdout if out is None else out
    for k, v in lines:
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"{k}={v}", file=out)


def _stats_lines(prefix, st):
    return [(f"{prefix}{k}", v) for k, v in st.as_dict().items()]


def _mode_lines(cfg):
    m = cfg.mode
    lines = [("mode", m.kind)]
    if m.is_multi:
        lines += [("epsilon", m.epsilon), ("epsilon_total", m.epsilon_total),
                  ("r_multi", m.r_multi)]
    return lines


def _session_pair(opts):
    """Loopback pair with optional netem applied."""
    from .net import loopback_pair

    pair = loopback_pair(float(opts["timeout"]))
    _netem(opts, pair)
    return pair


# commands -------------------------------------------------------------------

def cmd_offline(opts):
    cfg = train_config(opts)
    sp = load_split(opts, cfg)
    X = encode_features(sp.X_train, cfg)
    Y = encode_labels(sp.y_train, cfg)
    lines = [("command", "offline"), ("model", cfg.model), ("examples", len(X))] + _mode_lines(cfg)
    if _bool(opts["dry_run"]) or not opts["out"]:
        prog = offline_program(cfg)
        man = plan_run(lambda s, p: prog(s, p, {"X": X.shape, "Y": Y.shape}), cfg.mode).manifest()
    else:
        b0, b1 = provision({"X": X, "Y": Y}, offline_program(cfg), cfg.mode, cfg.seed)
        for i, b in enumerate((b0, b1)):
            write_bundle(b, os.path.join(opts["out"], f"p{i}"))
        man = b0.manifest
        lines.append(("bundle_dir", opts["out"]))
    lines.append(("batches", man["batches"]))
    for k, v in man["items"].items():
        lines.append((f"items_{k}", v))
    for name, t in man["tables"].items():
        lines += [(f"lookups_{name}", t["lookups"]), (f"tables_{name}", t["tables"])]
    _emit(lines)
    return 0


def _connect(opts, party):
    if opts["listen"]:
        host, port = parse_endpoint(opts["listen"])
        return tcp_listen(host, port, party, float(opts["timeout"]))
    if opts["connect"]:
        host, port = parse_endpoint(opts["connect"])
        return tcp_connect(host, port, party, float(opts["timeout"]))
    raise ConfigInvalid("serve needs --listen or --connect")


def cmd_serve(opts):
    """Run one party from its bundle against a remote peer."""
    from .csp_offline import BundleProvider

    if opts["party"] is None or opts["bundle"] is None:
        raise ConfigInvalid("serve needs --party and --bundle")
    party = int(opts["party"])
    cfg = train_config(opts)
    bundle = read_bundle(opts["bundle"])
    if bundle.party != party:
        raise ConfigInvalid(f"bundle belongs to party {bundle.party}, not {party}")
    sess = _connect(opts, party)
    _netem(opts, [sess])
    t0 = time.perf_counter()
    try:
        W = party_program(sess, BundleProvider(bundle), bundle.data["X"].view(np.int64),
                          bundle.data["Y"].view(np.int64), cfg)
    finally:
        sess.close()
    lines = [("command", "serve"), ("party", party), ("seconds", time.perf_counter() - t0)]
    if opts["out"]:
        save_model(opts["out"], [w.view(np.int64) for w in W], cfg, {"share_of_party": party})
        lines.append(("model_share", opts["out"]))
    _emit(lines + _stats_lines("", sess.stats))
    return 0


def _trajectory_check(opts, cfg, X, Y, traj):
    """Lockstep comparison: one oracle step from each reconstructed iterate."""
    prev = init_weights(cfg, X.shape[1])
    worst = 0
    for it, rows in enumerate(batch_schedule(len(X), cfg)):
        rec = [(a + b).view(np.int64) for a, b in zip(traj[0][it], traj[1][it])]
        ref = oracle_step(prev, X[rows], Y[rows], cfg, opts["rounding"])
        worst = max([worst] + [int(np.abs(r - o).max()) for r, o in zip(rec, ref)])
        prev = rec
    return worst


def cmd_train(opts):
    cfg = train_config(opts)
    sp = load_split(opts, cfg)
    X = encode_features(sp.X_train, cfg)
    Y = encode_labels(sp.y_train, cfg)
    dealer = Dealer(cfg.seed, cfg.mode)
    xs, ys = share_dataset(X, Y, dealer)
    check = _bool(opts["check_oracle"])
    traj = {0: [], 1: []}
    hook = (lambda p, i, w: traj[p].append([x.copy() for x in w])) if check else None
    t0 = time.perf_counter()
    res = train(_session_pair(opts), xs, ys, dealer, cfg, on_iter=hook,
                timeout=float(opts["timeout"]))
    secs = time.perf_counter() - t0
    Xt = encode_features(sp.X_test, cfg)
    lines = [("command", "train"), ("model", cfg.model), ("dataset", opts["dataset"]),
             ("examples", len(X))] + _mode_lines(cfg)
    lines += [("seconds", secs), ("train_accuracy", accuracy(res.weights, X, sp.y_train, cfg)),
              ("test_accuracy", accuracy(res.weights, Xt, sp.y_test, cfg))]
    lines += [tuple(line.split("=", 1)) for line in res.report()]
    if check:
        worst = _trajectory_check(opts, cfg, X, Y, traj)
        W, _ = plaintext_oracle_train(X, Y, cfg, rounding=opts["rounding"])
        oacc = accuracy(W, Xt, sp.y_test, cfg)
        lines += [("oracle_test_accuracy", oacc), ("trajectory_max_lsb", worst),
                  ("trajectory_match", "PASS" if worst <= 1 else "FAIL")]
    if opts["out"]:
        save_model(opts["out"], res.weights, cfg, {"seed": cfg.seed})
        lines.append(("model_file", opts["out"]))
    _emit(lines)
    return 0


def cmd_oracle(opts):
    cfg = train_config(opts)
    sp = load_split(opts, cfg)
    X = encode_features(sp.X_train, cfg)
    Y = encode_labels(sp.y_train, cfg)
    t0 = time.perf_counter()
    W, _ = plaintext_oracle_train(X, Y, cfg, rounding=opts["rounding"])
    Xt = encode_features(sp.X_test, cfg)
    lines = [("command", "oracle"), ("model", cfg.model), ("rounding", opts["rounding"]),
             ("examples", len(X)), ("seconds", time.perf_counter() - t0),
             ("train_accuracy", accuracy(W, X, sp.y_train, cfg)),
             ("test_accuracy", accuracy(W, Xt, sp.y_test, cfg))]
    if opts["out"]:
        save_model(opts["out"], W, cfg, {"seed": cfg.seed, "oracle": True})
        lines.append(("model_file", opts["out"]))
    _emit(lines)
    return 0


def cmd_infer(opts):
    if not opts["model_file"]:
        raise ConfigInvalid("infer needs --model-file")
    W, side = load_model(opts["model_file"])
    opts = dict(opts, model=side["model"], center=side.get("center", False),
                hidden=",".join(str(h) for h in side.get("hidden", [])) or "128")
    cfg = train_config(opts)
    sp = load_split(opts, cfg)
    n = min(int(opts["samples"]), len(sp.y_test))
    Xt = encode_features(sp.X_test[:n], cfg)
    dealer = Dealer(cfg.seed + 1, cfg.mode)
    m0, m1 = share_model(W, dealer)
    x0, x1 = dealer.share_data(50, Xt)
    t0 = time.perf_counter()
    sess = _session_pair(opts)
    scores = infer(sess, (m0, m1), (x0, x1), dealer, cfg, float(opts["timeout"]))
    secs = time.perf_counter() - t0
    if cfg.model == "lr":
        secure = (scores[:, 0] > (1 << 12)).astype(np.int64)
    else:
        secure = scores.argmax(axis=1)
    plain = predict_plain(W, Xt, cfg)
    lines = [("command", "infer"), ("model", cfg.model), ("samples", n), ("seconds", secs),
             ("accuracy", float((secure == sp.y_test[:n]).mean()) if n else float("nan")),
             ("agreement_with_plaintext", float((secure == plain).mean()) if n else float("nan"))]
    _emit(lines + _stats_lines("p0_", sess[0].stats))
    return 0


def cmd_bench(opts):
    op = opts["op"]
    specs = {"sigmoid": SIGMOID, "exp": EXP, "inverse": INVERSE}
    if op not in specs:
        raise ConfigInvalid(f"bench supports {', '.join(specs)}")
    spec = specs[op]
    n = int(opts["n"] if opts["batch"] is None else opts["batch"])
    mode = lookup_mode(opts)
    dealer = Dealer(int(opts["seed"]), mode)
    rng = np.random.default_rng(int(opts["seed"]))
    cfg = spec.in_cfg
    raw = rng.integers(cfg.raw_min, cfg.raw_max + 1, size=n)
    if mode.is_multi:
        # keep noisy inputs on the grid
        lo = cfg.raw_min + mode.clamp_bound
        hi = cfg.raw_max - mode.clamp_bound
        raw = np.clip(raw, lo, hi) if lo <= hi else np.zeros(n, dtype=np.int64)
    s0, s1 = dealer.share_data(0, raw)
    p0, p1 = dealer.provider(0), dealer.provider(1)
    l0, l1 = p0.lookup(spec), p1.lookup(spec)
    s = _session_pair(opts)
    t0 = time.perf_counter()
    y0, y1 = run_parties(lambda ss: l0(ss, s0), lambda ss: l1(ss, s1), s,
                         float(opts["timeout"]))
    secs = time.perf_counter() - t0
    got = (y0 + y1).view(np.int64)
    ok = True
    if not mode.is_multi or math.isinf(mode.epsilon):
        ok = bool(np.array_equal(got, lookup_plain(spec, raw).view(np.int64)))
    st = s[0].stats
    lines = [("command", "bench"), ("op", op), ("batch", n), ("mode", mode.kind),
             ("seconds", secs), ("per_query_us", 1e6 * secs / max(n, 1)),
             ("rounds", st.rounds), ("payload_sent_per_query", st.payload_sent / max(n, 1)),
             ("correct", "PASS" if ok else "FAIL")]
    _emit(lines + _stats_lines("p0_", st))
    return 0 if ok else 2


def cmd_audit(opts):
    eps = _float(opts["eps"] if opts["eps"] is not None else 0.1)
    p = GeometricParams(eps, int(opts["clamp"]))
    d = int(opts["distance"])
    trials = int(opts["trials"])
    rng = np.random.default_rng(int(opts["seed"]))
    groups, order = mechanism_trace([0, d], p, trials, rng)
    rep = audit_trace(groups, p, min_count=int(opts["min_count"]), order=order)
    lines = [("command", "audit"), ("epsilon", eps), ("trials", trials)]
    lines += [tuple(line.split("=", 1)) for line in rep.lines()]
    lines.append(("within_bound", "PASS" if rep.max_ratio <= rep.bound * 1.05 else "FAIL"))
    if opts["r_multi"] is not None:
        spent = budget_report(int(opts["r_multi"]), eps, int(opts["r_multi"]))
        lines.append(("table_budget", spent.get(0, 0.0)))
    _emit(lines)
    return 0


COMMANDS = {"offline": cmd_offline, "serve": cmd_serve, "train": cmd_train, "infer": cmd_infer,
            "bench": cmd_bench, "audit": cmd_audit, "oracle": cmd_oracle}


def build_parser():
    ap = argparse.ArgumentParser(prog="lutmpc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key=value file")
    ap.add_argument("--model", choices=["lr", "nn"])
    ap.add_argument("--dataset", help="mnist01, mnist5k, toy, mnist, mnist0vr, csv")
    ap.add_argument("--data-path", dest="data_path")
    ap.add_argument("--n-train", dest="n_train", type=int)
    ap.add_argument("--batch", type=int, help="training batch size, or query batch for bench")
    ap.add_argument("--lr-shift", dest="lr_shift", type=int, help="learning rate 2^-k")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--iterations", type=int)
    ap.add_argument("--hidden", help="comma-separated hidden widths")
    ap.add_argument("--mode", choices=["single", "multi"])
    ap.add_argument("--eps", help="per-query epsilon")
    ap.add_argument("--eps-total", "--epsT", dest="eps_total", help="per-table budget")
    ap.add_argument("--r-multi", dest="r_multi", type=int)
    ap.add_argument("--clamp", type=int, help="noise clamp in grid steps")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--netem", help="latency_ms[,bandwidth_MBps]")
    ap.add_argument("--party", type=int, choices=[0, 1])
    ap.add_argument("--listen", help="host:port")
    ap.add_argument("--connect", help="host:port")
    ap.add_argument("--bundle", help="bundle directory of this party")
    ap.add_argument("--out", help="output file or directory")
    ap.add_argument("--model-file", dest="model_file")
    ap.add_argument("--check-oracle", dest="check_oracle", action="store_const", const=True)
    ap.add_argument("--rounding", choices=["floor", "nearest", "stochastic"])
    ap.add_argument("--op")
    ap.add_argument("--n", "--batch-size", dest="n", type=int, help="bench batch size")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--distance", type=int)
    ap.add_argument("--min-count", dest="min_count", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--dry-run", dest="dry_run", action="store_const", const=True)
    ap.add_argument("--timeout", type=float)
    return ap


def main(argv=None):
    ns = build_parser().parse_args(argv)
    try:
        opts = merge_options(ns)
        return COMMANDS[ns.command](opts)
    except ConfigInvalid as exc:
        print(f"error=ConfigInvalid {exc}", file=sys.stderr)
        return 3
    except LutMpcError as exc:
        print(f"error={type(exc).__name__} {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
