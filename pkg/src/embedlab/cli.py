"""Command-line experiment runner.

Subcommands: gen-data, train, sample, edit, mask-sweep, svd-dirs,
opt-lambda, invert, verify. Configuration comes from flat key=value files
(`#` comments allowed) with command-line flags taking precedence. The
EMBEDLAB_OUT environment variable overrides the output directory. Every
run writes a `manifest.txt` with the resolved configuration and its hash,
so outputs are attributable and reruns are byte-comparable.

Exit codes: 0 ok, 1 usage error, 2 configuration error, 3 numeric or
training failure, 4 verification failure.

Mask positions on the command line are 1-based (M_1 is the first row of
the embedding); internally positions are 0-based.
"""

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import denoiser as dn
from . import text_encoder as te
from . import toyworld as tw
from .diffusion import make_schedule
from .edit_ops import EditRecipe, run_edit, save_edit_report_csv
from .linalg import ConvergenceError
from .optimizer import (OptConfig, OptimizationError, make_context, optimize,
                        save_trajectory_csv)
from .pipeline import ModelBundle, seed_noise
from .rng import Rng
from .semantics import direction_sweep, save_sweep_csv
from .toyworld import oracle_classify, oracle_style, save_pgm
from .verify import format_report, run_all

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures raise instead of exiting 2."""

    def error(self, message):
        raise UsageError(message)


def load_config_file(path) -> dict:
    """Flat key=value lines; `#` starts a comment; blank lines ignored."""
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    return out


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge built-in defaults, config file values, and CLI flags.

    Flags parsed as None mean "not given"; config file keys must all be
    known for this command.
    """
    cfg = dict(defaults)
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = type(defaults[key])(value)
    for key in defaults:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the semantic configuration; output location excluded."""
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg) if k != "out")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def prepare_out_dir(cfg: dict, command: str) -> str:
    out = os.environ.get("EMBEDLAB_OUT") or cfg["out"]
    os.makedirs(out, exist_ok=True)
    lines = [f"command={command}", f"version=v{__version__}",
             f"config_hash={config_hash(cfg)}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg) if k != "out"]
    with open(os.path.join(out, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return out


def _map_seeds(fn, seeds, jobs: int):
    """Apply a pure per-seed function; order of results is fixed by seed."""
    if jobs <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, seeds))


def _load_bundle(path) -> ModelBundle:
    try:
        tensors = dn.load_checkpoint(path)
        enc_params, den_params, enc_cfg, den_cfg, meta = dn.split_checkpoint(tensors)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot load checkpoint {path!r}: {e}") from e
    sched = make_schedule(int(meta[0]), meta[1], meta[2])
    return ModelBundle(world=tw.default_world(), vocab=te.default_vocabulary(),
                       enc_cfg=enc_cfg, den_cfg=den_cfg, sched=sched,
                       enc_params=enc_params, den_params=den_params)


def _parse_positions(text: str):
    """1-based comma-separated CLI positions to 0-based tuples."""
    try:
        pos = tuple(int(p) for p in text.split(",") if p)
    except ValueError as e:
        raise ConfigError(f"bad position list {text!r}") from e
    if any(p < 1 for p in pos):
        raise ConfigError("positions are 1-based; the smallest is 1")
    return tuple(p - 1 for p in pos)


# ------------------------------------------------------------- commands

GEN_DATA_DEFAULTS = {"out": "runs/gen-data", "seed": 0, "n": 32}


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args, GEN_DATA_DEFAULTS)
    out = prepare_out_dir(cfg, "gen-data")
    world = tw.default_world()
    rng = Rng(cfg["seed"]).split(0)
    samples = []
    for i in range(cfg["n"]):
        k = rng.randint(len(world.classes))
        style = 0.3 + 0.7 * rng.uniform()
        samples.append(tw.render(world, k, style, rng))
    tw.save_dataset_csv(os.path.join(out, "dataset.csv"), samples)
    for i, s in enumerate(samples[:8]):
        save_pgm(os.path.join(out, f"sample_{i}.pgm"), s.x0)
    print(f"wrote {cfg['n']} samples to {out}")
    return EXIT_OK


TRAIN_DEFAULTS = {"out": "runs/train", "seed": 7, "steps": 25000,
                  "batch-size": 64, "lr": 1e-3, "T": 100,
                  "beta-start": 1e-3, "beta-end": 0.2}


def cmd_train(args) -> int:
    cfg = resolve_config(args, TRAIN_DEFAULTS)
    out = prepare_out_dir(cfg, "train")
    world = tw.default_world()
    vocab = te.default_vocabulary()
    enc_cfg = te.EncoderConfig()
    den_cfg = dn.DenoiserConfig()
    sched = make_schedule(cfg["T"], cfg["beta-start"], cfg["beta-end"])
    tcfg = dn.TrainConfig(steps=cfg["steps"], batch_size=cfg["batch-size"],
                          lr=cfg["lr"], seed=cfg["seed"])
    enc_params, den_params, log = dn.train(world, vocab, sched, enc_cfg,
                                           den_cfg, tcfg)
    tensors = dn.checkpoint_tensors(enc_params, den_params, enc_cfg, den_cfg,
                                    (cfg["T"], cfg["beta-start"], cfg["beta-end"]))
    ckpt = os.path.join(out, "model.ckpt")
    dn.save_checkpoint(ckpt, tensors)
    with open(os.path.join(out, "loss.csv"), "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for step, loss in log:
            f.write(f"{step},{loss:.17g}\n")
    print(f"final loss {log[-1][1]:.4f}; checkpoint at {ckpt}")
    return EXIT_OK


SAMPLE_DEFAULTS = {"out": "runs/sample", "ckpt": "runs/train/model.ckpt",
                   "prompt": "a photo of hbar bright", "seed": 0, "n": 4,
                   "mode": "ddim"}


def cmd_sample(args) -> int:
    cfg = resolve_config(args, SAMPLE_DEFAULTS)
    out = prepare_out_dir(cfg, "sample")
    bundle = _load_bundle(cfg["ckpt"])
    emb = bundle.embed(cfg["prompt"])
    rows = []
    for i in range(cfg["n"]):
        seed = cfg["seed"] + i
        rng = Rng(seed).split(1)
        img = bundle.generate(emb, seed_noise(seed), mode=cfg["mode"], rng=rng)
        k, score = oracle_classify(bundle.world, img)
        rows.append((seed, k, score, oracle_style(bundle.world, img, k)))
        save_pgm(os.path.join(out, f"gen_{seed}.pgm"), img)
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write("seed,class,score,style\n")
        for seed, k, score, style in rows:
            f.write(f"{seed},{k},{score:.17g},{style:.17g}\n")
    print(f"generated {cfg['n']} images for {cfg['prompt']!r} in {out}")
    return EXIT_OK


EDIT_DEFAULTS = {"out": "runs/edit", "ckpt": "runs/train/model.ckpt",
                 "recipe": "swap", "from": "a photo of hbar bright",
                 "to": "a photo of vbar bright", "positions": "",
                 "weight": 0.5, "scale-pos": 0, "scale": 1.0,
                 "mask-from": 0, "mask-to": 0, "mask-mode": "exclude",
                 "seeds": 16, "jobs": 1}


def _build_recipe(cfg: dict, bundle: ModelBundle) -> EditRecipe:
    kind = cfg["recipe"]
    t_s = bundle.tokens(cfg["from"])
    t_t = bundle.tokens(cfg["to"])
    if kind in ("swap", "soft_swap"):
        if cfg["positions"]:
            positions = _parse_positions(cfg["positions"])
        else:
            from .edit_ops import diff_positions
            positions = tuple(sorted(diff_positions(t_s, t_t)))
        return EditRecipe(kind=kind, positions=positions, weight=cfg["weight"])
    if kind == "scale":
        pos = cfg["scale-pos"]
        if pos < 1:
            raise ConfigError("scale-pos is 1-based; the smallest is 1")
        return EditRecipe(kind="scale", scale_pos=pos - 1, scale=cfg["scale"])
    if kind == "style":
        return EditRecipe(kind="style")
    if kind == "mask":
        i, j = cfg["mask-from"], cfg["mask-to"]
        if i < 1 or j < i:
            raise ConfigError("mask range is 1-based and needs from <= to")
        return EditRecipe(kind="mask", mask_range=(i - 1, j - 1),
                          mask_mode=cfg["mask-mode"])
    raise ConfigError(f"unknown recipe {kind!r}")


def cmd_edit(args) -> int:
    cfg = resolve_config(args, EDIT_DEFAULTS)
    out = prepare_out_dir(cfg, "edit")
    bundle = _load_bundle(cfg["ckpt"])
    recipe = _build_recipe(cfg, bundle)

    def one(seed):
        return run_edit(bundle, cfg["from"], cfg["to"], recipe, seed)

    outcomes = _map_seeds(one, range(cfg["seeds"]), cfg["jobs"])
    rows = [(s, recipe.label(), o) for s, o in enumerate(outcomes)]
    save_edit_report_csv(os.path.join(out, "edits.csv"), rows)
    for s, o in list(enumerate(outcomes))[:4]:
        save_pgm(os.path.join(out, f"src_{s}.pgm"), o.i_s)
        save_pgm(os.path.join(out, f"edit_{s}.pgm"), o.i_star)
    conv = np.mean([o.class_star != o.class_src for o in outcomes])
    print(f"{recipe.label()}: class changed on {conv:.0%} of "
          f"{cfg['seeds']} seeds; report in {out}")
    return EXIT_OK


MASK_SWEEP_DEFAULTS = {"out": "runs/mask-sweep",
                       "ckpt": "runs/train/model.ckpt",
                       "prompt": "a photo of hbar bright", "seeds": 20,
                       "jobs": 1}


def cmd_mask_sweep(args) -> int:
    """Three mask families per row: single M_i, prefix M_{1..j}, suffix M_{j..L}."""
    cfg = resolve_config(args, MASK_SWEEP_DEFAULTS)
    out = prepare_out_dir(cfg, "mask-sweep")
    bundle = _load_bundle(cfg["ckpt"])
    emb = bundle.embed(cfg["prompt"])
    length = emb.data.shape[0]
    base_class = bundle.class_of_text(cfg["prompt"])

    families = [("none", None, None)]
    for i in range(length):
        families.append((f"single_M{i + 1}", i, i))
    for j in range(length - 1):
        families.append((f"prefix_M1-{j + 1}", 0, j))
    for j in range(1, length):
        families.append((f"suffix_M{j + 1}-{length}", j, length - 1))

    def gen_family(entry):
        label, lo, hi = entry
        mask = None
        if lo is not None:
            allowed = np.ones(length, dtype=bool)
            allowed[lo:hi + 1] = False
            mask = dn.AttnMask(allowed)
        x_T = np.stack([seed_noise(s) for s in range(cfg["seeds"])])
        imgs = bundle.generate_batch(emb, x_T, mask=mask)
        keep = np.mean([oracle_classify(bundle.world, im)[0] == base_class
                        for im in imgs])
        # Wilson 95% interval for the keep rate
        n = cfg["seeds"]
        z = 1.959963984540054
        mid = (keep + z * z / (2 * n)) / (1 + z * z / n)
        hw = (z / (1 + z * z / n)
              * np.sqrt(keep * (1 - keep) / n + z * z / (4 * n * n)))
        return label, imgs, float(keep), float(mid - hw), float(mid + hw)

    results = _map_seeds(gen_family, families, cfg["jobs"])
    with open(os.path.join(out, "mask_sweep.csv"), "w", encoding="utf-8") as f:
        f.write("mask,class_keep_rate,ci_lo,ci_hi\n")
        for label, _, keep, lo_ci, hi_ci in results:
            f.write(f"{label},{keep:.17g},{lo_ci:.17g},{hi_ci:.17g}\n")
    for label, imgs, *_ in results:
        save_pgm(os.path.join(out, f"grid_{label}.pgm"), imgs[0])
    print(f"swept {len(families) - 1} masks x {cfg['seeds']} seeds; "
          f"report in {out}")
    return EXIT_OK


SVD_DIRS_DEFAULTS = {"out": "runs/svd-dirs", "ckpt": "runs/train/model.ckpt",
                     "prompt": "a photo of hbar bright", "side": "right",
                     "k": 0, "seed": 0}


def cmd_svd_dirs(args) -> int:
    cfg = resolve_config(args, SVD_DIRS_DEFAULTS)
    out = prepare_out_dir(cfg, "svd-dirs")
    bundle = _load_bundle(cfg["ckpt"])
    if cfg["side"] not in ("right", "left"):
        raise ConfigError(f"side must be right or left, got {cfg['side']!r}")
    points = direction_sweep(bundle, cfg["prompt"], cfg["side"], cfg["k"],
                             seed=cfg["seed"])
    save_sweep_csv(os.path.join(out, "sweep.csv"), cfg["side"], cfg["k"], points)
    for p in points:
        save_pgm(os.path.join(out, f"s_{p.strength:+.1f}.pgm"), p.image)
    print(f"swept {len(points)} strengths along {cfg['side']} direction "
          f"{cfg['k']}; report in {out}")
    return EXIT_OK


OPT_LAMBDA_DEFAULTS = {"out": "runs/opt-lambda",
                       "ckpt": "runs/train/model.ckpt",
                       "from": "a photo of hbar bright",
                       "to": "a photo of vbar bright",
                       "steps": 150, "seed": 0, "gamma": 1.0}


def cmd_opt_lambda(args) -> int:
    cfg = resolve_config(args, OPT_LAMBDA_DEFAULTS)
    out = prepare_out_dir(cfg, "opt-lambda")
    bundle = _load_bundle(cfg["ckpt"])
    ocfg = OptConfig(steps=cfg["steps"], seed=cfg["seed"], gamma=cfg["gamma"])
    ctx = make_context(bundle, cfg["from"], cfg["to"], ocfg)
    params, trajectory = optimize(ctx, ocfg)
    save_trajectory_csv(os.path.join(out, "trajectory.csv"), trajectory)
    lam = params.lam()
    diff = sorted(ctx.diff)
    print(f"final loss {trajectory[-1][1]:.4f}; "
          f"mean lambda at diff positions {np.mean(lam[diff]):.3f}; "
          f"report in {out}")
    return EXIT_OK


INVERT_DEFAULTS = {"out": "runs/invert", "ckpt": "runs/train/model.ckpt",
                   "class": "hbar", "style": 0.9, "seed": 0,
                   "to": "a photo of vbar bright"}


def cmd_invert(args) -> int:
    """Invert a rendered sample, then edit its embedding and regenerate."""
    cfg = resolve_config(args, INVERT_DEFAULTS)
    out = prepare_out_dir(cfg, "invert")
    bundle = _load_bundle(cfg["ckpt"])
    world = bundle.world
    k = world.class_index(cfg["class"])
    sample = tw.render(world, k, cfg["style"], Rng(cfg["seed"]).split(2))
    emb = bundle.embed(sample.prompt)
    x_T = bundle.invert(emb, sample.x0)
    recon = bundle.regenerate(emb, x_T)
    err = float(np.max(np.abs(recon - sample.x0)))

    t_s = bundle.tokens(sample.prompt)
    t_t = bundle.tokens(cfg["to"])
    from .edit_ops import apply_recipe, diff_positions
    recipe = EditRecipe(kind="swap",
                        positions=tuple(sorted(diff_positions(t_s, t_t))))
    e_star, mask = apply_recipe(recipe, emb, bundle.embed(cfg["to"]), t_s, t_t)
    edited = bundle.generate(e_star, x_T, mask=mask)

    save_pgm(os.path.join(out, "real.pgm"), sample.x0)
    save_pgm(os.path.join(out, "recon.pgm"), recon)
    save_pgm(os.path.join(out, "edited.pgm"), edited)
    k_edit, _ = oracle_classify(world, edited)
    with open(os.path.join(out, "invert.csv"), "w", encoding="utf-8") as f:
        f.write("roundtrip_linf,class_src,class_edited\n")
        f.write(f"{err:.17g},{k},{k_edit}\n")
    print(f"round-trip max error {err:.4f}; edited class "
          f"{world.classes[k_edit][0]}; report in {out}")
    return EXIT_OK


VERIFY_DEFAULTS = {"out": "runs/verify", "seed": 0}


def cmd_verify(args) -> int:
    cfg = resolve_config(args, VERIFY_DEFAULTS)
    out = prepare_out_dir(cfg, "verify")
    results = run_all(cfg["seed"])
    report = format_report(results)
    with open(os.path.join(out, "verify.txt"), "w", encoding="utf-8") as f:
        f.write(report)
    print(report, end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# --------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="embedlab",
                     description="Toy diffusion text-embedding editing lab")
    parser.add_argument("--version", action="version",
                        version=f"embedlab v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, defaults, extra):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn, defaults=defaults)
        p.add_argument("--config", help="key=value config file")
        for key, kind, hlp in extra:
            p.add_argument(f"--{key}", type=kind, default=None, help=hlp,
                           dest=key.replace("-", "_"))
        return p

    add("gen-data", cmd_gen_data, GEN_DATA_DEFAULTS, [
        ("out", str, "output directory"),
        ("seed", int, "dataset seed"),
        ("n", int, "number of samples")])
    add("train", cmd_train, TRAIN_DEFAULTS, [
        ("out", str, "output directory"),
        ("seed", int, "training seed"),
        ("steps", int, "optimizer steps"),
        ("batch-size", int, "batch size"),
        ("lr", float, "peak learning rate"),
        ("T", int, "diffusion steps"),
        ("beta-start", float, "first beta"),
        ("beta-end", float, "last beta")])
    add("sample", cmd_sample, SAMPLE_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("prompt", str, "conditioning prompt"),
        ("seed", int, "first seed"),
        ("n", int, "number of images"),
        ("mode", str, "ddim or ddpm")])
    add("edit", cmd_edit, EDIT_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("recipe", str, "swap | soft_swap | scale | style | mask"),
        ("from", str, "source prompt"),
        ("to", str, "target prompt"),
        ("positions", str, "1-based comma-separated positions"),
        ("weight", float, "soft_swap source weight"),
        ("scale-pos", int, "1-based position for the scale recipe"),
        ("scale", float, "scale factor"),
        ("mask-from", int, "1-based first masked position"),
        ("mask-to", int, "1-based last masked position"),
        ("mask-mode", str, "exclude or zero"),
        ("seeds", int, "number of paired seeds"),
        ("jobs", int, "worker threads (acceptance runs use 1)")])
    add("mask-sweep", cmd_mask_sweep, MASK_SWEEP_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("prompt", str, "conditioning prompt"),
        ("seeds", int, "seeds per mask"),
        ("jobs", int, "worker threads (acceptance runs use 1)")])
    add("svd-dirs", cmd_svd_dirs, SVD_DIRS_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("prompt", str, "conditioning prompt"),
        ("side", str, "right or left singular vectors"),
        ("k", int, "singular index"),
        ("seed", int, "x_T seed")])
    add("opt-lambda", cmd_opt_lambda, OPT_LAMBDA_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("from", str, "source prompt"),
        ("to", str, "target prompt"),
        ("steps", int, "optimization steps"),
        ("seed", int, "x_T seed"),
        ("gamma", float, "preservation weight")])
    add("invert", cmd_invert, INVERT_DEFAULTS, [
        ("out", str, "output directory"),
        ("ckpt", str, "checkpoint path"),
        ("class", str, "class name of the rendered sample"),
        ("style", float, "brightness of the rendered sample"),
        ("seed", int, "render seed"),
        ("to", str, "edit target prompt")])
    add("verify", cmd_verify, VERIFY_DEFAULTS, [
        ("out", str, "output directory"),
        ("seed", int, "oracle seed")])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, te.VocabularyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (dn.TrainingError, OptimizationError, ConvergenceError,
            FloatingPointError, ZeroDivisionError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
