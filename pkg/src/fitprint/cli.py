"""``fitprint`` command line.

Exit codes: 0 success (``verify``: independent), 10 ``verify`` verdict reused,
2 invalid config or usage, 3 extraction did not reach source BER 0,
1 any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import attacks as A
from . import data as D
from . import fingerprint as FP
from . import models as M
from . import reuse as R
from .config import ConfigError, ExperimentConfig, load_config, require_paths
from .package_io import load_package, save_package
from .registry import Registry, RegistryError, default_registry_dir, sha256_file
from .verification import solve_threshold, verify

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_UNCONVERGED = 3
EXIT_REUSED = 10

ATTACK_KINDS = ("falseclaim-untargeted", "falseclaim-adaptive", "overwrite", "unlearn")

logger = logging.getLogger("fitprint")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, name: str, entries: list[dict]) -> Path:
    for e in entries:
        if "path" in e and Path(e["path"]).exists() and "sha256" not in e:
            e["sha256"] = sha256_file(e["path"])
    path = out / name
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return path


def _datasets(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return D.train_test(ds.num_classes, ds.per_class, ds.test_per_class, tuple(ds.image_shape),
                            ds.seed, ds.pattern_seed)
    require_paths(cfg, "dataset.path")
    train = D.ingest_dataset(ds.path, ds.kind, split="train")
    if ds.test_path:
        require_paths(cfg, "dataset.test_path")
        test = D.ingest_dataset(ds.test_path, ds.kind, split="test")
    else:
        rng = np.random.default_rng(ds.seed)
        order = rng.permutation(len(train))
        cut = max(1, len(train) // 5)
        train, test = train.subset(order[cut:], "train"), train.subset(order[:cut], "test")
    return train, test


def _suite_config(cfg: ExperimentConfig) -> R.SuiteConfig:
    ds, ms = cfg.dataset, cfg.model
    return R.SuiteConfig(num_classes=ds.num_classes, per_class=ds.per_class, test_per_class=ds.test_per_class,
                         image_shape=tuple(ds.image_shape), arch=ms.arch, source_seed=ms.seed, data_seed=ds.seed,
                         pattern_seed=ds.pattern_seed, source_epochs=ms.epochs,
                         independent_seeds=tuple(cfg.suite.independent_seeds),
                         independent_epochs=cfg.suite.independent_epochs)


def _target(cfg: ExperimentConfig) -> FP.TargetFingerprint:
    fs, mc = cfg.fingerprint, cfg.fingerprint.mapping
    if fs.target == "logo":
        return FP.fingerprint_from_bitmap(FP.logo_bitmap(), mc.mu, mc.nu)
    if fs.target == "random":
        return FP.random_target(mc.mu, mc.nu, fs.target_seed)
    if not Path(fs.target).exists():
        raise ConfigError(f"fingerprint.target: path {fs.target!r} does not exist")
    return FP.fingerprint_from_bitmap(D.read_pnm(fs.target), mc.mu, mc.nu)


def _source(cfg: ExperimentConfig) -> M.Model:
    require_paths(cfg, "source_model")
    return M.load_model(cfg.source_model)


def _suite_entries(cfg: ExperimentConfig) -> list[dict]:
    require_paths(cfg, "suite_dir")
    manifest = Path(cfg.suite_dir) / "manifest.json"
    if not manifest.exists():
        raise ConfigError(f"suite_dir: {cfg.suite_dir!r} has no manifest.json (run `fitprint suite` first)")
    return json.loads(manifest.read_text())


def _load_entry(cfg: ExperimentConfig, entry: dict) -> M.Model:
    return M.load_model(Path(cfg.suite_dir) / entry["file"])


def _initial_images(cfg: ExperimentConfig, n: int) -> np.ndarray:
    _, test = _datasets(cfg)
    fs = cfg.fingerprint
    return FP.initial_images(fs.initial_images, n, test.images, fs.initial_seed)


def _n_samples(cfg: ExperimentConfig, target: FP.TargetFingerprint) -> int:
    fs = cfg.fingerprint
    return target.k if fs.mapping.kind == "fit-modeldiff" else fs.extraction.n_samples


# ----------------------------------------------------------------- commands


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    train, test = _datasets(cfg)
    ms = cfg.model
    model = M.build_model(ms.arch, train.num_classes, train.image_shape, seed=ms.seed)
    tcfg = M.TrainConfig(epochs=ms.epochs, lr_max=ms.lr_max, lr_min=ms.lr_min, batch_size=ms.batch_size, seed=ms.seed)
    log = M.train(model, train, tcfg)
    model_path, log_path = out / "source.fpm", out / "train_log.csv"
    M.save_model(model, model_path)
    log_path.write_text(log.to_csv())
    acc = M.evaluate(model, test)
    _write_manifest(out, "train_manifest.json", [
        {"role": "source", "path": str(model_path), "arch": ms.arch, "test_accuracy": acc},
        {"role": "log", "path": str(log_path)}])
    print(f"model: {model_path}\nsha256: {sha256_file(model_path)}\ntest_accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_suite(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.suite_dir or Path(cfg.output_dir) / "suite")
    out.mkdir(parents=True, exist_ok=True)
    scfg = _suite_config(cfg)
    source = _source(cfg) if cfg.source_model else None
    suite = R.build_model_suite(scfg, cfg.reuse_specs(), source)
    augmented = R.augmented_models(suite.source.model, scfg, cfg.suite.augmented, cfg.suite.augmented_seed)
    entries = []
    for member in suite.members():
        fname = f"{member.name}.fpm"
        M.save_model(member.model, out / fname)
        entries.append({"name": member.name, "role": member.role, "parent": member.parent, "spec": member.spec,
                        "arch": member.model.arch, "num_classes": member.model.num_classes, "file": fname,
                        "path": str(out / fname)})
    for i, model in enumerate(augmented):
        fname = f"augmented-{i}.fpm"
        M.save_model(model, out / fname)
        entries.append({"name": f"augmented-{i}", "role": "augmented", "parent": "source", "spec": None,
                        "arch": model.arch, "num_classes": model.num_classes, "file": fname,
                        "path": str(out / fname)})
    _write_manifest(out, "manifest.json", entries)
    counts = {role: sum(e["role"] == role for e in entries) for role in ("source", "reused", "independent", "augmented")}
    print(f"suite: {out}\n" + "\n".join(f"{k}: {v}" for k, v in counts.items()))
    return EXIT_OK


def _augmented_from_suite(cfg: ExperimentConfig) -> list[M.Model]:
    if not cfg.suite_dir:
        return []
    return [_load_entry(cfg, e) for e in _suite_entries(cfg) if e["role"] == "augmented"]


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    source = _source(cfg)
    augmented = _augmented_from_suite(cfg)
    target = _target(cfg)
    fs = cfg.fingerprint
    x0 = _initial_images(cfg, _n_samples(cfg, target))
    history = FP.ExtractionHistory()
    pkg = FP.extract_testing_samples(source, augmented, target, fs.mapping, x0, fs.extraction, history)
    path = Path(cfg.package) if cfg.package else out / "fingerprint.fpp"
    digest = save_package(pkg, path)
    ber = FP.package_ber(source, pkg)
    (out / "extract_log.csv").write_text("epoch,loss\n" + "".join(f"{i},{l:.10g}\n" for i, l in enumerate(history.loss)))
    _write_manifest(out, "extract_manifest.json", [{"role": "package", "path": str(path),
                                                    "augmented": len(augmented), "source_ber": ber}])
    print(f"package: {path}\nsha256: {digest}\nsource_ber: {ber}\nconverged: {str(pkg.converged).lower()}")
    if not pkg.converged:
        print("warning: extraction did not reach source BER 0", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def _registry(cfg: ExperimentConfig, args) -> Registry | None:
    root = getattr(args, "registry", None) or cfg.registry or default_registry_dir()
    return Registry(root) if root else None


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    package_path = args.package or cfg.package
    model_path = args.model or cfg.suspect_model
    for name, value in (("package", package_path), ("suspect_model", model_path)):
        if not value:
            raise ConfigError(f"{name}: required but not set")
        if not Path(value).exists():
            raise ConfigError(f"{name}: path {value!r} does not exist")
    pkg = load_package(package_path)
    suspect = M.load_model(model_path)
    suspect_time = package_time = None
    reg = _registry(cfg, args)
    if reg is not None:
        package_time = reg.first_seq(sha256_file(package_path))
        suspect_time = reg.first_seq(sha256_file(model_path))
    report = verify(suspect, pkg, suspect_time, package_time, cfg.kappa)
    text = report.to_text()
    print(text, end="")
    out = _out_dir(cfg)
    (out / "verify_report.txt").write_text(text)
    (out / "verify_report.json").write_text(report.to_json() + "\n")
    return EXIT_REUSED if report.decision == "reused" else EXIT_OK


def cmd_register(cfg: ExperimentConfig, args) -> int:
    reg = _registry(cfg, args)
    if reg is None:
        raise ConfigError("registry: no registry directory (set `registry`, --registry or FITPRINT_REGISTRY)")
    package_path = args.package or cfg.package
    model_path = args.model or cfg.source_model
    for name, value in (("package", package_path), ("source_model", model_path)):
        if not value or not Path(value).exists():
            raise ConfigError(f"{name}: path {value!r} does not exist")
    rec = reg.register(args.owner or cfg.owner, package_path, model_path)
    print(json.dumps(asdict(rec), sort_keys=True))
    return EXIT_OK


def cmd_lookup(cfg: ExperimentConfig, args) -> int:
    reg = _registry(cfg, args)
    if reg is None:
        raise ConfigError("registry: no registry directory (set `registry`, --registry or FITPRINT_REGISTRY)")
    for rec in reg.lookup(digest=args.digest, owner=args.owner):
        print(json.dumps(asdict(rec), sort_keys=True))
    return EXIT_OK


def cmd_attack(cfg: ExperimentConfig, args) -> int:
    kind = args.kind or cfg.attack.kind
    if kind not in ATTACK_KINDS:
        raise UsageError(f"unknown attack kind {kind!r}; choose from {', '.join(ATTACK_KINDS)}")
    out = _out_dir(cfg)
    entries = _suite_entries(cfg)
    models = {e["name"]: _load_entry(cfg, e) for e in entries}
    source = models["source"]
    reused = [models[e["name"]] for e in entries if e["role"] == "reused"]
    independents = [models[e["name"]] for e in entries if e["role"] == "independent"]
    at = cfg.attack
    scfg = _suite_config(cfg)
    train, test = _datasets(cfg)
    if kind == "falseclaim-untargeted":
        seeds = test.images[:at.seeds]
        report = A.false_claim_untargeted(source, independents, [m for m in reused if m.num_classes == source.num_classes],
                                          seeds, test.labels[:at.seeds], at.gamma, at.eta)
    elif kind == "falseclaim-adaptive":
        # The adversary trains its own model and helpers; the victims are the suite's independents.
        adversary = R.train_independent(scfg, at.adversary_seed)
        helpers = [R.train_independent(scfg, at.adversary_seed + 1 + i) for i in range(at.helpers)]
        target = FP.random_target(cfg.fingerprint.mapping.mu, cfg.fingerprint.mapping.nu, at.adversary_seed)
        x0 = _initial_images(cfg, _n_samples(cfg, target))
        report = A.false_claim_adaptive(adversary, helpers, [m.predict for m in independents], target,
                                        cfg.fingerprint.mapping, x0, cfg.fingerprint.extraction, cfg.kappa)
    else:
        if not (at.owner_package or cfg.package):
            raise ConfigError("attack.owner_package: required for removal attacks")
        owner_pkg = load_package(at.owner_package or cfg.package)
        rcfg = A.RemovalConfig(epochs=at.epochs, lr=at.lr, task_weight=at.task_weight, seed=at.adversary_seed)
        report = _removal_report(kind, source, owner_pkg, train, cfg, rcfg)
    (out / f"attack_{kind}.txt").write_text(report.to_text())
    (out / f"attack_{kind}.csv").write_text(report.to_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def _removal_report(kind: str, victim: M.Model, owner_pkg: FP.FingerprintPackage, task: D.Dataset,
                    cfg: ExperimentConfig, rcfg: A.RemovalConfig) -> A.AttackReport:
    adv = cfg.attack
    mapping = owner_pkg.mapping
    n = owner_pkg.x0.shape[0]
    x0 = FP.initial_images("public", n, None, adv.adversary_seed, owner_pkg.x0.shape[1:])
    ecfg = replace(owner_pkg.extraction, seed=adv.adversary_seed)
    if kind == "overwrite":
        adv_target = FP.random_target(mapping.mu, mapping.nu, adv.adversary_seed)
    else:
        adv_target = owner_pkg.target
    adv_pkg = FP.extract_testing_samples(victim, [], adv_target, mapping, x0, ecfg)
    log: list[float] = []
    if kind == "overwrite":
        attacked = A.overwrite_attack(victim, adv_pkg, task, rcfg, log)
    else:
        attacked = A.unlearn_attack(victim, owner_pkg.target, adv_pkg, task, rcfg, log)
    before, after = FP.package_ber(victim, owner_pkg), FP.package_ber(attacked, owner_pkg)
    tau = solve_threshold(owner_pkg.k, cfg.kappa)
    rows = [{"model": "victim", "owner_ber_before": before, "owner_ber_after": after,
             "adversary_ber_after": FP.package_ber(attacked, adv_pkg), "tau": tau}]
    return A.AttackReport(kind, "owner-ber", before, after, rows, success=after > tau,
                          notes={"tau": tau, "hinge_log": ",".join(f"{h:.4f}" for h in log)})


def cmd_report(cfg: ExperimentConfig, args) -> int:
    require_paths(cfg, "package")
    pkg = load_package(cfg.package)
    tau = solve_threshold(pkg.k, cfg.kappa)
    entries = _suite_entries(cfg)
    rows = []
    for e in entries:
        if e["role"] == "augmented":
            continue
        model = _load_entry(cfg, e)
        b = FP.package_ber(model, pkg)
        group = e["name"].rsplit("-", 1)[0] if e["role"] != "source" else "source"
        rows.append({"name": e["name"], "role": e["role"], "group": group, "ber": b, "verified": b <= tau})
    out = _out_dir(cfg)
    lines = ["name,role,group,ber,verified"] + [f"{r['name']},{r['role']},{r['group']},{r['ber']:.6f},{str(r['verified']).lower()}" for r in rows]
    (out / "report_models.csv").write_text("\n".join(lines) + "\n")
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(r["group"] if r["role"] != "independent" else "independent", []).append(r)
    summary = ["group,count,verification_rate,mean_ber,max_ber,tau"]
    for g, rs in groups.items():
        bers = [r["ber"] for r in rs]
        rate = sum(r["verified"] for r in rs) / len(rs)
        summary.append(f"{g},{len(rs)},{rate:.4f},{np.mean(bers):.6f},{max(bers):.6f},{tau:.6f}")
    (out / "report_summary.csv").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def cmd_threshold(cfg, args) -> int:
    print(f"{solve_threshold(args.k, args.kappa):.6f}")
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fitprint", description="Targeted model fingerprinting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "threshold", help="experiment JSON config")
        return p

    add("train", "train the source model")
    add("suite", "derive reused models, independents and augmented models")
    add("extract", "extract testing samples into a fingerprint package")
    p = add("verify", "verify a suspect model against a package")
    p.add_argument("--package")
    p.add_argument("--model")
    p.add_argument("--registry")
    p = add("register", "register a package and model")
    p.add_argument("--package")
    p.add_argument("--model")
    p.add_argument("--owner")
    p.add_argument("--registry")
    p = add("lookup", "look up registry records by digest or owner")
    p.add_argument("--digest")
    p.add_argument("--owner")
    p.add_argument("--registry")
    p = add("attack", "run a false-claim or removal attack")
    p.add_argument("--kind")
    add("report", "per-technique verification table for a suite")
    p = add("threshold", "print the BER threshold for k bits and false-alarm bound kappa")
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--kappa", type=float, default=1e-9)
    return parser


COMMANDS = {"train": cmd_train, "suite": cmd_suite, "extract": cmd_extract, "verify": cmd_verify,
            "register": cmd_register, "lookup": cmd_lookup, "attack": cmd_attack, "report": cmd_report,
            "threshold": cmd_threshold}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
        if args.command == "threshold":
            return cmd_threshold(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RegistryError, M.ModelFileError, D.DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
