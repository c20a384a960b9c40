"""Desk-scale experiments shared by the acceptance suite and scripts/.

Everything expensive (source model, suite, augmented models, packages) is
cached under a directory keyed by a hash of the configuration, so repeated
runs reuse earlier work. Each cached artifact records how long it took to
build; runtimes reported for a cached run are the build-time measurements.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import attacks as A
from . import fingerprint as FP
from . import models as M
from . import reuse as R
from .package_io import load_package, save_package
from .verification import solve_threshold, tail_exact

logger = logging.getLogger(__name__)

# Models the effectiveness check must verify; transfer-100 is reported but not required.
REQUIRED_REUSED = ("copy", "fine-tune-10", "fine-tune-50", "fine-tune-100", "prune-10", "prune-30", "prune-50",
                   "extract-same", "extract-different", "transfer-10", "transfer-50")


@dataclass
class DeskConfig:
    cache_dir: str = ".fitprint-cache"
    suite: R.SuiteConfig = field(default_factory=R.SuiteConfig)
    augmented: int = 8
    augmented_seed: int = 500
    initial_pool: str = "gray"
    initial_seed: int = 0
    modeldiff: FP.ExtractionConfig = field(default_factory=FP.modeldiff_recipe)
    lime: FP.ExtractionConfig = field(default_factory=FP.lime_recipe)
    kappa: float = 1e-9

    def key(self, *parts) -> str:
        raw = json.dumps([asdict(self.suite), self.augmented, self.augmented_seed, *parts], sort_keys=True,
                         default=str)
        return hashlib.sha256(raw.encode()).hexdigest()[:12]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:>2} [{status}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


class _Timings:
    def __init__(self, path: Path):
        self.path = path
        self.data = json.loads(path.read_text()) if path.exists() else {}

    def record(self, name: str, seconds: float) -> None:
        self.data[name] = seconds
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def get(self, name: str, default: float = 0.0) -> float:
        return float(self.data.get(name, default))


class Desk:
    """Lazily built, disk-cached desk-scale setup."""

    def __init__(self, config: DeskConfig | None = None):
        self.config = config or DeskConfig()
        self.root = Path(self.config.cache_dir) / self.config.key()
        (self.root / "models").mkdir(parents=True, exist_ok=True)
        self.timings = _Timings(self.root / "timings.json")
        self._models: dict[str, M.Model] = {}
        self._data = None

    # -- models

    def _model(self, name: str, build) -> M.Model:
        if name in self._models:
            return self._models[name]
        path = self.root / "models" / f"{name}.fpm"
        if path.exists():
            model = M.load_model(path)
        else:
            logger.info("building %s", name)
            t0 = time.perf_counter()
            model = build()
            self.timings.record(f"model:{name}", time.perf_counter() - t0)
            M.save_model(model, path)
        self._models[name] = model
        return model

    @property
    def data(self):
        if self._data is None:
            from .data import train_test
            s = self.config.suite
            self._data = train_test(s.num_classes, s.per_class, s.test_per_class, s.image_shape, s.data_seed,
                                    s.pattern_seed)
        return self._data

    @property
    def source(self) -> M.Model:
        def build():
            s = self.config.suite
            model = M.build_model(s.arch, s.num_classes, s.image_shape, seed=s.source_seed)
            M.train(model, self.data[0], M.TrainConfig(epochs=s.source_epochs, seed=s.source_seed))
            return model
        return self._model("source", build)

    def reused(self) -> dict[str, M.Model]:
        src = self.source
        return {spec.name: self._model(spec.name, lambda spec=spec: R.derive(src, spec, self.config.suite))
                for spec in R.default_reuse_specs()}

    def independents(self) -> dict[str, M.Model]:
        cfg = self.config.suite
        return {f"independent-{s}": self._model(f"independent-{s}", lambda s=s: R.train_independent(cfg, s))
                for s in cfg.independent_seeds}

    def augmented(self) -> list[M.Model]:
        cfg, src = self.config, self.source
        out = []
        for i in range(cfg.augmented):
            spec = replace(R.AUGMENTED_SPECS[i % len(R.AUGMENTED_SPECS)], seed=cfg.augmented_seed + 31 * i)
            out.append(self._model(f"augmented-{i}", lambda spec=spec: R.derive(src, spec, cfg.suite)))
        return out

    def adversary_models(self, count: int, seed: int = 900) -> list[M.Model]:
        """An adversary's own model plus ``count`` independent helpers, all disjoint from the suite."""
        cfg = self.config.suite
        return [self._model(f"adversary-{seed + i}", lambda s=seed + i: R.train_independent(cfg, s))
                for i in range(count + 1)]

    def build_seconds(self, names) -> float:
        return sum(self.timings.get(f"model:{n}") for n in names)

    # -- packages

    def target(self) -> FP.TargetFingerprint:
        return FP.fingerprint_from_bitmap(FP.logo_bitmap(), 16, 16)

    def initial_images(self, n: int, seed: int | None = None) -> np.ndarray:
        cfg = self.config
        return FP.initial_images(cfg.initial_pool, n, self.data[1].images,
                                 cfg.initial_seed if seed is None else seed, cfg.suite.image_shape)

    def _package(self, name: str, build) -> FP.FingerprintPackage:
        path = self.root / f"{name}.fpp"
        if path.exists():
            return load_package(path)
        t0 = time.perf_counter()
        pkg = build()
        self.timings.record(f"package:{name}", time.perf_counter() - t0)
        save_package(pkg, path)
        return pkg

    def modeldiff_package(self) -> FP.FingerprintPackage:
        cfg = self.config
        name = "modeldiff-" + cfg.key(asdict(cfg.modeldiff), cfg.initial_pool, cfg.initial_seed)
        mapping = FP.MappingConfig("fit-modeldiff")
        return self._package(name, lambda: FP.extract_testing_samples(
            self.source, self.augmented(), self.target(), mapping, self.initial_images(mapping.k), cfg.modeldiff))

    def lime_package(self, lam: float | None = None) -> FP.FingerprintPackage:
        cfg = self.config
        ecfg = cfg.lime if lam is None else replace(cfg.lime, lam=lam)
        name = "lime-" + cfg.key(asdict(ecfg), cfg.initial_pool, cfg.initial_seed)
        mapping = FP.MappingConfig("fit-lime")
        return self._package(name, lambda: FP.extract_testing_samples(
            self.source, [], self.target(), mapping, self.initial_images(ecfg.n_samples), ecfg))

    def package_seconds(self, pkg_name_prefix: str) -> float:
        return max((v for k, v in self.timings.data.items() if k.startswith(f"package:{pkg_name_prefix}")),
                   default=0.0)

    @property
    def tau(self) -> float:
        return solve_threshold(256, self.config.kappa)


# --------------------------------------------------------------- criteria


def brute_force_tail(k: int) -> list[int]:
    """Count sign patterns at each Hamming distance from all-ones by enumerating every pattern."""
    codes = np.arange(2 ** k, dtype=np.int64)
    weights = np.zeros(len(codes), dtype=np.int64)
    for bit in range(k):
        weights += (codes >> bit) & 1
    return np.cumsum(np.bincount(weights, minlength=k + 1)).tolist()


def criterion_threshold() -> CriterionResult:
    import contextlib
    import io

    from .cli import main

    t0 = time.perf_counter()
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["threshold", "--k", "256", "--kappa", "1e-9"])
    tau = float(buf.getvalue())
    cli_seconds = time.perf_counter() - t0
    exact = all(tail_exact(k, d) == Fraction(count, 2 ** k)
                for k in range(1, 17) for d, count in enumerate(brute_force_tail(k)))
    ok = code == 0 and abs(tau - 0.316) <= 1 / 256 and exact and cli_seconds < 1.0
    return CriterionResult(1, "threshold exactness", ok,
                           f"tau={tau:.6f} (|tau-0.316|={abs(tau - 0.316):.4f}), brute force k<=16 exact={exact}, "
                           f"cli {cli_seconds:.3f}s", time.perf_counter() - t0)


def criterion_gradcheck() -> CriterionResult:
    from .gradcheck import run_all

    t0 = time.perf_counter()
    worst = run_all(trials=10)
    name, err = max(worst.items(), key=lambda kv: kv[1])
    secs = time.perf_counter() - t0
    ok = err <= 1e-4 and secs < 30
    return CriterionResult(2, "autograd soundness", ok,
                           f"{len(worst)} primitives, worst rel err {err:.2e} ({name})", secs)


def criterion_fixed_point(desk: Desk) -> CriterionResult:
    t0 = time.perf_counter()
    md, lime = desk.modeldiff_package(), desk.lime_package()
    b_md, b_lime = FP.package_ber(desk.source, md), FP.package_ber(desk.source, lime)
    s_md = desk.package_seconds("modeldiff")
    s_lime = desk.timings.get("package:lime-" + desk.config.key(asdict(desk.config.lime), desk.config.initial_pool,
                                                                  desk.config.initial_seed))
    ok = b_md == 0.0 and b_lime == 0.0 and s_md <= 600 and s_lime <= 600
    return CriterionResult(3, "extraction fixed point", ok,
                           f"source BER fit-modeldiff={b_md:.4f} ({s_md:.0f}s), fit-lime={b_lime:.4f} ({s_lime:.0f}s)",
                           time.perf_counter() - t0)


def suite_bers(desk: Desk, pkg: FP.FingerprintPackage) -> dict[str, float]:
    models = {"source": desk.source, **desk.reused(), **desk.independents()}
    return {name: FP.package_ber(m, pkg) for name, m in models.items()}


def criterion_effectiveness(desk: Desk) -> CriterionResult:
    t0 = time.perf_counter()
    bers = suite_bers(desk, desk.modeldiff_package())
    tau = desk.tau
    reused = {n: bers[n] for n in REQUIRED_REUSED}
    ind = {n: b for n, b in bers.items() if n.startswith("independent")}
    mean_ind = float(np.mean(list(ind.values())))
    build = desk.build_seconds(["source", *[s.name for s in R.default_reuse_specs()], *ind,
                                *[f"augmented-{i}" for i in range(desk.config.augmented)]])
    total = build + desk.package_seconds("modeldiff") + (time.perf_counter() - t0)
    ok = (all(b <= tau for b in reused.values()) and all(b > tau for b in ind.values())
          and 0.35 <= mean_ind <= 0.65 and desk.config.augmented >= 5 and total <= 45 * 60)
    worst = max(reused, key=reused.get)
    extra = f", transfer-100={bers['transfer-100']:.3f} (informational)"
    return CriterionResult(4, "effectiveness / conferrability", ok,
                           f"tau={tau:.4f}; reused verified {sum(b <= tau for b in reused.values())}/{len(reused)} "
                           f"(max {worst}={reused[worst]:.3f}); independents "
                           + ", ".join(f"{b:.3f}" for b in ind.values())
                           + f" (mean {mean_ind:.3f}, false positives {sum(b <= tau for b in ind.values())})"
                           + extra + f"; build+extract {total / 60:.1f} min", total)


def criterion_untargeted(desk: Desk, gamma: float = 0.03, seeds: int = 200,
                         sweep=(0.01, 0.03, 0.1)) -> CriterionResult:
    t0 = time.perf_counter()
    test = desk.data[1]
    src, reused = desk.source, desk.reused()
    same_task = [m for m in reused.values() if m.num_classes == src.num_classes]
    independents = list(desk.independents().values())
    reports = {g: A.false_claim_untargeted(src, independents, same_task, test.images[:seeds], test.labels[:seeds], g)
               for g in sorted({gamma, *sweep})}
    report = reports[gamma]
    wins = report.notes["claimed"]
    secs = time.perf_counter() - t0
    detail = (f"avg reused distance {report.notes['reused_avg']:.4f}; independents before/after "
              + ", ".join(f"{r['before']:.4f}->{r['after']:.4f}" for r in report.rows) + f"; claimed {wins}/3"
              + "; gamma sweep mean after " + ", ".join(f"{g:g}:{r.after:.4f}" for g, r in reports.items()))
    return CriterionResult(5, "untargeted baseline false claim", wins >= 2 and secs <= 600, detail, secs)


def criterion_adaptive(desk: Desk, max_helpers: int = 3) -> CriterionResult:
    t0 = time.perf_counter()
    tau = desk.tau
    adversary, *helpers = desk.adversary_models(max_helpers)
    victims = {"source": desk.source, **desk.independents()}
    target = FP.random_target(16, 16, seed=900)
    mapping = FP.MappingConfig("fit-modeldiff")
    x0 = desk.initial_images(mapping.k, seed=900)
    rows = []
    for h in range(max_helpers + 1):
        rep = A.false_claim_adaptive(adversary, helpers[:h], [m.predict for m in victims.values()], target, mapping,
                                     x0, desk.config.modeldiff, desk.config.kappa)
        rows.append((h, rep.notes["adversary_ber"], [r["ber"] for r in rep.rows]))
    ok = all(b > tau for _, _, bers in rows for b in bers)
    secs = time.perf_counter() - t0 + desk.build_seconds([f"adversary-{900 + i}" for i in range(max_helpers + 1)])
    detail = "; ".join(f"{h} helpers: own {own:.3f}, min victim {min(b):.3f}" for h, own, b in rows)
    return CriterionResult(6, "adaptive false claim resistance", ok and secs <= 1800, detail, secs)


def criterion_removal(desk: Desk, config: A.RemovalConfig | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    pkg = desk.modeldiff_package()
    victim = desk.source
    train, test = desk.data
    rcfg = config or A.RemovalConfig()
    mapping = pkg.mapping
    # The adversary extracts its own samples on the victim, never seeing the owner's.
    x0 = FP.initial_images("public", mapping.k, seed=901)
    ecfg = replace(desk.config.modeldiff, seed=901)
    results = {}
    for kind in ("overwrite", "unlearn"):
        adv_target = FP.random_target(16, 16, seed=901) if kind == "overwrite" else pkg.target
        adv_pkg = FP.extract_testing_samples(victim, [], adv_target, mapping, x0, ecfg)
        if kind == "overwrite":
            attacked = A.overwrite_attack(victim, adv_pkg, train, rcfg)
        else:
            attacked = A.unlearn_attack(victim, pkg.target, adv_pkg, train, rcfg)
        results[kind] = (FP.package_ber(attacked, pkg), FP.package_ber(attacked, adv_pkg), M.evaluate(attacked, test))
    tau = desk.tau
    secs = time.perf_counter() - t0
    ok = all(b <= tau for b, _, _ in results.values()) and secs <= 1200
    detail = "; ".join(f"{k}: owner BER {b:.3f}, adversary BER {a:.3f}, accuracy {acc:.3f}"
                       for k, (b, a, acc) in results.items()) + f"; victim accuracy {M.evaluate(victim, test):.3f}"
    return CriterionResult(7, "removal-attack resistance", ok, detail, secs)


def criterion_label_only(desk: Desk) -> CriterionResult:
    t0 = time.perf_counter()
    pkg = desk.modeldiff_package()
    label_pkg = replace(pkg, mapping=replace(pkg.mapping, label_only=True))
    tau = desk.tau
    reused = {n: FP.package_ber(m, label_pkg) for n, m in desk.reused().items() if not n.startswith("transfer")}
    ind = {n: FP.package_ber(m, label_pkg) for n, m in desk.independents().items()}
    ok = all(b <= tau for b in reused.values()) and all(b > tau for b in ind.values())
    worst = max(reused, key=reused.get)
    detail = (f"source {FP.package_ber(desk.source, label_pkg):.3f}; non-transfer reused verified "
              f"{sum(b <= tau for b in reused.values())}/{len(reused)} (max {worst}={reused[worst]:.3f}); "
              f"independents " + ", ".join(f"{b:.3f}" for b in ind.values()))
    return CriterionResult(8, "label-only mode", ok, detail, time.perf_counter() - t0)


def criterion_lime_solver(trials: int = 20, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_sq = worst_ridge = 0.0
    for _ in range(trials):
        k = int(rng.integers(4, 65))
        while True:
            a = rng.integers(0, 2, size=(k, k)).astype(float)
            if np.linalg.cond(a) < 1e6:
                break
        p = rng.normal(size=k)
        direct = np.linalg.solve(a, p)
        got = FP.lime_solver(a, 0.0) @ p
        worst_sq = max(worst_sq, np.linalg.norm(got - direct) / np.linalg.norm(direct))
        tall = FP.mask_matrix(k, 4 * k, int(rng.integers(1 << 30)))
        p = rng.normal(size=4 * k)
        unridged = np.linalg.lstsq(tall, p, rcond=None)[0]
        ridged = FP.lime_solver(tall, 1e-6) @ p
        worst_ridge = max(worst_ridge, np.linalg.norm(ridged - unridged) / np.linalg.norm(unridged))
    ok = worst_sq <= 1e-6 and worst_ridge <= 1e-4
    return CriterionResult(9, "lime linear-solve oracle", ok,
                           f"square ridge-0 max rel err {worst_sq:.1e}, 4k ridge vs unridged {worst_ridge:.1e}",
                           time.perf_counter() - t0)


def inversions(values) -> int:
    return sum(b > a for a, b in itertools.pairwise(values))


def criterion_lambda(desk: Desk, lams=(0.0, 0.5, 1.0, 2.0, 5.0)) -> CriterionResult:
    t0 = time.perf_counter()
    norms = [desk.lime_package(lam).perturbation_norm() for lam in lams]
    inv = inversions(norms)
    detail = ", ".join(f"lambda={lam:g}: {n:.4f}" for lam, n in zip(lams, norms)) + f"; inversions {inv}"
    return CriterionResult(10, "lambda trend (fit-lime)", inv <= 1, detail, time.perf_counter() - t0)


def criterion_registry(workdir) -> CriterionResult:
    """Torn-tail recovery, precedence order and timestamp-aware verify on a scratch registry."""
    from . import registry as REG
    from .models import build_mlp, save_model
    from .verification import verify

    t0 = time.perf_counter()
    root = Path(workdir)
    reg = REG.Registry(root / "reg")
    shape = (1, 4, 4)
    files = []
    for seed in range(3):
        x0 = np.random.default_rng(seed).uniform(size=(4,) + shape)
        pkg = FP.FingerprintPackage(FP.random_target(2, 2, seed=seed), FP.MappingConfig(mu=2, nu=2), x0,
                                    np.zeros_like(x0), FP.ExtractionConfig())
        p, m = root / f"p{seed}.fpp", root / f"m{seed}.fpm"
        save_package(pkg, p)
        save_model(build_mlp(3, input_shape=shape, seed=seed), m)
        files.append((p, m, pkg))
    torn_ok = True
    for seed, (p, m, _) in enumerate(files):
        reg.register(f"owner-{seed}", p, m)
        line = REG.RegistryRecord(99, "rec-00000099", "x", "0" * 64, "0" * 64, 0.0).to_line()
        with open(reg.log_path, "a") as fh:
            fh.write(line[: 7 + 11 * seed])  # crash mid-append
        reg = REG.Registry(root / "reg")
        torn_ok &= [r.seq for r in reg.records] == list(range(1, seed + 2))
    recs = reg.records
    order_ok = all((REG.precedence(a, b) == "a_first") == (a.seq < b.seq) for a, b in itertools.permutations(recs, 2))
    # A package registered after the suspect model cannot claim it.
    p_late, _, pkg_late = files[2]
    suspect_model = M.load_model(files[0][1])
    late = verify(suspect_model, pkg_late, reg.first_seq(REG.sha256_file(files[0][1])),
                  reg.first_seq(REG.sha256_file(p_late)), 0.5)
    early = verify(M.load_model(files[2][1]), files[0][2], reg.first_seq(REG.sha256_file(files[2][1])),
                   reg.first_seq(REG.sha256_file(files[0][0])), 0.5)
    ts_ok = late.timestamp_check == "fail" and late.decision == "independent" and early.timestamp_check == "pass"
    ok = torn_ok and order_ok and ts_ok
    return CriterionResult(11, "registry durability", ok,
                           f"torn tails recovered={torn_ok}, precedence total order={order_ok}, "
                           f"timestamp precedence honored={ts_ok}", time.perf_counter() - t0)


def fmt_table(results) -> str:
    return "\n".join(r.line() for r in results)

