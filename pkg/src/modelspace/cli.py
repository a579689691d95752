"""Command-line front end orchestrating the pipeline with cached intermediates.

Every output file embeds the config hash and the probe checksum.  The config
hash covers only result-determining fields (never thread count or output
paths), so runs that must agree numerically share a hash.  Attribution sets
are cached per (model checksum, probe checksum, method, epsilon, mode) and
all downstream numbers are computed from the cache representation, making
cold and warm runs byte-identical.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field


from . import attribution, cluster, evaluation, space, svcca, synthetic
from .attribution import DEFAULT_EPSILON, ELRP, METHODS, MODE_EXACT, MODE_SINGLE_PASS
from .bundle import load_model
from .checks import run_gradcheck
from .errors import ModelSpaceError
from .probe import load_probe, sample_probe


@dataclass
class RunConfig:
    command: str
    probe_manifest: str | None = None
    probe_checksum: str | None = None
    model_paths: tuple = ()
    model_checksums: tuple = ()
    method: str | None = None
    epsilon: float | None = None
    mode: str | None = None
    probe_size: int | None = None
    sample_seed: int | None = None
    variance_threshold: float | None = None
    linkage: str | None = None
    dissimilarity: str | None = None
    k_rel: int | None = None
    oracle_path: str | None = None
    out_dir: str | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    _HASH_EXCLUDED = ("out_dir", "threads", "probe_manifest", "model_paths", "oracle_path")

    def hash(self):
        payload = {k: v for k, v in asdict(self).items() if k not in self._HASH_EXCLUDED}
        blob = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_metadata(self):
        return {"config": asdict(self), "config_hash": self.hash(), "probe_checksum": self.probe_checksum}


def _load_probe_args(args, config):
    directory = os.path.dirname(os.path.abspath(args.probe)) or "."
    manifest = os.path.basename(args.probe)
    probe = load_probe(directory, manifest)
    if args.probe_size is not None:
        probe = sample_probe(probe, args.probe_size, args.seed)
        config.probe_size = args.probe_size
        config.sample_seed = args.seed
    config.probe_manifest = args.probe
    config.probe_checksum = probe.checksum
    return probe


def _load_models(args, config):
    models = [load_model(p) for p in args.models]
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ModelSpaceError(f"duplicate model ids across bundles: {ids}")
    config.model_paths = tuple(args.models)
    config.model_checksums = tuple(m.checksum for m in models)
    return models


def _cache_dir(args):
    path = args.cache_dir or os.path.join(args.out, "cache")
    os.makedirs(path, exist_ok=True)
    return path


def _ensure_sets(models, probe, args, config):
    cache = _cache_dir(args)
    sets = []
    passes_total = 0
    hits = 0
    for model in models:
        aset, _ = attribution.ensure_attribution_set(
            model, probe, args.method, args.mode, args.epsilon, cache, threads=args.threads
        )
        if aset.passes == 0:
            hits += 1
        passes_total += aset.passes
        sets.append(aset)
    return sets, {"passes_total": passes_total, "cache_hits": hits}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_comments(config):
    return {"config_hash": config.hash(), "probe_checksum": config.probe_checksum}


def _export_matrix(matrix, stem, out_dir, config):
    meta = dict(matrix.metadata)
    meta.update(config.to_metadata())
    stamped = space.AffinityMatrix(matrix.ids, matrix.values, matrix.kind, meta)
    _write_text(os.path.join(out_dir, stem + ".csv"), space.matrix_to_csv(stamped, _csv_comments(config)))
    space.write_matrix_json(stamped, os.path.join(out_dir, stem + ".json"))


def cmd_attribute(args):
    config = RunConfig(command="attribute", method=args.method, epsilon=args.epsilon,
                       mode=args.mode, out_dir=args.out, threads=args.threads)
    probe = _load_probe_args(args, config)
    models = _load_models(args, config)
    os.makedirs(args.out, exist_ok=True)
    sets, stats = _ensure_sets(models, probe, args, config)
    report = config.to_metadata()
    report.update(stats)
    report["models"] = {s.model_id: {"n_maps": len(s)} for s in sets}
    _write_json(os.path.join(args.out, "attribute_report.json"), report)
    print(f"attributed {len(models)} models x {len(probe)} images "
          f"({stats['passes_total']} passes, {stats['cache_hits']} cache hits)")
    return 0


def cmd_affinity(args):
    config = RunConfig(command="affinity", method=args.method, epsilon=args.epsilon,
                       mode=args.mode, out_dir=args.out, threads=args.threads)
    probe = _load_probe_args(args, config)
    models = _load_models(args, config)
    os.makedirs(args.out, exist_ok=True)
    sets, stats = _ensure_sets(models, probe, args, config)
    id_to_checksum = {m.model_id: m.checksum for m in models}
    matrix = space.affinity_matrix(sets, metadata={"model_checksums": id_to_checksum, "mode": args.mode})
    _export_matrix(matrix, "affinity_similarity", args.out, config)
    _export_matrix(matrix.to_distance(), "affinity_distance", args.out, config)
    report = config.to_metadata()
    report.update(stats)
    _write_json(os.path.join(args.out, "affinity_report.json"), report)
    print(f"affinity matrix over {len(models)} models written to {args.out} "
          f"({stats['passes_total']} passes)")
    return 0


def cmd_insert(args):
    matrix = space.read_matrix_json(args.matrix)
    if matrix.kind != space.KIND_SIMILARITY:
        raise ModelSpaceError("insertion needs the similarity-kind matrix JSON")
    meta = matrix.metadata
    method = meta["method"]
    epsilon = float(meta["epsilon"]) if method == ELRP else DEFAULT_EPSILON
    mode = meta.get("mode", MODE_SINGLE_PASS)
    config = RunConfig(command="insert", method=method, epsilon=epsilon, mode=mode,
                       out_dir=args.out, threads=args.threads)
    probe = _load_probe_args(args, config)
    if probe.checksum != meta.get("probe_checksum"):
        raise ModelSpaceError("probe does not match the matrix (checksum differs)")
    new_model = load_model(args.new_model)
    if new_model.model_id in matrix.ids:
        raise ModelSpaceError(f"{new_model.model_id!r} is already in the matrix")
    config.model_paths = (args.new_model,)
    config.model_checksums = (new_model.checksum,)

    cache = _cache_dir(args)
    new_set, _ = attribution.ensure_attribution_set(
        new_model, probe, method, mode, epsilon, cache, threads=args.threads)
    checksums = meta.get("model_checksums", {})
    similarities = {}
    for mid in matrix.ids:
        if mid not in checksums:
            raise ModelSpaceError(f"matrix metadata lacks the checksum for {mid!r}")
        key = attribution.cache_key(checksums[mid], probe.checksum, method,
                                    new_set.epsilon, mode)
        path = os.path.join(cache, key + ".attr")
        if not os.path.exists(path):
            raise ModelSpaceError(f"no cached attribution set for {mid!r}; run affinity first")
        cached = attribution.load_attribution_set(path)
        similarities[mid], _ = space.mean_similarity(cached, new_set)
    self_sim, _ = space.mean_similarity(new_set, new_set)
    grown = space.insert_model(matrix, new_model.model_id, similarities, self_similarity=self_sim)
    meta = dict(grown.metadata)
    meta.setdefault("model_checksums", {})[new_model.model_id] = new_model.checksum
    grown = space.AffinityMatrix(grown.ids, grown.values, grown.kind, meta)
    os.makedirs(args.out, exist_ok=True)
    _export_matrix(grown, "affinity_similarity", args.out, config)
    _export_matrix(grown.to_distance(), "affinity_distance", args.out, config)
    print(f"inserted {new_model.model_id} ({len(matrix.ids)} new distances)")
    return 0


def cmd_rank(args):
    matrix = space.read_matrix_json(args.matrix)
    if matrix.kind == space.KIND_SIMILARITY:
        matrix = matrix.to_distance()
    config = RunConfig(command="rank", probe_checksum=matrix.metadata.get("probe_checksum"),
                       extra={"target": args.target})
    ranked = space.rank_sources(matrix, args.target)
    for position, (mid, value) in enumerate(ranked, start=1):
        print(f"{position}\t{mid}\t{value:.17g}")
    if args.out:
        lines = [f"# config_hash={config.hash()}", f"# probe_checksum={config.probe_checksum}",
                 "rank,source,value"]
        lines += [f"{i},{mid},{v:.17g}" for i, (mid, v) in enumerate(ranked, start=1)]
        _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_svcca(args):
    config = RunConfig(command="svcca", variance_threshold=args.variance_threshold,
                       out_dir=args.out, threads=args.threads)
    probe = _load_probe_args(args, config)
    models = _load_models(args, config)
    os.makedirs(args.out, exist_ok=True)
    matrix = svcca.correlation_matrix(models, probe, args.variance_threshold)
    _export_matrix(matrix, "svcca", args.out, config)
    print(f"svcca matrix over {len(models)} models written to {args.out}")
    return 0


def cmd_eval(args):
    estimate = space.read_matrix_json(args.estimate)
    oracle = evaluation.load_oracle_file(args.oracle)
    config = RunConfig(command="eval", k_rel=args.k_rel, oracle_path=args.oracle,
                       out_dir=args.out,
                       probe_checksum=estimate.metadata.get("probe_checksum"))
    relevance = evaluation.build_relevance(oracle, k_rel=args.k_rel)
    est_ranking = evaluation.as_ranking_dict(estimate)
    p_curve, r_curve, per_target = evaluation.retrieval_curves(est_ranking, relevance)
    os.makedirs(args.out, exist_ok=True)
    comments = f"# config_hash={config.hash()}\n# probe_checksum={config.probe_checksum}\n"
    _write_text(os.path.join(args.out, "precision_at_k.csv"), comments + p_curve.to_csv())
    _write_text(os.path.join(args.out, "recall_at_k.csv"), comments + r_curve.to_csv())
    # per-target values alongside, so micro-averaging stays recoverable
    targets = sorted(per_target)
    for stem, pick in (("per_target_precision", 0), ("per_target_recall", 1)):
        lines = ["K," + ",".join(targets)]
        for i, (k, _) in enumerate(p_curve.points):
            lines.append(
                f"{int(k)}," + ",".join(f"{per_target[t][i][pick]:.17g}" for t in targets)
            )
        _write_text(os.path.join(args.out, stem + ".csv"), comments + "\n".join(lines) + "\n")

    report = config.to_metadata()
    n = len(est_ranking)
    report["k_rel"] = relevance.k_rel
    report["clamped"] = relevance.clamped
    report["random_baseline_precision"] = relevance.k_rel / (n - 1) if n > 1 else None
    if isinstance(oracle, space.AffinityMatrix):
        # agreement is measured on the similarity domain, where +inf distance
        # sentinels become similarity 0 instead of poisoning the correlation
        est_sim = estimate.to_similarity()
        ora_sim = oracle.to_similarity()
        report["pearson"] = evaluation.pearson(est_sim, ora_sim)
        report["spearman"] = evaluation.spearman(est_sim, ora_sim)
    _write_json(os.path.join(args.out, "eval_report.json"), report)
    for k, y in p_curve.points:
        print(f"P@{int(k)} = {y:.4f}")
    return 0


def cmd_cpc(args):
    correlations = space.read_matrix_json(args.correlations)
    oracle = evaluation.load_oracle_file(args.oracle)
    config = RunConfig(command="cpc", oracle_path=args.oracle,
                       out_dir=os.path.dirname(args.out_file) or ".",
                       probe_checksum=correlations.metadata.get("probe_checksum"),
                       extra={"divide_by_bucket": args.divide_by_bucket})
    curve = evaluation.cpc(correlations, oracle, divide_by_bucket=args.divide_by_bucket)
    os.makedirs(os.path.dirname(os.path.abspath(args.out_file)), exist_ok=True)
    comments = f"# config_hash={config.hash()}\n# probe_checksum={config.probe_checksum}\n"
    _write_text(args.out_file, comments + curve.to_csv())
    print(f"cpc curve ({len(curve.points)} ranks) written to {args.out_file}")
    return 0


def cmd_tree(args):
    matrix = space.read_matrix_json(args.matrix)
    if matrix.kind != space.KIND_DISTANCE:
        matrix = matrix.to_distance(transform=args.dissimilarity)
    config = RunConfig(command="tree", linkage=args.linkage, dissimilarity=args.dissimilarity,
                       out_dir=os.path.dirname(args.out_file) or ".",
                       probe_checksum=matrix.metadata.get("probe_checksum"))
    dendro = cluster.agglomerate(matrix, linkage=args.linkage)
    newick = cluster.to_newick(dendro)
    comments = f"# config_hash={config.hash()}\n# probe_checksum={config.probe_checksum}\n"
    _write_text(args.out_file, comments + newick + "\n")
    sys.stdout.write(cluster.render_text(dendro))
    if dendro.replaced_infinite:
        print(f"note: {dendro.replaced_infinite} infinite distances were replaced before clustering")
    return 0


def cmd_gradcheck(args):
    config = RunConfig(command="gradcheck", extra={"trials": args.trials, "seed": args.seed})
    report = run_gradcheck(trials=args.trials, seed=args.seed)
    report["config_hash"] = config.hash()
    report["probe_checksum"] = None  # no probe involved
    for kind, err in report["per_kind_worst"].items():
        print(f"{kind:10s} worst relative error {err:.3e}")
    print(f"overall worst {report['worst_relative_error']:.3e} over {report['trials']} trials: "
          + ("PASS" if report["passed"] else "FAIL"))
    if args.out:
        _write_json(args.out, report)
    return 0 if report["passed"] else 1


def cmd_heatmap(args):
    aset = attribution.load_attribution_set(args.cache_file)
    attribution.export_heatmap(aset, args.index, args.out_file)
    print(f"wrote heatmap of {aset.model_id} image {args.index} to {args.out_file}")
    return 0


def cmd_synth(args):
    spec = synthetic.FamilySpec(groups=args.groups, per_group=args.per_group,
                                shared_depth=args.shared_depth, sigma=args.sigma,
                                seed=args.seed, base_size=args.base_size)
    models_dir = os.path.join(args.out, "models")
    paths = synthetic.generate_family(spec, models_dir)
    probe_dir = os.path.join(args.out, "probe")
    synthetic.generate_probe(probe_dir, args.probe_count, width=args.base_size,
                             height=args.base_size, seed=args.seed)
    oracle = synthetic.group_oracle_ranking(spec)
    _write_json(os.path.join(args.out, "oracle.json"), oracle)
    print(f"generated {len(paths)} model bundles, {args.probe_count} probe images, "
          f"and a group-truth oracle under {args.out}")
    return 0


def _add_probe_model_args(p, with_method=True):
    p.add_argument("--probe", required=True, help="path to the probe manifest JSON")
    p.add_argument("--models", nargs="+", required=True, help="model bundle directories")
    p.add_argument("--probe-size", type=int, default=None,
                   help="sample this many probe images (presets: 100 400 800 1200 1600 2000)")
    p.add_argument("--seed", type=int, default=0, help="probe sampling seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cache-dir", default=None, help="attribution cache (default: OUT/cache)")
    if with_method:
        p.add_argument("--method", choices=METHODS, default=ELRP)
        p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
        p.add_argument("--mode", choices=(MODE_SINGLE_PASS, MODE_EXACT), default=MODE_SINGLE_PASS)


def build_parser():
    parser = argparse.ArgumentParser(prog="modelspace",
                                     description="Estimate model transferability from attribution maps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", help="compute and cache attribution sets")
    _add_probe_model_args(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("affinity", help="pairwise model affinity matrix")
    _add_probe_model_args(p)
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("rank", help="rank source models for a target")
    p.add_argument("--matrix", required=True, help="affinity matrix JSON")
    p.add_argument("--target", required=True)
    p.add_argument("--out", default=None, help="optional CSV output")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("insert", help="add one model to an existing matrix")
    p.add_argument("--matrix", required=True, help="similarity matrix JSON from affinity")
    p.add_argument("--new-model", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--probe-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("svcca", help="pairwise representation-correlation matrix")
    _add_probe_model_args(p, with_method=False)
    p.add_argument("--variance-threshold", type=float, default=svcca.DEFAULT_VARIANCE_THRESHOLD)
    p.set_defaults(func=cmd_svcca)

    p = sub.add_parser("eval", help="P@K / R@K against an oracle")
    p.add_argument("--estimate", required=True, help="estimated matrix JSON")
    p.add_argument("--oracle", required=True, help="oracle ranking JSON or matrix JSON")
    p.add_argument("--k-rel", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cpc", help="correlation-priority curve")
    p.add_argument("--correlations", required=True, help="correlation matrix JSON")
    p.add_argument("--oracle", required=True)
    p.add_argument("--divide-by-bucket", action="store_true",
                   help="divide each rank bucket by its size instead of N")
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_cpc)

    p = sub.add_parser("tree", help="task similarity tree (newick)")
    p.add_argument("--matrix", required=True)
    p.add_argument("--linkage", choices=cluster.LINKAGES, default="average")
    p.add_argument("--dissimilarity", choices=("reciprocal", "one-minus"), default="reciprocal")
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional report JSON")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("heatmap", help="export one cached map as a PGM heatmap")
    p.add_argument("--cache-file", required=True, help=".attr cache file")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("synth", help="generate a synthetic model family and probe")
    p.add_argument("--out", required=True)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--per-group", type=int, default=3)
    p.add_argument("--shared-depth", type=int, default=2)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-size", type=int, default=16)
    p.add_argument("--probe-count", type=int, default=200)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelSpaceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
