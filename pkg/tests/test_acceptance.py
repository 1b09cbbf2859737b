"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

The end-to-end criterion runs the whole pipeline (mine, select, train,
evaluate) at desk scale through a shared fixture; everything else checks
properties at its stated tolerance.
"""

import time

import numpy as np
import pytest

from gradcheck import assert_grads_close, numeric_grad
from passforge import tensor as T
from passforge.candidates import mine_candidates
from passforge.coreset import (
    brute_force_select,
    build_reward_matrix,
    greedy_select,
    normalize_rows,
    objective,
)
from passforge.evaluate import (
    EvalRow,
    execute_plan,
    gmean_over_oz,
    infer,
    mean_over_oz,
    oracle_eval,
    popularity_scores,
)
from passforge.gean import GeanConfig, encode_graph, forward, init_params
from passforge.gean import predict as gean_predict
from passforge.graphrep import (
    GraphEdge,
    ProgramGraph,
    build_graph,
    build_vocabulary,
    expand_type_graph,
)
from passforge.synthenv import GeneratorConfig, baseline_sizes, generate_program
from passforge.train import TrainConfig, nvp_targets, prepare_items, train_model

PRIMITIVES = {"i1", "i8", "i32", "i64", "f32", "f64"}
CONSTRUCTORS = {"pointer", "record", "array"}
FAMILIES = ("A", "B", "C", "D")


def report(criterion: str, detail: str = ""):
    print(f"\n[acceptance] {criterion}: PASS {detail}".rstrip())


# -- 1. submodularity ---------------------------------------------------------------

def test_c01_submodularity_suite():
    start = time.time()
    rng = np.random.default_rng(20240501)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        m = int(rng.integers(2, 13))
        values = rng.uniform(0.05, 3.0, size=(n, m))
        for _ in range(200):
            b_size = int(rng.integers(1, m))  # leave at least one j outside
            b = rng.choice(m, size=b_size, replace=False)
            a_size = int(rng.integers(0, b_size + 1))
            a = b[:a_size]
            outside = np.setdiff1d(np.arange(m), b)
            j = int(rng.choice(outside))
            col_j = values[:, j]
            max_b = values[:, b].max(axis=1)
            max_a = values[:, a].max(axis=1) if a_size else np.zeros(n)
            j_a, j_b = max_a.sum(), max_b.sum()
            # monotonicity: A subset of B implies J(A) <= J(B)
            if j_a > j_b + 1e-12:
                violations += 1
            gain_a = np.maximum(max_a, col_j).sum() - j_a
            gain_b = np.maximum(max_b, col_j).sum() - j_b
            # diminishing returns
            if gain_a < gain_b - 1e-12:
                violations += 1
            if j_a < -1e-12 or j_b < -1e-12:
                violations += 1
    elapsed = time.time() - start
    assert violations == 0
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    report("C01 submodularity (monotone + diminishing returns)",
           f"(1000 matrices x 200 probes, {elapsed:.1f}s)")


def test_c01_empty_set_objective_is_zero():
    rng = np.random.default_rng(1)
    values = rng.uniform(0.1, 2.0, size=(5, 4))
    assert objective(values, set()) == 0.0


# -- 2. greedy approximation bound ----------------------------------------------------

def test_c02_greedy_nemhauser_bound():
    start = time.time()
    rng = np.random.default_rng(77)
    bound = 1.0 - 1.0 / np.e
    for _ in range(200):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(2, 11))
        k = int(rng.integers(1, min(4, m) + 1))
        raw = rng.uniform(0.05, 2.5, size=(n, m))
        from passforge.coreset import RewardMatrix

        R = normalize_rows(RewardMatrix(
            raw, tuple(f"p{i}" for i in range(n)), tuple(range(m))))
        _, j_opt = brute_force_select(R, k)
        j_greedy = greedy_select(R, k).objective_trace[-1]
        assert j_greedy + 1e-12 >= bound * j_opt
    elapsed = time.time() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    report("C02 greedy within (1 - 1/e) of brute force",
           f"(200 instances, {elapsed:.1f}s)")


# -- 3. gradient checks -----------------------------------------------------------------

def _op_gradchecks():
    rng = np.random.default_rng(5)
    x34 = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    w43 = rng.normal(size=(4, 3))
    w6 = rng.normal(size=6)
    w32 = rng.normal(size=(3, 2))
    w14 = rng.normal(size=(1, 4))
    w36 = rng.normal(size=(3, 6))
    ids = np.array([0, 0, 1, 2, 2, 2])
    cases = {
        "matmul": (lambda ps: T.sum_all(T.matmul(ps[0], ps[1])),
                   [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        "gather_rows": (lambda ps: T.sum_all(T.mul_const(
            T.gather_rows(ps[0], [1, 1, 0, 2]), w43)),
            [rng.normal(size=(3, 3))]),
        "segment_softmax": (lambda ps: T.sum_all(T.mul_const(
            T.segment_softmax(ps[0], ids), w6)),
            [rng.normal(size=6)]),
        "segment_sum": (lambda ps: T.sum_all(T.mul_const(
            T.segment_sum(ps[0], ids, 3), w32)),
            [rng.normal(size=(6, 2))]),
        "mean_rows": (lambda ps: T.sum_all(T.mul_const(
            T.mean_rows(ps[0]), w14)), [x34.copy()]),
        "softmax": (lambda ps: T.sum_all(T.mul_const(T.softmax(ps[0]), w)),
                    [x34.copy()]),
        "relu": (lambda ps: T.sum_all(T.mul_const(T.relu(ps[0]), w)),
                 [x34 + 0.2]),
        "elu": (lambda ps: T.sum_all(T.mul_const(T.elu(ps[0]), w)),
                [x34.copy()]),
        "concat": (lambda ps: T.sum_all(T.mul_const(
            T.concat([ps[0], ps[1]], axis=1), w36)),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))]),
        "add_bias": (lambda ps: T.sum_all(T.add(ps[0], ps[1])),
                     [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]),
        "scale": (lambda ps: T.sum_all(T.scale(ps[0], -1.7)), [x34.copy()]),
        "scale_rows": (lambda ps: T.sum_all(T.scale_rows(ps[0], ps[1])),
                       [rng.normal(size=(3, 4)), rng.normal(size=3)]),
        "cross_entropy_soft": (
            lambda ps: T.cross_entropy_soft(ps[0], np.array([0.2, 0.3, 0.5])),
            [rng.normal(size=3)]),
        "mse": (lambda ps: T.mse(ps[0], x34), [x34 + rng.normal(size=(3, 4))]),
    }
    return cases


def test_c03_gradient_checks():
    start = time.time()
    for name, (build, arrays) in _op_gradchecks().items():
        params = [T.param(a.copy()) for a in arrays]
        loss = build(params)
        T.backward(loss)
        numeric = numeric_grad(
            lambda xs: float(build([T.param(x) for x in xs]).data), arrays)
        assert_grads_close([p.grad for p in params], numeric)

    # full model: 2 layers, d = 8, graph with <= 10 nodes
    nodes = tuple(
        __import__("passforge.graphrep", fromlist=["GraphNode"]).GraphNode(
            "instruction", f"op{i % 3}", 0, i // 3)
        for i in range(9)
    )
    edges = tuple(
        GraphEdge(flow, pos, s, d)
        for flow, pos, s, d in [
            ("control", 0, 0, 1), ("control", 1, 1, 2), ("data", 2, 2, 3),
            ("data", 0, 3, 4), ("call", 0, 4, 5), ("type", 1, 6, 7),
            ("control", 0, 7, 8), ("data", 1, 8, 0),
        ]
    )
    g = ProgramGraph(nodes, edges)
    vocab = build_vocabulary([g])
    cfg = GeanConfig(vocab_size=len(vocab), output_dim=4, embed_dim=8,
                     num_layers=2, hidden_dim=8)
    raw = init_params(cfg, seed=3)
    enc = encode_graph(g, vocab)
    target = np.array([0.1, 0.2, 0.3, 0.4])
    names = sorted(raw)

    def loss_value(arrays):
        pp = {k: T.Tensor(a) for k, a in zip(names, arrays)}
        return float(T.cross_entropy_soft(forward(enc, pp, cfg), target).data)

    tensors = {k: T.Tensor(raw[k].copy(), requires_grad=True) for k in names}
    T.backward(T.cross_entropy_soft(forward(enc, tensors, cfg), target))
    numeric = numeric_grad(loss_value, [raw[k].copy() for k in names])
    assert_grads_close([tensors[k].grad for k in names], numeric)

    elapsed = time.time() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    report("C03 analytic gradients vs central differences <= 1e-4",
           f"(every op + full 2-layer d=8 model, {elapsed:.1f}s)")


# -- 4. soft-target properties --------------------------------------------------------------

def test_c04_nvp_target_properties():
    rng = np.random.default_rng(99)
    k = 50
    for _ in range(1000):
        # value vectors are ratios of integer instruction counts
        o0 = 48
        best = rng.integers(16, o0 + 1, size=k)
        r = o0 / best
        v = nvp_targets(r, 0.25)
        assert abs(v.sum() - 1.0) <= 1e-12
        assert np.argmax(v) in np.flatnonzero(r == r.max())
        cold = nvp_targets(r, 1e-4)
        mass_on_max = cold[np.flatnonzero(r == r.max())].sum()
        assert mass_on_max >= 1.0 - 1e-6
        hot = nvp_targets(r, 1e6)
        assert np.max(np.abs(hot - 1.0 / k)) <= 1e-6
    report("C04 soft-target properties (sum, argmax, cold/hot limits)",
           "(1000 value vectors, K=50)")


# -- 5. end-to-end ordering --------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline():
    """Full pipeline at desk scale: 520 train-pool / 100 held-out programs."""
    start = time.time()
    mine_programs = [
        generate_program(s, GeneratorConfig("small", f))
        for f in FAMILIES for s in range(60)
    ]
    cands = mine_candidates(mine_programs, episodes=60, rng_seed=1)
    R = build_reward_matrix(mine_programs, cands)
    core = greedy_select(normalize_rows(R), 50, cands.sequences)
    assert len(core.selected) == 50

    pool, pool_f, pool_ids = [], [], []
    for f in FAMILIES:
        for s in range(130):
            pool.append(generate_program(s, GeneratorConfig("small", f)))
            pool_f.append(f)
            pool_ids.append(f"{f}-{s}")
    values = build_reward_matrix(pool, core.sequences, row_ids=pool_ids).values

    items = prepare_items(pool, values, ids=pool_ids, families=pool_f)
    train_items = [it for i, it in enumerate(items) if i % 13 < 11]
    val_items = [it for i, it in enumerate(items) if i % 13 >= 11]
    assert len(train_items) >= 400

    cfg = TrainConfig(epochs=18, batch_size=8, embed_dim=32, num_layers=2,
                      hidden_dim=64, temperature=0.05, mixup_prob=0.5,
                      learning_rate=2e-3, seed=0)
    params, vocab, log = train_model(train_items, core.sequences, cfg, val_items)

    test_programs = [
        (f, s, generate_program(s, GeneratorConfig("small", f)))
        for f in FAMILIES for s in range(300, 325)
    ]
    gcfg = GeanConfig(vocab_size=len(vocab), output_dim=50,
                      embed_dim=cfg.embed_dim, num_layers=cfg.num_layers,
                      hidden_dim=cfg.hidden_dim)
    pop = popularity_scores(values)
    rows = {"oracle": [], "nvp": [], "top45": []}
    for f, s, p in test_programs:
        o0, oz = baseline_sizes(p)
        rows["oracle"].append(EvalRow(f"{f}{s}", f, o0, oz,
                                      oracle_eval(p, core.sequences), 625))
        tsize, tused = execute_plan(p, infer(pop, core.sequences, 45))
        rows["top45"].append(EvalRow(f"{f}{s}", f, o0, oz, tsize, tused))
        g = expand_type_graph(build_graph(p))
        scores = gean_predict(encode_graph(g, vocab), params, gcfg)
        nsize, nused = execute_plan(p, infer(scores, core.sequences, 45))
        rows["nvp"].append(EvalRow(f"{f}{s}", f, o0, oz, nsize, nused))
    return {
        "coreset": core,
        "rows": rows,
        "log": log,
        "elapsed": time.time() - start,
        "n_train": len(train_items),
        "n_test": len(test_programs),
    }


def test_c05_end_to_end_ordering(pipeline):
    rows = pipeline["rows"]
    oracle = mean_over_oz(rows["oracle"])
    nvp = mean_over_oz(rows["nvp"])
    top45 = mean_over_oz(rows["top45"])
    assert pipeline["n_train"] >= 400 and pipeline["n_test"] >= 100
    assert oracle >= nvp, f"oracle {oracle:.4f} < nvp {nvp:.4f}"
    assert nvp >= top45 + 0.01, (
        f"nvp {nvp:.4f} must beat top45 {top45:.4f} by >= 1pp")
    assert pipeline["elapsed"] < 7200
    report("C05 end-to-end ordering oracle >= NVP@45 >= Top-45 + 1pp",
           f"(oracle {oracle:+.4f}, nvp {nvp:+.4f}, top45 {top45:+.4f}, "
           f"{pipeline['elapsed']:.0f}s)")


def test_c05_budget_respected_in_pipeline(pipeline):
    for r in pipeline["rows"]["nvp"] + pipeline["rows"]["top45"]:
        assert r.passes_used <= 45


# -- 6. overfit sanity -------------------------------------------------------------------------

def test_c06_overfit_reaches_target_entropy():
    programs = [
        generate_program(s, GeneratorConfig("small", f))
        for f, s in zip("ABCDEABCDE", range(10))
    ]
    cands = mine_candidates(programs, episodes=12, rng_seed=3)
    R = build_reward_matrix(programs, cands)
    core = greedy_select(normalize_rows(R), min(8, len(cands.sequences)),
                         cands.sequences)
    values = R.values[:, list(core.selected)]
    items = prepare_items(programs, values)
    cfg = TrainConfig(epochs=400, batch_size=10, embed_dim=24, num_layers=2,
                      hidden_dim=48, temperature=0.25, mixup_prob=0.0,
                      learning_rate=3e-3, seed=1)
    _, _, log = train_model(items, core.sequences, cfg)
    targets = [nvp_targets(v, cfg.temperature) for v in values]
    entropy = float(np.mean([-(t * np.log(t)).sum() for t in targets]))
    final = log[-1]["loss"]
    assert final - entropy < 1e-3, f"loss {final:.6f} entropy {entropy:.6f}"
    report("C06 overfit loss converges to target entropy",
           f"(gap {final - entropy:.2e})")


# -- 7. determinism ----------------------------------------------------------------------------

def test_c07_artifact_determinism(tmp_path):
    from click.testing import CliRunner

    from passforge.cli import main as cli_main

    runner = CliRunner()
    outputs = []
    for tag in ("one", "two"):
        d = tmp_path / tag
        d.mkdir()
        r = runner.invoke(cli_main, [
            "gen", "--size-class", "small", "--family", "B", "--family", "D",
            "--count", "4", "--seed", "11", "--out", str(d / "programs.json")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli_main, [
            "mine", "--programs", str(d / "programs.json"), "--episodes", "8",
            "--seed", "2", "--out", str(d / "candidates.json")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli_main, [
            "matrix", "--programs", str(d / "programs.json"),
            "--candidates", str(d / "candidates.json"),
            "--out", str(d / "R.csv")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli_main, [
            "coreset", "--matrix", str(d / "R.csv"),
            "--candidates", str(d / "candidates.json"), "--k", "5",
            "--out", str(d / "coreset.json")])
        assert r.exit_code == 0, r.output
        outputs.append({
            name: (d / name).read_bytes()
            for name in ("programs.json", "candidates.json", "R.csv", "coreset.json")
        })
    assert outputs[0] == outputs[1]

    # checkpoint round trip is bit-exact
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(7, 3)), "b": rng.normal(size=(1, 3))}
    p1 = tmp_path / "a.pfck"
    p2 = tmp_path / "b.pfck"
    T.save_checkpoint(p1, params)
    T.save_checkpoint(p2, T.load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()
    report("C07 determinism (byte-identical artifacts, exact checkpoints)")


# -- 8. budget invariant -----------------------------------------------------------------------

def test_c08_budget_invariant_randomized():
    rng = np.random.default_rng(123)
    for _ in range(10_000):
        k = int(rng.integers(1, 60))
        lengths = rng.integers(1, 46, size=k)
        sequences = tuple(tuple(range(n)) for n in lengths)
        plan = infer(rng.normal(size=k), sequences, budget=45)
        assert plan.passes_used <= 45
    plan = infer([3.0, 2.0, 1.0], tuple(tuple(range(n)) for n in (20, 20, 10)))
    assert [take for _, take in plan.entries] == [20, 20, 5]
    report("C08 45-pass budget never exceeded", "(10000 random plans)")


# -- 9. type-graph closure ----------------------------------------------------------------------

def test_c09_type_graph_closure_and_vocabulary():
    graphs = []
    for i in range(100):
        fam = "ABCDE"[i % 5]
        p = generate_program(1000 + i, GeneratorConfig("small", fam))
        g = expand_type_graph(build_graph(p))
        graphs.append(g)
        for n in g.nodes:
            assert "(" not in n.text, f"composite token survived: {n.text}"
            if n.kind == "type":
                assert n.text in PRIMITIVES | CONSTRUCTORS
    vocab = build_vocabulary(graphs)
    for g in graphs:
        assert (vocab.encode_graph(g) > 0).all()
    assert vocab.encode("totally-novel-token") == 0
    report("C09 type-graph closure + vocabulary coverage", "(100 programs)")


# -- 10. metric identities ------------------------------------------------------------------------

def test_c10_metric_identities():
    oz_rows = [EvalRow("p", "A", 120, s, s, 45) for s in (100, 57, 13, 1)]
    assert mean_over_oz(oz_rows) == 0.0
    assert gmean_over_oz(oz_rows) == 1.0
    assert abs(mean_over_oz([EvalRow("p", "A", 0, 100, 90, 45)]) - 0.10) <= 1e-12
    two = [EvalRow("p", "A", 0, 100, 90, 45), EvalRow("q", "A", 0, 50, 55, 45)]
    assert abs(mean_over_oz(two) - 0.0) <= 1e-12
    g = gmean_over_oz([EvalRow("p", "A", 0, 100, 50, 45),
                       EvalRow("q", "A", 0, 200, 400, 45)])
    assert abs(g - 1.0) <= 1e-12
    assert abs(gmean_over_oz([EvalRow("p", "A", 0, 100, 80, 45)]) - 1.25) <= 1e-12
    report("C10 metric identities (-Oz maps to 0 and 1.0; hand fixtures)")


# -- 11. permutation invariance / direction sensitivity --------------------------------------------

def test_c11_permutation_invariance_and_direction():
    from test_gean import permute_graph, toy_graph

    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        p = generate_program(2000 + i, GeneratorConfig("small", "ABCDE"[i % 5]))
        g = expand_type_graph(build_graph(p))
        vocab = build_vocabulary([g])
        cfg = GeanConfig(vocab_size=len(vocab), output_dim=5, embed_dim=16,
                         num_layers=2, hidden_dim=16)
        raw = init_params(cfg, seed=i)
        base = gean_predict(encode_graph(g, vocab), raw, cfg)
        perm = rng.permutation(len(g.nodes))
        out = gean_predict(encode_graph(permute_graph(g, perm), vocab), raw, cfg)
        rel = float(np.max(np.abs(out - base) / np.maximum(np.abs(base), 1e-12)))
        worst = max(worst, rel)
        assert rel < 1e-9

    g_fwd = toy_graph(3, ((0, 1), (1, 2)))
    g_flip = toy_graph(3, ((0, 1), (2, 1)))
    vocab = build_vocabulary([g_fwd])
    cfg = GeanConfig(vocab_size=len(vocab), output_dim=4, embed_dim=8,
                     num_layers=2, hidden_dim=8)
    raw = init_params(cfg, seed=0)
    a = gean_predict(encode_graph(g_fwd, vocab), raw, cfg)
    b = gean_predict(encode_graph(g_flip, vocab), raw, cfg)
    assert not np.allclose(a, b)
    report("C11 permutation invariance <= 1e-9 + direction sensitivity",
           f"(50 graphs, worst rel dev {worst:.2e})")
