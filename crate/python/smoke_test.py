"""Quick end-to-end check of the Python bindings.

Uses an installed ``gnnfp_py`` if there is one, otherwise builds the
extension with cargo and loads it from the target directory.
"""

import importlib.util
import json
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import gnnfp_py

        return gnnfp_py
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "-p", "gnnfp-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "debug" / "libgnnfp_py.so"
    dest = pathlib.Path(tempfile.mkdtemp()) / "gnnfp_py.so"
    shutil.copy(built, dest)
    spec = importlib.util.spec_from_file_location("gnnfp_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    g = load_module()
    ds = g.Dataset.synthetic(seed=1)
    assert ds.node_count == 3000 and ds.num_classes == 2
    split = ds.split(seed=0)
    assert sum(len(v) for v in split.values()) == ds.node_count

    target = g.train_model(ds, split["target_train"], "graphsage", seed=0, epochs=30)
    test = split["test"]
    labels = ds.labels
    acc = sum(p == labels[v] for p, v in zip(target.predict(ds, test), test)) / len(test)
    print(f"target accuracy {acc:.3f}")
    assert acc > 0.6

    surrogate = g.extract(target, ds, split["surrogate_train"], "type1", "graphsage", seed=2, epochs=30)
    fid = sum(a == b for a, b in zip(surrogate.predict(ds, test), target.predict(ds, test))) / len(test)
    print(f"surrogate fidelity {fid:.3f}")

    emb = surrogate.embed(ds, split["verification"][:5])
    assert len(emb) == 5 and len(emb[0]) == surrogate.embedding_dim

    data = target.to_bytes()
    again = g.Model.from_bytes(data)
    assert again.to_bytes() == data
    assert len(g.commitment(data)) == 64
    assert g.commitment(data) != g.commitment(surrogate.to_bytes())
    pruned = target.prune(0.3)
    assert pruned.architecture == "graphsage"

    try:
        g.Model.from_bytes(b"nope")
    except ValueError as e:
        print(f"bad model rejected: {e}")
    else:
        raise AssertionError("garbage bytes were accepted")

    out = tempfile.mkdtemp()
    config = {
        "dataset": {"synthetic": {"nodes_per_class": 40, "num_classes": 2, "intra_edge_prob": 0.1,
                                  "inter_edge_prob": 0.01, "feature_dim": 6, "feature_noise": 0.6, "seed": 3}},
        "surrogate_architectures": ["graphsage"],
        "independent_architectures": ["graphsage", "gin"],
        "surrogate_suspects": 1,
        "independent_suspects": 1,
        "hidden_dim": 8,
        "target_epochs": 10,
        "attack_epochs": 10,
        "evasion": {"fine_tune": False, "double_extract": False, "distribution_shift": False, "prune_ratios": []},
        "out_dir": out,
    }
    table = json.loads(g.run_experiment(json.dumps(config)))
    print(f"experiment rows: {len(table['rows'])}")
    assert any(r["condition"] == "independent" for r in table["rows"])
    print("ok")


if __name__ == "__main__":
    sys.exit(main())
