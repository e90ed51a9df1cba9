#!/usr/bin/env python3
"""Smoke test for the qflow_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/, copies
it to an importable name, and drives the main types and operations. Run
after `cargo build -p qflow-py` (or `--release`):

    python3 python/smoke_test.py
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libqflow_py.so", "qflow_py.so", "libqflow_py.dylib", "qflow_py.pyd")
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("qflow_py cdylib not found; run `cargo build -p qflow-py` first")
    stage = pathlib.Path(tempfile.mkdtemp(prefix="qflow_py_"))
    target = stage / "qflow_py.so"
    shutil.copy2(lib, target)
    spec = importlib.util.spec_from_file_location("qflow_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    if not ok:
        sys.exit(1)


def main():
    qf = load_module()

    # integral store round trip
    store = qf.IntegralStore.random(4, 4, v_scale=0.1, seed=11)
    back = qf.IntegralStore.from_fcidump(store.to_fcidump())
    check("fcidump-round-trip", back.to_fcidump() == store.to_fcidump())
    back_json = qf.IntegralStore.from_json(store.to_json())
    check("json-round-trip", back_json.to_json() == store.to_json())

    # exact ground state and the reference expectation bracket the flow
    e_ref = qf.reference_energy(store)
    e_fci = qf.fci_ground_energy(store)
    check("fci-below-reference", e_fci < e_ref, f"fci={e_fci:.8f} ref={e_ref:.8f}")

    # Hermitian flow: variational and close to the exact energy
    out = qf.qflow(store, ne=2, no=2, eta=0.1, cycles=500, tol=1e-10)
    check(
        "qflow-converged-variational",
        out.converged and e_fci - 1e-10 <= out.energy <= e_ref,
        f"energy={out.energy:.8f} cycles={out.cycles}",
    )
    check("qflow-near-fci", abs(out.energy - e_fci) < 5e-3, f"gap={abs(out.energy - e_fci):.2e}")
    check("qflow-trace-nonempty", out.trace_csv().count("\n") > out.cycles)

    # sub-flow with a background sea reproduces the full flow at K = M
    sub = qf.subflow(store, ne=2, no=2, top_k=out.n_spaces, background=False, cycles=500, tol=1e-10)
    check("subflow-k-equals-m", abs(sub.energy - out.energy) < 1e-12)

    # non-Hermitian flow satisfies the projected equations
    cc = qf.ccflow(store, ne=2, no=2, cycles=120)
    check(
        "ccflow-residual",
        cc.converged and cc.residual < 1e-7 and abs(cc.energy - cc.energy_functional) < 1e-9,
        f"residual={cc.residual:.2e}",
    )

    # the downfolding theorem holds for every generated space
    residual = qf.ses_max_residual(store, 1, 1)
    check("ses-theorem", residual < 1e-9, f"max residual={residual:.2e}")

    # importance ordering puts the strongest correlation first
    spaces = qf.active_spaces(store, 2, 2)
    metrics = [m for (_, _, _, m) in spaces]
    check("importance-order", metrics == sorted(metrics), f"{len(spaces)} spaces")

    print("smoke test passed")


if __name__ == "__main__":
    main()
