#!/usr/bin/env python3
"""Smoke test for the semiscat_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/
(`cargo build -p semiscat-py` first), exposes it as an importable module,
and exercises the main entry points with loose sanity checks.

Run from the repository root:

    cargo build -p semiscat-py
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libsemiscat_py.so", "libsemiscat_py.dylib", "semiscat_py.dll")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p semiscat-py")
    tmp = Path(tempfile.mkdtemp(prefix="semiscat_py_"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy2(lib, tmp / f"semiscat_py{suffix}")
    sys.path.insert(0, str(tmp))
    import semiscat_py

    return semiscat_py


def check(label, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {label}" + (f" ({detail})" if detail else ""))
    return ok


def main():
    sp = load_module()
    print(f"loaded {sp.__name__}")
    failures = 0

    model = sp.Model("gaussian", 2, 1.0, [1.0, 1.0])
    failures += not check(
        "model basics",
        model.dimension() == 2
        and abs(model.barrier_energy() - 1.0) < 1e-15
        and abs(model.value([0.0, 0.0]) - 1.0) < 1e-15,
        repr(model),
    )

    r = sp.flow(model, [-6.0, 0.8], [1.2, 0.0], 12.0)
    failures += not check(
        "flow conservation",
        r["max_energy_drift"] < 1e-9 and r["max_symplectic_defect"] < 1e-7,
        f"drift {r['max_energy_drift']:.2e}, defect {r['max_symplectic_defect']:.2e}",
    )

    s = sp.scatter(model, 1.5, [1.0, 0.0], [0.0, 0.8])
    theta = s["theta"]
    failures += not check(
        "scattering data",
        abs(theta[0] ** 2 + theta[1] ** 2 - 1.0) < 1e-10 and theta[1] > 0.0,
        f"theta = ({theta[0]:.4f}, {theta[1]:.4f})",
    )

    # Free model: no deflection, zero amplitude.
    free = sp.Model("zero", 2, 0.0, [])
    sf = sp.scatter(free, 1.5, [1.0, 0.0], [0.0, 0.8])
    failures += not check(
        "free scattering is trivial",
        abs(sf["theta"][0] - 1.0) < 1e-9 and abs(sf["theta"][1]) < 1e-9,
    )

    a = sp.amplitude(model, [1.0, 0.0], [math.cos(0.3), math.sin(0.3)], 1.5, 0.1)
    f_sc = math.sqrt(2.0 * 1.5) * abs(a["amplitude"])
    f_q = abs(sp.partial_waves(model, 1.5, 0.1, [0.3])[0])
    rel = abs(f_sc - f_q) / f_q
    failures += not check(
        "semiclassical vs partial waves",
        len(a["branches"]) == 2 and rel < 0.15,
        f"|f_sc| = {f_sc:.4f}, |f_q| = {f_q:.4f}, rel {rel:.3f}",
    )

    res_order, sc_order = sp.critical_exponents(model)
    failures += not check(
        "critical exponents",
        abs(res_order) < 1e-15 and abs(sc_order + 0.5) < 1e-15,
        f"({res_order}, {sc_order})",
    )

    eck = sp.Model("eckart", 1, 1.0, [1.0])
    t2 = sp.transmission_1d(eck, 1.0, 0.01)
    failures += not check(
        "barrier-top transmission", abs(t2 - 0.5) < 0.01, f"|T|^2 = {t2:.4f}"
    )

    pts = sp.manifold_points(model, "unstable", 4, [0.5, 1.0])
    e0 = model.barrier_energy()
    max_drift = max(
        abs(0.5 * (xi[0] ** 2 + xi[1] ** 2) + model.value(x) - e0)
        for x, xi in pts
    )
    failures += not check(
        "manifold points on the energy shell",
        len(pts) == 8 and max_drift < 1e-9,
        f"max |H - E0| = {max_drift:.2e}",
    )

    rep = sp.validate(model, probes=16)
    failures += not check("assumption battery", rep["all_ok"], str(rep))

    if failures:
        sys.exit(f"{failures} smoke check(s) failed")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
