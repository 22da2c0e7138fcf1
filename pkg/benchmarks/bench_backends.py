"""Wall-time comparison of the compiled and reference kernel backends.

Usage: python benchmarks/bench_backends.py [--sub 2] [--labels 20] [--repeat 3]

Builds one mid-solve splitting state and times each hot kernel on identical
inputs under both implementations, then times a short full solve of each
model. Run it after changing either backend; the two must stay within the
parity bounds of tests/test_backends.py, so the only thing allowed to
differ is speed.
"""

import argparse
import time

import numpy as np

import normseg.backends.reference as reference
from normseg.atv import chambolle_pock, CpConfig, estimate_operator_norm, initial_assignment
from normseg.labels import equator_pole_labels, similarity_field
from normseg.ltv import AdmmConfig, admm_solve, iteration_tolerance, karcher_init
from normseg.mesh import compute_geometry, icosphere

try:
    import normseg.backends._kernels as kernels
except ImportError:
    kernels = None


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sub", type=int, default=2, help="icosphere subdivision")
    ap.add_argument("--labels", type=int, default=20, help="equator label count")
    ap.add_argument("--iters", type=int, default=400, help="warmup solve iterations")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if kernels is None:
        raise SystemExit("compiled backend not built; nothing to compare")

    mesh = icosphere(args.sub)
    geom = compute_geometry(mesh)
    lset = equator_pole_labels(args.labels)
    s = similarity_field(geom.normals, lset)
    L = len(lset)
    print(f"icosphere({args.sub}): {mesh.num_triangles} triangles, {L} labels")

    state = admm_solve(
        s, lset.vectors, mesh, geom, 0.125, 1.0, config=AdmmConfig(max_iters=args.iters)
    ).state
    tol = iteration_tolerance(state.k)

    w = state.phi
    init = np.stack(
        [karcher_init(w[i], state.labels, int(np.argmax(w[i]))) for i in range(len(w))]
    )
    beta = 0.01
    tau = 0.99 / estimate_operator_norm(mesh, geom, beta)
    phi0 = initial_assignment(s)
    d0 = np.zeros((mesh.num_edges, L))

    cases = {
        "y_step": lambda b: b.y_step(
            state.phi, state.Y.copy(), state.mu, state.nu, state.m, state.labels, tol
        ),
        "phi_step": lambda b: b.phi_step(
            state.similarity, state.Y, state.mu, state.phi.copy(), state.rho,
            1e-3, 1e-8, 1e-8, 1e-6, 200, 1e-4, 60,
        ),
        "m_step": lambda b: b.m_step(
            state.m.copy(), state.Y, state.nu, state.xi - state.X, state.labels,
            geom.areas, geom.edge_lengths, mesh.edge_plus, mesh.edge_minus, tol,
        ),
        "karcher_batch": lambda b: b.karcher_batch(w, state.labels, init.copy(), 1e-9),
        "cp_solve(500)": lambda b: b.cp_solve(
            s, geom.areas, geom.edge_lengths, mesh.edge_plus, mesh.edge_minus,
            beta, tau, tau, 1.0, 500, 0.0, phi0.copy(), d0.copy(),
        ),
    }

    print(f"{'kernel':<16}{'cython':>12}{'python':>12}{'speedup':>10}")
    for name, call in cases.items():
        t_c = timeit(lambda: call(kernels), args.repeat)
        t_p = timeit(lambda: call(reference), args.repeat)
        print(f"{name:<16}{t_c * 1e3:>10.2f}ms{t_p * 1e3:>10.2f}ms{t_p / t_c:>9.1f}x")

    for backend_name, forced in (("cython", kernels), ("python", reference)):
        import normseg.backends as B
        import normseg.ltv as ltv_mod

        saved = (B.y_step, B.phi_step, B.m_step, B.karcher_batch, B.cp_solve)
        B.y_step, B.phi_step, B.m_step = forced.y_step, forced.phi_step, forced.m_step
        B.karcher_batch, B.cp_solve = forced.karcher_batch, forced.cp_solve
        try:
            t0 = time.perf_counter()
            admm_solve(s, lset.vectors, mesh, geom, 0.125, 1.0,
                       config=AdmmConfig(max_iters=200))
            t_admm = time.perf_counter() - t0
            t0 = time.perf_counter()
            chambolle_pock(s, beta, mesh, geom, CpConfig(max_iters=2000))
            t_cp = time.perf_counter() - t0
        finally:
            (B.y_step, B.phi_step, B.m_step, B.karcher_batch, B.cp_solve) = saved
        print(f"admm(200) + cp(2000) [{backend_name}]: {t_admm:.2f}s + {t_cp:.2f}s")


if __name__ == "__main__":
    main()
