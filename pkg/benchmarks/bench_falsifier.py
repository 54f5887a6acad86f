"""Compare the compiled and pure-Python falsifier kernels on real queries.

Collects every regional query issued while verifying the final Van der Pol
candidate and times both back ends on the same list.

    python benchmarks/bench_falsifier.py [--system vanderpol] [--repeat 3]
"""
import argparse
import time

from bblyap import cegis, kernels
from bblyap.cover import simplices_to_verify
from bblyap.sysmodel import Sample, regional_lipschitz
from bblyap.verifier import RegionalQuery, falsify_region


def collect(system):
    holder = {}
    out = cegis.run(cegis.CegisConfig(system=system), holder)
    st = holder["state"]
    cand = out.candidate
    cov = st.cover
    qs = []
    for s in simplices_to_verify(cov, st.roi):
        samples = tuple(Sample(cov.points[v], cov.data[v]) for v in s.vertex_ids)
        qs.append(RegionalQuery(cand, s, samples, regional_lipschitz(st.system, s), st.roi))
    return qs


def bench(qs, backend, repeat):
    best = float("inf")
    verdicts = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        verdicts = [falsify_region(q, backend) for q in qs]
        best = min(best, time.perf_counter() - t0)
    return best, verdicts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--system", default="vanderpol")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    qs = collect(args.system)
    print(f"{len(qs)} regional queries from {args.system}")
    t_py, v_py = bench(qs, "python", args.repeat)
    print(f"python : {t_py:8.3f} s  ({1e3 * t_py / len(qs):.3f} ms/query)")
    if kernels.falsify_quadratic_ext is None:
        print("cython : not built")
        return
    t_cy, v_cy = bench(qs, "cython", args.repeat)
    print(f"cython : {t_cy:8.3f} s  ({1e3 * t_cy / len(qs):.3f} ms/query)")
    print(f"speedup: {t_py / t_cy:.1f}x, identical verdicts: {v_py == v_cy}")


if __name__ == "__main__":
    main()
