# Every differentiable op in the library, validated against central finite
# differences. This is the same registry behind `mostats gradcheck`.

from mostats.gradcheck import THRESHOLD, run_gradcheck

results = run_gradcheck(seed=0, repeats=2)
width = max(len(r.name) for r in results)
for r in sorted(results, key=lambda r: r.max_error, reverse=True):
    flag = "ok " if r.passed else "BAD"
    print(f"{flag} {r.name:<{width}s} max relative error {r.max_error:.3e}")
print(f"\n{len(results)} ops checked against threshold {THRESHOLD}")
